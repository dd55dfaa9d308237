#include "prolix/tokens.hpp"

#include "prolix/errors.hpp"

namespace prolix {

void VocabInfo::validate() const {
  if (size == 0) {
    throw InvalidConfigError("vocabulary must be non-empty");
  }
  auto check = [&](const char* name, TokenId id) {
    if (id < 0 || static_cast<std::size_t>(id) >= size) {
      throw InvalidConfigError(std::string(name) + " id out of range: " + std::to_string(id));
    }
  };
  check("bos", bos_id);
  check("eos", eos_id);
  check("eot", eot_id);
  for (TokenId id : special_ids) {
    check("special", id);
  }
  if (special_ids.count(eos_id) == 0 || special_ids.count(eot_id) == 0) {
    throw InvalidConfigError("eos and eot must be registered as special ids");
  }
}

}  // namespace prolix
