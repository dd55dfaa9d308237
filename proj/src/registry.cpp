#include <map>
#include <mutex>

#include "prolix/adapter.hpp"
#include "prolix/errors.hpp"
#include "prolix/table_lm.hpp"
#include "prolix/tiny_lm.hpp"

namespace prolix {

std::shared_ptr<const LmAdapter> load_adapter(const std::string& name_or_path) {
  static std::mutex mu;
  static std::map<std::string, std::shared_ptr<const LmAdapter>> cache;
  std::lock_guard<std::mutex> lock(mu);
  if (auto it = cache.find(name_or_path); it != cache.end()) {
    return it->second;
  }
  std::shared_ptr<const LmAdapter> made;
  if (name_or_path == "table-lm") {
    made = std::make_shared<TableLm>(TableLm::from_source(TableLm::builtin_chain_source()));
  } else if (name_or_path == "tiny-lm") {
    made = TinyLm::train();  // seeded end-to-end; first load pays the training time
  } else if ((name_or_path.size() > 8 &&
              name_or_path.compare(name_or_path.size() - 8, 8, ".tablelm") == 0) ||
             name_or_path.find('/') != std::string::npos) {
    made = std::make_shared<TableLm>(TableLm::from_file(name_or_path));
  } else {
    throw InvalidConfigError("unknown model: '" + name_or_path +
                             "' (expected table-lm, tiny-lm, or a .tablelm path)");
  }
  cache[name_or_path] = made;
  return made;
}

}  // namespace prolix
