#include "prolix/sentences.hpp"

namespace prolix {

std::vector<std::pair<std::size_t, std::size_t>> split_sentences(
    std::span<const TokenId> ids, const std::function<std::string(TokenId)>& text_of) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::string text = text_of(ids[i]);
    bool terminator = text.find('\n') != std::string::npos;
    if (!terminator && !text.empty()) {
      char last = text.back();
      terminator = last == '.' || last == '!' || last == '?';
    }
    if (terminator) {
      out.emplace_back(begin, i + 1);
      begin = i + 1;
    }
  }
  if (begin < ids.size()) out.emplace_back(begin, ids.size());
  return out;
}

}  // namespace prolix
