#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace prolix {

using TokenId = std::int32_t;

/// Vocabulary metadata shared by every adapter. `eot_id` marks the end of the
/// reasoning segment (e.g. a closing think tag); `special_ids` are excluded
/// from adversarial substitution and from reasoning-token extraction.
struct VocabInfo {
  std::size_t size = 0;
  TokenId bos_id = -1;
  TokenId eos_id = -1;
  TokenId eot_id = -1;
  std::set<TokenId> special_ids;

  void validate() const;
  bool is_special(TokenId id) const { return special_ids.count(id) != 0; }
};

/// A token id sequence with its surface text; the currency between modules.
struct TokenSeq {
  std::vector<TokenId> ids;
  std::string text;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

}  // namespace prolix
