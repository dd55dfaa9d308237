#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "prolix/tokens.hpp"

namespace prolix {

/// Whitespace-delimited word vocabulary used by the built-in desk models.
/// Encoding is a strict bijection on known words; unknown words are errors,
/// never silently dropped.
class WordVocab {
public:
  WordVocab() = default;
  explicit WordVocab(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  TokenId id_of(const std::string& word) const;
  const std::string& word_of(TokenId id) const;

  std::vector<TokenId> encode(const std::string& text) const;
  std::string decode(std::span<const TokenId> ids) const;

private:
  void append_word(const std::string& word, std::vector<TokenId>& out) const;

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace prolix
