#include "prolix/word_vocab.hpp"

#include <sstream>

#include "prolix/errors.hpp"

namespace prolix {

WordVocab::WordVocab(std::vector<std::string> words) : words_(std::move(words)) {
  index_.reserve(words_.size());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    auto [it, inserted] = index_.emplace(words_[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw InvalidConfigError("duplicate vocabulary word: " + words_[i]);
    }
  }
}

TokenId WordVocab::id_of(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) {
    throw InvalidTokenError("unknown word: '" + word + "'");
  }
  return it->second;
}

const std::string& WordVocab::word_of(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw InvalidTokenError("token id out of range: " + std::to_string(id));
  }
  return words_[static_cast<std::size_t>(id)];
}

namespace {

bool peelable(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ':' || c == ';';
}

}  // namespace

void WordVocab::append_word(const std::string& word, std::vector<TokenId>& out) const {
  // Whole word wins when known; otherwise shed trailing punctuation into
  // single-character tokens ("step." -> step .) before giving up.
  auto it = index_.find(word);
  if (it != index_.end()) {
    out.push_back(it->second);
    return;
  }
  if (word.size() > 1 && peelable(word.back())) {
    append_word(word.substr(0, word.size() - 1), out);
    out.push_back(id_of(std::string(1, word.back())));
    return;
  }
  throw InvalidTokenError("unknown word: '" + word + "'");
}

std::vector<TokenId> WordVocab::encode(const std::string& text) const {
  std::istringstream in(text);
  std::vector<TokenId> out;
  std::string word;
  while (in >> word) {
    append_word(word, out);
  }
  if (out.empty()) {
    throw EmptyInputError("cannot encode empty text");
  }
  return out;
}

std::string WordVocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i != 0) out += ' ';
    out += word_of(ids[i]);
  }
  return out;
}

}  // namespace prolix
