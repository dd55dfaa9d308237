#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prolix/tokens.hpp"

namespace prolix {

/// Sentence boundaries over model tokens: a token terminates a sentence when
/// its text ends with '.', '!' or '?' or contains a newline. Returns
/// [begin, end) index ranges; a trailing unterminated run counts as a
/// sentence.
std::vector<std::pair<std::size_t, std::size_t>> split_sentences(
    std::span<const TokenId> ids, const std::function<std::string(TokenId)>& text_of);

}  // namespace prolix
