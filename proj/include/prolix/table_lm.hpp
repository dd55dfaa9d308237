#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "prolix/adapter.hpp"
#include "prolix/word_vocab.hpp"

namespace prolix {

/// Order-k conditional table: the distribution of the next token is keyed by
/// the last `order` context tokens (left-padded with bos). Missing keys fall
/// back to `default_row` (uniform when empty). Everything is analytic, so
/// brute-force oracles and exact gradients are cheap.
struct TableLmSpec {
  std::vector<std::string> words;
  std::string bos_word = "<bos>";
  std::string eos_word = "<eos>";
  std::string eot_word = "</think>";
  std::vector<std::string> extra_special;
  std::size_t order = 1;
  std::size_t max_context = 512;
  std::map<std::vector<TokenId>, Row> rows;
  Row default_row;

  TokenId word_id(const std::string& word) const;
  /// Sparse row by words: unlisted tokens get probability 0.
  void add_row(const std::vector<std::string>& context,
               const std::vector<std::pair<std::string, double>>& probs);
};

class TableLm final : public LmAdapter {
public:
  explicit TableLm(TableLmSpec spec, std::string name = "table-lm");

  static TableLm from_file(const std::string& path);
  static TableLm from_source(const std::string& source, std::string name = "table-lm");
  /// The bundled demo world (a deterministic reasoning chain); identical to
  /// data/chain.tablelm.
  static const std::string& builtin_chain_source();

  std::string name() const override { return name_; }
  const VocabInfo& vocab() const override { return info_; }
  std::size_t max_context() const override { return spec_.max_context; }

  std::vector<TokenId> encode_ids(const std::string& text) const override;
  std::string decode_text(std::span<const TokenId> ids) const override;

  Rows teacher_forced_logprobs(std::span<const TokenId> context) const override;
  Row next_logprobs(std::span<const TokenId> context) const override;

  bool supports_gradients() const override { return true; }
  GradMatrix suffix_gradient(std::span<const TokenId> prefix, std::span<const TokenId> suffix,
                             std::span<const TokenId> continuation,
                             const LossSpec& spec) const override;

  /// Probability row for the token following `context`.
  const Row& prob_row(std::span<const TokenId> context) const;

  const TableLmSpec& spec() const { return spec_; }

private:
  const Row& row_for_key(std::span<const TokenId> key) const;

  TableLmSpec spec_;
  std::string name_;
  WordVocab words_;
  VocabInfo info_;
  Row default_prob_;
  std::map<std::vector<TokenId>, Row> prob_rows_;
};

}  // namespace prolix
