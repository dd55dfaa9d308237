#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prolix/adapter.hpp"
#include "prolix/rng.hpp"
#include "prolix/word_vocab.hpp"

namespace prolix {

/// Synthetic arithmetic world used to train the tiny LM. Episodes look like
///
///   <bos> add 2 3 ? [junk?] sum add 2 3 5 . [wait 1 5 .]* </think> answer is 5 <eos>
///
/// The chance of emitting another reasoning sentence rises with the number of
/// trigger tokens (wait/hmm/maybe/alternatively) inside the model's 16-token
/// window and falls with the sentence counter, so suffixes stuffed with
/// triggers prolong generation while the restated digits keep answers correct.
struct TinyWorld {
  static const std::vector<std::string>& vocabulary();
  static const std::vector<std::string>& trigger_words();

  /// Question/gold pairs for every (op, a, b) the world defines, in a fixed
  /// order. Questions read "add 2 3 ?".
  static const std::vector<std::pair<std::string, std::string>>& question_set();

  /// Gold answer for a question in the world's syntax.
  static int gold_answer(const std::string& question);

  /// Probability of continuing with another reasoning sentence, given the
  /// next sentence index (1-based) and the trigger count in the window.
  static double continue_probability(int k_next, int triggers);

  /// Seeded training episodes (token ids, starting with bos).
  static std::vector<std::vector<TokenId>> corpus(Rng& rng, std::size_t episodes,
                                                  const WordVocab& vocab);
};

/// Windowed MLP next-token model (fixed window, shared embeddings, one tanh
/// layer), trained with Adam on the TinyWorld corpus. Double precision
/// throughout; forward and backward are exact, which makes it the
/// finite-difference reference model for gradient checks.
class TinyLm final : public LmAdapter {
public:
  struct Params {
    std::size_t window = 16;
    std::size_t embed = 12;
    std::size_t hidden = 96;
    std::size_t episodes = 2600;
    std::size_t epochs = 30;
    std::size_t batch = 128;
    double lr = 2e-3;
    std::uint64_t seed = 0x7157u;
    std::size_t max_context = 2048;
  };

  /// Deterministic end-to-end: corpus, init, and optimization all derive from
  /// params.seed.
  static std::shared_ptr<const TinyLm> train(const Params& params);
  static std::shared_ptr<const TinyLm> train() { return train(Params{}); }

  std::string name() const override { return "tiny-lm"; }
  const VocabInfo& vocab() const override { return info_; }
  std::size_t max_context() const override { return params_.max_context; }

  std::vector<TokenId> encode_ids(const std::string& text) const override;
  std::string decode_text(std::span<const TokenId> ids) const override;

  Rows teacher_forced_logprobs(std::span<const TokenId> context) const override;
  Row next_logprobs(std::span<const TokenId> context) const override;

  bool supports_gradients() const override { return true; }
  GradMatrix suffix_gradient(std::span<const TokenId> prefix, std::span<const TokenId> suffix,
                             std::span<const TokenId> continuation,
                             const LossSpec& spec) const override;

  /// Composite loss with the suffix block replaced by arbitrary relaxed
  /// one-hot rows (|suffix| x V). Feeding one-hot rows reproduces the token
  /// path; perturbing single entries drives the finite-difference oracle.
  LossBreakdown loss_with_relaxed_suffix(std::span<const TokenId> prefix,
                                         const Eigen::MatrixXd& suffix_weights,
                                         std::span<const TokenId> continuation,
                                         const LossSpec& spec) const;

  /// Gradient w.r.t. the suffix slot embeddings (|suffix| x embed). The
  /// one-hot gradient equals this matrix times the embedding table.
  Eigen::MatrixXd suffix_embedding_gradient(std::span<const TokenId> prefix,
                                            std::span<const TokenId> suffix,
                                            std::span<const TokenId> continuation,
                                            const LossSpec& spec) const;

  const Eigen::MatrixXd& embedding() const { return E_; }
  const Params& params() const { return params_; }

private:
  TinyLm(Params params, WordVocab vocab, VocabInfo info);

  // Forward for one predicted position: slots are the embedding columns of
  // the trailing window (bos-padded).
  Eigen::VectorXd forward_logprobs(const Eigen::VectorXd& z) const;
  Eigen::VectorXd window_input(std::span<const TokenId> context, std::size_t pos,
                               const Eigen::MatrixXd* suffix_weights,
                               std::size_t suffix_begin) const;

  void fit(Rng& rng);

  Params params_;
  WordVocab words_;
  VocabInfo info_;
  Eigen::MatrixXd E_;   // vocab x embed
  Eigen::MatrixXd W1_;  // hidden x window*embed
  Eigen::VectorXd b1_;  // hidden
  Eigen::MatrixXd W2_;  // vocab x hidden
  Eigen::VectorXd b2_;  // vocab
};

}  // namespace prolix
