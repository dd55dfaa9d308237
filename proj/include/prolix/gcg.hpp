#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <set>
#include <vector>

#include "prolix/adapter.hpp"
#include "prolix/losses.hpp"
#include "prolix/rng.hpp"

namespace prolix {

/// Embedding geometry used to turn loss gradients into substitution scores.
/// The default (empty) table means one-hot space: gradients are already
/// vocab-wide and e(w) is the unit vector for w, so the inner product
/// collapses to G[i][w] - G[i][x_i].
struct EmbeddingTable {
  Eigen::MatrixXd rows;  // vocab x dim; 0x0 selects the one-hot fast path
  bool identity() const { return rows.size() == 0; }
  static EmbeddingTable one_hot() { return {}; }
  static EmbeddingTable dense(Eigen::MatrixXd r) { return {std::move(r)}; }
};

struct GcgCandidate {
  std::size_t position = 0;
  TokenId token = -1;
};

struct AttackConfig {
  std::size_t suffix_len = 10;
  std::size_t steps = 1000;
  std::size_t pool = 64;   // candidates retained per suffix position
  std::size_t batch = 64;  // candidates re-evaluated exactly per step
  LossWeights weights;
  double K = 1.0;  // importance-mask percentage
  std::size_t n = 5;  // reasoning-set size used by ER
  std::uint64_t seed = 0;
  std::set<TokenId> forbidden;  // always unioned with the model's special tokens
  SignConvention convention = SignConvention::LossDelta;
  ErVariant er_variant = ErVariant::SumOfLogs;

  void validate() const;
  std::set<TokenId> effective_forbidden(const VocabInfo& vocab) const;
};

struct StepRecord {
  std::size_t step = 0;
  bool accepted = false;
  std::size_t position = 0;
  TokenId old_id = -1;
  TokenId new_id = -1;
  LossBreakdown loss;  // incumbent after this step
};

struct SuffixResult {
  TokenSeq suffix;
  TokenSeq initial_suffix;
  std::vector<LossBreakdown> loss_trace;  // entry 0 is the initial loss, then one per accepted step
  std::size_t steps_run = 0;
  std::size_t accepted_steps = 0;
  std::vector<StepRecord> step_log;  // one entry per step, accepted or not
};

/// score(i, w) = <grad_i, e(w) - e(x_i)>. Most-negative scores predict the
/// largest first-order loss decrease. Forbidden tokens score +infinity so
/// they never enter candidate pools.
std::vector<std::vector<double>> first_order_scores(const GradMatrix& gradient,
                                                    std::span<const TokenId> suffix,
                                                    const EmbeddingTable& table,
                                                    const std::set<TokenId>& forbidden);

/// Top `pool` token ids per position, most-negative score first; ties prefer
/// the lower token id. Fewer than `pool` survive only when the vocabulary
/// (minus forbidden) is smaller than `pool`.
std::vector<std::vector<TokenId>> top_candidates(const std::vector<std::vector<double>>& scores,
                                                 std::size_t pool);

struct GcgState {
  std::vector<TokenId> suffix;
  LossBreakdown incumbent;
};

/// One optimization step: score, pool, sample `batch` candidates without
/// replacement, re-evaluate true losses, accept the best strictly-improving
/// substitution.
StepRecord gcg_step(const LmAdapter& model, GcgState& state, std::span<const TokenId> prefix,
                    std::span<const TokenId> target, const LossSpec& spec,
                    const AttackConfig& config, Rng& rng);

/// Full run: builds the frozen importance mask from the clean prompt, draws
/// the initial suffix from the seed, then iterates gcg_step. Deterministic
/// given identical inputs and seed.
SuffixResult gcg_optimize(const LmAdapter& model, std::span<const TokenId> prefix,
                          std::span<const TokenId> target, const std::set<TokenId>& token_set,
                          const AttackConfig& config);

struct OracleResult {
  GcgCandidate best;      // token == suffix[position] when the suffix is already optimal
  LossBreakdown loss;
  std::size_t evaluations = 0;
};

/// Exhaustive single-substitution search (identity included). Guard:
/// (vocab - forbidden) * suffix_len must stay within 1e5 evaluations.
/// Tie-break: lower loss, then lower position, then lower token id.
OracleResult brute_force_oracle(const LmAdapter& model, std::span<const TokenId> prefix,
                                std::span<const TokenId> suffix, std::span<const TokenId> target,
                                const LossSpec& spec, const std::set<TokenId>& forbidden);

}  // namespace prolix
