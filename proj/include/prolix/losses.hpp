#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "prolix/rows.hpp"
#include "prolix/tokens.hpp"

namespace prolix {

class LmAdapter;

/// Direction of the per-token importance score.
///
/// LossDelta (default): score_t = log p(y_t | x, y_<t) − log p(y_t | y_<t),
/// so tokens whose prediction leans on the prompt rank highest. NegatedDelta
/// is the sign flip, kept selectable for comparison experiments.
enum class SignConvention { LossDelta, NegatedDelta };

/// Excessive-reasoning loss flavor: sum the log-probabilities of every token
/// in T (SumOfLogs, literal), or take the log of the summed probability mass
/// (LogOfSum).
enum class ErVariant { SumOfLogs, LogOfSum };

struct LossWeights {
  double alpha = 1.0;
  double beta = 50.0;
  double gamma = 1.0;

  /// Non-negative, at least one strictly positive.
  void validate() const;
};

struct LossBreakdown {
  double pce = 0.0;
  double er = 0.0;
  double dt = 0.0;
  double total = 0.0;
};

struct ImportanceMask {
  std::vector<double> scores;        // S_t, one per target position
  std::vector<std::uint8_t> mask;    // M_t in {0,1}
  double K = 1.0;                    // percent in (0,100]
  SignConvention convention = SignConvention::LossDelta;

  std::size_t ones() const;
};

/// Everything the composite loss needs beyond the model's rows. `mask` must
/// cover all target positions; `token_set` is T for the ER term. When
/// `eos_id`/`eot_id` are negative the model vocabulary's ids are used.
struct LossSpec {
  LossWeights weights;
  std::vector<std::uint8_t> mask;
  std::vector<TokenId> token_set;
  ErVariant er_variant = ErVariant::SumOfLogs;
  TokenId eos_id = -1;
  TokenId eot_id = -1;
  // Number of leading target positions the ER sum ranges over; defaults to
  // all of them. Used to restrict ER to the reasoning segment.
  std::size_t er_positions = std::numeric_limits<std::size_t>::max();
};

/// score_t per target position, computed against the clean prompt (no suffix).
/// `x` is the assembled prompt context (bos first); the "without prompt" side
/// conditions on [bos] + y_<t only.
std::vector<double> importance_scores(const LmAdapter& model, std::span<const TokenId> x,
                                      std::span<const TokenId> y,
                                      SignConvention convention = SignConvention::LossDelta);

/// Selects the top max(1, ceil(K/100·|scores|)) positions; ties break toward
/// the lower index.
ImportanceMask build_mask(const std::vector<double>& scores, double K,
                          SignConvention convention = SignConvention::LossDelta);

/// −(1/|y|) Σ_t M_t · rows[t][y_t]; normalization is by |y|, not by the count
/// of selected positions.
double pce_loss(const Rows& logprob_rows, std::span<const TokenId> y,
                std::span<const std::uint8_t> mask);

/// Standard cross-entropy: pce with an all-ones mask.
double ce_loss(const Rows& logprob_rows, std::span<const TokenId> y);

/// −(1/|rows|) Σ_t Σ_{v∈T} rows[t][v] (SumOfLogs) or the log-of-summed-mass
/// variant. `positions` limits the outer sum to leading rows; normalization
/// stays 1/|rows|.
double er_loss(const Rows& logprob_rows, std::span<const TokenId> token_set,
               ErVariant variant = ErVariant::SumOfLogs,
               std::size_t positions = std::numeric_limits<std::size_t>::max());

/// (1/|rows|) Σ_t (rows[t][eos] + rows[t][eot]) on probability rows.
double dt_loss(const Rows& prob_rows, TokenId eos_id, TokenId eot_id);

LossBreakdown composite_loss(double pce, double er, double dt, const LossWeights& weights);

/// Full forward evaluation of the composite loss for target y appended after
/// prefix + suffix. Rows come from teacher forcing; dt uses their exponentials.
LossBreakdown evaluate_true_loss(const LmAdapter& model, std::span<const TokenId> prefix,
                                 std::span<const TokenId> suffix, std::span<const TokenId> y,
                                 const LossSpec& spec);

}  // namespace prolix
