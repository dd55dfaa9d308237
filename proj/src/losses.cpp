#include "prolix/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prolix/adapter.hpp"
#include "prolix/errors.hpp"

namespace prolix {

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0) {
    throw InvalidConfigError("loss weights must be non-negative");
  }
  if (alpha == 0 && beta == 0 && gamma == 0) {
    throw InvalidConfigError("at least one loss weight must be positive");
  }
}

std::size_t ImportanceMask::ones() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<double> importance_scores(const LmAdapter& model, std::span<const TokenId> x,
                                      std::span<const TokenId> y, SignConvention convention) {
  if (x.empty() || y.empty()) {
    throw EmptyInputError("importance_scores needs a prompt and a target");
  }
  const TokenId bos = model.vocab().bos_id;

  std::vector<TokenId> with_prompt(x.begin(), x.end());
  with_prompt.insert(with_prompt.end(), y.begin(), y.end());
  Rows with_rows = model.teacher_forced_logprobs(with_prompt);

  std::vector<TokenId> without_prompt{bos};
  without_prompt.insert(without_prompt.end(), y.begin(), y.end());
  Rows without_rows = model.teacher_forced_logprobs(without_prompt);

  std::vector<double> scores(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    double with_lp = with_rows[x.size() - 1 + t][static_cast<std::size_t>(y[t])];
    double without_lp = without_rows[t][static_cast<std::size_t>(y[t])];
    double delta = with_lp - without_lp;
    scores[t] = convention == SignConvention::LossDelta ? delta : -delta;
  }
  return scores;
}

ImportanceMask build_mask(const std::vector<double>& scores, double K,
                          SignConvention convention) {
  if (scores.empty()) {
    throw EmptyInputError("build_mask needs at least one score");
  }
  if (!(K > 0.0) || K > 100.0) {
    throw InvalidConfigError("K must lie in (0, 100]");
  }
  const std::size_t n = scores.size();
  // 1e-9 guards against 2.0000000001-style ceil inflation on exact fractions.
  auto count = static_cast<std::size_t>(
      std::ceil(K * static_cast<double>(n) / 100.0 - 1e-9));
  count = std::clamp<std::size_t>(count, 1, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];  // stable: equal scores keep the lower index first
  });

  ImportanceMask out;
  out.scores = scores;
  out.mask.assign(n, 0);
  out.K = K;
  out.convention = convention;
  for (std::size_t i = 0; i < count; ++i) {
    out.mask[order[i]] = 1;
  }
  return out;
}

double pce_loss(const Rows& logprob_rows, std::span<const TokenId> y,
                std::span<const std::uint8_t> mask) {
  if (logprob_rows.size() != y.size() || y.size() != mask.size()) {
    throw DimensionMismatchError("pce_loss: rows, target, and mask lengths differ");
  }
  if (y.empty()) {
    throw EmptyInputError("pce_loss: empty target");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (!mask[t]) continue;
    const auto& row = logprob_rows[t];
    auto id = static_cast<std::size_t>(y[t]);
    if (y[t] < 0 || id >= row.size()) {
      throw InvalidTokenError("pce_loss: target id out of vocabulary");
    }
    sum += row[id];
  }
  return -sum / static_cast<double>(y.size());
}

double ce_loss(const Rows& logprob_rows, std::span<const TokenId> y) {
  std::vector<std::uint8_t> ones(y.size(), 1);
  return pce_loss(logprob_rows, y, ones);
}

double er_loss(const Rows& logprob_rows, std::span<const TokenId> token_set,
               ErVariant variant, std::size_t positions) {
  if (token_set.empty()) {
    throw EmptyInputError("er_loss: empty token set");
  }
  if (logprob_rows.empty()) {
    throw EmptyInputError("er_loss: no rows");
  }
  const std::size_t limit = std::min(positions, logprob_rows.size());
  double sum = 0.0;
  for (std::size_t t = 0; t < limit; ++t) {
    const auto& row = logprob_rows[t];
    if (variant == ErVariant::SumOfLogs) {
      for (TokenId v : token_set) {
        if (v < 0 || static_cast<std::size_t>(v) >= row.size()) {
          throw InvalidTokenError("er_loss: token set id out of vocabulary");
        }
        sum += row[static_cast<std::size_t>(v)];
      }
    } else {
      double mass = 0.0;
      for (TokenId v : token_set) {
        if (v < 0 || static_cast<std::size_t>(v) >= row.size()) {
          throw InvalidTokenError("er_loss: token set id out of vocabulary");
        }
        mass += std::exp(row[static_cast<std::size_t>(v)]);
      }
      sum += std::log(mass);
    }
  }
  return -sum / static_cast<double>(logprob_rows.size());
}

double dt_loss(const Rows& prob_rows, TokenId eos_id, TokenId eot_id) {
  if (eos_id == eot_id) {
    throw InvalidConfigError("dt_loss: eos and eot must be distinct");
  }
  if (prob_rows.empty()) {
    throw EmptyInputError("dt_loss: no rows");
  }
  double sum = 0.0;
  for (const auto& row : prob_rows) {
    if (eos_id < 0 || eot_id < 0 || static_cast<std::size_t>(eos_id) >= row.size() ||
        static_cast<std::size_t>(eot_id) >= row.size()) {
      throw InvalidTokenError("dt_loss: marker id out of vocabulary");
    }
    sum += row[static_cast<std::size_t>(eos_id)] + row[static_cast<std::size_t>(eot_id)];
  }
  return sum / static_cast<double>(prob_rows.size());
}

LossBreakdown composite_loss(double pce, double er, double dt, const LossWeights& weights) {
  weights.validate();
  LossBreakdown out;
  out.pce = pce;
  out.er = er;
  out.dt = dt;
  out.total = weights.alpha * pce + weights.beta * er + weights.gamma * dt;
  return out;
}

LossBreakdown evaluate_true_loss(const LmAdapter& model, std::span<const TokenId> prefix,
                                 std::span<const TokenId> suffix, std::span<const TokenId> y,
                                 const LossSpec& spec) {
  if (prefix.empty() || y.empty()) {
    throw EmptyInputError("evaluate_true_loss needs a prefix and a target");
  }
  if (spec.mask.size() != y.size()) {
    throw DimensionMismatchError("evaluate_true_loss: mask does not cover the target");
  }
  std::vector<TokenId> context(prefix.begin(), prefix.end());
  context.insert(context.end(), suffix.begin(), suffix.end());
  context.insert(context.end(), y.begin(), y.end());
  Rows all = model.teacher_forced_logprobs(context);

  const std::size_t start = prefix.size() + suffix.size() - 1;
  Rows target_rows(all.begin() + static_cast<std::ptrdiff_t>(start),
                   all.begin() + static_cast<std::ptrdiff_t>(start + y.size()));

  const TokenId eos = spec.eos_id >= 0 ? spec.eos_id : model.vocab().eos_id;
  const TokenId eot = spec.eot_id >= 0 ? spec.eot_id : model.vocab().eot_id;

  double pce = pce_loss(target_rows, y, spec.mask);
  double er = spec.token_set.empty()
                  ? 0.0
                  : er_loss(target_rows, spec.token_set, spec.er_variant, spec.er_positions);
  double dt = dt_loss(rows_to_probs(target_rows), eos, eot);
  return composite_loss(pce, er, dt, spec.weights);
}

}  // namespace prolix
