#include "prolix/gcg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prolix/errors.hpp"

namespace prolix {

void AttackConfig::validate() const {
  if (suffix_len < 1) throw InvalidConfigError("suffix_len must be >= 1");
  if (pool < 1) throw InvalidConfigError("pool must be >= 1");
  if (batch < 1) throw InvalidConfigError("batch must be >= 1");
  if (batch > pool * suffix_len) {
    throw InvalidConfigError("batch " + std::to_string(batch) + " exceeds pool * suffix_len = " +
                             std::to_string(pool * suffix_len));
  }
  weights.validate();
}

std::set<TokenId> AttackConfig::effective_forbidden(const VocabInfo& vocab) const {
  std::set<TokenId> out(vocab.special_ids.begin(), vocab.special_ids.end());
  out.insert(forbidden.begin(), forbidden.end());
  return out;
}

std::vector<std::vector<double>> first_order_scores(const GradMatrix& gradient,
                                                    std::span<const TokenId> suffix,
                                                    const EmbeddingTable& table,
                                                    const std::set<TokenId>& forbidden) {
  if (gradient.size() != suffix.size()) {
    throw DimensionMismatchError("gradient rows " + std::to_string(gradient.size()) +
                                 " vs suffix length " + std::to_string(suffix.size()));
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> scores(suffix.size());
  for (std::size_t i = 0; i < suffix.size(); ++i) {
    const auto& g = gradient[i];
    std::vector<double> row;
    if (table.identity()) {
      // One-hot space: <g, e(w) - e(x_i)> = g[w] - g[x_i].
      if (suffix[i] < 0 || static_cast<std::size_t>(suffix[i]) >= g.size()) {
        throw InvalidTokenError("suffix token " + std::to_string(suffix[i]) +
                                " outside gradient width " + std::to_string(g.size()));
      }
      row.assign(g.begin(), g.end());
      const double base = g[static_cast<std::size_t>(suffix[i])];
      for (double& s : row) s -= base;
    } else {
      if (static_cast<Eigen::Index>(g.size()) != table.rows.cols()) {
        throw DimensionMismatchError("gradient width " + std::to_string(g.size()) +
                                     " vs embedding dim " + std::to_string(table.rows.cols()));
      }
      if (suffix[i] < 0 || suffix[i] >= table.rows.rows()) {
        throw InvalidTokenError("suffix token " + std::to_string(suffix[i]) +
                                " outside embedding table rows " +
                                std::to_string(table.rows.rows()));
      }
      Eigen::Map<const Eigen::VectorXd> gv(g.data(), static_cast<Eigen::Index>(g.size()));
      Eigen::VectorXd proj = table.rows * gv;
      row.assign(proj.data(), proj.data() + proj.size());
      const double base = row[static_cast<std::size_t>(suffix[i])];
      for (double& s : row) s -= base;
    }
    for (TokenId f : forbidden) {
      if (f >= 0 && static_cast<std::size_t>(f) < row.size()) row[static_cast<std::size_t>(f)] = inf;
    }
    scores[i] = std::move(row);
  }
  return scores;
}

std::vector<std::vector<TokenId>> top_candidates(const std::vector<std::vector<double>>& scores,
                                                 std::size_t pool) {
  std::vector<std::vector<TokenId>> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::vector<TokenId> ids;
    ids.reserve(scores[i].size());
    for (std::size_t w = 0; w < scores[i].size(); ++w) {
      if (std::isfinite(scores[i][w])) ids.push_back(static_cast<TokenId>(w));
    }
    std::sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) {
      double sa = scores[i][static_cast<std::size_t>(a)];
      double sb = scores[i][static_cast<std::size_t>(b)];
      if (sa != sb) return sa < sb;
      return a < b;
    });
    if (ids.size() > pool) ids.resize(pool);
    out[i] = std::move(ids);
  }
  return out;
}

namespace {

// Deterministic candidate comparison: loss first, then position, then id.
bool candidate_better(double loss, const GcgCandidate& cand, double best_loss,
                      const GcgCandidate& best) {
  if (loss != best_loss) return loss < best_loss;
  if (cand.position != best.position) return cand.position < best.position;
  return cand.token < best.token;
}

}  // namespace

StepRecord gcg_step(const LmAdapter& model, GcgState& state, std::span<const TokenId> prefix,
                    std::span<const TokenId> target, const LossSpec& spec,
                    const AttackConfig& config, Rng& rng) {
  const auto forbidden = config.effective_forbidden(model.vocab());
  const GradMatrix grad = model.suffix_gradient(prefix, state.suffix, target, spec);
  const auto scores = first_order_scores(grad, state.suffix, EmbeddingTable::one_hot(), forbidden);
  const auto pools = top_candidates(scores, config.pool);

  std::vector<GcgCandidate> all;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    for (TokenId t : pools[i]) all.push_back({i, t});
  }
  const std::size_t m = std::min<std::size_t>(config.batch, all.size());
  for (std::size_t j = 0; j < m; ++j) {
    std::size_t k = j + uniform_index(rng, all.size() - j);
    std::swap(all[j], all[k]);
  }

  bool have_best = false;
  GcgCandidate best;
  LossBreakdown best_loss;
  std::vector<TokenId> trial = state.suffix;
  for (std::size_t j = 0; j < m; ++j) {
    const auto& cand = all[j];
    trial = state.suffix;
    trial[cand.position] = cand.token;
    LossBreakdown lb = evaluate_true_loss(model, prefix, trial, target, spec);
    if (!have_best || candidate_better(lb.total, cand, best_loss.total, best)) {
      have_best = true;
      best = cand;
      best_loss = lb;
    }
  }

  StepRecord rec;
  rec.loss = state.incumbent;
  if (have_best && best_loss.total < state.incumbent.total) {
    rec.accepted = true;
    rec.position = best.position;
    rec.old_id = state.suffix[best.position];
    rec.new_id = best.token;
    rec.loss = best_loss;
    state.suffix[best.position] = best.token;
    state.incumbent = best_loss;
  }
  return rec;
}

SuffixResult gcg_optimize(const LmAdapter& model, std::span<const TokenId> prefix,
                          std::span<const TokenId> target, const std::set<TokenId>& token_set,
                          const AttackConfig& config) {
  config.validate();
  const auto& vocab = model.vocab();
  const auto forbidden = config.effective_forbidden(vocab);

  std::vector<TokenId> init_pool;
  for (TokenId v = 0; v < vocab.size; ++v) {
    if (!vocab.is_special(v) && forbidden.find(v) == forbidden.end()) init_pool.push_back(v);
  }
  if (init_pool.empty()) throw InvalidConfigError("no tokens available for suffix initialization");

  Rng rng(config.seed);
  std::vector<TokenId> suffix(config.suffix_len);
  for (auto& t : suffix) t = init_pool[uniform_index(rng, init_pool.size())];

  // The mask is built once from the clean prompt and frozen for the run.
  LossSpec spec;
  spec.weights = config.weights;
  spec.mask = build_mask(importance_scores(model, prefix, target, config.convention), config.K,
                         config.convention)
                  .mask;
  spec.token_set.assign(token_set.begin(), token_set.end());
  spec.er_variant = config.er_variant;
  spec.eos_id = vocab.eos_id;
  spec.eot_id = vocab.eot_id;

  GcgState state;
  state.suffix = suffix;
  state.incumbent = evaluate_true_loss(model, prefix, suffix, target, spec);

  SuffixResult res;
  res.initial_suffix = TokenSeq{suffix, model.decode_text(suffix)};
  res.loss_trace.push_back(state.incumbent);
  res.steps_run = config.steps;
  for (std::size_t step = 0; step < config.steps; ++step) {
    StepRecord rec = gcg_step(model, state, prefix, target, spec, config, rng);
    rec.step = step;
    res.step_log.push_back(rec);
    if (rec.accepted) {
      res.accepted_steps += 1;
      res.loss_trace.push_back(rec.loss);
    }
  }
  res.suffix = TokenSeq{state.suffix, model.decode_text(state.suffix)};
  return res;
}

OracleResult brute_force_oracle(const LmAdapter& model, std::span<const TokenId> prefix,
                                std::span<const TokenId> suffix, std::span<const TokenId> target,
                                const LossSpec& spec, const std::set<TokenId>& forbidden) {
  const auto& vocab = model.vocab();
  std::vector<TokenId> allowed;
  for (TokenId v = 0; v < vocab.size; ++v) {
    if (forbidden.find(v) == forbidden.end()) allowed.push_back(v);
  }
  const std::size_t evals = allowed.size() * suffix.size();
  if (evals > 100000) {
    throw OracleTooLargeError("enumeration needs " + std::to_string(evals) +
                              " evaluations (limit 100000)");
  }

  OracleResult out;
  bool have = false;
  std::vector<TokenId> trial(suffix.begin(), suffix.end());
  for (std::size_t i = 0; i < suffix.size(); ++i) {
    for (TokenId w : allowed) {
      trial.assign(suffix.begin(), suffix.end());
      trial[i] = w;
      LossBreakdown lb = evaluate_true_loss(model, prefix, trial, target, spec);
      out.evaluations += 1;
      GcgCandidate cand{i, w};
      if (!have || candidate_better(lb.total, cand, out.loss.total, out.best)) {
        have = true;
        out.best = cand;
        out.loss = lb;
      }
    }
  }
  return out;
}

}  // namespace prolix
