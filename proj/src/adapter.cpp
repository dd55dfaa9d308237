#include "prolix/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prolix/errors.hpp"

namespace prolix {

TokenSeq LmAdapter::encode(const std::string& text) const {
  TokenSeq out;
  out.ids = encode_ids(text);
  out.text = text;
  return out;
}

TokenSeq LmAdapter::seq(std::vector<TokenId> ids) const {
  TokenSeq out;
  out.text = decode_text(ids);
  out.ids = std::move(ids);
  return out;
}

Row LmAdapter::next_logprobs(std::span<const TokenId> context) const {
  Rows rows = teacher_forced_logprobs(context);
  return rows.back();
}

GradMatrix LmAdapter::suffix_gradient(std::span<const TokenId>, std::span<const TokenId>,
                                      std::span<const TokenId>, const LossSpec&) const {
  throw CapabilityUnsupportedError(name() + " does not expose input gradients");
}

GenerationRecord LmAdapter::generate(const TokenSeq& prompt, const DecodeParams& params) const {
  if (prompt.ids.empty()) {
    throw EmptyInputError("generate: empty prompt");
  }
  if (params.max_new_tokens == 0) {
    throw EmptyBudgetError("generate: max_new_tokens is 0");
  }
  if (prompt.ids.size() > max_context()) {
    throw ContextOverflowError("prompt length " + std::to_string(prompt.ids.size()) +
                               " exceeds context " + std::to_string(max_context()));
  }

  const VocabInfo& v = vocab();
  Rng rng(params.seed);  // private stream per call

  GenerationRecord rec;
  rec.prompt = prompt;
  rec.params = params;
  rec.stop = StopReason::MaxTokens;

  std::vector<TokenId> context = prompt.ids;
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < params.max_new_tokens; ++i) {
    if (context.size() >= max_context()) {
      rec.stop = StopReason::Exhausted;
      break;
    }
    Row row = next_logprobs(context);
    TokenId next = params.mode == DecodeMode::Greedy
                       ? greedy_pick(row)
                       : sample_pick(row, params.temperature, params.top_p, rng);
    out.push_back(next);
    context.push_back(next);
    if (next == v.eot_id) rec.eot_found = true;
    if (next == v.eos_id) {
      rec.stop = StopReason::Eos;
      break;
    }
  }
  rec.output = seq(std::move(out));
  return rec;
}

std::vector<TokenId> assemble_context(const VocabInfo& vocab, std::span<const TokenId> system,
                                      std::span<const TokenId> question,
                                      std::span<const TokenId> suffix, bool include_system) {
  std::vector<TokenId> out;
  out.reserve(1 + system.size() + question.size() + suffix.size());
  out.push_back(vocab.bos_id);
  if (include_system) {
    out.insert(out.end(), system.begin(), system.end());
  }
  out.insert(out.end(), question.begin(), question.end());
  out.insert(out.end(), suffix.begin(), suffix.end());
  return out;
}

TokenId greedy_pick(std::span<const double> logprob_row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logprob_row.size(); ++i) {
    if (logprob_row[i] > logprob_row[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

TokenId sample_pick(std::span<const double> logprob_row, double temperature, double top_p,
                    Rng& rng) {
  if (!(temperature > 0.0)) {
    throw InvalidConfigError("sampling temperature must be positive");
  }
  if (!(top_p > 0.0) || top_p > 1.0) {
    throw InvalidConfigError("top_p must lie in (0, 1]");
  }
  const std::size_t n = logprob_row.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return logprob_row[a] > logprob_row[b];
  });

  // Tempered probabilities, normalized against the max for stability.
  double max_lp = logprob_row[order[0]];
  std::vector<double> weights(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    weights[i] = std::exp((logprob_row[order[i]] - max_lp) / temperature);
    total += weights[i];
  }

  // Smallest prefix of the sorted list whose mass reaches top_p.
  std::size_t keep = n;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += weights[i] / total;
    if (acc >= top_p) {
      keep = i + 1;
      break;
    }
  }
  std::size_t pick = weighted_index(rng, std::span<const double>(weights.data(), keep));
  return static_cast<TokenId>(order[pick]);
}

}  // namespace prolix
