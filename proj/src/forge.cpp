#include "prolix/forge.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>

#include "prolix/errors.hpp"
#include "prolix/rng.hpp"
#include "prolix/sentences.hpp"

namespace prolix {

std::string strategy_name(TargetStrategy s) {
  switch (s) {
    case TargetStrategy::Raw: return "raw";
    case TargetStrategy::Cot: return "cot";
    case TargetStrategy::OptimizedCot: return "optimized-cot";
  }
  return "raw";
}

const std::string& cot_prompt() {
  static const std::string p = "Let's think step by step.";
  return p;
}

const std::string& optimized_cot_prompt() {
  static const std::string p =
      "Provide a detailed breakdown of the problem or topic at hand, considering every aspect "
      "and nuance. Start from an introductory overview, followed by dissecting the components "
      "logically, integrating examples, addressing possible counterarguments or misconceptions, "
      "and uniformly elaborating on each point with explanatory details. Prioritize presenting "
      "a thorough, analytical approach that can include speculative insights, hypothetical "
      "scenarios, or alternative viewpoints, without rushing to conclusions. Aim to showcase a "
      "clear conceptualization followed by logical reasoning, actively prompting self-reflection "
      "on the implications of your insights.";
  return p;
}

TargetRecord generate_target(const LmAdapter& model, const std::string& question,
                             const std::string& instruction_prompt, std::size_t max_len) {
  if (question.empty()) throw EmptyInputError("question is empty");
  if (max_len < 1) throw InvalidConfigError("max_len must be >= 1");

  std::vector<TokenId> instr_ids;
  if (!instruction_prompt.empty()) instr_ids = model.encode_ids(instruction_prompt);
  const std::vector<TokenId> q_ids = model.encode_ids(question);
  const std::vector<TokenId> ctx =
      assemble_context(model.vocab(), instr_ids, q_ids, std::vector<TokenId>{}, true);

  DecodeParams params;
  params.mode = DecodeMode::Greedy;
  params.max_new_tokens = max_len;
  GenerationRecord rec = model.generate(TokenSeq{ctx, ""}, params);

  TargetRecord out;
  out.question = question;
  out.instruction_prompt = instruction_prompt;
  out.max_len = max_len;
  out.target.ids = rec.output.ids;
  if (out.target.ids.size() > max_len) out.target.ids.resize(max_len);
  out.target.text = model.decode_text(out.target.ids);
  if (instruction_prompt.empty()) {
    out.strategy = TargetStrategy::Raw;
  } else if (instruction_prompt == cot_prompt()) {
    out.strategy = TargetStrategy::Cot;
  } else {
    out.strategy = TargetStrategy::OptimizedCot;
  }
  return out;
}

namespace {

const std::vector<std::string>& builtin_fragment_bank() {
  static const std::vector<std::string> bank = {
      "Consider every aspect and nuance.",
      "Start from an introductory overview.",
      "Integrate examples throughout.",
      "Address possible counterarguments or misconceptions.",
      "Elaborate on each point with explanatory details.",
      "Include speculative insights, hypothetical scenarios, or alternative viewpoints.",
      "Do not rush to conclusions.",
      "Actively prompt self-reflection on the implications of your insights.",
  };
  return bank;
}

}  // namespace

PromptSearchResult search_prompt(const LmAdapter& model,
                                 const std::vector<std::string>& train_questions,
                                 const std::vector<std::string>& candidate_prompts,
                                 const PromptSearchConfig& config) {
  if (train_questions.empty()) throw EmptyInputError("no train questions");
  if (candidate_prompts.empty()) throw EmptyInputError("no candidate prompts");

  PromptSearchResult res;
  std::map<std::string, std::optional<double>> cache;

  auto score = [&](const std::string& prompt) -> std::optional<double> {
    if (auto it = cache.find(prompt); it != cache.end()) return it->second;
    std::optional<double> value;
    try {
      double sum = 0.0;
      for (const auto& q : train_questions) {
        sum += static_cast<double>(generate_target(model, q, prompt, config.max_len).target.ids.size());
      }
      value = sum / static_cast<double>(train_questions.size());
    } catch (const InvalidTokenError&) {
      value = std::nullopt;  // prompt does not tokenize on this model
    }
    cache[prompt] = value;
    res.log.push_back({prompt, value.value_or(0.0), value.has_value()});
    return value;
  };

  bool have_best = false;
  for (const auto& cand : candidate_prompts) {
    auto s = score(cand);
    if (s && (!have_best || *s > res.best_mean_len)) {
      have_best = true;
      res.best_prompt = cand;
      res.best_mean_len = *s;
    }
  }
  if (!have_best) throw InvalidTokenError("no candidate prompt tokenizes on this model");

  const auto& bank = config.fragment_bank.empty() ? builtin_fragment_bank() : config.fragment_bank;
  const std::string base = res.best_prompt;
  std::set<std::size_t> active;
  Rng rng(config.seed);
  for (std::size_t round = 0; round < config.budget; ++round) {
    std::size_t idx = uniform_index(rng, bank.size());
    std::set<std::size_t> trial = active;
    if (trial.count(idx)) {
      trial.erase(idx);
    } else {
      trial.insert(idx);
    }
    std::string prompt = base;
    for (std::size_t f : trial) {
      if (!prompt.empty()) prompt += " ";
      prompt += bank[f];
    }
    auto s = score(prompt);
    if (s && *s > res.best_mean_len) {
      res.best_mean_len = *s;
      res.best_prompt = prompt;
      active = trial;
    }
  }
  return res;
}

ReasoningTokenSet extract_reasoning_tokens(const LmAdapter& model,
                                           const std::vector<TokenSeq>& corpus, std::size_t n,
                                           const std::string& corpus_id) {
  if (corpus.empty()) throw EmptyInputError("corpus is empty");
  if (n < 1) throw InvalidConfigError("n must be >= 1");

  const VocabInfo& vocab = model.vocab();
  auto text_of = [&](TokenId id) {
    return model.decode_text(std::span<const TokenId>(&id, 1));
  };

  std::map<TokenId, std::size_t> counts;
  for (const auto& seq : corpus) {
    for (auto [b, e] : split_sentences(seq.ids, text_of)) {
      for (std::size_t pos = b; pos < e && pos < b + 2; ++pos) {
        TokenId id = seq.ids[pos];
        if (!vocab.is_special(id)) counts[id] += 1;
      }
    }
  }

  std::vector<std::pair<TokenId, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  ReasoningTokenSet out;
  out.source_corpus_id = corpus_id;
  out.short_set = ranked.size() < n;
  const std::size_t keep = std::min(n, ranked.size());
  for (std::size_t i = 0; i < keep; ++i) out.tokens.push_back(ranked[i].first);
  out.n = out.tokens.size();
  return out;
}

}  // namespace prolix
