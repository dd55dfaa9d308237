#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prolix/adapter.hpp"

namespace prolix {

enum class TargetStrategy { Raw, Cot, OptimizedCot };

std::string strategy_name(TargetStrategy s);

/// The two stock instruction prompts. The "optimized" one is the strongest
/// known length-maximizing instruction for chat models and ships as a search
/// seed; desk-scale models use their own candidate prompts.
const std::string& cot_prompt();
const std::string& optimized_cot_prompt();

struct TargetRecord {
  std::string question;
  std::string instruction_prompt;
  TokenSeq target;
  TargetStrategy strategy = TargetStrategy::Raw;
  std::size_t max_len = 3000;
};

/// Greedy rollout of (instruction, question), truncated at max_len tokens.
/// The strategy tag is derived from the instruction string.
TargetRecord generate_target(const LmAdapter& model, const std::string& question,
                             const std::string& instruction_prompt, std::size_t max_len = 3000);

struct PromptScore {
  std::string prompt;
  double mean_len = 0.0;  // mean generated tokens over the train questions
  bool encodable = true;  // prompts the tokenizer rejects are logged, not scored
};

struct PromptSearchConfig {
  std::size_t budget = 0;  // mutation rounds beyond scoring the seeds
  std::uint64_t seed = 0;
  std::size_t max_len = 3000;
  std::vector<std::string> fragment_bank;  // empty selects the built-in bank
};

struct PromptSearchResult {
  std::string best_prompt;
  double best_mean_len = 0.0;
  std::vector<PromptScore> log;  // every evaluated prompt, in evaluation order
};

/// Hill-climbs over candidate prompts plus fragment-bank mutations, scoring
/// each prompt by mean greedy output length over the train questions.
/// Deterministic given config.seed; never returns a prompt scoring below the
/// best seed candidate.
PromptSearchResult search_prompt(const LmAdapter& model,
                                 const std::vector<std::string>& train_questions,
                                 const std::vector<std::string>& candidate_prompts,
                                 const PromptSearchConfig& config);

struct ReasoningTokenSet {
  std::vector<TokenId> tokens;  // highest count first, ties to the lower id
  std::size_t n = 0;
  std::string source_corpus_id;
  bool short_set = false;  // fewer distinct tokens were observed than asked for
};

/// Counts tokens in the first two positions of every sentence across the
/// corpus and keeps the n most frequent. Special tokens never enter the set.
ReasoningTokenSet extract_reasoning_tokens(const LmAdapter& model,
                                           const std::vector<TokenSeq>& corpus, std::size_t n,
                                           const std::string& corpus_id = "");

}  // namespace prolix
