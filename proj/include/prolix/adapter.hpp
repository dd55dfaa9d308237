#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prolix/losses.hpp"
#include "prolix/rng.hpp"
#include "prolix/rows.hpp"
#include "prolix/tokens.hpp"

namespace prolix {

enum class DecodeMode { Greedy, Sample };

struct DecodeParams {
  DecodeMode mode = DecodeMode::Greedy;
  double temperature = 0.6;
  double top_p = 0.95;
  std::size_t max_new_tokens = 256;
  std::uint64_t seed = 0;
};

enum class StopReason { Eos, MaxTokens, Exhausted };

struct GenerationRecord {
  TokenSeq prompt;
  TokenSeq output;  // generated tokens only; includes the terminating eos if hit
  bool eot_found = false;
  DecodeParams params;
  StopReason stop = StopReason::MaxTokens;
};

/// Uniform interface over autoregressive models. Implementations are
/// read-only after construction and safe for concurrent queries; seeded
/// generation owns a per-call random stream.
class LmAdapter {
public:
  virtual ~LmAdapter() = default;

  virtual std::string name() const = 0;
  virtual const VocabInfo& vocab() const = 0;
  virtual std::size_t max_context() const = 0;

  virtual std::vector<TokenId> encode_ids(const std::string& text) const = 0;
  virtual std::string decode_text(std::span<const TokenId> ids) const = 0;

  TokenSeq encode(const std::string& text) const;
  TokenSeq seq(std::vector<TokenId> ids) const;

  /// One row per context position; rows[t] is the log-probability
  /// distribution of token t+1 given tokens 0..t.
  virtual Rows teacher_forced_logprobs(std::span<const TokenId> context) const = 0;

  /// Distribution of the next token after the full context (last row of
  /// teacher_forced_logprobs unless overridden with something cheaper).
  virtual Row next_logprobs(std::span<const TokenId> context) const;

  virtual bool supports_gradients() const { return false; }

  /// ∂(composite loss)/∂(relaxed one-hot suffix inputs), shape
  /// |suffix| x vocab, evaluated at the one-hot vertex of the current suffix.
  /// Default: CapabilityUnsupported.
  virtual GradMatrix suffix_gradient(std::span<const TokenId> prefix,
                                     std::span<const TokenId> suffix,
                                     std::span<const TokenId> continuation,
                                     const LossSpec& spec) const;

  virtual GenerationRecord generate(const TokenSeq& prompt, const DecodeParams& params) const;
};

/// [bos] + system? + question + adversarial suffix. The suffix sits directly
/// after the question text, before anything that closes the turn.
std::vector<TokenId> assemble_context(const VocabInfo& vocab,
                                      std::span<const TokenId> system,
                                      std::span<const TokenId> question,
                                      std::span<const TokenId> suffix,
                                      bool include_system = true);

/// Argmax with ties resolved toward the lowest token id.
TokenId greedy_pick(std::span<const double> logprob_row);

/// Temperature + nucleus sampling from one log-prob row, driven by the
/// caller's stream.
TokenId sample_pick(std::span<const double> logprob_row, double temperature, double top_p,
                    Rng& rng);

/// Registry: "table-lm", "tiny-lm", or a filesystem path to a .tablelm file.
/// Instances are cached per process ("tiny-lm" trains on first load).
std::shared_ptr<const LmAdapter> load_adapter(const std::string& name_or_path);

}  // namespace prolix
