#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prolix/adapter.hpp"
#include "prolix/forge.hpp"
#include "prolix/gcg.hpp"
#include "prolix/transfer.hpp"

namespace prolix {

/// Energy/latency instrumentation for eval runs. kind "none" measures latency
/// only; "mock" attaches a constant-power meter so energy comes out as
/// power_w × duration.
struct MeterConfig {
  std::string kind = "none";  // none | mock
  double power_w = 15.0;
  double seconds_per_token = 0.01;  // virtual-clock advance per generated token
  std::string clock = "virtual";    // virtual | wall
};

struct TargetConfig {
  std::string strategy = "cot";  // raw | cot | optimized-cot
  std::string instruction;       // non-empty overrides the strategy's stock prompt
  std::size_t max_len = 3000;
  std::size_t budget = 0;  // prompt-search mutation rounds; 0 skips the search
  std::vector<std::string> fragments;  // empty selects the built-in bank
};

struct AblateConfig {
  std::string mode = "k-sweep";  // k-sweep | loss-combos
  std::vector<double> k_values = {100.0, 50.0, 20.0, 5.0, 1.0};
};

struct TransferConfig {
  std::vector<EndpointSpec> endpoints;
  std::string source_model;
};

/// Fully resolved experiment description. Every field has a usable default so
/// an empty JSON object is a valid config; serialization echoes all fields.
struct ExperimentConfig {
  std::string model = "tiny-lm";
  std::string dataset;  // JSONL rows {question, answer}; empty = bundled synthetic set
  std::size_t sample_size = 10;
  std::uint64_t sample_seed = 0;
  std::string output_dir = "out";
  std::size_t reps = 3;
  bool include_system = true;
  std::string system_prompt;
  std::vector<std::string> baselines = {"cot", "cat-attack", "random"};
  DecodeParams decode;
  AttackConfig attack;
  TargetConfig target;
  MeterConfig meter;
  AblateConfig ablate;
  TransferConfig transfer;
};

/// Parses a config from JSON text. Unknown keys at any nesting level are
/// ConfigError, as are type mismatches and out-of-range values.
ExperimentConfig config_from_json(const std::string& text);

/// Reads and parses a config file; also verifies that referenced paths
/// (dataset) exist. Missing file or bad content is ConfigError.
ExperimentConfig load_config(const std::string& path);

/// Serializes with sorted keys and 2-space indent; config_from_json of the
/// result reproduces the input exactly (round-trip invariant).
std::string config_to_json(const ExperimentConfig& config);

DecodeMode parse_decode_mode(const std::string& name);
SignConvention parse_convention(const std::string& name);
ErVariant parse_er_variant(const std::string& name);
TargetStrategy parse_strategy(const std::string& name);
const char* decode_mode_name(DecodeMode mode);
const char* convention_name(SignConvention convention);
const char* er_variant_name(ErVariant variant);

}  // namespace prolix
