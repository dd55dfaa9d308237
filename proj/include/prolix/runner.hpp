#pragma once

#include <string>
#include <vector>

#include "prolix/config.hpp"

namespace prolix {

struct DatasetEntry {
  std::string question;
  std::string answer;  // gold answer as text
};

/// JSONL rows {"question": ..., "answer": ...}; extra keys are ignored so
/// GSM8K/ORCA-style exports load as-is. Malformed rows are ConfigError.
std::vector<DatasetEntry> load_dataset(const std::string& path);

/// The bundled synthetic arithmetic set used when no dataset path is given.
std::vector<DatasetEntry> builtin_dataset();

/// Seeded sample without replacement, order deterministic for a given seed.
/// ConfigError when n exceeds the dataset size.
std::vector<DatasetEntry> sample_questions(const std::vector<DatasetEntry>& dataset,
                                           std::size_t n, std::uint64_t seed);

inline constexpr const char* kCommands[] = {"forge-targets", "find-tokens", "attack", "eval",
                                            "ablate", "transfer", "report"};

/// Executes one pipeline command against the config's output directory and
/// returns the process exit code: 0 success, 2 config error, 3 missing
/// prerequisite, 4 runtime failure. Failures also leave a machine-readable
/// error.json in the output directory.
int run_command(const std::string& command, const ExperimentConfig& config);

}  // namespace prolix
