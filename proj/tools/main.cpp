#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "prolix/config.hpp"
#include "prolix/errors.hpp"
#include "prolix/runner.hpp"

namespace {

struct Overrides {
  std::optional<std::string> model, dataset, output_dir, strategy, instruction, ablate_mode,
      decode_mode, convention;
  std::optional<std::size_t> sample_size, steps, suffix_len, pool, batch, reps, max_new_tokens,
      budget, n;
  std::optional<std::uint64_t> sample_seed, seed;
  std::optional<double> K, alpha, beta, gamma;
};

void apply(const Overrides& o, prolix::ExperimentConfig& cfg) {
  if (o.model) cfg.model = *o.model;
  if (o.dataset) cfg.dataset = *o.dataset;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.strategy) {
    prolix::parse_strategy(*o.strategy);
    cfg.target.strategy = *o.strategy;
  }
  if (o.instruction) cfg.target.instruction = *o.instruction;
  if (o.ablate_mode) {
    if (*o.ablate_mode != "k-sweep" && *o.ablate_mode != "loss-combos") {
      throw prolix::ConfigError("--ablate-mode must be one of: k-sweep, loss-combos");
    }
    cfg.ablate.mode = *o.ablate_mode;
  }
  if (o.decode_mode) cfg.decode.mode = prolix::parse_decode_mode(*o.decode_mode);
  if (o.convention) cfg.attack.convention = prolix::parse_convention(*o.convention);
  if (o.sample_size) cfg.sample_size = *o.sample_size;
  if (o.steps) cfg.attack.steps = *o.steps;
  if (o.suffix_len) cfg.attack.suffix_len = *o.suffix_len;
  if (o.pool) cfg.attack.pool = *o.pool;
  if (o.batch) cfg.attack.batch = *o.batch;
  if (o.reps) cfg.reps = *o.reps;
  if (o.max_new_tokens) cfg.decode.max_new_tokens = *o.max_new_tokens;
  if (o.budget) cfg.target.budget = *o.budget;
  if (o.n) cfg.attack.n = *o.n;
  if (o.sample_seed) cfg.sample_seed = *o.sample_seed;
  if (o.seed) cfg.attack.seed = *o.seed;
  if (o.K) cfg.attack.K = *o.K;
  if (o.alpha) cfg.attack.weights.alpha = *o.alpha;
  if (o.beta) cfg.attack.weights.beta = *o.beta;
  if (o.gamma) cfg.attack.weights.gamma = *o.gamma;
  // Re-check cross-field constraints that an override may have broken.
  cfg.attack.validate();
  if (!(cfg.attack.K > 0.0 && cfg.attack.K <= 100.0)) {
    throw prolix::ConfigError("--K must lie in (0, 100]");
  }
  if (cfg.sample_size == 0) throw prolix::ConfigError("--sample-size must be at least 1");
  if (cfg.reps == 0) throw prolix::ConfigError("--reps must be at least 1");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "prolix: crafts adversarial suffixes that inflate reasoning-model output, then "
      "measures the damage.\n"
      "Flags override config-file keys. Exit codes: 0 ok, 2 config error, 3 missing "
      "prerequisite, 4 runtime failure."};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON config file (defaults apply without one)");

  Overrides o;
  app.add_option("--model", o.model, "model name or .tablelm path");
  app.add_option("--dataset", o.dataset, "JSONL dataset path {question, answer}");
  app.add_option("--output-dir", o.output_dir, "artifact directory");
  app.add_option("--sample-size", o.sample_size, "questions sampled from the dataset");
  app.add_option("--sample-seed", o.sample_seed, "question sampling seed");
  app.add_option("--steps", o.steps, "optimizer steps per suffix");
  app.add_option("--suffix-len", o.suffix_len, "adversarial suffix length in tokens");
  app.add_option("--pool", o.pool, "top candidates kept per suffix position");
  app.add_option("--batch", o.batch, "candidates re-evaluated exactly per step");
  app.add_option("--seed", o.seed, "attack seed");
  app.add_option("--K", o.K, "importance-mask percentage in (0, 100]");
  app.add_option("--n", o.n, "reasoning token-set size");
  app.add_option("--alpha", o.alpha, "prolonged-CE loss weight");
  app.add_option("--beta", o.beta, "excessive-reasoning loss weight");
  app.add_option("--gamma", o.gamma, "delayed-termination loss weight");
  app.add_option("--convention", o.convention, "importance sign: loss-delta | negated-delta");
  app.add_option("--strategy", o.strategy, "target construction: raw | cot | optimized-cot");
  app.add_option("--instruction", o.instruction, "explicit instruction prompt override");
  app.add_option("--budget", o.budget, "instruction-search mutation rounds");
  app.add_option("--ablate-mode", o.ablate_mode, "k-sweep | loss-combos");
  app.add_option("--decode-mode", o.decode_mode, "greedy | sample");
  app.add_option("--max-new-tokens", o.max_new_tokens, "generation cap per rollout");
  app.add_option("--reps", o.reps, "timed repetitions per measurement");

  for (const char* name : prolix::kCommands) {
    app.add_subcommand(name, "");
  }
  app.get_subcommand("forge-targets")->description("sample questions and roll out targets");
  app.get_subcommand("find-tokens")->description("rank reasoning-opening tokens from targets");
  app.get_subcommand("attack")->description("optimize one suffix per target");
  app.get_subcommand("eval")->description("measure baselines and attacked generations");
  app.get_subcommand("ablate")->description("K sweep or loss-combination sweep on one target");
  app.get_subcommand("transfer")->description("replay the suffix against remote endpoints");
  app.get_subcommand("report")->description("re-aggregate rows.jsonl into report.csv and plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    prolix::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = prolix::load_config(config_path);
    apply(o, cfg);
    const std::string command = app.get_subcommands().front()->get_name();
    return prolix::run_command(command, cfg);
  } catch (const prolix::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const prolix::Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 4;
  }
}
