#include "prolix/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "prolix/errors.hpp"

namespace prolix {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& scope, const std::string& what) {
  throw ConfigError(scope.empty() ? what : scope + ": " + what);
}

void check_keys(const json& obj, const std::string& scope,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) bad(scope, "unknown key '" + it.key() + "'");
  }
}

void read(const json& obj, const char* key, std::string& out, const std::string& scope) {
  if (!obj.contains(key)) return;
  if (!obj[key].is_string()) bad(scope, std::string("'") + key + "' must be a string");
  out = obj[key].get<std::string>();
}

void read(const json& obj, const char* key, bool& out, const std::string& scope) {
  if (!obj.contains(key)) return;
  if (!obj[key].is_boolean()) bad(scope, std::string("'") + key + "' must be a boolean");
  out = obj[key].get<bool>();
}

void read(const json& obj, const char* key, double& out, const std::string& scope) {
  if (!obj.contains(key)) return;
  if (!obj[key].is_number()) bad(scope, std::string("'") + key + "' must be a number");
  out = obj[key].get<double>();
}

void read(const json& obj, const char* key, std::size_t& out, const std::string& scope) {
  if (!obj.contains(key)) return;
  if (!obj[key].is_number_integer() || obj[key].get<long long>() < 0) {
    bad(scope, std::string("'") + key + "' must be a non-negative integer");
  }
  out = obj[key].get<std::size_t>();
}

void read(const json& obj, const char* key, std::vector<std::string>& out,
          const std::string& scope) {
  if (!obj.contains(key)) return;
  if (!obj[key].is_array()) bad(scope, std::string("'") + key + "' must be an array of strings");
  out.clear();
  for (const auto& item : obj[key]) {
    if (!item.is_string()) bad(scope, std::string("'") + key + "' must be an array of strings");
    out.push_back(item.get<std::string>());
  }
}

void read(const json& obj, const char* key, std::vector<double>& out, const std::string& scope) {
  if (!obj.contains(key)) return;
  if (!obj[key].is_array()) bad(scope, std::string("'") + key + "' must be an array of numbers");
  out.clear();
  for (const auto& item : obj[key]) {
    if (!item.is_number()) bad(scope, std::string("'") + key + "' must be an array of numbers");
    out.push_back(item.get<double>());
  }
}

void read_decode(const json& obj, DecodeParams& out, const std::string& scope) {
  check_keys(obj, scope, {"mode", "temperature", "top_p", "max_new_tokens", "seed"});
  std::string mode = decode_mode_name(out.mode);
  read(obj, "mode", mode, scope);
  out.mode = parse_decode_mode(mode);
  read(obj, "temperature", out.temperature, scope);
  read(obj, "top_p", out.top_p, scope);
  read(obj, "max_new_tokens", out.max_new_tokens, scope);
  read(obj, "seed", out.seed, scope);
}

void read_attack(const json& obj, AttackConfig& out, const std::string& scope) {
  check_keys(obj, scope,
             {"suffix_len", "steps", "pool", "batch", "K", "n", "seed", "weights", "forbidden",
              "convention", "er_variant"});
  read(obj, "suffix_len", out.suffix_len, scope);
  read(obj, "steps", out.steps, scope);
  read(obj, "pool", out.pool, scope);
  read(obj, "batch", out.batch, scope);
  read(obj, "K", out.K, scope);
  read(obj, "n", out.n, scope);
  read(obj, "seed", out.seed, scope);
  if (obj.contains("weights")) {
    if (!obj["weights"].is_object()) bad(scope, "'weights' must be an object");
    const std::string wscope = scope + ".weights";
    check_keys(obj["weights"], wscope, {"alpha", "beta", "gamma"});
    read(obj["weights"], "alpha", out.weights.alpha, wscope);
    read(obj["weights"], "beta", out.weights.beta, wscope);
    read(obj["weights"], "gamma", out.weights.gamma, wscope);
  }
  if (obj.contains("forbidden")) {
    if (!obj["forbidden"].is_array()) bad(scope, "'forbidden' must be an array of token ids");
    out.forbidden.clear();
    for (const auto& item : obj["forbidden"]) {
      if (!item.is_number_integer() || item.get<long long>() < 0) {
        bad(scope, "'forbidden' must be an array of non-negative token ids");
      }
      out.forbidden.insert(item.get<TokenId>());
    }
  }
  std::string convention = convention_name(out.convention);
  read(obj, "convention", convention, scope);
  out.convention = parse_convention(convention);
  std::string variant = er_variant_name(out.er_variant);
  read(obj, "er_variant", variant, scope);
  out.er_variant = parse_er_variant(variant);
}

void read_target(const json& obj, TargetConfig& out, const std::string& scope) {
  check_keys(obj, scope, {"strategy", "instruction", "max_len", "budget", "fragments"});
  read(obj, "strategy", out.strategy, scope);
  parse_strategy(out.strategy);  // value check only
  read(obj, "instruction", out.instruction, scope);
  read(obj, "max_len", out.max_len, scope);
  read(obj, "budget", out.budget, scope);
  read(obj, "fragments", out.fragments, scope);
}

void read_meter(const json& obj, MeterConfig& out, const std::string& scope) {
  check_keys(obj, scope, {"kind", "power_w", "seconds_per_token", "clock"});
  read(obj, "kind", out.kind, scope);
  if (out.kind != "none" && out.kind != "mock") {
    bad(scope, "'kind' must be one of: none, mock");
  }
  read(obj, "power_w", out.power_w, scope);
  read(obj, "seconds_per_token", out.seconds_per_token, scope);
  read(obj, "clock", out.clock, scope);
  if (out.clock != "virtual" && out.clock != "wall") {
    bad(scope, "'clock' must be one of: virtual, wall");
  }
}

void read_ablate(const json& obj, AblateConfig& out, const std::string& scope) {
  check_keys(obj, scope, {"mode", "k_values"});
  read(obj, "mode", out.mode, scope);
  if (out.mode != "k-sweep" && out.mode != "loss-combos") {
    bad(scope, "'mode' must be one of: k-sweep, loss-combos");
  }
  read(obj, "k_values", out.k_values, scope);
  for (double k : out.k_values) {
    if (!(k > 0.0 && k <= 100.0)) bad(scope, "'k_values' entries must lie in (0, 100]");
  }
}

void read_endpoint(const json& obj, EndpointSpec& out, const std::string& scope) {
  check_keys(obj, scope,
             {"name", "base_url", "model", "auth_env", "timeout_s", "max_retries",
              "min_interval_s", "temperature", "top_p", "eot_marker"});
  read(obj, "name", out.name, scope);
  read(obj, "base_url", out.base_url, scope);
  read(obj, "model", out.model, scope);
  read(obj, "auth_env", out.auth_env, scope);
  read(obj, "timeout_s", out.timeout_s, scope);
  read(obj, "max_retries", out.max_retries, scope);
  read(obj, "min_interval_s", out.min_interval_s, scope);
  read(obj, "temperature", out.temperature, scope);
  read(obj, "top_p", out.top_p, scope);
  read(obj, "eot_marker", out.eot_marker, scope);
  if (out.name.empty()) bad(scope, "'name' is required");
  if (out.base_url.empty()) bad(scope, "'base_url' is required");
  if (out.model.empty()) bad(scope, "'model' is required");
}

void read_transfer(const json& obj, TransferConfig& out, const std::string& scope) {
  check_keys(obj, scope, {"endpoints", "source_model"});
  read(obj, "source_model", out.source_model, scope);
  if (obj.contains("endpoints")) {
    if (!obj["endpoints"].is_array()) bad(scope, "'endpoints' must be an array of objects");
    out.endpoints.clear();
    std::size_t i = 0;
    for (const auto& item : obj["endpoints"]) {
      const std::string escope = scope + ".endpoints[" + std::to_string(i++) + "]";
      if (!item.is_object()) bad(escope, "must be an object");
      EndpointSpec spec;
      read_endpoint(item, spec, escope);
      out.endpoints.push_back(std::move(spec));
    }
  }
}

json endpoint_to_json(const EndpointSpec& e) {
  json out;
  out["name"] = e.name;
  out["base_url"] = e.base_url;
  out["model"] = e.model;
  out["auth_env"] = e.auth_env;
  out["timeout_s"] = e.timeout_s;
  out["max_retries"] = e.max_retries;
  out["min_interval_s"] = e.min_interval_s;
  out["temperature"] = e.temperature;
  out["top_p"] = e.top_p;
  out["eot_marker"] = e.eot_marker;
  return out;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be a JSON object");

  ExperimentConfig cfg;
  const std::string scope;
  check_keys(root, "config",
             {"model", "dataset", "sample_size", "sample_seed", "output_dir", "reps",
              "include_system", "system_prompt", "baselines", "decode", "attack", "target",
              "meter", "ablate", "transfer"});
  read(root, "model", cfg.model, "config");
  read(root, "dataset", cfg.dataset, "config");
  read(root, "sample_size", cfg.sample_size, "config");
  read(root, "sample_seed", cfg.sample_seed, "config");
  read(root, "output_dir", cfg.output_dir, "config");
  read(root, "reps", cfg.reps, "config");
  read(root, "include_system", cfg.include_system, "config");
  read(root, "system_prompt", cfg.system_prompt, "config");
  read(root, "baselines", cfg.baselines, "config");
  for (const auto& b : cfg.baselines) {
    if (b != "cot" && b != "cat-attack" && b != "random") {
      throw ConfigError("config: unknown baseline '" + b +
                        "' (expected cot, cat-attack, or random)");
    }
  }
  if (root.contains("decode")) {
    if (!root["decode"].is_object()) throw ConfigError("config: 'decode' must be an object");
    read_decode(root["decode"], cfg.decode, "decode");
  }
  if (root.contains("attack")) {
    if (!root["attack"].is_object()) throw ConfigError("config: 'attack' must be an object");
    read_attack(root["attack"], cfg.attack, "attack");
  }
  if (root.contains("target")) {
    if (!root["target"].is_object()) throw ConfigError("config: 'target' must be an object");
    read_target(root["target"], cfg.target, "target");
  }
  if (root.contains("meter")) {
    if (!root["meter"].is_object()) throw ConfigError("config: 'meter' must be an object");
    read_meter(root["meter"], cfg.meter, "meter");
  }
  if (root.contains("ablate")) {
    if (!root["ablate"].is_object()) throw ConfigError("config: 'ablate' must be an object");
    read_ablate(root["ablate"], cfg.ablate, "ablate");
  }
  if (root.contains("transfer")) {
    if (!root["transfer"].is_object()) throw ConfigError("config: 'transfer' must be an object");
    read_transfer(root["transfer"], cfg.transfer, "transfer");
  }

  if (cfg.model.empty()) throw ConfigError("config: 'model' must not be empty");
  if (cfg.output_dir.empty()) throw ConfigError("config: 'output_dir' must not be empty");
  if (cfg.sample_size == 0) throw ConfigError("config: 'sample_size' must be at least 1");
  if (cfg.reps == 0) throw ConfigError("config: 'reps' must be at least 1");
  try {
    cfg.attack.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("attack: ") + e.what());
  }
  if (!(cfg.attack.K > 0.0 && cfg.attack.K <= 100.0)) {
    throw ConfigError("attack: 'K' must lie in (0, 100]");
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  ExperimentConfig cfg = config_from_json(buf.str());
  if (!cfg.dataset.empty()) {
    std::ifstream ds(cfg.dataset, std::ios::binary);
    if (!ds) throw ConfigError("dataset path does not exist: " + cfg.dataset);
  }
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json root;
  root["model"] = cfg.model;
  root["dataset"] = cfg.dataset;
  root["sample_size"] = cfg.sample_size;
  root["sample_seed"] = cfg.sample_seed;
  root["output_dir"] = cfg.output_dir;
  root["reps"] = cfg.reps;
  root["include_system"] = cfg.include_system;
  root["system_prompt"] = cfg.system_prompt;
  root["baselines"] = cfg.baselines;

  json decode;
  decode["mode"] = decode_mode_name(cfg.decode.mode);
  decode["temperature"] = cfg.decode.temperature;
  decode["top_p"] = cfg.decode.top_p;
  decode["max_new_tokens"] = cfg.decode.max_new_tokens;
  decode["seed"] = cfg.decode.seed;
  root["decode"] = decode;

  json attack;
  attack["suffix_len"] = cfg.attack.suffix_len;
  attack["steps"] = cfg.attack.steps;
  attack["pool"] = cfg.attack.pool;
  attack["batch"] = cfg.attack.batch;
  attack["K"] = cfg.attack.K;
  attack["n"] = cfg.attack.n;
  attack["seed"] = cfg.attack.seed;
  attack["weights"] = {{"alpha", cfg.attack.weights.alpha},
                       {"beta", cfg.attack.weights.beta},
                       {"gamma", cfg.attack.weights.gamma}};
  attack["forbidden"] = json::array();
  for (TokenId id : cfg.attack.forbidden) attack["forbidden"].push_back(id);
  attack["convention"] = convention_name(cfg.attack.convention);
  attack["er_variant"] = er_variant_name(cfg.attack.er_variant);
  root["attack"] = attack;

  json target;
  target["strategy"] = cfg.target.strategy;
  target["instruction"] = cfg.target.instruction;
  target["max_len"] = cfg.target.max_len;
  target["budget"] = cfg.target.budget;
  target["fragments"] = cfg.target.fragments;
  root["target"] = target;

  json meter;
  meter["kind"] = cfg.meter.kind;
  meter["power_w"] = cfg.meter.power_w;
  meter["seconds_per_token"] = cfg.meter.seconds_per_token;
  meter["clock"] = cfg.meter.clock;
  root["meter"] = meter;

  json ablate;
  ablate["mode"] = cfg.ablate.mode;
  ablate["k_values"] = cfg.ablate.k_values;
  root["ablate"] = ablate;

  json transfer;
  transfer["source_model"] = cfg.transfer.source_model;
  transfer["endpoints"] = json::array();
  for (const auto& e : cfg.transfer.endpoints) transfer["endpoints"].push_back(endpoint_to_json(e));
  root["transfer"] = transfer;

  return root.dump(2) + "\n";
}

DecodeMode parse_decode_mode(const std::string& name) {
  if (name == "greedy") return DecodeMode::Greedy;
  if (name == "sample") return DecodeMode::Sample;
  throw ConfigError("decode mode must be one of: greedy, sample (got '" + name + "')");
}

SignConvention parse_convention(const std::string& name) {
  if (name == "loss-delta") return SignConvention::LossDelta;
  if (name == "negated-delta") return SignConvention::NegatedDelta;
  throw ConfigError("convention must be one of: loss-delta, negated-delta (got '" + name + "')");
}

ErVariant parse_er_variant(const std::string& name) {
  if (name == "sum-of-logs") return ErVariant::SumOfLogs;
  if (name == "log-of-sum") return ErVariant::LogOfSum;
  throw ConfigError("er_variant must be one of: sum-of-logs, log-of-sum (got '" + name + "')");
}

TargetStrategy parse_strategy(const std::string& name) {
  if (name == "raw") return TargetStrategy::Raw;
  if (name == "cot") return TargetStrategy::Cot;
  if (name == "optimized-cot") return TargetStrategy::OptimizedCot;
  throw ConfigError("strategy must be one of: raw, cot, optimized-cot (got '" + name + "')");
}

const char* decode_mode_name(DecodeMode mode) {
  return mode == DecodeMode::Greedy ? "greedy" : "sample";
}

const char* convention_name(SignConvention convention) {
  return convention == SignConvention::LossDelta ? "loss-delta" : "negated-delta";
}

const char* er_variant_name(ErVariant variant) {
  return variant == ErVariant::SumOfLogs ? "sum-of-logs" : "log-of-sum";
}

}  // namespace prolix
