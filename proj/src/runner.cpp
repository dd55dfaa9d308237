#include "prolix/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "prolix/bench.hpp"
#include "prolix/errors.hpp"
#include "prolix/forge.hpp"
#include "prolix/gcg.hpp"
#include "prolix/svg.hpp"
#include "prolix/tiny_lm.hpp"

namespace prolix {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailureError("cannot write " + path.string());
  out << content;
  if (!out) throw RuntimeFailureError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisiteError(path.string() + " not found");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Wall timestamps live here and only here; every other artifact is
/// byte-reproducible for a fixed config and seed.
void append_log(const fs::path& out_dir, const std::string& line) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "run_log.txt", std::ios::app);
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  out << "[" << stamp << "] " << line << "\n";
}

json loss_to_json(const LossBreakdown& l) {
  return json{{"pce", l.pce}, {"er", l.er}, {"dt", l.dt}, {"total", l.total}};
}

struct TargetRow {
  std::string question;
  std::string gold;
  std::string instruction;
  std::string strategy;
  std::string target_text;
  std::vector<TokenId> target_ids;
};

std::vector<TargetRow> read_targets(const fs::path& out_dir) {
  const std::string text = read_text(out_dir / "targets.jsonl");
  std::vector<TargetRow> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw RuntimeFailureError("targets.jsonl line " + std::to_string(rows.size() + 1) +
                                " is not valid JSON: " + e.what());
    }
    TargetRow t;
    t.question = row.at("question").get<std::string>();
    t.gold = row.at("gold").get<std::string>();
    t.instruction = row.at("instruction").get<std::string>();
    t.strategy = row.at("strategy").get<std::string>();
    t.target_text = row.at("target_text").get<std::string>();
    for (const auto& id : row.at("target_ids")) t.target_ids.push_back(id.get<TokenId>());
    rows.push_back(std::move(t));
  }
  if (rows.empty()) throw MissingPrerequisiteError("targets.jsonl holds no targets");
  return rows;
}

std::set<TokenId> read_tokenset(const fs::path& out_dir) {
  const std::string text = read_text(out_dir / "tokenset.json");
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw RuntimeFailureError(std::string("tokenset.json is not valid JSON: ") + e.what());
  }
  std::set<TokenId> ids;
  for (const auto& id : root.at("tokens")) ids.insert(id.get<TokenId>());
  return ids;
}

struct SuffixArtifact {
  std::vector<TokenId> ids;
  std::string text;
};

SuffixArtifact read_suffix(const fs::path& out_dir, std::size_t index) {
  const fs::path path = out_dir / "runs" / ("suffix_" + std::to_string(index) + ".json");
  json root;
  try {
    root = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw RuntimeFailureError(path.string() + " is not valid JSON: " + std::string(e.what()));
  }
  SuffixArtifact out;
  for (const auto& id : root.at("suffix_ids")) out.ids.push_back(id.get<TokenId>());
  out.text = root.at("suffix_text").get<std::string>();
  return out;
}

std::string resolve_instruction(const LmAdapter& model, const ExperimentConfig& cfg,
                                const fs::path& out_dir,
                                const std::vector<DatasetEntry>& questions) {
  if (!cfg.target.instruction.empty()) return cfg.target.instruction;
  const TargetStrategy strategy = parse_strategy(cfg.target.strategy);
  if (cfg.target.budget > 0) {
    PromptSearchConfig search;
    search.budget = cfg.target.budget;
    search.seed = cfg.attack.seed;
    search.max_len = cfg.target.max_len;
    search.fragment_bank = cfg.target.fragments;
    std::vector<std::string> train;
    for (std::size_t i = 0; i < questions.size() && i < 3; ++i) {
      train.push_back(questions[i].question);
    }
    const PromptSearchResult result =
        search_prompt(model, train, {cot_prompt(), optimized_cot_prompt()}, search);
    json doc;
    doc["best_prompt"] = result.best_prompt;
    doc["best_mean_len"] = result.best_mean_len;
    doc["log"] = json::array();
    for (const auto& score : result.log) {
      doc["log"].push_back(json{{"prompt", score.prompt},
                                {"mean_len", score.mean_len},
                                {"encodable", score.encodable}});
    }
    write_text(out_dir / "prompt_search.json", doc.dump(2) + "\n");
    return result.best_prompt;
  }
  switch (strategy) {
    case TargetStrategy::Raw: return "";
    case TargetStrategy::Cot: return cot_prompt();
    case TargetStrategy::OptimizedCot: return optimized_cot_prompt();
  }
  return "";
}

std::vector<DatasetEntry> resolve_questions(const ExperimentConfig& cfg) {
  const std::vector<DatasetEntry> dataset =
      cfg.dataset.empty() ? builtin_dataset() : load_dataset(cfg.dataset);
  return sample_questions(dataset, cfg.sample_size, cfg.sample_seed);
}

std::vector<TokenId> encode_or_skip(const LmAdapter& model, const std::string& text,
                                    const fs::path& out_dir, const std::string& what,
                                    bool* skipped) {
  try {
    return model.encode_ids(text);
  } catch (const InvalidTokenError& e) {
    append_log(out_dir, what + " not encodable by " + model.name() + ", skipped: " + e.what());
    if (skipped) *skipped = true;
    return {};
  }
}

AttackConfig attack_config_for(const ExperimentConfig& cfg, std::uint64_t run_index) {
  AttackConfig attack = cfg.attack;
  attack.seed = cfg.attack.seed + run_index;  // one independent stream per question
  return attack;
}

void write_suffix_artifacts(const fs::path& out_dir, std::size_t index,
                            const SuffixResult& result, const LmAdapter& model) {
  json doc;
  doc["question_index"] = index;
  doc["suffix_ids"] = result.suffix.ids;
  doc["suffix_text"] = result.suffix.text;
  doc["initial_ids"] = result.initial_suffix.ids;
  doc["initial_text"] = result.initial_suffix.text;
  doc["steps_run"] = result.steps_run;
  doc["accepted_steps"] = result.accepted_steps;
  doc["loss_trace"] = json::array();
  for (const auto& l : result.loss_trace) doc["loss_trace"].push_back(loss_to_json(l));
  doc["final_loss"] = result.loss_trace.empty() ? 0.0 : result.loss_trace.back().total;
  doc["model"] = model.name();
  write_text(out_dir / "runs" / ("suffix_" + std::to_string(index) + ".json"),
             doc.dump(2) + "\n");

  std::ostringstream steps;
  for (const auto& rec : result.step_log) {
    json row;
    row["step"] = rec.step;
    row["accepted"] = rec.accepted;
    row["position"] = rec.position;
    row["old_id"] = rec.old_id;
    row["new_id"] = rec.new_id;
    row["loss"] = loss_to_json(rec.loss);
    steps << row.dump() << "\n";
  }
  write_text(out_dir / "runs" / ("steps_" + std::to_string(index) + ".jsonl"), steps.str());
}

struct EvalContext {
  std::shared_ptr<const LmAdapter> model;
  std::unique_ptr<Clock> clock;
  std::unique_ptr<EnergyMeter> meter;
};

EvalContext make_eval_context(const ExperimentConfig& cfg) {
  EvalContext ctx;
  ctx.model = load_adapter(cfg.model);
  if (cfg.meter.clock == "wall") {
    ctx.clock = std::make_unique<WallClock>();
  } else {
    ctx.clock = std::make_unique<VirtualClock>(cfg.meter.seconds_per_token);
  }
  if (cfg.meter.kind == "mock") {
    ctx.meter = std::make_unique<MockMeter>(cfg.meter.power_w, *ctx.clock);
  }
  return ctx;
}

MetricRow eval_one(const EvalContext& ctx, const ExperimentConfig& cfg, const std::string& method,
                   const std::string& question, const std::string& gold,
                   std::span<const TokenId> suffix, SegmentedOutput* seg_out) {
  const LmAdapter& model = *ctx.model;
  const std::vector<TokenId> sys_ids =
      cfg.system_prompt.empty() ? std::vector<TokenId>{} : model.encode_ids(cfg.system_prompt);
  const std::vector<TokenId> q_ids = model.encode_ids(question);
  const std::vector<TokenId> ctx_ids =
      assemble_context(model.vocab(), sys_ids, q_ids, suffix, cfg.include_system);
  const TokenSeq prompt{ctx_ids, model.decode_text(ctx_ids)};

  const InferenceMeasurement m =
      measure_inference(model, prompt, cfg.decode, *ctx.clock, ctx.meter.get(), cfg.reps);
  const SegmentedOutput seg = segment_output(
      m.last.output, model.vocab(),
      [&model](std::span<const TokenId> ids) { return model.decode_text(ids); });
  const AccuracyResult acc = score_accuracy(seg.answer.text, gold);
  if (seg_out) *seg_out = seg;

  MetricRow row;
  row.method = method;
  row.rea = static_cast<double>(seg.rea_len);
  row.ans = static_cast<double>(seg.ans_len);
  row.full = static_cast<double>(seg.full_len);
  row.latency_s = m.latency_s;
  row.energy_j = m.energy_j;
  row.correct = acc.correct;
  return row;
}

json metric_row_json(const MetricRow& row, std::size_t question_index) {
  json out;
  out["method"] = row.method;
  out["question_index"] = question_index;
  out["rea"] = row.rea;
  out["ans"] = row.ans;
  out["full"] = row.full;
  out["lat"] = row.latency_s;
  if (row.energy_j) {
    out["ene"] = *row.energy_j;
  } else {
    out["ene"] = nullptr;
  }
  out["correct"] = row.correct;
  return out;
}

void write_method_bars(const fs::path& out_dir, const MetricsReport& report) {
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& m : report.methods) {
    labels.push_back(m.method);
    values.push_back(m.full);
  }
  if (labels.empty()) return;
  write_text(out_dir / "plots" / "method_bars.svg",
             bar_chart_svg("Mean generated tokens by method", "tokens", labels, values));
  json doc;
  doc["labels"] = labels;
  doc["values"] = values;
  write_text(out_dir / "plots" / "method_bars.json", doc.dump(2) + "\n");
}

void write_style_artifacts(const fs::path& out_dir, const LmAdapter& model,
                           const StyleReport& style) {
  json doc;
  doc["sentence_counts"] = style.sentence_counts;
  doc["mean_sentences"] = style.mean_sentences;
  doc["first_two_histogram"] = json::object();
  for (const auto& [id, count] : style.first_two_histogram) {
    doc["first_two_histogram"][model.decode_text(std::vector<TokenId>{id})] = count;
  }
  doc["frequency_table"] = style.frequency_table;
  write_text(out_dir / "style.json", doc.dump(2) + "\n");

  // Top twelve openers, highest count first, keeps the chart readable.
  std::vector<std::pair<std::string, std::size_t>> items;
  for (const auto& [id, count] : style.first_two_histogram) {
    items.emplace_back(model.decode_text(std::vector<TokenId>{id}), count);
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (items.size() > 12) items.resize(12);
  if (items.empty()) return;
  std::vector<std::string> labels;
  std::vector<double> values;
  for (const auto& [text, count] : items) {
    labels.push_back(text);
    values.push_back(static_cast<double>(count));
  }
  write_text(out_dir / "plots" / "first_two_histogram.svg",
             bar_chart_svg("Sentence-opening tokens in reasoning", "count", labels, values));
  json hist;
  hist["labels"] = labels;
  hist["values"] = values;
  write_text(out_dir / "plots" / "first_two_histogram.json", hist.dump(2) + "\n");
}

int command_forge_targets(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const auto model = load_adapter(cfg.model);
  const std::vector<DatasetEntry> questions = resolve_questions(cfg);
  const std::string instruction = resolve_instruction(*model, cfg, out_dir, questions);

  std::ostringstream lines;
  for (const auto& entry : questions) {
    const TargetRecord record =
        generate_target(*model, entry.question, instruction, cfg.target.max_len);
    json row;
    row["question"] = record.question;
    row["gold"] = entry.answer;
    row["instruction"] = record.instruction_prompt;
    row["strategy"] = strategy_name(record.strategy);
    row["target_text"] = record.target.text;
    row["target_ids"] = record.target.ids;
    row["length"] = record.target.ids.size();
    lines << row.dump() << "\n";
  }
  write_text(out_dir / "targets.jsonl", lines.str());
  append_log(out_dir, "forge-targets wrote " + std::to_string(questions.size()) + " targets");
  return 0;
}

int command_find_tokens(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const auto model = load_adapter(cfg.model);
  const std::vector<TargetRow> targets = read_targets(out_dir);
  // T is a *reasoning* token set: rank openers from the reasoning segment only,
  // so answer-segment words never leak into the ER objective.
  std::vector<TokenSeq> corpus;
  for (const auto& t : targets) {
    const SegmentedOutput seg = segment_output(TokenSeq{t.target_ids, t.target_text},
                                               model->vocab());
    corpus.push_back(seg.reasoning);
  }
  const ReasoningTokenSet ts = extract_reasoning_tokens(*model, corpus, cfg.attack.n);

  json doc;
  doc["n"] = ts.n;
  doc["tokens"] = ts.tokens;
  doc["texts"] = json::array();
  for (TokenId id : ts.tokens) {
    doc["texts"].push_back(model->decode_text(std::vector<TokenId>{id}));
  }
  write_text(out_dir / "tokenset.json", doc.dump(2) + "\n");
  append_log(out_dir, "find-tokens kept " + std::to_string(ts.tokens.size()) + " tokens");
  return 0;
}

int command_attack(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const auto model = load_adapter(cfg.model);
  const std::vector<TargetRow> targets = read_targets(out_dir);
  const std::set<TokenId> token_set = read_tokenset(out_dir);

  std::vector<ChartSeries> trace_series;
  json trace_doc = json::array();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const TargetRow& t = targets[i];
    const std::vector<TokenId> sys_ids =
        cfg.system_prompt.empty() ? std::vector<TokenId>{} : model->encode_ids(cfg.system_prompt);
    const std::vector<TokenId> q_ids = model->encode_ids(t.question);
    const std::vector<TokenId> prefix =
        assemble_context(model->vocab(), sys_ids, q_ids, {}, cfg.include_system);

    const SuffixResult result =
        gcg_optimize(*model, prefix, t.target_ids, token_set, attack_config_for(cfg, i));
    write_suffix_artifacts(out_dir, i, result, *model);

    ChartSeries series;
    series.label = "question " + std::to_string(i);
    json ys = json::array();
    for (std::size_t step = 0; step < result.loss_trace.size(); ++step) {
      series.xs.push_back(static_cast<double>(step));
      series.ys.push_back(result.loss_trace[step].total);
      ys.push_back(result.loss_trace[step].total);
    }
    trace_series.push_back(std::move(series));
    trace_doc.push_back(json{{"question_index", i}, {"totals", ys}});
    append_log(out_dir, "attack question " + std::to_string(i) + " accepted " +
                            std::to_string(result.accepted_steps) + "/" +
                            std::to_string(result.steps_run) + " steps");
  }
  write_text(out_dir / "plots" / "loss_trace.svg",
             line_chart_svg("Best-so-far composite loss", "accepted step", "loss", trace_series));
  write_text(out_dir / "plots" / "loss_trace.json",
             json{{"series", trace_doc}}.dump(2) + "\n");
  return 0;
}

int command_eval(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const std::vector<TargetRow> targets = read_targets(out_dir);
  EvalContext ctx = make_eval_context(cfg);
  const LmAdapter& model = *ctx.model;

  const bool have_runs = fs::exists(out_dir / "runs" / "suffix_0.json");
  if (cfg.baselines.empty() && !have_runs) {
    throw MissingPrerequisiteError("eval needs baselines in the config or an attack run");
  }

  struct MethodPlan {
    std::string name;
    bool per_question_suffix = false;
    std::vector<TokenId> suffix;  // shared suffix when not per-question
  };
  std::vector<MethodPlan> plan;
  plan.push_back({"none", false, {}});
  for (const auto& b : cfg.baselines) {
    const BaselineKind kind = b == "cot"          ? BaselineKind::Cot
                              : b == "cat-attack" ? BaselineKind::CatAttack
                                                  : BaselineKind::Random;
    const std::string text = make_baseline(model, kind, cfg.sample_seed);
    bool skipped = false;
    std::vector<TokenId> ids =
        encode_or_skip(model, text, out_dir, "baseline '" + b + "'", &skipped);
    if (!skipped) plan.push_back({b, false, std::move(ids)});
  }
  if (have_runs) plan.push_back({"gcg", true, {}});

  std::vector<MetricRow> rows;
  std::ostringstream lines;
  std::vector<SegmentedOutput> attacked_outputs;
  std::vector<SegmentedOutput> fallback_outputs;
  for (const auto& method : plan) {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      std::vector<TokenId> suffix = method.suffix;
      if (method.per_question_suffix) suffix = read_suffix(out_dir, i).ids;
      SegmentedOutput seg;
      MetricRow row = eval_one(ctx, cfg, method.name, targets[i].question, targets[i].gold,
                               suffix, &seg);
      lines << metric_row_json(row, i).dump() << "\n";
      rows.push_back(std::move(row));
      if (method.per_question_suffix) {
        attacked_outputs.push_back(std::move(seg));
      } else if (method.name == "none") {
        fallback_outputs.push_back(std::move(seg));
      }
    }
  }
  write_text(out_dir / "rows.jsonl", lines.str());

  const MetricsReport report = aggregate_report(rows);
  write_text(out_dir / "report.csv", report_csv(report));
  write_method_bars(out_dir, report);

  const std::vector<SegmentedOutput>& style_corpus =
      attacked_outputs.empty() ? fallback_outputs : attacked_outputs;
  if (!style_corpus.empty()) {
    write_style_artifacts(out_dir, model, analyze_reasoning_style(model, style_corpus));
  }
  append_log(out_dir, "eval wrote " + std::to_string(rows.size()) + " rows over " +
                          std::to_string(plan.size()) + " methods");
  return 0;
}

int command_ablate(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const std::vector<TargetRow> targets = read_targets(out_dir);
  const std::set<TokenId> token_set = read_tokenset(out_dir);
  EvalContext ctx = make_eval_context(cfg);
  const LmAdapter& model = *ctx.model;
  const TargetRow& t = targets.front();

  const std::vector<TokenId> sys_ids =
      cfg.system_prompt.empty() ? std::vector<TokenId>{} : model.encode_ids(cfg.system_prompt);
  const std::vector<TokenId> q_ids = model.encode_ids(t.question);
  const std::vector<TokenId> prefix =
      assemble_context(model.vocab(), sys_ids, q_ids, {}, cfg.include_system);

  struct Variant {
    std::string label;
    AttackConfig attack;
  };
  std::vector<Variant> variants;
  if (cfg.ablate.mode == "k-sweep") {
    for (double k : cfg.ablate.k_values) {
      AttackConfig attack = attack_config_for(cfg, 0);
      attack.K = k;
      char label[32];
      std::snprintf(label, sizeof(label), "K=%.6g", k);
      variants.push_back({label, attack});
    }
  } else {
    const LossWeights w = cfg.attack.weights;
    const std::pair<std::string, LossWeights> combos[] = {
        {"PCE", {w.alpha, 0.0, 0.0}},
        {"PCE+ER", {w.alpha, w.beta, 0.0}},
        {"PCE+DT", {w.alpha, 0.0, w.gamma}},
        {"PCE+ER+DT", {w.alpha, w.beta, w.gamma}},
    };
    for (const auto& [label, weights] : combos) {
      AttackConfig attack = attack_config_for(cfg, 0);
      attack.weights = weights;
      variants.push_back({label, attack});
    }
  }

  std::vector<MetricRow> rows;
  std::vector<double> finals;
  std::ostringstream lines;
  for (const auto& variant : variants) {
    const SuffixResult result =
        gcg_optimize(model, prefix, t.target_ids, token_set, variant.attack);
    MetricRow row =
        eval_one(ctx, cfg, variant.label, t.question, t.gold, result.suffix.ids, nullptr);
    finals.push_back(result.loss_trace.empty() ? 0.0 : result.loss_trace.back().total);
    json extra = metric_row_json(row, 0);
    extra["final_loss"] = finals.back();
    extra["suffix_text"] = result.suffix.text;
    lines << extra.dump() << "\n";
    rows.push_back(std::move(row));
    append_log(out_dir, "ablate " + variant.label + " done");
  }

  const MetricsReport report = aggregate_report(rows);
  const std::string csv_name = cfg.ablate.mode == "k-sweep" ? "k_sweep.csv" : "loss_combos.csv";
  write_text(out_dir / csv_name, report_csv(report));
  write_text(out_dir / (cfg.ablate.mode == "k-sweep" ? "k_sweep.jsonl" : "loss_combos.jsonl"),
             lines.str());

  if (cfg.ablate.mode == "k-sweep") {
    ChartSeries series;
    series.label = "full length";
    for (std::size_t i = 0; i < variants.size(); ++i) {
      series.xs.push_back(cfg.ablate.k_values[i]);
      series.ys.push_back(rows[i].full);
    }
    write_text(out_dir / "plots" / "k_sweep.svg",
               line_chart_svg("Generated length vs importance-mask K", "K (%)", "tokens",
                              {series}));
    json doc;
    doc["k_values"] = cfg.ablate.k_values;
    doc["full"] = series.ys;
    doc["final_loss"] = finals;
    write_text(out_dir / "plots" / "k_sweep.json", doc.dump(2) + "\n");
  }
  return 0;
}

int command_transfer(const ExperimentConfig& cfg, const fs::path& out_dir) {
  if (cfg.transfer.endpoints.empty()) {
    throw ConfigError("transfer: no endpoints configured");
  }
  const std::vector<TargetRow> targets = read_targets(out_dir);
  const SuffixArtifact suffix = read_suffix(out_dir, 0);
  if (suffix.text.empty()) throw MissingPrerequisiteError("suffix_0.json holds an empty suffix");

  std::vector<TransferQuestion> questions;
  for (const auto& t : targets) questions.push_back({t.question, t.gold});
  const std::string source =
      cfg.transfer.source_model.empty() ? cfg.model : cfg.transfer.source_model;

  std::vector<std::string> log;
  const std::vector<TransferRow> rows =
      run_transfer_eval(cfg.transfer.endpoints, questions, suffix.text, source, &log);
  for (const auto& line : log) append_log(out_dir, line);

  json doc = json::array();
  std::ostringstream csv;
  csv << "endpoint,rea,ans,full,acc,counts,status\n";
  for (const auto& row : rows) {
    json r;
    r["endpoint"] = row.endpoint;
    r["source_model"] = row.source_model;
    r["failed"] = row.failed;
    r["error"] = row.error;
    if (!row.failed) {
      r["baseline"] = json{{"rea", row.baseline.rea},
                           {"ans", row.baseline.ans},
                           {"full", row.baseline.full},
                           {"acc", row.baseline.acc}};
      r["attacked"] = json{{"rea", row.attacked.rea},
                           {"ans", row.attacked.ans},
                           {"full", row.attacked.full},
                           {"acc", row.attacked.acc}};
      r["rea_available"] = row.attacked.rea_available;
      r["usage_derived"] = row.attacked.usage_derived;
    }
    doc.push_back(r);

    csv << row.endpoint << ",";
    if (row.failed) {
      std::string msg = row.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      csv << ",,,,," << "failed: " << msg << "\n";
      continue;
    }
    char acc[32];
    std::snprintf(acc, sizeof(acc), "%.6g", row.attacked.acc);
    csv << (row.attacked.rea_available
                ? format_with_delta(row.attacked.rea, row.baseline.rea)
                : std::string("n/a"))
        << "," << format_with_delta(row.attacked.ans, row.baseline.ans) << ","
        << format_with_delta(row.attacked.full, row.baseline.full) << "," << acc << ","
        << (row.attacked.usage_derived ? "usage-derived" : "text-derived") << ",ok\n";
  }
  write_text(out_dir / "transfer.json", doc.dump(2) + "\n");
  write_text(out_dir / "transfer.csv", csv.str());
  append_log(out_dir, "transfer queried " + std::to_string(rows.size()) + " endpoints");
  return 0;
}

int command_report(const ExperimentConfig& cfg, const fs::path& out_dir) {
  (void)cfg;
  const std::string text = read_text(out_dir / "rows.jsonl");
  std::vector<MetricRow> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw RuntimeFailureError("rows.jsonl line " + std::to_string(rows.size() + 1) +
                                " is not valid JSON: " + e.what());
    }
    MetricRow r;
    r.method = row.at("method").get<std::string>();
    r.rea = row.at("rea").get<double>();
    r.ans = row.at("ans").get<double>();
    r.full = row.at("full").get<double>();
    r.latency_s = row.at("lat").get<double>();
    if (row.contains("ene") && !row["ene"].is_null()) r.energy_j = row["ene"].get<double>();
    r.correct = row.at("correct").get<bool>();
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw MissingPrerequisiteError("rows.jsonl holds no rows");

  const MetricsReport report = aggregate_report(rows);
  write_text(out_dir / "report.csv", report_csv(report));
  write_method_bars(out_dir, report);
  append_log(out_dir, "report aggregated " + std::to_string(rows.size()) + " rows");
  return 0;
}

}  // namespace

std::vector<DatasetEntry> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("dataset path does not exist: " + path);
  std::vector<DatasetEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError("dataset line " + std::to_string(line_no) +
                        " is not valid JSON: " + e.what());
    }
    if (!row.is_object() || !row.contains("question") || !row.contains("answer")) {
      throw ConfigError("dataset line " + std::to_string(line_no) +
                        " must be an object with question and answer");
    }
    DatasetEntry entry;
    entry.question = row["question"].get<std::string>();
    entry.answer = row["answer"].is_string() ? row["answer"].get<std::string>()
                                             : row["answer"].dump();
    out.push_back(std::move(entry));
  }
  if (out.empty()) throw ConfigError("dataset is empty: " + path);
  return out;
}

std::vector<DatasetEntry> builtin_dataset() {
  std::vector<DatasetEntry> out;
  for (const auto& [question, answer] : TinyWorld::question_set()) {
    out.push_back({question, answer});
  }
  return out;
}

std::vector<DatasetEntry> sample_questions(const std::vector<DatasetEntry>& dataset,
                                           std::size_t n, std::uint64_t seed) {
  if (n > dataset.size()) {
    throw ConfigError("sample_size " + std::to_string(n) + " exceeds dataset size " +
                      std::to_string(dataset.size()));
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + uniform_index(rng, order.size() - i);
    std::swap(order[i], order[j]);
  }
  std::vector<DatasetEntry> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(dataset[order[i]]);
  return out;
}

int run_command(const std::string& command, const ExperimentConfig& cfg) {
  const fs::path out_dir(cfg.output_dir);
  auto record_failure = [&](ErrorKind kind, const std::string& message) {
    try {
      json doc;
      doc["command"] = command;
      doc["error"] = error_kind_name(kind);
      doc["message"] = message;
      write_text(out_dir / "error.json", doc.dump(2) + "\n");
      append_log(out_dir, command + " failed: " + message);
    } catch (...) {
      // Failure reporting must not mask the original failure.
    }
  };

  try {
    bool known = false;
    for (const char* name : kCommands) known = known || command == name;
    if (!known) throw ConfigError("unknown command '" + command + "'");

    fs::create_directories(out_dir);
    write_text(out_dir / "config.json", config_to_json(cfg));
    append_log(out_dir, command + " started (model=" + cfg.model + ")");

    int rc = 0;
    if (command == "forge-targets") rc = command_forge_targets(cfg, out_dir);
    else if (command == "find-tokens") rc = command_find_tokens(cfg, out_dir);
    else if (command == "attack") rc = command_attack(cfg, out_dir);
    else if (command == "eval") rc = command_eval(cfg, out_dir);
    else if (command == "ablate") rc = command_ablate(cfg, out_dir);
    else if (command == "transfer") rc = command_transfer(cfg, out_dir);
    else rc = command_report(cfg, out_dir);

    if (rc == 0 && fs::exists(out_dir / "error.json")) fs::remove(out_dir / "error.json");
    append_log(out_dir, command + " finished");
    return rc;
  } catch (const ConfigError& e) {
    record_failure(ErrorKind::ConfigError, e.what());
    return 2;
  } catch (const MissingPrerequisiteError& e) {
    record_failure(ErrorKind::MissingPrerequisite, e.what());
    return 3;
  } catch (const Error& e) {
    record_failure(e.kind(), e.what());
    return 4;
  } catch (const std::exception& e) {
    record_failure(ErrorKind::RuntimeFailure, e.what());
    return 4;
  }
}

}  // namespace prolix
