#include "prolix/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>

#include "prolix/errors.hpp"
#include "prolix/rng.hpp"
#include "prolix/sentences.hpp"

namespace prolix {

SegmentedOutput segment_output(const TokenSeq& output, const VocabInfo& vocab,
                               const std::function<std::string(std::span<const TokenId>)>& text_of) {
  SegmentedOutput out;
  const auto& ids = output.ids;

  std::size_t eot_pos = ids.size();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == vocab.eot_id) {
      eot_pos = i;
      break;
    }
  }
  out.eot_found = eot_pos < ids.size();

  for (std::size_t i = 0; i < eot_pos; ++i) {
    if (ids[i] != vocab.eos_id && ids[i] != vocab.eot_id) out.reasoning.ids.push_back(ids[i]);
  }
  if (out.eot_found) {
    for (std::size_t i = eot_pos + 1; i < ids.size(); ++i) {
      if (ids[i] == vocab.eos_id) break;  // anything past EOS is dropped
      if (ids[i] == vocab.eot_id) continue;
      out.answer.ids.push_back(ids[i]);
    }
  }

  out.rea_len = out.reasoning.ids.size();
  out.ans_len = out.answer.ids.size();
  out.full_len = out.rea_len + out.ans_len;
  if (text_of) {
    out.reasoning.text = text_of(out.reasoning.ids);
    out.answer.text = text_of(out.answer.ids);
  }
  return out;
}

// --- timing & energy ------------------------------------------------------

double WallClock::now_s() const {
  auto now = std::chrono::steady_clock::now().time_since_epoch();
  return std::chrono::duration<double>(now).count();
}

int MockMeter::start() {
  open_[next_] = clock_->now_s();
  return next_++;
}

double MockMeter::stop(int handle) {
  auto it = open_.find(handle);
  if (it == open_.end()) throw InvalidConfigError("unknown meter handle " + std::to_string(handle));
  double joules = power_ * (clock_->now_s() - it->second);
  open_.erase(it);
  return joules;
}

namespace {
std::mutex& metering_mutex() {
  static std::mutex mu;
  return mu;
}
}  // namespace

InferenceMeasurement measure_inference(const LmAdapter& model, const TokenSeq& prompt,
                                       const DecodeParams& params, Clock& clock,
                                       EnergyMeter* meter, std::size_t reps) {
  if (reps < 1) throw InvalidConfigError("reps must be >= 1");

  std::unique_lock<std::mutex> lock(metering_mutex(), std::defer_lock);
  if (meter != nullptr && !lock.try_lock()) {
    throw MeterBusyError("another metered measurement is in progress");
  }

  InferenceMeasurement m;
  for (std::size_t rep = 0; rep < reps; ++rep) {
    int handle = meter ? meter->start() : 0;
    const double t0 = clock.now_s();
    GenerationRecord rec = model.generate(prompt, params);
    clock.on_tokens(rec.output.ids.size());
    const double t1 = clock.now_s();
    m.latencies_s.push_back(t1 - t0);
    if (meter) m.energies_j.push_back(meter->stop(handle));
    if (rep + 1 == reps) m.last = std::move(rec);
  }

  double lat = 0.0;
  for (double v : m.latencies_s) lat += v;
  m.latency_s = lat / static_cast<double>(reps);
  if (meter) {
    double ene = 0.0;
    for (double v : m.energies_j) ene += v;
    m.energy_j = ene / static_cast<double>(reps);
  }
  return m;
}

// --- scoring --------------------------------------------------------------

namespace {

bool parse_number(const std::string& s, double& value) {
  if (s.empty()) return false;
  std::size_t i = 0;
  if (s[i] == '+' || s[i] == '-') ++i;
  bool digits = false, dot = false;
  for (; i < s.size(); ++i) {
    if (s[i] >= '0' && s[i] <= '9') {
      digits = true;
    } else if (s[i] == '.' && !dot) {
      dot = true;
    } else {
      return false;
    }
  }
  if (!digits) return false;
  value = std::strtod(s.c_str(), nullptr);
  return true;
}

}  // namespace

AccuracyResult score_accuracy(const std::string& answer_text, const std::string& gold) {
  AccuracyResult out;
  std::string last;
  double last_value = 0.0;

  std::size_t i = 0;
  while (i < answer_text.size()) {
    while (i < answer_text.size() && std::isspace(static_cast<unsigned char>(answer_text[i]))) ++i;
    std::size_t j = i;
    while (j < answer_text.size() && !std::isspace(static_cast<unsigned char>(answer_text[j]))) ++j;
    if (j > i) {
      std::string word = answer_text.substr(i, j - i);
      std::size_t b = 0, e = word.size();
      while (b < e && (word[b] == '$' || word[b] == '(' || word[b] == '"' || word[b] == '\'')) ++b;
      while (e > b && (word[e - 1] == '.' || word[e - 1] == ',' || word[e - 1] == '!' ||
                       word[e - 1] == '?' || word[e - 1] == ';' || word[e - 1] == ':' ||
                       word[e - 1] == ')' || word[e - 1] == '"' || word[e - 1] == '\'')) {
        --e;
      }
      std::string core = word.substr(b, e - b);
      std::string no_commas;
      for (char c : core) {
        if (c != ',') no_commas += c;
      }
      double value = 0.0;
      if (parse_number(no_commas, value)) {
        last = no_commas;
        last_value = value;
      }
    }
    i = j;
  }

  if (last.empty()) {
    out.extraction_failure = true;
    return out;
  }
  out.extracted = last;
  double gold_value = 0.0;
  if (parse_number(gold, gold_value)) out.correct = last_value == gold_value;
  return out;
}

std::string make_baseline(const LmAdapter& model, BaselineKind kind, std::uint64_t seed) {
  switch (kind) {
    case BaselineKind::Cot:
      return "Let's think step by step.";
    case BaselineKind::CatAttack:
      return "Interesting fact: cats sleep most of their lives";
    case BaselineKind::Random:
      break;
  }
  const VocabInfo& vocab = model.vocab();
  std::vector<TokenId> pool;
  for (TokenId v = 0; v < vocab.size; ++v) {
    if (!vocab.is_special(v)) pool.push_back(v);
  }
  if (pool.empty()) throw InvalidConfigError("vocabulary has no non-special tokens");
  Rng rng(seed);
  std::vector<TokenId> ids;
  for (int i = 0; i < 10; ++i) ids.push_back(pool[uniform_index(rng, pool.size())]);
  return model.decode_text(ids);
}

// --- style analytics ------------------------------------------------------

StyleReport analyze_reasoning_style(const LmAdapter& model,
                                    const std::vector<SegmentedOutput>& outputs) {
  if (outputs.empty()) throw EmptyInputError("no outputs to analyze");
  const VocabInfo& vocab = model.vocab();
  auto text_of = [&](TokenId id) { return model.decode_text(std::span<const TokenId>(&id, 1)); };

  StyleReport rep;
  double total = 0.0;
  for (const auto& seg : outputs) {
    auto sentences = split_sentences(seg.reasoning.ids, text_of);
    rep.sentence_counts.push_back(sentences.size());
    total += static_cast<double>(sentences.size());
    for (auto [b, e] : sentences) {
      for (std::size_t pos = b; pos < e && pos < b + 2; ++pos) {
        TokenId id = seg.reasoning.ids[pos];
        if (vocab.is_special(id)) continue;
        rep.first_two_histogram[id] += 1;
        rep.frequency_table[text_of(id)] += 1;
      }
    }
  }
  rep.mean_sentences = total / static_cast<double>(outputs.size());
  return rep;
}

std::string headline_delta(double before, double after) {
  return std::to_string(std::llround(before)) + " → " + std::to_string(std::llround(after));
}

// --- report aggregation ----------------------------------------------------

MetricsReport aggregate_report(const std::vector<MetricRow>& rows) {
  if (rows.empty()) throw EmptyInputError("no metric rows");
  MetricsReport report;
  report.rows = rows;

  std::vector<std::string> order;
  std::map<std::string, std::vector<const MetricRow*>> groups;
  for (const auto& row : rows) {
    if (groups.find(row.method) == groups.end()) order.push_back(row.method);
    groups[row.method].push_back(&row);
  }

  for (const auto& method : order) {
    const auto& g = groups[method];
    MethodAggregate agg;
    agg.method = method;
    agg.rows = g.size();
    double ene_sum = 0.0;
    std::size_t ene_count = 0, correct = 0;
    for (const MetricRow* row : g) {
      agg.rea += row->rea;
      agg.ans += row->ans;
      agg.full += row->full;
      agg.lat += row->latency_s;
      if (row->energy_j) {
        ene_sum += *row->energy_j;
        ene_count += 1;
      }
      correct += row->correct ? 1 : 0;
    }
    const double n = static_cast<double>(g.size());
    agg.rea /= n;
    agg.ans /= n;
    agg.full /= n;
    agg.lat /= n;
    if (ene_count > 0) agg.ene = ene_sum / static_cast<double>(ene_count);
    agg.acc = 100.0 * static_cast<double>(correct) / n;
    report.methods.push_back(std::move(agg));
  }
  return report;
}

namespace {
std::string fmt_num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}
}  // namespace

std::string report_csv(const MetricsReport& report) {
  std::string csv = "method,rea,ans,full,lat,ene,acc\n";
  for (const auto& m : report.methods) {
    csv += m.method;
    csv += ',';
    csv += fmt_num(m.rea);
    csv += ',';
    csv += fmt_num(m.ans);
    csv += ',';
    csv += fmt_num(m.full);
    csv += ',';
    csv += fmt_num(m.lat);
    csv += ',';
    if (m.ene) csv += fmt_num(*m.ene);
    csv += ',';
    csv += fmt_num(m.acc);
    csv += '\n';
  }
  return csv;
}

}  // namespace prolix
