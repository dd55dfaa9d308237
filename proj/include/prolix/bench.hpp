#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prolix/adapter.hpp"

namespace prolix {

struct SegmentedOutput {
  TokenSeq reasoning;  // non-marker tokens strictly before the first EOT
  TokenSeq answer;     // non-marker tokens after it, stopping at EOS
  bool eot_found = false;
  std::size_t rea_len = 0;
  std::size_t ans_len = 0;
  std::size_t full_len = 0;  // always rea_len + ans_len
};

/// Splits at the first EOT. Marker tokens (EOT/EOS) never enter the segments
/// or the counts; anything after EOS is dropped. `text_of` fills the segment
/// texts when provided.
SegmentedOutput segment_output(const TokenSeq& output, const VocabInfo& vocab,
                               const std::function<std::string(std::span<const TokenId>)>& text_of = nullptr);

// --- timing & energy ------------------------------------------------------

class Clock {
public:
  virtual ~Clock() = default;
  virtual double now_s() const = 0;
  /// Generation hook: virtual clocks advance per produced token so latency is
  /// a pure function of output length; the wall clock ignores it.
  virtual void on_tokens(std::size_t) {}
};

class WallClock final : public Clock {
public:
  double now_s() const override;
};

class VirtualClock final : public Clock {
public:
  explicit VirtualClock(double seconds_per_token = 0.0) : per_token_(seconds_per_token) {}
  double now_s() const override { return t_; }
  void on_tokens(std::size_t n) override { t_ += per_token_ * static_cast<double>(n); }
  void advance(double dt) { t_ += dt; }

private:
  double per_token_ = 0.0;
  double t_ = 0.0;
};

class EnergyMeter {
public:
  virtual ~EnergyMeter() = default;
  virtual int start() = 0;
  virtual double stop(int handle) = 0;  // joules since start
};

/// Constant-power meter over a clock: stop - start seconds times power.
class MockMeter final : public EnergyMeter {
public:
  MockMeter(double power_w, const Clock& clock) : power_(power_w), clock_(&clock) {}
  int start() override;
  double stop(int handle) override;

private:
  double power_ = 0.0;
  const Clock* clock_;
  std::map<int, double> open_;
  int next_ = 1;
};

struct InferenceMeasurement {
  double latency_s = 0.0;                 // mean over reps
  std::optional<double> energy_j;         // mean over reps; absent without a meter
  std::vector<double> latencies_s;        // per-rep log
  std::vector<double> energies_j;         // per-rep log (empty without a meter)
  GenerationRecord last;                  // generation from the final rep
};

/// Runs `reps` generations, timing each and metering energy when a meter is
/// given. Metered measurement is process-exclusive: a second concurrent
/// metered call raises MeterBusy instead of queueing.
InferenceMeasurement measure_inference(const LmAdapter& model, const TokenSeq& prompt,
                                       const DecodeParams& params, Clock& clock,
                                       EnergyMeter* meter, std::size_t reps = 3);

// --- scoring --------------------------------------------------------------

struct AccuracyResult {
  bool correct = false;
  bool extraction_failure = false;
  std::string extracted;  // empty on failure
};

/// Last standalone number in the answer text, with currency markers and
/// digit-group commas stripped; numeric comparison against the gold string.
AccuracyResult score_accuracy(const std::string& answer_text, const std::string& gold);

enum class BaselineKind { Random, Cot, CatAttack };

/// Stock suffix strings: random draws 10 seeded non-special tokens from the
/// model's vocabulary; the other two are fixed published strings.
std::string make_baseline(const LmAdapter& model, BaselineKind kind, std::uint64_t seed);

// --- style analytics ------------------------------------------------------

struct StyleReport {
  std::vector<std::size_t> sentence_counts;        // reasoning sentences per output
  double mean_sentences = 0.0;
  std::map<TokenId, std::size_t> first_two_histogram;
  std::map<std::string, std::size_t> frequency_table;  // word-cloud input
};

StyleReport analyze_reasoning_style(const LmAdapter& model,
                                    const std::vector<SegmentedOutput>& outputs);

/// Headline contrast string, e.g. means 31 and 88 render as "31 → 88".
std::string headline_delta(double before, double after);

// --- report aggregation ----------------------------------------------------

struct MetricRow {
  std::string method;
  double rea = 0.0;
  double ans = 0.0;
  double full = 0.0;
  double latency_s = 0.0;
  std::optional<double> energy_j;
  bool correct = false;
};

struct MethodAggregate {
  std::string method;
  double rea = 0.0, ans = 0.0, full = 0.0, lat = 0.0;
  std::optional<double> ene;
  double acc = 0.0;  // percent
  std::size_t rows = 0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;
  std::vector<MethodAggregate> methods;  // in order of first appearance
};

MetricsReport aggregate_report(const std::vector<MetricRow>& rows);

/// CSV with header exactly "method,rea,ans,full,lat,ene,acc".
std::string report_csv(const MetricsReport& report);

}  // namespace prolix
