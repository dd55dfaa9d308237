#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

#include "prolix/bench.hpp"
#include "prolix/errors.hpp"
#include "prolix/rng.hpp"
#include "prolix/table_lm.hpp"

using namespace prolix;

namespace {

VocabInfo toy_vocab() {
  VocabInfo v;
  v.size = 10;
  v.bos_id = 0;
  v.eos_id = 1;
  v.eot_id = 2;
  v.special_ids = {0, 1, 2};
  return v;
}

TableLm style_world() {
  TableLmSpec spec;
  spec.words = {"<bos>", "<eos>", "</think>", "Wait", "Hmm", "a", "b", "c", "."};
  return TableLm(std::move(spec), "style-world");
}

// Meter whose start() parks until released; holds the metering lock hostage
// so the busy path can be exercised without timing races.
class BlockingMeter final : public EnergyMeter {
public:
  int start() override {
    std::unique_lock<std::mutex> lk(mu_);
    entered = true;
    cv_.notify_all();
    cv_.wait(lk, [&] { return released; });
    return 1;
  }
  double stop(int) override { return 0.0; }

  void wait_entered() {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] { return entered; });
  }
  void release() {
    std::unique_lock<std::mutex> lk(mu_);
    released = true;
    cv_.notify_all();
  }

private:
  std::mutex mu_;
  std::condition_variable cv_;
  bool entered = false;
  bool released = false;
};

}  // namespace

TEST_CASE("segmentation splits at the first reasoning terminator") {
  const auto vocab = toy_vocab();

  SUBCASE("standard shape") {
    const auto seg = segment_output(TokenSeq{{5, 6, 2, 7, 1}, ""}, vocab);
    CHECK(seg.eot_found);
    CHECK(seg.reasoning.ids == std::vector<TokenId>{5, 6});
    CHECK(seg.answer.ids == std::vector<TokenId>{7});
    CHECK(seg.rea_len == 2);
    CHECK(seg.ans_len == 1);
    CHECK(seg.full_len == 3);
  }

  SUBCASE("no terminator: everything is reasoning") {
    const auto seg = segment_output(TokenSeq{{5, 6, 7, 1}, ""}, vocab);
    CHECK_FALSE(seg.eot_found);
    CHECK(seg.reasoning.ids == std::vector<TokenId>{5, 6, 7});
    CHECK(seg.ans_len == 0);
    CHECK(seg.full_len == 3);
  }

  SUBCASE("repeated terminators collapse into the answer stream") {
    const auto seg = segment_output(TokenSeq{{5, 2, 6, 2, 7, 1, 8}, ""}, vocab);
    CHECK(seg.reasoning.ids == std::vector<TokenId>{5});
    CHECK(seg.answer.ids == std::vector<TokenId>{6, 7});  // post-eos 8 is dropped
    CHECK(seg.full_len == 3);
  }

  SUBCASE("empty output") {
    const auto seg = segment_output(TokenSeq{}, vocab);
    CHECK_FALSE(seg.eot_found);
    CHECK(seg.full_len == 0);
  }

  SUBCASE("texts are filled only when a decoder is supplied") {
    auto joiner = [](std::span<const TokenId> ids) {
      std::string s;
      for (TokenId id : ids) s += std::to_string(id) + "|";
      return s;
    };
    const TokenSeq out{{5, 2, 7}, ""};
    CHECK(segment_output(out, vocab).reasoning.text.empty());
    const auto seg = segment_output(out, vocab, joiner);
    CHECK(seg.reasoning.text == "5|");
    CHECK(seg.answer.text == "7|");
  }
}

TEST_CASE("segmentation invariants hold on long random streams") {
  const auto vocab = toy_vocab();
  Rng rng(515);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TokenId> ids(1000);
    for (auto& id : ids) id = static_cast<TokenId>(uniform_index(rng, vocab.size));

    // independent scan
    std::size_t first_eot = ids.size();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == vocab.eot_id) {
        first_eot = i;
        break;
      }
    }
    std::vector<TokenId> rea, ans;
    for (std::size_t i = 0; i < first_eot; ++i)
      if (ids[i] != vocab.eos_id) rea.push_back(ids[i]);
    if (first_eot < ids.size()) {
      for (std::size_t i = first_eot + 1; i < ids.size(); ++i) {
        if (ids[i] == vocab.eos_id) break;
        if (ids[i] == vocab.eot_id) continue;
        ans.push_back(ids[i]);
      }
    }

    const auto seg = segment_output(TokenSeq{ids, ""}, vocab);
    CHECK(seg.reasoning.ids == rea);
    CHECK(seg.answer.ids == ans);
    CHECK(seg.eot_found == (first_eot < ids.size()));
    CHECK(seg.full_len == seg.rea_len + seg.ans_len);
    for (TokenId id : seg.reasoning.ids) {
      CHECK(id != vocab.eos_id);
      CHECK(id != vocab.eot_id);
    }
    for (TokenId id : seg.answer.ids) {
      CHECK(id != vocab.eos_id);
      CHECK(id != vocab.eot_id);
    }
  }
}

TEST_CASE("the mock meter integrates constant power over the clock") {
  VirtualClock clock;
  MockMeter meter(100.0, clock);
  const int h = meter.start();
  clock.advance(2.0);
  CHECK(meter.stop(h) == 200.0);
  CHECK_THROWS_AS(meter.stop(h), InvalidConfigError);  // handle is spent

  // overlapping windows settle independently
  const int a = meter.start();
  clock.advance(1.0);
  const int b = meter.start();
  clock.advance(0.5);
  CHECK(meter.stop(a) == 150.0);
  CHECK(meter.stop(b) == 50.0);
}

TEST_CASE("virtual-clock measurement is an exact function of output length") {
  auto table = load_adapter("table-lm");
  const TokenSeq prompt = table->seq({table->vocab().bos_id, table->encode_ids("Q")[0]});
  DecodeParams params;
  params.max_new_tokens = 50;

  VirtualClock clock(0.01);
  MockMeter meter(15.0, clock);
  const auto m = measure_inference(*table, prompt, params, clock, &meter, 3);

  REQUIRE(m.latencies_s.size() == 3);
  REQUIRE(m.energies_j.size() == 3);
  CHECK(m.last.output.ids.size() == 7);  // chain world rollout, eos included
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(m.latencies_s[i] == doctest::Approx(0.07).epsilon(1e-12));
    CHECK(m.energies_j[i] == 15.0 * m.latencies_s[i]);  // wattage times window, exactly
  }
  double lat = 0.0, ene = 0.0;
  for (double v : m.latencies_s) lat += v;
  for (double v : m.energies_j) ene += v;
  CHECK(m.latency_s == lat / 3.0);
  REQUIRE(m.energy_j.has_value());
  CHECK(*m.energy_j == ene / 3.0);
}

TEST_CASE("energy is absent without a meter") {
  auto table = load_adapter("table-lm");
  const TokenSeq prompt = table->seq({table->vocab().bos_id, table->encode_ids("Q")[0]});
  DecodeParams params;
  params.max_new_tokens = 50;
  VirtualClock clock(0.5);
  const auto m = measure_inference(*table, prompt, params, clock, nullptr, 2);
  CHECK_FALSE(m.energy_j.has_value());
  CHECK(m.energies_j.empty());
  CHECK(m.latencies_s.size() == 2);
  CHECK_THROWS_AS(measure_inference(*table, prompt, params, clock, nullptr, 0),
                  InvalidConfigError);
}

TEST_CASE("a second metered measurement is refused while one is running") {
  auto table = load_adapter("table-lm");
  const TokenSeq prompt = table->seq({table->vocab().bos_id, table->encode_ids("Q")[0]});
  DecodeParams params;
  params.max_new_tokens = 50;

  BlockingMeter blocker;
  VirtualClock clock_a, clock_b;
  MockMeter meter_b(10.0, clock_b);

  std::thread holder([&] {
    const auto m = measure_inference(*table, prompt, params, clock_a, &blocker, 1);
    CHECK(m.latencies_s.size() == 1);
  });
  blocker.wait_entered();  // the metering lock is now held
  CHECK_THROWS_AS(measure_inference(*table, prompt, params, clock_b, &meter_b, 1),
                  MeterBusyError);
  // unmetered measurement is allowed to proceed concurrently
  CHECK_NOTHROW(measure_inference(*table, prompt, params, clock_b, nullptr, 1));
  blocker.release();
  holder.join();
  // and the lock is gone once the holder finishes
  CHECK_NOTHROW(measure_inference(*table, prompt, params, clock_b, &meter_b, 1));
}

TEST_CASE("answer scoring extracts the last standalone number") {
  CHECK(score_accuracy("The answer is 5.", "5").correct);
  CHECK(score_accuracy("so: $1,234.", "1234").correct);
  CHECK(score_accuracy("maybe 3, maybe 4", "3").correct == false);
  CHECK(score_accuracy("maybe 3, maybe 4", "4").correct);
  CHECK(score_accuracy("it equals -2", "-2").correct);
  CHECK(score_accuracy("answer is 7.0", "7").correct);  // numeric, not string, comparison

  const auto missing = score_accuracy("no digits to be found", "7");
  CHECK(missing.extraction_failure);
  CHECK(missing.extracted.empty());
  CHECK_FALSE(missing.correct);

  const auto ver = score_accuracy("step v2 gives 12", "12");
  CHECK(ver.correct);  // "v2" is not standalone, "12" is
}

TEST_CASE("stock baseline suffixes") {
  auto table = load_adapter("table-lm");
  CHECK(make_baseline(*table, BaselineKind::Cot, 0) == "Let's think step by step.");
  CHECK(make_baseline(*table, BaselineKind::CatAttack, 99) ==
        "Interesting fact: cats sleep most of their lives");

  const std::string r1 = make_baseline(*table, BaselineKind::Random, 5);
  CHECK(make_baseline(*table, BaselineKind::Random, 5) == r1);
  CHECK(make_baseline(*table, BaselineKind::Random, 6) != r1);

  // ten tokens, none special
  const auto ids = table->encode_ids(r1);
  CHECK(ids.size() == 10);
  for (TokenId id : ids) CHECK_FALSE(table->vocab().is_special(id));

  // pinned draw procedure: ascending non-special pool, one uniform draw per slot
  std::vector<TokenId> pool;
  for (TokenId v = 0; v < static_cast<TokenId>(table->vocab().size); ++v)
    if (!table->vocab().is_special(v)) pool.push_back(v);
  Rng rng(5);
  std::vector<TokenId> expect;
  for (int i = 0; i < 10; ++i) expect.push_back(pool[uniform_index(rng, pool.size())]);
  CHECK(ids == expect);
}

TEST_CASE("style analytics count sentences and their openers") {
  auto world = style_world();
  const auto vocab = world.vocab();
  auto seg_of = [&](const char* text) {
    return segment_output(TokenSeq{world.encode_ids(text), text}, vocab);
  };
  // four 3-token sentences per output, every opener pair non-special
  const std::vector<SegmentedOutput> outputs = {
      seg_of("Wait a . Hmm b . Wait c . a b ."),
      seg_of("Wait a . Hmm b . Wait c . a b ."),
  };
  const auto rep = analyze_reasoning_style(world, outputs);
  CHECK(rep.sentence_counts == std::vector<std::size_t>{4, 4});
  CHECK(rep.mean_sentences == 4.0);

  std::size_t total = 0;
  for (const auto& [id, c] : rep.first_two_histogram) total += c;
  CHECK(total == 16);  // two openers per sentence, eight sentences

  const TokenId wait_id = world.encode_ids("Wait")[0];
  const TokenId a_id = world.encode_ids("a")[0];
  const TokenId hmm_id = world.encode_ids("Hmm")[0];
  CHECK(rep.first_two_histogram.at(wait_id) == 4);
  CHECK(rep.first_two_histogram.at(a_id) == 4);  // second slot twice, opener twice
  CHECK(rep.first_two_histogram.at(hmm_id) == 2);
  CHECK(rep.frequency_table.at("Wait") == 4);
  CHECK(rep.frequency_table.at("Hmm") == 2);

  CHECK_THROWS_AS(analyze_reasoning_style(world, {}), EmptyInputError);
}

TEST_CASE("style sentence counts match an independent scan on random text") {
  auto world = style_world();
  const auto vocab = world.vocab();
  std::vector<TokenId> pool;
  for (TokenId id = 0; id < static_cast<TokenId>(vocab.size); ++id)
    if (!vocab.is_special(id)) pool.push_back(id);

  Rng rng(99);
  std::vector<SegmentedOutput> outputs;
  std::vector<std::size_t> expected_counts;
  for (int i = 0; i < 20; ++i) {
    SegmentedOutput seg;
    const std::size_t n = 5 + uniform_index(rng, 30);
    for (std::size_t j = 0; j < n; ++j)
      seg.reasoning.ids.push_back(pool[uniform_index(rng, pool.size())]);
    seg.rea_len = seg.reasoning.ids.size();
    seg.full_len = seg.rea_len;
    outputs.push_back(seg);

    // independent count: "." is the only terminator in this vocabulary, a
    // trailing unterminated run still counts as a sentence
    const TokenId dot = world.encode_ids(".")[0];
    std::size_t count = 0;
    bool open = false;
    for (TokenId id : seg.reasoning.ids) {
      open = true;
      if (id == dot) {
        ++count;
        open = false;
      }
    }
    if (open) ++count;
    expected_counts.push_back(count);
  }
  const auto rep = analyze_reasoning_style(world, outputs);
  CHECK(rep.sentence_counts == expected_counts);
  double mean = 0.0;
  for (auto c : expected_counts) mean += static_cast<double>(c);
  CHECK(rep.mean_sentences == doctest::Approx(mean / 20.0).epsilon(1e-12));
}

TEST_CASE("headline contrast string") {
  CHECK(headline_delta(31.0, 88.0) == "31 → 88");
  CHECK(headline_delta(30.6, 88.4) == "31 → 88");
  CHECK(headline_delta(386.0, 982.0) == "386 → 982");
}

TEST_CASE("report aggregation groups by method in first-appearance order") {
  std::vector<MetricRow> rows;
  rows.push_back({"gcg", 100, 10, 110, 1.0, 10.0, true});
  rows.push_back({"random", 40, 10, 50, 0.5, std::nullopt, true});
  rows.push_back({"gcg", 200, 30, 230, 3.0, std::nullopt, false});

  const auto report = aggregate_report(rows);
  REQUIRE(report.methods.size() == 2);
  CHECK(report.methods[0].method == "gcg");
  CHECK(report.methods[1].method == "random");

  const auto& g = report.methods[0];
  CHECK(g.rows == 2);
  CHECK(g.rea == 150.0);
  CHECK(g.ans == 20.0);
  CHECK(g.full == 170.0);
  CHECK(g.lat == 2.0);
  REQUIRE(g.ene.has_value());
  CHECK(*g.ene == 10.0);  // mean over rows that carry energy
  CHECK(g.acc == 50.0);

  const auto& r = report.methods[1];
  CHECK_FALSE(r.ene.has_value());
  CHECK(r.acc == 100.0);

  CHECK_THROWS_AS(aggregate_report({}), EmptyInputError);
}

TEST_CASE("csv output carries the exact header and blank energies") {
  std::vector<MetricRow> rows;
  rows.push_back({"gcg", 150, 20, 170, 2.0, 10.0, true});
  rows.push_back({"cot", 80, 20, 100, 1.0, std::nullopt, true});
  const std::string csv = report_csv(aggregate_report(rows));

  const auto nl = csv.find('\n');
  CHECK(csv.substr(0, nl) == "method,rea,ans,full,lat,ene,acc");
  CHECK(csv.find("gcg,150,20,170,2,10,100\n") != std::string::npos);
  CHECK(csv.find("cot,80,20,100,1,,100\n") != std::string::npos);  // no meter, empty cell
}

TEST_CASE("aggregates equal an independent recompute on random rows") {
  Rng rng(4242);
  std::vector<MetricRow> rows;
  const std::vector<std::string> methods = {"m0", "m1", "m2"};
  for (int i = 0; i < 120; ++i) {
    MetricRow r;
    r.method = methods[uniform_index(rng, 3)];
    r.rea = uniform_unit(rng) * 500.0;
    r.ans = uniform_unit(rng) * 50.0;
    r.full = r.rea + r.ans;
    r.latency_s = uniform_unit(rng);
    if (bernoulli(rng, 0.5)) r.energy_j = uniform_unit(rng) * 100.0;
    r.correct = bernoulli(rng, 0.6);
    rows.push_back(r);
  }
  const auto report = aggregate_report(rows);
  CHECK(report.rows.size() == rows.size());

  for (const auto& agg : report.methods) {
    double rea = 0, ans = 0, full = 0, lat = 0, ene = 0;
    std::size_t n = 0, ne = 0, correct = 0;
    for (const auto& r : rows) {
      if (r.method != agg.method) continue;
      ++n;
      rea += r.rea;
      ans += r.ans;
      full += r.full;
      lat += r.latency_s;
      if (r.energy_j) {
        ene += *r.energy_j;
        ++ne;
      }
      correct += r.correct ? 1 : 0;
    }
    REQUIRE(n == agg.rows);
    const double dn = static_cast<double>(n);
    CHECK(agg.rea == doctest::Approx(rea / dn).epsilon(1e-12));
    CHECK(agg.ans == doctest::Approx(ans / dn).epsilon(1e-12));
    CHECK(agg.full == doctest::Approx(full / dn).epsilon(1e-12));
    CHECK(agg.lat == doctest::Approx(lat / dn).epsilon(1e-12));
    CHECK(agg.ene.has_value() == (ne > 0));
    if (ne > 0) CHECK(*agg.ene == doctest::Approx(ene / static_cast<double>(ne)).epsilon(1e-12));
    CHECK(agg.acc == doctest::Approx(100.0 * static_cast<double>(correct) / dn).epsilon(1e-12));
  }
}
