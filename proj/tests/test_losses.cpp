#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "prolix/adapter.hpp"
#include "prolix/errors.hpp"
#include "prolix/losses.hpp"
#include "prolix/rng.hpp"
#include "prolix/table_lm.hpp"

using namespace prolix;

namespace {

Rows uniform_log_rows(std::size_t positions, std::size_t vocab) {
  return Rows(positions, Row(vocab, std::log(1.0 / static_cast<double>(vocab))));
}

Row random_distribution(Rng& rng, std::size_t vocab) {
  Row row(vocab);
  double total = 0.0;
  for (auto& p : row) {
    p = uniform_unit(rng) + 1e-6;
    total += p;
  }
  for (auto& p : row) p /= total;
  return row;
}

Rows random_log_rows(Rng& rng, std::size_t positions, std::size_t vocab) {
  Rows rows;
  for (std::size_t t = 0; t < positions; ++t) {
    Row row = random_distribution(rng, vocab);
    for (auto& p : row) p = std::log(p);
    rows.push_back(std::move(row));
  }
  return rows;
}

// Reference mask: sort by score descending, index ascending, keep the top
// max(1, ceil(K/100 * n)) indices. Kept deliberately separate from the
// library's selection code.
std::vector<std::size_t> reference_selection(const std::vector<double>& scores, double K) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  const double exact = K / 100.0 * static_cast<double>(scores.size());
  std::size_t want = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  want = std::max<std::size_t>(want, 1);
  want = std::min(want, scores.size());
  order.resize(want);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> selected_indices(const ImportanceMask& m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.mask.size(); ++i)
    if (m.mask[i]) out.push_back(i);
  return out;
}

}  // namespace

TEST_CASE("pce on a uniform 4-token world") {
  const Rows rows = uniform_log_rows(2, 4);
  const std::vector<TokenId> y = {3, 0};
  const std::vector<std::uint8_t> ones = {1, 1};
  CHECK(std::abs(pce_loss(rows, y, ones) - std::log(4.0)) < 1e-9);

  const std::vector<std::uint8_t> zeros = {0, 0};
  CHECK(pce_loss(rows, y, zeros) == 0.0);
}

TEST_CASE("full-mask pce equals plain cross-entropy bit for bit") {
  Rng rng(41);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t v = 3 + uniform_index(rng, 9);
    const std::size_t n = 1 + uniform_index(rng, 12);
    const Rows rows = random_log_rows(rng, n, v);
    std::vector<TokenId> y(n);
    for (auto& t : y) t = static_cast<TokenId>(uniform_index(rng, v));
    const std::vector<std::uint8_t> ones(n, 1);
    CHECK(pce_loss(rows, y, ones) == ce_loss(rows, y));
  }
}

TEST_CASE("pce normalizes by target length, not by mask weight") {
  // one selected position out of four: the divisor stays 4
  const Rows rows = uniform_log_rows(4, 4);
  const std::vector<TokenId> y = {0, 1, 2, 3};
  const std::vector<std::uint8_t> mask = {0, 1, 0, 0};
  CHECK(std::abs(pce_loss(rows, y, mask) - std::log(4.0) / 4.0) < 1e-12);
}

TEST_CASE("pce rejects mismatched shapes") {
  const Rows rows = uniform_log_rows(2, 4);
  const std::vector<TokenId> y = {0, 1, 2};
  const std::vector<std::uint8_t> mask = {1, 1, 1};
  CHECK_THROWS_AS(pce_loss(rows, y, mask), DimensionMismatchError);
}

TEST_CASE("er on uniform rows") {
  const Rows rows = uniform_log_rows(3, 4);
  const std::vector<TokenId> tset = {1, 3};
  CHECK(std::abs(er_loss(rows, tset) - 2.0 * std::log(4.0)) < 1e-9);
}

TEST_CASE("er vanishes when the set token is certain everywhere") {
  Rows rows(5, Row(6, -1e9));
  for (auto& row : rows) row[2] = 0.0;  // log 1
  const std::vector<TokenId> tset = {2};
  CHECK(er_loss(rows, tset) == 0.0);
}

TEST_CASE("sum-of-logs dominates log-of-sum on every distribution") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t v = 4 + uniform_index(rng, 10);
    const Rows rows = random_log_rows(rng, 1 + uniform_index(rng, 8), v);
    std::vector<TokenId> tset;
    for (TokenId id = 0; id < static_cast<TokenId>(v); ++id)
      if (bernoulli(rng, 0.3)) tset.push_back(id);
    if (tset.empty()) tset.push_back(0);
    const double literal = er_loss(rows, tset, ErVariant::SumOfLogs);
    const double pooled = er_loss(rows, tset, ErVariant::LogOfSum);
    CHECK(literal >= pooled - 1e-12);
  }
}

TEST_CASE("er position cap restricts the outer sum but not the divisor") {
  const Rows rows = uniform_log_rows(4, 4);
  const std::vector<TokenId> tset = {0};
  const double full = er_loss(rows, tset);
  const double capped = er_loss(rows, tset, ErVariant::SumOfLogs, 2);
  CHECK(std::abs(capped - full / 2.0) < 1e-12);
}

TEST_CASE("dt on explicit probability rows") {
  SUBCASE("zero termination mass") {
    Rows probs(3, Row(5, 0.0));
    for (auto& row : probs) row[4] = 1.0;
    CHECK(dt_loss(probs, 1, 2) == 0.0);
  }
  SUBCASE("uniform world holding both markers") {
    const Rows probs(6, Row(4, 0.25));
    CHECK(std::abs(dt_loss(probs, 1, 2) - 0.5) < 1e-9);
  }
  SUBCASE("shrinking the termination mass shrinks the loss monotonically") {
    double prev = 2.0;
    for (double mass : {0.8, 0.4, 0.2, 0.05, 0.0}) {
      Rows probs(4, Row(4, 0.0));
      for (auto& row : probs) {
        row[1] = mass / 2.0;
        row[2] = mass / 2.0;
        row[3] = 1.0 - mass;
      }
      const double v = dt_loss(probs, 1, 2);
      CHECK(v < prev);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      prev = v;
    }
  }
  SUBCASE("identical marker ids are a configuration error") {
    const Rows probs(2, Row(4, 0.25));
    CHECK_THROWS_AS(dt_loss(probs, 2, 2), InvalidConfigError);
  }
}

TEST_CASE("composite arithmetic") {
  LossWeights w;
  CHECK(w.alpha == 1.0);
  CHECK(w.beta == 50.0);
  CHECK(w.gamma == 1.0);

  const LossBreakdown only_pce = composite_loss(0.7, 9.0, 0.3, LossWeights{1.0, 0.0, 0.0});
  CHECK(only_pce.total == 0.7);
  CHECK(only_pce.pce == 0.7);
  CHECK(only_pce.er == 9.0);
  CHECK(only_pce.dt == 0.3);

  const LossBreakdown mixed = composite_loss(1.0, 0.5, 0.2, LossWeights{2.0, 1.0, 3.0});
  CHECK(mixed.total == doctest::Approx(3.1).epsilon(1e-12));
}

TEST_CASE("composite total recomputes exactly from its parts") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    LossWeights w{uniform_unit(rng) * 3, uniform_unit(rng) * 60, uniform_unit(rng) * 3};
    if (w.alpha + w.beta + w.gamma == 0.0) w.alpha = 1.0;
    const double pce = uniform_unit(rng) * 4;
    const double er = uniform_unit(rng) * 100;
    const double dt = uniform_unit(rng);
    const LossBreakdown b = composite_loss(pce, er, dt, w);
    CHECK(b.total == w.alpha * pce + w.beta * er + w.gamma * dt);
  }
}

TEST_CASE("composite is linear in each weight") {
  const double pce = 1.25, er = 0.5, dt = 0.125;
  const LossWeights base{1.0, 2.0, 4.0};
  const double t0 = composite_loss(pce, er, dt, base).total;
  LossWeights bumped = base;
  bumped.beta += 3.0;
  const double t1 = composite_loss(pce, er, dt, bumped).total;
  CHECK(t1 - t0 == 3.0 * er);
}

TEST_CASE("all-zero weights are invalid") {
  LossWeights w{0.0, 0.0, 0.0};
  CHECK_THROWS_AS(w.validate(), InvalidConfigError);
  LossWeights neg{1.0, -0.5, 0.0};
  CHECK_THROWS_AS(neg.validate(), InvalidConfigError);
}

TEST_CASE("mask selection basics") {
  SUBCASE("K=100 selects everything") {
    const auto m = build_mask({0.4, -2.0, 3.0}, 100.0);
    CHECK(selected_indices(m) == std::vector<std::size_t>{0, 1, 2});
  }
  SUBCASE("top half of four scores") {
    const auto m = build_mask({3.0, 1.0, 2.0, 0.5}, 50.0);
    CHECK(m.mask == std::vector<std::uint8_t>{1, 0, 1, 0});
  }
  SUBCASE("floor of one survives tiny percentages") {
    const auto m = build_mask({0.1, 0.9}, 1.0);
    CHECK(selected_indices(m) == std::vector<std::size_t>{1});
  }
  SUBCASE("ties fall to the lower index") {
    const auto m = build_mask({1.0, 1.0, 1.0, 1.0}, 50.0);
    CHECK(selected_indices(m) == std::vector<std::size_t>{0, 1});
  }
  SUBCASE("empty scores are rejected") {
    CHECK_THROWS_AS(build_mask({}, 50.0), EmptyInputError);
  }
}

TEST_CASE("mask selection matches the reference rule on randomized inputs") {
  Rng rng(0xBADA55);
  const double corner_ks[] = {100.0, 50.0, 20.0, 5.0, 1.0};
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 60);
    std::vector<double> scores(n);
    // quantized scores so ties actually occur
    for (auto& s : scores) s = static_cast<double>(uniform_index(rng, 8)) * 0.5 - 1.0;
    const double K = trial % 5 == 0 ? corner_ks[uniform_index(rng, 5)]
                                    : uniform_unit(rng) * 99.999 + 0.001;
    const auto m = build_mask(scores, K);
    CHECK(m.scores.size() == n);
    CHECK(m.mask.size() == n);
    CHECK(selected_indices(m) == reference_selection(scores, K));
    // rerun is bit-identical
    CHECK(build_mask(scores, K).mask == m.mask);
  }
}

TEST_CASE("mask selections nest as K grows") {
  Rng rng(0x5EED);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 40);
    std::vector<double> scores(n);
    for (auto& s : scores) s = static_cast<double>(uniform_index(rng, 6));
    const double k_small = uniform_unit(rng) * 50.0 + 0.5;
    const double k_big = k_small + uniform_unit(rng) * (100.0 - k_small);
    const auto small = build_mask(scores, k_small);
    const auto big = build_mask(scores, k_big);
    for (std::size_t i = 0; i < n; ++i) {
      if (small.mask[i]) CHECK(big.mask[i]);
    }
  }
}

TEST_CASE("importance scores are zero when the model ignores the prompt") {
  TableLmSpec spec;
  spec.words = {"<bos>", "<eos>", "</think>", "x"};
  auto lm = TableLm(std::move(spec), "uniform-4");
  const auto x = lm.encode_ids("x x");
  std::vector<TokenId> ctx = {lm.vocab().bos_id};
  ctx.insert(ctx.end(), x.begin(), x.end());
  const auto y = lm.encode_ids("x x x");
  for (double s : importance_scores(lm, ctx, y)) CHECK(std::abs(s) < 1e-12);
}

TEST_CASE("importance score is the log-probability gap") {
  // with the prompt the continuation has p=0.5, without it 0.25
  TableLmSpec spec;
  spec.words = {"<bos>", "<eos>", "</think>", "q", "y", "pad"};
  spec.add_row({"<bos>"}, {{"y", 0.25}, {"pad", 0.75}});
  spec.add_row({"q"}, {{"y", 0.5}, {"pad", 0.5}});
  auto lm = TableLm(std::move(spec), "gap");
  std::vector<TokenId> ctx = {lm.vocab().bos_id, lm.encode_ids("q")[0]};
  const auto y = std::vector<TokenId>{lm.encode_ids("y")[0]};

  const auto scores = importance_scores(lm, ctx, y);
  REQUIRE(scores.size() == 1);
  CHECK(std::abs(scores[0] - (std::log(0.5) - std::log(0.25))) < 1e-12);
  CHECK(scores[0] == doctest::Approx(0.6931).epsilon(1e-4));

  const auto flipped = importance_scores(lm, ctx, y, SignConvention::NegatedDelta);
  CHECK(flipped[0] == -scores[0]);
}

TEST_CASE("importance scores equal the two teacher-forced vectors recomputed directly") {
  auto model = load_adapter("tiny-lm");
  const auto& vocab = model->vocab();
  const auto q = model->encode_ids("add 2 3 ?");
  std::vector<TokenId> ctx = {vocab.bos_id};
  ctx.insert(ctx.end(), q.begin(), q.end());
  const auto y = model->encode_ids("sum add 2 3 5 . wait 1 5 . </think> answer is 5");

  const auto scores = importance_scores(*model, ctx, y);
  REQUIRE(scores.size() == y.size());

  // independent recomputation from raw teacher-forced rows
  std::vector<TokenId> with = ctx;
  with.insert(with.end(), y.begin(), y.end());
  std::vector<TokenId> without = {vocab.bos_id};
  without.insert(without.end(), y.begin(), y.end());
  const Rows rows_with = model->teacher_forced_logprobs(with);
  const Rows rows_without = model->teacher_forced_logprobs(without);
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double lp_with = rows_with[ctx.size() - 1 + t][y[t]];
    const double lp_without = rows_without[t][y[t]];
    CHECK(scores[t] == lp_with - lp_without);
  }
}

TEST_CASE("true loss breakdown matches component-wise recomputation") {
  TableLmSpec spec;
  spec.words = {"<bos>", "<eos>", "</think>", "a", "b", "c"};
  spec.add_row({"a"}, {{"a", 0.2}, {"b", 0.5}, {"c", 0.2}, {"<eos>", 0.1}});
  spec.add_row({"b"}, {{"a", 0.4}, {"c", 0.4}, {"</think>", 0.2}});
  auto lm = TableLm(std::move(spec), "mixed");
  const auto& vocab = lm.vocab();

  const std::vector<TokenId> prefix = {vocab.bos_id, lm.encode_ids("a")[0]};
  const std::vector<TokenId> suffix = lm.encode_ids("b a");
  const std::vector<TokenId> y = lm.encode_ids("b c a");

  LossSpec loss;
  loss.weights = LossWeights{1.0, 2.0, 3.0};
  loss.mask = {1, 0, 1};
  loss.token_set = lm.encode_ids("a b");
  loss.eos_id = vocab.eos_id;
  loss.eot_id = vocab.eot_id;

  const LossBreakdown got = evaluate_true_loss(lm, prefix, suffix, y, loss);

  std::vector<TokenId> full = prefix;
  full.insert(full.end(), suffix.begin(), suffix.end());
  full.insert(full.end(), y.begin(), y.end());
  const Rows all = lm.teacher_forced_logprobs(full);
  // rows[t] predicts full[t+1], so the rows covering y start one before it
  const auto first = static_cast<std::ptrdiff_t>(prefix.size() + suffix.size() - 1);
  Rows yrows(all.begin() + first, all.begin() + first + static_cast<std::ptrdiff_t>(y.size()));
  CHECK(got.pce == pce_loss(yrows, y, loss.mask));
  CHECK(got.er == er_loss(yrows, loss.token_set));
  CHECK(got.dt == dt_loss(rows_to_probs(yrows), vocab.eos_id, vocab.eot_id));
  CHECK(got.total == loss.weights.alpha * got.pce + loss.weights.beta * got.er +
                         loss.weights.gamma * got.dt);
}
