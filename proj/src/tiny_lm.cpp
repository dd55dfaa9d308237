#include "prolix/tiny_lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "prolix/errors.hpp"

namespace prolix {

namespace {

constexpr double kContBase = 0.75;
constexpr double kContSlope = 0.20;
constexpr double kContGain = 0.30;
constexpr double kContLo = 0.02;
constexpr double kContHi = 0.95;
constexpr double kTrigBase = 0.10;
constexpr double kTrigGain = 0.16;
constexpr double kTrigHi = 0.80;
constexpr int kTrigCap = 7;
constexpr int kMaxSentences = 9;

const std::vector<std::pair<std::string, double>>& trigger_starters() {
  static const std::vector<std::pair<std::string, double>> d = {
      {"wait", 0.55}, {"hmm", 0.25}, {"maybe", 0.12}, {"alternatively", 0.08}};
  return d;
}

const std::vector<std::pair<std::string, double>>& plain_starters() {
  static const std::vector<std::pair<std::string, double>> d = {
      {"so", 0.45}, {"then", 0.25}, {"note", 0.20}, {"check", 0.10}};
  return d;
}

std::string pick_weighted(Rng& rng, const std::vector<std::pair<std::string, double>>& dist) {
  std::vector<double> w;
  w.reserve(dist.size());
  for (const auto& [_, p] : dist) w.push_back(p);
  return dist[weighted_index(rng, w)].first;
}

}  // namespace

const std::vector<std::string>& TinyWorld::vocabulary() {
  static const std::vector<std::string> v = {
      "<bos>", "<eos>", "</think>",
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
      "add", "sub", "?", ".", ":",
      "sum", "so", "then", "note", "check",
      "wait", "hmm", "maybe", "alternatively",
      "answer", "is",
      "Let's", "think", "step", "by",
      "Interesting", "fact", "cats", "sleep", "most", "of", "their", "lives",
      "value", "item", "alpha", "beta", "gamma", "delta"};
  return v;
}

const std::vector<std::string>& TinyWorld::trigger_words() {
  static const std::vector<std::string> v = {"wait", "hmm", "maybe", "alternatively"};
  return v;
}

const std::vector<std::pair<std::string, std::string>>& TinyWorld::question_set() {
  static const std::vector<std::pair<std::string, std::string>> qs = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (int a = 0; a <= 4; ++a) {
      for (int b = 0; b <= 4; ++b) {
        out.emplace_back("add " + std::to_string(a) + " " + std::to_string(b) + " ?",
                         std::to_string(a + b));
      }
    }
    for (int a = 0; a <= 4; ++a) {
      for (int b = 0; b <= a; ++b) {
        out.emplace_back("sub " + std::to_string(a) + " " + std::to_string(b) + " ?",
                         std::to_string(a - b));
      }
    }
    return out;
  }();
  return qs;
}

int TinyWorld::gold_answer(const std::string& question) {
  std::istringstream in(question);
  std::string op, a_s, b_s;
  if (!(in >> op >> a_s >> b_s) || (op != "add" && op != "sub")) {
    throw InvalidConfigError("not a world question: '" + question + "'");
  }
  int a = std::stoi(a_s), b = std::stoi(b_s);
  return op == "add" ? a + b : a - b;
}

double TinyWorld::continue_probability(int k_next, int triggers) {
  double p = kContBase - kContSlope * k_next + kContGain * std::min(triggers, kTrigCap);
  return std::clamp(p, kContLo, kContHi);
}

std::vector<std::vector<TokenId>> TinyWorld::corpus(Rng& rng, std::size_t episodes,
                                                    const WordVocab& vocab) {
  std::vector<TokenId> trigger_ids;
  for (const auto& w : trigger_words()) trigger_ids.push_back(vocab.id_of(w));
  const TokenId bos = vocab.id_of("<bos>");

  // Junk excludes the three structural specials but keeps everything else
  // (digits included) so suffix robustness is trained, not assumed.
  std::vector<TokenId> junk_pool;
  for (std::size_t i = 3; i < vocab.size(); ++i) junk_pool.push_back(static_cast<TokenId>(i));

  auto count_triggers = [&](const std::vector<TokenId>& toks, std::size_t window) {
    int n = 0;
    std::size_t from = toks.size() > window ? toks.size() - window : 0;
    for (std::size_t i = from; i < toks.size(); ++i) {
      if (std::find(trigger_ids.begin(), trigger_ids.end(), toks[i]) != trigger_ids.end()) ++n;
    }
    return n;
  };

  std::vector<std::vector<TokenId>> out;
  out.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    bool is_add = bernoulli(rng, 0.5);
    int a = static_cast<int>(uniform_index(rng, 5));
    int b = is_add ? static_cast<int>(uniform_index(rng, 5))
                   : static_cast<int>(uniform_index(rng, static_cast<std::size_t>(a) + 1));
    int c = is_add ? a + b : a - b;
    auto digit = [&](int n) { return vocab.id_of(std::to_string(n)); };

    std::vector<TokenId> toks{bos};
    if (bernoulli(rng, 0.25)) {  // leading junk stands in for instruction prompts
      std::size_t len = 4 + uniform_index(rng, 9);
      for (std::size_t i = 0; i < len; ++i) toks.push_back(junk_pool[uniform_index(rng, junk_pool.size())]);
    }
    toks.push_back(vocab.id_of(is_add ? "add" : "sub"));
    toks.push_back(digit(a));
    toks.push_back(digit(b));
    toks.push_back(vocab.id_of("?"));

    double u = uniform_unit(rng);  // post-question junk stands in for suffixes
    std::size_t junk_len = 0;
    bool trigger_heavy = false;
    if (u < 0.30) {
      junk_len = 0;
    } else if (u < 0.40) {
      junk_len = 6;
    } else if (u < 0.50) {
      junk_len = 9;
    } else if (u < 0.80) {
      junk_len = 10;
    } else {
      junk_len = 10;
      trigger_heavy = true;
    }
    for (std::size_t i = 0; i < junk_len; ++i) {
      if (trigger_heavy && bernoulli(rng, 0.5)) {
        toks.push_back(trigger_ids[uniform_index(rng, trigger_ids.size())]);
      } else {
        toks.push_back(junk_pool[uniform_index(rng, junk_pool.size())]);
      }
    }

    // Restating the op keeps the answer computable from the window even when
    // a full-length suffix pushed the question out of it.
    toks.push_back(vocab.id_of("sum"));
    toks.push_back(vocab.id_of(is_add ? "add" : "sub"));
    toks.push_back(digit(a));
    toks.push_back(digit(b));
    toks.push_back(digit(c));
    toks.push_back(vocab.id_of("."));

    for (int k = 1; k <= kMaxSentences; ++k) {
      int trig = count_triggers(toks, 16);
      if (!bernoulli(rng, continue_probability(k, trig))) break;
      double p_trig = std::min(kTrigBase + kTrigGain * std::min(trig, kTrigCap), kTrigHi);
      const auto& family = bernoulli(rng, p_trig) ? trigger_starters() : plain_starters();
      toks.push_back(vocab.id_of(pick_weighted(rng, family)));
      toks.push_back(digit(k));
      toks.push_back(digit(c));
      toks.push_back(vocab.id_of("."));
    }

    toks.push_back(vocab.id_of("</think>"));
    toks.push_back(vocab.id_of("answer"));
    toks.push_back(vocab.id_of("is"));
    toks.push_back(digit(c));
    toks.push_back(vocab.id_of("<eos>"));
    out.push_back(std::move(toks));
  }
  return out;
}

// ---------------------------------------------------------------------------

TinyLm::TinyLm(Params params, WordVocab vocab, VocabInfo info)
    : params_(params), words_(std::move(vocab)), info_(std::move(info)) {}

std::shared_ptr<const TinyLm> TinyLm::train(const Params& params) {
  WordVocab vocab(TinyWorld::vocabulary());
  VocabInfo info;
  info.size = vocab.size();
  info.bos_id = vocab.id_of("<bos>");
  info.eos_id = vocab.id_of("<eos>");
  info.eot_id = vocab.id_of("</think>");
  info.special_ids = {info.bos_id, info.eos_id, info.eot_id};
  info.validate();

  auto model = std::shared_ptr<TinyLm>(new TinyLm(params, std::move(vocab), info));
  Rng rng(params.seed);
  model->fit(rng);
  return model;
}

namespace {

struct Adam {
  Eigen::MatrixXd m, v;
  explicit Adam(const Eigen::MatrixXd& shape)
      : m(Eigen::MatrixXd::Zero(shape.rows(), shape.cols())),
        v(Eigen::MatrixXd::Zero(shape.rows(), shape.cols())) {}

  void update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, double lr, int t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    const double mc = 1.0 - std::pow(b1, t);
    const double vc = 1.0 - std::pow(b2, t);
    Eigen::MatrixXd denom = (v / vc).cwiseSqrt();
    denom.array() += eps;
    param -= (lr / mc) * m.cwiseQuotient(denom);
  }
};

}  // namespace

void TinyLm::fit(Rng& rng) {
  const auto W = static_cast<Eigen::Index>(params_.window);
  const auto d = static_cast<Eigen::Index>(params_.embed);
  const auto h = static_cast<Eigen::Index>(params_.hidden);
  const auto V = static_cast<Eigen::Index>(info_.size);

  auto corpus = TinyWorld::corpus(rng, params_.episodes, words_);

  // Flatten every next-token prediction into (window slots, target).
  std::vector<std::int32_t> slots;
  std::vector<std::int32_t> targets;
  for (const auto& toks : corpus) {
    for (std::size_t t = 0; t + 1 < toks.size(); ++t) {
      for (Eigen::Index i = 0; i < W; ++i) {
        std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t) - W + 1 + i;
        slots.push_back(p < 0 ? info_.bos_id : toks[static_cast<std::size_t>(p)]);
      }
      targets.push_back(toks[t + 1]);
    }
  }
  const std::size_t n = targets.size();

  auto init = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        m(i, j) = (uniform_unit(rng) * 2.0 - 1.0) * 0.08;
      }
    }
    return m;
  };
  E_ = init(V, d);
  W1_ = init(h, W * d);
  b1_ = Eigen::VectorXd::Zero(h);
  W2_ = init(V, h);
  b2_ = Eigen::VectorXd::Zero(V);

  Adam opt_E(E_), opt_W1(W1_), opt_b1(b1_), opt_W2(W2_), opt_b2(b2_);
  int step = 0;

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  const std::size_t B = params_.batch;
  Eigen::MatrixXd Z(W * d, static_cast<Eigen::Index>(B));
  for (std::size_t epoch = 0; epoch < params_.epochs; ++epoch) {
    shuffle(rng, perm);
    for (std::size_t start = 0; start < n; start += B) {
      const auto bsz = static_cast<Eigen::Index>(std::min(B, n - start));
      Z.resize(W * d, bsz);
      for (Eigen::Index col = 0; col < bsz; ++col) {
        const std::size_t ex = perm[start + static_cast<std::size_t>(col)];
        const std::int32_t* s = &slots[ex * params_.window];
        for (Eigen::Index i = 0; i < W; ++i) {
          Z.block(i * d, col, d, 1) = E_.row(s[i]).transpose();
        }
      }

      Eigen::MatrixXd pre = (W1_ * Z).colwise() + b1_;
      Eigen::MatrixXd act = pre.array().tanh().matrix();
      Eigen::MatrixXd logits = (W2_ * act).colwise() + b2_;

      Eigen::MatrixXd dlogits(V, bsz);
      for (Eigen::Index col = 0; col < bsz; ++col) {
        Eigen::VectorXd lcol = logits.col(col);
        double mx = lcol.maxCoeff();
        Eigen::VectorXd p = (lcol.array() - mx).exp().matrix();
        p /= p.sum();
        p(targets[perm[start + static_cast<std::size_t>(col)]]) -= 1.0;
        dlogits.col(col) = p / static_cast<double>(bsz);
      }

      Eigen::MatrixXd dW2 = dlogits * act.transpose();
      Eigen::VectorXd db2 = dlogits.rowwise().sum();
      Eigen::MatrixXd dact = W2_.transpose() * dlogits;
      Eigen::MatrixXd dpre = (dact.array() * (1.0 - act.array().square())).matrix();
      Eigen::MatrixXd dW1 = dpre * Z.transpose();
      Eigen::VectorXd db1 = dpre.rowwise().sum();
      Eigen::MatrixXd dZ = W1_.transpose() * dpre;

      Eigen::MatrixXd dE = Eigen::MatrixXd::Zero(V, d);
      for (Eigen::Index col = 0; col < bsz; ++col) {
        const std::size_t ex = perm[start + static_cast<std::size_t>(col)];
        const std::int32_t* s = &slots[ex * params_.window];
        for (Eigen::Index i = 0; i < W; ++i) {
          dE.row(s[i]) += dZ.block(i * d, col, d, 1).transpose();
        }
      }

      ++step;
      opt_W1.update(W1_, dW1, params_.lr, step);
      Eigen::MatrixXd b1m = b1_, db1m = db1;
      opt_b1.update(b1m, db1m, params_.lr, step);
      b1_ = b1m;
      opt_W2.update(W2_, dW2, params_.lr, step);
      Eigen::MatrixXd b2m = b2_, db2m = db2;
      opt_b2.update(b2m, db2m, params_.lr, step);
      b2_ = b2m;
      opt_E.update(E_, dE, params_.lr, step);
    }
  }
}

std::vector<TokenId> TinyLm::encode_ids(const std::string& text) const {
  return words_.encode(text);
}

std::string TinyLm::decode_text(std::span<const TokenId> ids) const {
  return words_.decode(ids);
}

Eigen::VectorXd TinyLm::window_input(std::span<const TokenId> context, std::size_t pos,
                                     const Eigen::MatrixXd* suffix_weights,
                                     std::size_t suffix_begin) const {
  const auto W = static_cast<Eigen::Index>(params_.window);
  const auto d = static_cast<Eigen::Index>(params_.embed);
  Eigen::VectorXd z(W * d);
  for (Eigen::Index i = 0; i < W; ++i) {
    std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pos) - W + 1 + i;
    if (p < 0) {
      z.segment(i * d, d) = E_.row(info_.bos_id).transpose();
      continue;
    }
    auto up = static_cast<std::size_t>(p);
    if (suffix_weights != nullptr && up >= suffix_begin &&
        up < suffix_begin + static_cast<std::size_t>(suffix_weights->rows())) {
      z.segment(i * d, d) =
          E_.transpose() * suffix_weights->row(static_cast<Eigen::Index>(up - suffix_begin)).transpose();
    } else {
      z.segment(i * d, d) = E_.row(context[up]).transpose();
    }
  }
  return z;
}

Eigen::VectorXd TinyLm::forward_logprobs(const Eigen::VectorXd& z) const {
  Eigen::VectorXd act = ((W1_ * z) + b1_).array().tanh().matrix();
  Eigen::VectorXd logits = (W2_ * act) + b2_;
  double mx = logits.maxCoeff();
  double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

Rows TinyLm::teacher_forced_logprobs(std::span<const TokenId> context) const {
  if (context.empty()) {
    throw EmptyInputError("teacher_forced_logprobs: empty context");
  }
  if (context.size() > params_.max_context) {
    throw ContextOverflowError("context length " + std::to_string(context.size()) +
                               " exceeds " + std::to_string(params_.max_context));
  }
  for (TokenId id : context) {
    if (id < 0 || static_cast<std::size_t>(id) >= info_.size) {
      throw InvalidTokenError("context id out of vocabulary: " + std::to_string(id));
    }
  }
  Rows out(context.size());
  for (std::size_t t = 0; t < context.size(); ++t) {
    Eigen::VectorXd lp = forward_logprobs(window_input(context, t, nullptr, 0));
    out[t].assign(lp.data(), lp.data() + lp.size());
  }
  return out;
}

Row TinyLm::next_logprobs(std::span<const TokenId> context) const {
  if (context.empty()) {
    throw EmptyInputError("next_logprobs: empty context");
  }
  if (context.size() > params_.max_context) {
    throw ContextOverflowError("context too long");
  }
  Eigen::VectorXd lp = forward_logprobs(window_input(context, context.size() - 1, nullptr, 0));
  return Row(lp.data(), lp.data() + lp.size());
}

LossBreakdown TinyLm::loss_with_relaxed_suffix(std::span<const TokenId> prefix,
                                               const Eigen::MatrixXd& suffix_weights,
                                               std::span<const TokenId> continuation,
                                               const LossSpec& spec) const {
  if (prefix.empty() || continuation.empty()) {
    throw EmptyInputError("loss_with_relaxed_suffix: prefix and continuation required");
  }
  if (suffix_weights.cols() != static_cast<Eigen::Index>(info_.size)) {
    throw DimensionMismatchError("suffix weight columns != vocab size");
  }
  if (spec.mask.size() != continuation.size()) {
    throw DimensionMismatchError("mask does not cover the continuation");
  }
  const std::size_t s_len = static_cast<std::size_t>(suffix_weights.rows());
  // Token ids inside the relaxed block are placeholders; the weights rule.
  std::vector<TokenId> context(prefix.begin(), prefix.end());
  for (std::size_t i = 0; i < s_len; ++i) context.push_back(info_.bos_id);
  context.insert(context.end(), continuation.begin(), continuation.end());

  const std::size_t row0 = prefix.size() + s_len - 1;
  Rows rows(continuation.size());
  for (std::size_t t = 0; t < continuation.size(); ++t) {
    Eigen::VectorXd lp =
        forward_logprobs(window_input(context, row0 + t, &suffix_weights, prefix.size()));
    rows[t].assign(lp.data(), lp.data() + lp.size());
  }

  const TokenId eos = spec.eos_id >= 0 ? spec.eos_id : info_.eos_id;
  const TokenId eot = spec.eot_id >= 0 ? spec.eot_id : info_.eot_id;
  double pce = pce_loss(rows, continuation, spec.mask);
  double er = spec.token_set.empty()
                  ? 0.0
                  : er_loss(rows, spec.token_set, spec.er_variant, spec.er_positions);
  double dt = dt_loss(rows_to_probs(rows), eos, eot);
  LossBreakdown out;
  out.pce = pce;
  out.er = er;
  out.dt = dt;
  out.total = spec.weights.alpha * pce + spec.weights.beta * er + spec.weights.gamma * dt;
  return out;
}

Eigen::MatrixXd TinyLm::suffix_embedding_gradient(std::span<const TokenId> prefix,
                                                  std::span<const TokenId> suffix,
                                                  std::span<const TokenId> continuation,
                                                  const LossSpec& spec) const {
  if (prefix.empty() || suffix.empty() || continuation.empty()) {
    throw EmptyInputError("suffix_embedding_gradient: all three segments required");
  }
  if (spec.mask.size() != continuation.size()) {
    throw DimensionMismatchError("mask does not cover the continuation");
  }
  for (TokenId v : spec.token_set) {
    if (v < 0 || static_cast<std::size_t>(v) >= info_.size) {
      throw InvalidTokenError("token set id out of vocabulary");
    }
  }
  const auto W = static_cast<Eigen::Index>(params_.window);
  const auto d = static_cast<Eigen::Index>(params_.embed);
  const std::size_t y_len = continuation.size();
  const double n = static_cast<double>(y_len);
  const TokenId eos = spec.eos_id >= 0 ? spec.eos_id : info_.eos_id;
  const TokenId eot = spec.eot_id >= 0 ? spec.eot_id : info_.eot_id;
  const std::size_t er_limit = std::min(spec.er_positions, y_len);

  std::vector<TokenId> context(prefix.begin(), prefix.end());
  context.insert(context.end(), suffix.begin(), suffix.end());
  context.insert(context.end(), continuation.begin(), continuation.end());
  if (context.size() > params_.max_context) {
    throw ContextOverflowError("suffix_embedding_gradient: context too long");
  }

  const std::size_t row0 = prefix.size() + suffix.size() - 1;
  Eigen::MatrixXd g_emb = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(suffix.size()), d);

  for (std::size_t t = 0; t < y_len; ++t) {
    const std::size_t pos = row0 + t;
    Eigen::VectorXd z = window_input(context, pos, nullptr, 0);
    Eigen::VectorXd act = ((W1_ * z) + b1_).array().tanh().matrix();
    Eigen::VectorXd logits = (W2_ * act) + b2_;
    double mx = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - mx).exp().matrix();
    p /= p.sum();

    Eigen::VectorXd g_logp = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(info_.size));
    Eigen::VectorXd g_p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(info_.size));
    if (spec.mask[t]) {
      g_logp(continuation[t]) += -spec.weights.alpha / n;
    }
    if (!spec.token_set.empty() && t < er_limit) {
      if (spec.er_variant == ErVariant::SumOfLogs) {
        for (TokenId v : spec.token_set) g_logp(v) += -spec.weights.beta / n;
      } else {
        double mass = 0.0;
        for (TokenId v : spec.token_set) mass += p(v);
        for (TokenId v : spec.token_set) g_p(v) += -spec.weights.beta / (n * mass);
      }
    }
    g_p(eos) += spec.weights.gamma / n;
    g_p(eot) += spec.weights.gamma / n;

    // d logprob / d logits = I - 1 p^T; d prob / d logits = diag(p) - p p^T.
    Eigen::VectorXd dlogits = g_logp - p * g_logp.sum() +
                              p.cwiseProduct(g_p) - p * g_p.dot(p);
    Eigen::VectorXd dact = W2_.transpose() * dlogits;
    Eigen::VectorXd dpre = (dact.array() * (1.0 - act.array().square())).matrix();
    Eigen::VectorXd dz = W1_.transpose() * dpre;

    for (Eigen::Index i = 0; i < W; ++i) {
      std::ptrdiff_t pp = static_cast<std::ptrdiff_t>(pos) - W + 1 + i;
      if (pp < 0) continue;
      auto up = static_cast<std::size_t>(pp);
      if (up >= prefix.size() && up < prefix.size() + suffix.size()) {
        g_emb.row(static_cast<Eigen::Index>(up - prefix.size())) +=
            dz.segment(i * d, d).transpose();
      }
    }
  }
  return g_emb;
}

GradMatrix TinyLm::suffix_gradient(std::span<const TokenId> prefix,
                                   std::span<const TokenId> suffix,
                                   std::span<const TokenId> continuation,
                                   const LossSpec& spec) const {
  Eigen::MatrixXd g_emb = suffix_embedding_gradient(prefix, suffix, continuation, spec);
  Eigen::MatrixXd g_onehot = g_emb * E_.transpose();  // du[s][w] = <dz_s, E[w]>
  GradMatrix out(suffix.size(), std::vector<double>(info_.size));
  for (std::size_t s = 0; s < suffix.size(); ++s) {
    for (std::size_t w = 0; w < info_.size; ++w) {
      out[s][w] = g_onehot(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(w));
    }
  }
  return out;
}

}  // namespace prolix
