#include "prolix/table_lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "prolix/errors.hpp"

namespace prolix {

TokenId TableLmSpec::word_id(const std::string& word) const {
  auto it = std::find(words.begin(), words.end(), word);
  if (it == words.end()) {
    throw InvalidTokenError("word not in table vocabulary: '" + word + "'");
  }
  return static_cast<TokenId>(it - words.begin());
}

void TableLmSpec::add_row(const std::vector<std::string>& context,
                          const std::vector<std::pair<std::string, double>>& probs) {
  std::vector<TokenId> key;
  key.reserve(context.size());
  for (const auto& w : context) key.push_back(word_id(w));
  Row row(words.size(), 0.0);
  for (const auto& [w, p] : probs) {
    row[static_cast<std::size_t>(word_id(w))] += p;
  }
  rows[key] = std::move(row);
}

TableLm::TableLm(TableLmSpec spec, std::string name)
    : spec_(std::move(spec)), name_(std::move(name)), words_(spec_.words) {
  const std::size_t v = spec_.words.size();
  info_.size = v;
  info_.bos_id = words_.id_of(spec_.bos_word);
  info_.eos_id = words_.id_of(spec_.eos_word);
  info_.eot_id = words_.id_of(spec_.eot_word);
  info_.special_ids = {info_.bos_id, info_.eos_id, info_.eot_id};
  for (const auto& w : spec_.extra_special) {
    info_.special_ids.insert(words_.id_of(w));
  }
  if (info_.eos_id == info_.eot_id) {
    throw InvalidConfigError("table vocabulary: eos and eot must differ");
  }
  info_.validate();
  if (spec_.order < 1) {
    throw InvalidConfigError("table order must be at least 1");
  }

  auto normalize = [v](Row row, const std::string& what) {
    if (row.size() != v) {
      throw DimensionMismatchError(what + ": row width != vocab size");
    }
    double sum = 0.0;
    for (double p : row) {
      if (p < 0.0) throw InvalidConfigError(what + ": negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InvalidConfigError(what + ": probabilities sum to " + std::to_string(sum));
    }
    for (double& p : row) p /= sum;
    return row;
  };

  if (spec_.default_row.empty()) {
    default_prob_.assign(v, 1.0 / static_cast<double>(v));
  } else {
    default_prob_ = normalize(spec_.default_row, "default row");
  }
  for (const auto& [key, row] : spec_.rows) {
    if (key.size() != spec_.order) {
      throw InvalidConfigError("row key length != order");
    }
    for (TokenId id : key) {
      if (id < 0 || static_cast<std::size_t>(id) >= v) {
        throw InvalidTokenError("row key id out of vocabulary");
      }
    }
    prob_rows_[key] = normalize(row, "transition row");
  }
}

std::vector<TokenId> TableLm::encode_ids(const std::string& text) const {
  return words_.encode(text);
}

std::string TableLm::decode_text(std::span<const TokenId> ids) const {
  return words_.decode(ids);
}

const Row& TableLm::row_for_key(std::span<const TokenId> key) const {
  auto it = prob_rows_.find(std::vector<TokenId>(key.begin(), key.end()));
  return it == prob_rows_.end() ? default_prob_ : it->second;
}

const Row& TableLm::prob_row(std::span<const TokenId> context) const {
  const std::size_t k = spec_.order;
  std::vector<TokenId> key(k, info_.bos_id);
  const std::size_t take = std::min(k, context.size());
  for (std::size_t i = 0; i < take; ++i) {
    key[k - 1 - i] = context[context.size() - 1 - i];
  }
  return row_for_key(key);
}

Rows TableLm::teacher_forced_logprobs(std::span<const TokenId> context) const {
  if (context.empty()) {
    throw EmptyInputError("teacher_forced_logprobs: empty context");
  }
  if (context.size() > spec_.max_context) {
    throw ContextOverflowError("context length " + std::to_string(context.size()) +
                               " exceeds " + std::to_string(spec_.max_context));
  }
  for (TokenId id : context) {
    if (id < 0 || static_cast<std::size_t>(id) >= info_.size) {
      throw InvalidTokenError("context id out of vocabulary: " + std::to_string(id));
    }
  }
  Rows out(context.size());
  for (std::size_t t = 0; t < context.size(); ++t) {
    const Row& p = prob_row(context.subspan(0, t + 1));
    Row lp(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) lp[i] = std::log(p[i]);
    out[t] = std::move(lp);
  }
  return out;
}

Row TableLm::next_logprobs(std::span<const TokenId> context) const {
  if (context.empty()) {
    throw EmptyInputError("next_logprobs: empty context");
  }
  if (context.size() > spec_.max_context) {
    throw ContextOverflowError("context too long");
  }
  const Row& p = prob_row(context);
  Row lp(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) lp[i] = std::log(p[i]);
  return lp;
}

GradMatrix TableLm::suffix_gradient(std::span<const TokenId> prefix,
                                    std::span<const TokenId> suffix,
                                    std::span<const TokenId> continuation,
                                    const LossSpec& spec) const {
  if (prefix.empty() || suffix.empty() || continuation.empty()) {
    throw EmptyInputError("suffix_gradient: prefix, suffix, and continuation required");
  }
  if (spec.mask.size() != continuation.size()) {
    throw DimensionMismatchError("suffix_gradient: mask does not cover the continuation");
  }
  const std::size_t v = info_.size;
  const std::size_t y_len = continuation.size();
  const std::size_t order = spec_.order;
  const TokenId eos = spec.eos_id >= 0 ? spec.eos_id : info_.eos_id;
  const TokenId eot = spec.eot_id >= 0 ? spec.eot_id : info_.eot_id;
  const std::size_t er_limit = std::min(spec.er_positions, y_len);

  std::vector<TokenId> context(prefix.begin(), prefix.end());
  context.insert(context.end(), suffix.begin(), suffix.end());
  context.insert(context.end(), continuation.begin(), continuation.end());
  if (context.size() > spec_.max_context) {
    throw ContextOverflowError("suffix_gradient: context too long");
  }

  // Base probability rows for the continuation positions. Row t (predicting
  // y_t) sits at context position row_pos = |prefix| + |suffix| - 1 + t.
  const std::size_t row0 = prefix.size() + suffix.size() - 1;
  std::vector<const Row*> base(y_len);
  for (std::size_t t = 0; t < y_len; ++t) {
    base[t] = &prob_row(std::span<const TokenId>(context.data(), row0 + t + 1));
  }

  // The table output is multilinear in the relaxed one-hot inputs, so the
  // partial w.r.t. weight (s, w) equals the loss term evaluated with suffix
  // position s clamped to w. Terms whose key window misses s contribute their
  // base value; only rows with row_pos in [P_s, P_s + order) change.
  double base_pce_sum = 0.0;
  for (std::size_t t = 0; t < y_len; ++t) {
    if (spec.mask[t]) base_pce_sum += 1.0;  // q/p ratio is 1 at the base point
  }
  double base_er_sum = 0.0;
  if (!spec.token_set.empty()) {
    base_er_sum = spec.er_variant == ErVariant::SumOfLogs
                      ? static_cast<double>(er_limit) * static_cast<double>(spec.token_set.size())
                      : static_cast<double>(er_limit);
  }
  double base_dt_sum = 0.0;
  for (std::size_t t = 0; t < y_len; ++t) {
    base_dt_sum += (*base[t])[static_cast<std::size_t>(eos)] +
                   (*base[t])[static_cast<std::size_t>(eot)];
  }

  GradMatrix grad(suffix.size(), std::vector<double>(v, 0.0));
  std::vector<TokenId> key(order);
  for (std::size_t s = 0; s < suffix.size(); ++s) {
    const std::size_t pos_s = prefix.size() + s;
    // Continuation rows whose key window covers pos_s.
    const std::size_t t_lo = pos_s <= row0 ? 0 : pos_s - row0;
    const std::size_t t_hi = std::min(y_len, pos_s + order > row0 ? pos_s + order - row0 : 0);
    for (std::size_t w = 0; w < v; ++w) {
      double pce_sum = base_pce_sum;
      double er_sum = base_er_sum;
      double dt_sum = base_dt_sum;
      for (std::size_t t = t_lo; t < t_hi; ++t) {
        const std::size_t row_pos = row0 + t;
        // Key for this row with position pos_s clamped to w.
        for (std::size_t i = 0; i < order; ++i) {
          std::ptrdiff_t p = static_cast<std::ptrdiff_t>(row_pos) -
                             static_cast<std::ptrdiff_t>(order) + 1 +
                             static_cast<std::ptrdiff_t>(i);
          TokenId id = p < 0 ? info_.bos_id : context[static_cast<std::size_t>(p)];
          if (p == static_cast<std::ptrdiff_t>(pos_s)) id = static_cast<TokenId>(w);
          key[i] = id;
        }
        const Row& q = row_for_key(key);
        const Row& p_base = *base[t];
        if (spec.mask[t]) {
          auto yt = static_cast<std::size_t>(continuation[t]);
          pce_sum += q[yt] / p_base[yt] - 1.0;
        }
        if (!spec.token_set.empty() && t < er_limit) {
          if (spec.er_variant == ErVariant::SumOfLogs) {
            for (TokenId tok : spec.token_set) {
              auto vi = static_cast<std::size_t>(tok);
              er_sum += q[vi] / p_base[vi] - 1.0;
            }
          } else {
            double qm = 0.0, pm = 0.0;
            for (TokenId tok : spec.token_set) {
              qm += q[static_cast<std::size_t>(tok)];
              pm += p_base[static_cast<std::size_t>(tok)];
            }
            er_sum += qm / pm - 1.0;
          }
        }
        dt_sum += q[static_cast<std::size_t>(eos)] + q[static_cast<std::size_t>(eot)] -
                  p_base[static_cast<std::size_t>(eos)] - p_base[static_cast<std::size_t>(eot)];
      }
      const double n = static_cast<double>(y_len);
      double d_pce = -pce_sum / n;
      double d_er = spec.token_set.empty() ? 0.0 : -er_sum / n;
      double d_dt = dt_sum / n;
      grad[s][w] = spec.weights.alpha * d_pce + spec.weights.beta * d_er +
                   spec.weights.gamma * d_dt;
    }
  }
  return grad;
}

namespace {

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

}  // namespace

TableLm TableLm::from_source(const std::string& source, std::string name) {
  TableLmSpec spec;
  spec.bos_word.clear();
  spec.eos_word.clear();
  spec.eot_word.clear();
  bool default_uniform = false;
  struct PendingRow {
    std::vector<std::string> context;
    std::vector<std::pair<std::string, double>> probs;
  };
  std::vector<PendingRow> pending;
  std::vector<std::pair<std::string, double>> pending_default;

  std::istringstream in(source);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto words = split_words(line);
    if (words.empty()) continue;
    const std::string& kind = words[0];
    auto fail = [&](const std::string& why) -> void {
      throw InvalidConfigError("table source line " + std::to_string(line_no) + ": " + why);
    };
    auto parse_pairs = [&](std::size_t from) {
      std::vector<std::pair<std::string, double>> probs;
      if ((words.size() - from) % 2 != 0) fail("expected word/probability pairs");
      for (std::size_t i = from; i + 1 < words.size(); i += 2) {
        try {
          probs.emplace_back(words[i], std::stod(words[i + 1]));
        } catch (const std::exception&) {
          fail("bad probability '" + words[i + 1] + "'");
        }
      }
      return probs;
    };
    if (kind == "vocab") {
      spec.words.insert(spec.words.end(), words.begin() + 1, words.end());
    } else if (kind == "bos" && words.size() == 2) {
      spec.bos_word = words[1];
    } else if (kind == "eos" && words.size() == 2) {
      spec.eos_word = words[1];
    } else if (kind == "eot" && words.size() == 2) {
      spec.eot_word = words[1];
    } else if (kind == "special") {
      spec.extra_special.insert(spec.extra_special.end(), words.begin() + 1, words.end());
    } else if (kind == "order" && words.size() == 2) {
      spec.order = static_cast<std::size_t>(std::stoul(words[1]));
    } else if (kind == "max_context" && words.size() == 2) {
      spec.max_context = static_cast<std::size_t>(std::stoul(words[1]));
    } else if (kind == "default") {
      if (words.size() == 2 && words[1] == "uniform") {
        default_uniform = true;
      } else if (words.size() > 2 && words[1] == ":") {
        pending_default = parse_pairs(2);
      } else {
        fail("expected 'default uniform' or 'default : w p ...'");
      }
    } else if (kind == "row") {
      auto colon = std::find(words.begin(), words.end(), ":");
      if (colon == words.end()) fail("row needs ':' between context and distribution");
      PendingRow row;
      row.context.assign(words.begin() + 1, colon);
      row.probs = parse_pairs(static_cast<std::size_t>(colon - words.begin()) + 1);
      if (row.context.empty()) fail("row needs a context");
      pending.push_back(std::move(row));
    } else {
      fail("unknown directive '" + kind + "'");
    }
  }

  if (spec.words.empty()) throw InvalidConfigError("table source: no vocab");
  if (spec.bos_word.empty() || spec.eos_word.empty() || spec.eot_word.empty()) {
    throw InvalidConfigError("table source: bos, eos, and eot are required");
  }
  (void)default_uniform;  // uniform is already the fallback
  if (!pending_default.empty()) {
    Row row(spec.words.size(), 0.0);
    for (const auto& [w, p] : pending_default) {
      row[static_cast<std::size_t>(spec.word_id(w))] += p;
    }
    spec.default_row = std::move(row);
  }
  for (const auto& row : pending) {
    spec.add_row(row.context, row.probs);
  }
  return TableLm(std::move(spec), std::move(name));
}

TableLm TableLm::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw MissingPrerequisiteError("cannot open table file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  auto slash = path.find_last_of('/');
  std::string stem = slash == std::string::npos ? path : path.substr(slash + 1);
  if (auto dot = stem.rfind('.'); dot != std::string::npos) stem.erase(dot);
  return from_source(buf.str(), stem);
}

const std::string& TableLm::builtin_chain_source() {
  static const std::string source = R"(# Deterministic reasoning-chain demo world.
# The model walks Q -> t1 -> t2 -> t3 -> done, closes the thinking segment,
# answers, and stops.
vocab <bos> <eos> </think> Q t1 t2 t3 done answer
bos <bos>
eos <eos>
eot </think>
order 1
max_context 512
default uniform
row <bos> : Q 1
row Q : t1 1
row t1 : t2 1
row t2 : t3 1
row t3 : done 1
row done : </think> 1
row </think> : answer 1
row answer : <eos> 1
row <eos> : <eos> 1
)";
  return source;
}

}  // namespace prolix
