#include "prolix/rows.hpp"

#include <cmath>

#include "prolix/errors.hpp"

namespace prolix {

Rows rows_to_probs(const Rows& logprob_rows) {
  Rows out(logprob_rows.size());
  for (std::size_t t = 0; t < logprob_rows.size(); ++t) {
    out[t].resize(logprob_rows[t].size());
    for (std::size_t v = 0; v < logprob_rows[t].size(); ++v) {
      out[t][v] = std::exp(logprob_rows[t][v]);
    }
  }
  return out;
}

void require_row_width(const Rows& rows, std::size_t vocab) {
  for (const auto& row : rows) {
    if (row.size() != vocab) {
      throw DimensionMismatchError("row width " + std::to_string(row.size()) +
                                   " != vocab " + std::to_string(vocab));
    }
  }
}

}  // namespace prolix
