#pragma once

#include <vector>

namespace prolix {

/// One next-token distribution (log-probabilities or probabilities, per context).
using Row = std::vector<double>;
/// Position-major stack of rows: rows[t] conditions on tokens 0..t of the context
/// and describes token t+1.
using Rows = std::vector<Row>;

/// Gradient of a scalar loss w.r.t. relaxed one-hot suffix inputs,
/// shape suffix_len x vocab.
using GradMatrix = std::vector<std::vector<double>>;

/// exp() every entry; log-prob rows become probability rows.
Rows rows_to_probs(const Rows& logprob_rows);

/// Throws DimensionMismatch unless every row has `vocab` entries.
void require_row_width(const Rows& rows, std::size_t vocab);

}  // namespace prolix
