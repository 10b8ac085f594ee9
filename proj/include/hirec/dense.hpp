#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

namespace hirec {

struct ScoredRow {
  Eigen::Index row = 0;
  double score = 0.0;
};

/// Exact top-k by inner product of every row of `rows` with `query`, accumulated in double.
/// Ordering: descending score, then `before(a, b)` on row indices for ties.
template <typename RowsDerived, typename QueryDerived, typename TieBreak>
std::vector<ScoredRow> top_k_inner_product(const Eigen::MatrixBase<RowsDerived>& rows,
                                           const Eigen::MatrixBase<QueryDerived>& query, std::size_t k,
                                           TieBreak before) {
  eigen_assert(rows.cols() == query.size());
  const Eigen::VectorXd scores = rows.template cast<double>() * query.template cast<double>();
  std::vector<ScoredRow> all(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) all[static_cast<std::size_t>(i)] = {i, scores[i]};
  k = std::min(k, all.size());
  auto cmp = [&](const ScoredRow& a, const ScoredRow& b) {
    if (a.score != b.score) return a.score > b.score;
    return before(a.row, b.row);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), cmp);
  all.resize(k);
  return all;
}

template <typename RowsDerived, typename QueryDerived>
std::vector<ScoredRow> top_k_inner_product(const Eigen::MatrixBase<RowsDerived>& rows,
                                           const Eigen::MatrixBase<QueryDerived>& query, std::size_t k) {
  return top_k_inner_product(rows, query, k, [](Eigen::Index a, Eigen::Index b) { return a < b; });
}

}  // namespace hirec
