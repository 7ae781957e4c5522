#include "vlp/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "vlp/errors.hpp"

namespace vlp {

void ScoreMatrix::validate() const {
  if (scores.rank() != 2) throw ShapeError("score matrix must be rank 2");
  if (truth.size() != static_cast<size_t>(scores.rows()))
    throw ShapeError("truth entries " + std::to_string(truth.size()) + " do not match " +
                     std::to_string(scores.rows()) + " queries");
  for (const auto& t : truth) {
    if (t.empty()) throw ValueError("every query needs at least one correct candidate");
    for (int c : t)
      if (c < 0 || c >= scores.cols())
        throw IndexError("truth candidate " + std::to_string(c) + " outside [0," +
                         std::to_string(scores.cols()) + ")");
  }
}

double recall_at_k(const ScoreMatrix& m, int k) {
  if (k < 1) throw ValueError("recall_at_k requires K >= 1");
  m.validate();
  const int64_t q = m.scores.rows();
  const int64_t c = m.scores.cols();
  const int64_t top = std::min<int64_t>(k, c);
  int64_t hits = 0;
  std::vector<int> order(static_cast<size_t>(c));
  for (int64_t row = 0; row < q; ++row) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + top, order.end(), [&](int a, int b) {
      const double sa = m.scores.at(row, a);
      const double sb = m.scores.at(row, b);
      if (sa != sb) return sa > sb;
      return a < b;
    });
    const auto& truth = m.truth[static_cast<size_t>(row)];
    const bool hit = std::any_of(order.begin(), order.begin() + top, [&](int cand) {
      return std::find(truth.begin(), truth.end(), cand) != truth.end();
    });
    hits += hit ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(q);
}

}  // namespace vlp
