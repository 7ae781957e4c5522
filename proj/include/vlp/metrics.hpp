#pragma once

#include <vector>

#include "vlp/tensor.hpp"

namespace vlp {

// Q x C pair scores plus, per query, the set of correct candidate columns.
struct ScoreMatrix {
  TensorD scores;
  std::vector<std::vector<int>> truth;

  void validate() const;
};

// Fraction of queries whose top-K candidates (descending score, ties broken
// by ascending candidate index) intersect the truth set. K above the
// candidate count is clamped.
double recall_at_k(const ScoreMatrix& m, int k);

}  // namespace vlp
