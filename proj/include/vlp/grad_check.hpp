#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "vlp/param_store.hpp"

namespace vlp {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t checked = 0;  // coordinates compared (both grads above the floor)
  int64_t total = 0;
};

// Central-difference check of analytic gradients, one coordinate at a
// time: g ~ (f(x+h) - f(x-h)) / 2h. Coordinates where both estimates sit
// below `floor` are counted but contribute no relative error; everything
// else uses |a-b| / max(|a|,|b|). The defaults balance the O(h^2)
// truncation error against double-precision roundoff in the difference so
// that any coordinate above the floor resolves to ~1e-5 relative.
template <typename LossFn>
GradCheckReport check_gradients(ParameterStore<double>& params, LossFn&& loss_fn,
                                const GradTable<double>& analytic, double h = 1e-5,
                                double floor = 1e-6) {
  GradCheckReport report;
  for (auto& [name, grad] : analytic) {
    Tensor<double>& p = params.mutable_get(name);
    if (!p.same_shape(grad)) throw ShapeError("check_gradients: shape mismatch for " + name);
    for (size_t i = 0; i < p.data.size(); ++i) {
      const double saved = p.data[i];
      p.data[i] = saved + h;
      const double up = loss_fn(params);
      p.data[i] = saved - h;
      const double down = loss_fn(params);
      p.data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic_v = grad.data[i];
      ++report.total;
      const double mag = std::max(std::abs(numeric), std::abs(analytic_v));
      if (mag < floor) continue;
      ++report.checked;
      const double rel = std::abs(numeric - analytic_v) / mag;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = static_cast<int64_t>(i);
      }
    }
  }
  return report;
}

}  // namespace vlp
