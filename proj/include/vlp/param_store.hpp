#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "vlp/errors.hpp"
#include "vlp/graph.hpp"
#include "vlp/tensor.hpp"

namespace vlp {

// Ordered so that iteration (checkpointing, flattening for finite
// differences) is deterministic across runs and platforms.
template <typename Real>
using GradTable = std::map<std::string, Tensor<Real>>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameter tensors plus Adam first/second moment state.
// Moments are lazily created per parameter and are not serialized.
template <typename Real>
class ParameterStore {
 public:
  void insert(const std::string& name, Tensor<Real> t) {
    if (params_.count(name)) throw ValueError("parameter already exists: " + name);
    params_.emplace(name, std::move(t));
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Tensor<Real>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValueError("unknown parameter: " + name);
    return it->second;
  }

  Tensor<Real>& mutable_get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValueError("unknown parameter: " + name);
    return it->second;
  }

  const std::map<std::string, Tensor<Real>>& all() const { return params_; }
  size_t size() const { return params_.size(); }
  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t s) { step_count_ = s; }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  // Graph leaf bound to the stored tensor; gradients from all use sites
  // accumulate on the single cached node.
  Value<Real> use(Graph<Real>& g, const std::string& name) const {
    return g.cached_param(name, get(name));
  }

  GradTable<Real> zero_grads() const {
    GradTable<Real> t;
    for (const auto& [name, p] : params_) t.emplace(name, Tensor<Real>::zeros(p.shape));
    return t;
  }

  // Accumulates this graph's parameter gradients into `into`.
  void collect_grads(const Graph<Real>& g, GradTable<Real>& into) const {
    g.for_each_param_grad([&](const std::string& name, const Tensor<Real>& grad) {
      auto it = into.find(name);
      if (it == into.end()) throw ValueError("gradient for unknown parameter: " + name);
      if (!it->second.same_shape(grad))
        throw ShapeError("gradient shape mismatch for " + name);
      for (size_t i = 0; i < grad.data.size(); ++i) it->second.data[i] += grad.data[i];
    });
  }

  // Adam with bias correction. Parameters that have no entry in `grads`
  // (or a zero entry) still advance their moments, matching the usual
  // full-vector update.
  void adam_step(const GradTable<Real>& grads, const AdamConfig& cfg) {
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [name, p] : params_) {
      auto git = grads.find(name);
      if (git == grads.end()) throw ValueError("adam_step: missing gradient for " + name);
      const Tensor<Real>& grad = git->second;
      if (!p.same_shape(grad)) throw ShapeError("adam_step: gradient shape mismatch for " + name);
      auto mit = m_.find(name);
      if (mit == m_.end()) {
        mit = m_.emplace(name, Tensor<Real>::zeros(p.shape)).first;
        v_.emplace(name, Tensor<Real>::zeros(p.shape));
      }
      Tensor<Real>& m = mit->second;
      Tensor<Real>& v = v_.at(name);
      for (size_t i = 0; i < p.data.size(); ++i) {
        const double gi = static_cast<double>(grad.data[i]);
        const double mi = cfg.beta1 * static_cast<double>(m.data[i]) + (1.0 - cfg.beta1) * gi;
        const double vi = cfg.beta2 * static_cast<double>(v.data[i]) + (1.0 - cfg.beta2) * gi * gi;
        m.data[i] = static_cast<Real>(mi);
        v.data[i] = static_cast<Real>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        p.data[i] = static_cast<Real>(static_cast<double>(p.data[i]) -
                                      cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      }
    }
  }

  template <typename Other>
  ParameterStore<Other> cast() const {
    ParameterStore<Other> out;
    for (const auto& [name, p] : params_) out.insert(name, p.template cast<Other>());
    out.set_step_count(step_count_);
    return out;
  }

  // Flat views in name order, for finite-difference probing.
  std::vector<Real> flatten() const {
    std::vector<Real> out;
    out.reserve(static_cast<size_t>(scalar_count()));
    for (const auto& [name, p] : params_) out.insert(out.end(), p.data.begin(), p.data.end());
    return out;
  }

  void unflatten(const std::vector<Real>& flat) {
    if (static_cast<int64_t>(flat.size()) != scalar_count())
      throw ShapeError("unflatten: length mismatch");
    size_t pos = 0;
    for (auto& [name, p] : params_) {
      std::copy_n(flat.begin() + static_cast<int64_t>(pos), p.data.size(), p.data.begin());
      pos += p.data.size();
    }
  }

 private:
  std::map<std::string, Tensor<Real>> params_;
  std::map<std::string, Tensor<Real>> m_;
  std::map<std::string, Tensor<Real>> v_;
  int64_t step_count_ = 0;
};

template <typename Real>
std::vector<Real> flatten_grads(const GradTable<Real>& grads) {
  std::vector<Real> out;
  for (const auto& [name, g] : grads) out.insert(out.end(), g.data.begin(), g.data.end());
  return out;
}

template <typename Real>
void scale_grads(GradTable<Real>& grads, Real factor) {
  for (auto& [name, g] : grads)
    for (Real& v : g.data) v *= factor;
}

}  // namespace vlp
