#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vlp/errors.hpp"
#include "vlp/rng.hpp"
#include "vlp/tensor.hpp"

namespace vlp {

// Reverse-mode gradient tape over dense 2-D tensors (rank-1 allowed for
// biases and LN scales). One Graph per forward pass; backward() walks the
// recorded nodes in reverse creation order, then the whole tape is dropped,
// so repeated steps have bounded memory.
//
// Every op computes its value eagerly and records a closure that pulls the
// output gradient back into its parents. Nodes reachable only from
// constants carry no grad buffer and are skipped during backward.

template <typename Real>
class Graph;

template <typename Real>
struct Value {
  Graph<Real>* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor<Real>& tensor() const;
  int64_t rows() const { return tensor().rows(); }
  int64_t cols() const { return tensor().cols(); }
  Real item() const;
};

template <typename Real>
class Graph {
 public:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;  // allocated only when requires_grad
    bool requires_grad = false;
    std::string param_name;  // nonempty for parameter leaves
    std::function<void(Graph&)> backprop;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Training-time behavior consumed by dropout().
  void set_training(bool training, Rng* rng = nullptr) {
    training_ = training;
    rng_ = rng;
  }
  bool training() const { return training_; }
  Rng* rng() { return rng_; }

  Value<Real> constant(Tensor<Real> t) { return make_node(std::move(t), false); }

  Value<Real> leaf(Tensor<Real> t, const std::string& name = {}) {
    Value<Real> v = make_node(std::move(t), true);
    nodes_[static_cast<size_t>(v.id)].param_name = name;
    return v;
  }

  // Parameter leaves are cached per name so gradients from every use site
  // accumulate into one node.
  Value<Real> cached_param(const std::string& name, const Tensor<Real>& tensor) {
    auto it = param_cache_.find(name);
    if (it != param_cache_.end()) return Value<Real>{this, it->second};
    Value<Real> v = leaf(tensor, name);
    param_cache_.emplace(name, v.id);
    return v;
  }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  Value<Real> make_node(Tensor<Real> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.grad = Tensor<Real>::zeros(n.value.shape);
    nodes_.push_back(std::move(n));
    return Value<Real>{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_backprop(Value<Real> v, std::function<void(Graph&)> fn) {
    node(v.id).backprop = std::move(fn);
  }

  // Seeds d(loss)/d(loss)=1 and propagates to every requires_grad node.
  void backward(Value<Real> loss) {
    if (loss.g != this) throw ValueError("backward: loss belongs to another graph");
    Node& ln = node(loss.id);
    if (ln.value.numel() != 1)
      throw ShapeError("backward requires a scalar loss, got shape " + ln.value.shape_str());
    if (!ln.requires_grad) return;  // loss independent of all parameters
    ln.grad.data[0] = Real(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.requires_grad && n.backprop) n.backprop(*this);
    }
  }

  template <typename Fn>
  void for_each_param_grad(Fn&& fn) const {
    for (const Node& n : nodes_) {
      if (!n.param_name.empty()) fn(n.param_name, n.grad);
    }
  }

 private:
  std::deque<Node> nodes_;
  std::unordered_map<std::string, int> param_cache_;
  bool training_ = false;
  Rng* rng_ = nullptr;
};

template <typename Real>
const Tensor<Real>& Value<Real>::tensor() const {
  return g->node(id).value;
}

template <typename Real>
Real Value<Real>::item() const {
  const Tensor<Real>& t = tensor();
  if (t.numel() != 1)
    throw ShapeError("item() requires a one-element tensor, got " + t.shape_str());
  return t.data[0];
}

namespace detail {

inline void require_same_graph(const void* a, const void* b, const char* op) {
  if (a != b) throw ValueError(std::string(op) + ": operands belong to different graphs");
}

// C[m,n] += op_a(A) @ op_b(B); flags transpose their operand.
template <typename Real>
void matmul_acc(Real* c, const Real* a, const Real* b, bool ta, bool tb, int64_t m, int64_t n,
                int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    for (int64_t l = 0; l < k; ++l) {
      const Real av = ta ? a[l * m + i] : a[i * k + l];
      if (av == Real(0)) continue;
      if (!tb) {
        const Real* brow = b + l * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * k + l];
      }
    }
  }
}

template <typename Real>
bool wants_grad(const Graph<Real>& g, int id) {
  return g.node(id).requires_grad;
}

}  // namespace detail

template <typename Real>
Value<Real> matmul(Value<Real> a, Value<Real> b, bool trans_a = false, bool trans_b = false) {
  detail::require_same_graph(a.g, b.g, "matmul");
  Graph<Real>& g = *a.g;
  const Tensor<Real>& ta = g.node(a.id).value;
  const Tensor<Real>& tb = g.node(b.id).value;
  if (ta.rank() != 2 || tb.rank() != 2)
    throw ShapeError("matmul requires rank-2 operands, got " + ta.shape_str() + " and " +
                     tb.shape_str());
  const int64_t m = trans_a ? ta.cols() : ta.rows();
  const int64_t k = trans_a ? ta.rows() : ta.cols();
  const int64_t kb = trans_b ? tb.cols() : tb.rows();
  const int64_t n = trans_b ? tb.rows() : tb.cols();
  if (k != kb)
    throw ShapeError("matmul: inner dimensions disagree between " + ta.shape_str() + " and " +
                     tb.shape_str());
  Tensor<Real> out = Tensor<Real>::zeros({m, n});
  detail::matmul_acc(out.data.data(), ta.data.data(), tb.data.data(), trans_a, trans_b, m, n, k);
  const bool rg = detail::wants_grad(g, a.id) || detail::wants_grad(g, b.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int aid = a.id, bid = b.id, oid = out_v.id;
  g.set_backprop(out_v, [aid, bid, oid, trans_a, trans_b, m, n, k](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& an = gr.node(aid);
    auto& bn = gr.node(bid);
    if (an.requires_grad) {
      if (!trans_a)  // dA = dOut @ op(B)^T
        detail::matmul_acc(an.grad.data.data(), dout.data.data(), bn.value.data.data(), false,
                           !trans_b, m, k, n);
      else  // dA = op(B) @ dOut^T
        detail::matmul_acc(an.grad.data.data(), bn.value.data.data(), dout.data.data(), trans_b,
                           true, k, m, n);
    }
    if (bn.requires_grad) {
      if (!trans_b)  // dB = op(A)^T @ dOut
        detail::matmul_acc(bn.grad.data.data(), an.value.data.data(), dout.data.data(), !trans_a,
                           false, k, n, m);
      else  // dB = dOut^T @ op(A)
        detail::matmul_acc(bn.grad.data.data(), dout.data.data(), an.value.data.data(), true,
                           trans_a, n, k, m);
    }
  });
  return out_v;
}

// Elementwise binary with same shapes.
template <typename Real>
Value<Real> add(Value<Real> a, Value<Real> b) {
  detail::require_same_graph(a.g, b.g, "add");
  Graph<Real>& g = *a.g;
  const Tensor<Real>& ta = g.node(a.id).value;
  const Tensor<Real>& tb = g.node(b.id).value;
  if (!ta.same_shape(tb))
    throw ShapeError("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor<Real> out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  const bool rg = detail::wants_grad(g, a.id) || detail::wants_grad(g, b.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int aid = a.id, bid = b.id, oid = out_v.id;
  g.set_backprop(out_v, [aid, bid, oid](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    for (int pid : {aid, bid}) {
      auto& pn = gr.node(pid);
      if (!pn.requires_grad) continue;
      for (size_t i = 0; i < dout.data.size(); ++i) pn.grad.data[i] += dout.data[i];
    }
  });
  return out_v;
}

template <typename Real>
Value<Real> sub(Value<Real> a, Value<Real> b) {
  detail::require_same_graph(a.g, b.g, "sub");
  Graph<Real>& g = *a.g;
  const Tensor<Real>& ta = g.node(a.id).value;
  const Tensor<Real>& tb = g.node(b.id).value;
  if (!ta.same_shape(tb))
    throw ShapeError("sub: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor<Real> out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
  const bool rg = detail::wants_grad(g, a.id) || detail::wants_grad(g, b.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int aid = a.id, bid = b.id, oid = out_v.id;
  g.set_backprop(out_v, [aid, bid, oid](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& an = gr.node(aid);
    auto& bn = gr.node(bid);
    if (an.requires_grad)
      for (size_t i = 0; i < dout.data.size(); ++i) an.grad.data[i] += dout.data[i];
    if (bn.requires_grad)
      for (size_t i = 0; i < dout.data.size(); ++i) bn.grad.data[i] -= dout.data[i];
  });
  return out_v;
}

template <typename Real>
Value<Real> mul(Value<Real> a, Value<Real> b) {
  detail::require_same_graph(a.g, b.g, "mul");
  Graph<Real>& g = *a.g;
  const Tensor<Real>& ta = g.node(a.id).value;
  const Tensor<Real>& tb = g.node(b.id).value;
  if (!ta.same_shape(tb))
    throw ShapeError("mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor<Real> out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
  const bool rg = detail::wants_grad(g, a.id) || detail::wants_grad(g, b.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int aid = a.id, bid = b.id, oid = out_v.id;
  g.set_backprop(out_v, [aid, bid, oid](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& an = gr.node(aid);
    auto& bn = gr.node(bid);
    if (an.requires_grad)
      for (size_t i = 0; i < dout.data.size(); ++i)
        an.grad.data[i] += dout.data[i] * bn.value.data[i];
    if (bn.requires_grad)
      for (size_t i = 0; i < dout.data.size(); ++i)
        bn.grad.data[i] += dout.data[i] * an.value.data[i];
  });
  return out_v;
}

// Broadcast a rank-1 bias over the rows of a [n,d] matrix.
template <typename Real>
Value<Real> add_row(Value<Real> x, Value<Real> bias) {
  detail::require_same_graph(x.g, bias.g, "add_row");
  Graph<Real>& g = *x.g;
  const Tensor<Real>& tx = g.node(x.id).value;
  const Tensor<Real>& tb = g.node(bias.id).value;
  if (tx.rank() != 2 || tb.rank() != 1 || tb.shape[0] != tx.cols())
    throw ShapeError("add_row: cannot broadcast bias " + tb.shape_str() + " over " +
                     tx.shape_str());
  Tensor<Real> out = tx;
  const int64_t n = tx.rows(), d = tx.cols();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out.data[static_cast<size_t>(i * d + j)] += tb.data[static_cast<size_t>(j)];
  const bool rg = detail::wants_grad(g, x.id) || detail::wants_grad(g, bias.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int xid = x.id, bid = bias.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, bid, oid, n, d](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& xn = gr.node(xid);
    auto& bn = gr.node(bid);
    if (xn.requires_grad)
      for (size_t i = 0; i < dout.data.size(); ++i) xn.grad.data[i] += dout.data[i];
    if (bn.requires_grad)
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j)
          bn.grad.data[static_cast<size_t>(j)] += dout.data[static_cast<size_t>(i * d + j)];
  });
  return out_v;
}

// out[i,j] = sum_k x[i,k] * weight[k,j] + bias[j]
template <typename Real>
Value<Real> affine(Value<Real> x, Value<Real> weight, Value<Real> bias) {
  return add_row(matmul(x, weight), bias);
}

template <typename Real>
Value<Real> scale(Value<Real> x, Real c) {
  Graph<Real>& g = *x.g;
  Tensor<Real> out = g.node(x.id).value;
  for (Real& v : out.data) v *= c;
  const bool rg = detail::wants_grad(g, x.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int xid = x.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, oid, c](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& xn = gr.node(xid);
    for (size_t i = 0; i < dout.data.size(); ++i) xn.grad.data[i] += c * dout.data[i];
  });
  return out_v;
}

template <typename Real>
Value<Real> add_scalar(Value<Real> x, Real c) {
  Graph<Real>& g = *x.g;
  Tensor<Real> out = g.node(x.id).value;
  for (Real& v : out.data) v += c;
  const bool rg = detail::wants_grad(g, x.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int xid = x.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, oid](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& xn = gr.node(xid);
    for (size_t i = 0; i < dout.data.size(); ++i) xn.grad.data[i] += dout.data[i];
  });
  return out_v;
}

namespace detail {

// Shared scaffolding for elementwise unary ops: fn(x) -> (y, dy/dx).
template <typename Real, typename Fwd>
Value<Real> unary_op(Value<Real> x, Fwd&& fwd) {
  Graph<Real>& g = *x.g;
  const Tensor<Real>& tx = g.node(x.id).value;
  Tensor<Real> out = tx;
  Tensor<Real> deriv = tx;
  for (size_t i = 0; i < out.data.size(); ++i) {
    auto [y, dy] = fwd(tx.data[i]);
    out.data[i] = y;
    deriv.data[i] = dy;
  }
  const bool rg = wants_grad(g, x.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int xid = x.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, oid, deriv = std::move(deriv)](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& xn = gr.node(xid);
    for (size_t i = 0; i < dout.data.size(); ++i)
      xn.grad.data[i] += dout.data[i] * deriv.data[i];
  });
  return out_v;
}

}  // namespace detail

template <typename Real>
Value<Real> relu(Value<Real> x) {
  return detail::unary_op(x, [](Real v) {
    return std::pair<Real, Real>{v > Real(0) ? v : Real(0), v > Real(0) ? Real(1) : Real(0)};
  });
}

// Exact Gaussian-CDF form x * Phi(x); derivative Phi(x) + x * phi(x).
template <typename Real>
Value<Real> gelu(Value<Real> x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return detail::unary_op(x, [](Real v) {
    const double xd = static_cast<double>(v);
    const double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
    const double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
    return std::pair<Real, Real>{static_cast<Real>(xd * cdf),
                                 static_cast<Real>(cdf + xd * pdf)};
  });
}

template <typename Real>
Value<Real> sigmoid(Value<Real> x) {
  return detail::unary_op(x, [](Real v) {
    const Real s = v >= Real(0) ? Real(1) / (Real(1) + std::exp(-v))
                                : [&] {
                                    const Real e = std::exp(v);
                                    return e / (Real(1) + e);
                                  }();
    return std::pair<Real, Real>{s, s * (Real(1) - s)};
  });
}

// Row gather; also serves as embedding lookup (table[V,d], ids -> [n,d]).
// Backward scatter-adds, so repeated indices accumulate.
template <typename Real>
Value<Real> gather_rows(Value<Real> x, std::vector<int> indices) {
  Graph<Real>& g = *x.g;
  const Tensor<Real>& tx = g.node(x.id).value;
  if (tx.rank() != 2) throw ShapeError("gather_rows requires rank-2 input, got " + tx.shape_str());
  if (indices.empty()) throw ValueError("gather_rows: empty index list");
  const int64_t d = tx.cols();
  for (int idx : indices)
    if (idx < 0 || idx >= tx.rows())
      throw IndexError("gather_rows: index " + std::to_string(idx) + " out of range [0," +
                       std::to_string(tx.rows()) + ")");
  Tensor<Real> out = Tensor<Real>::zeros({static_cast<int64_t>(indices.size()), d});
  for (size_t r = 0; r < indices.size(); ++r)
    std::copy_n(tx.data.begin() + indices[r] * d, d, out.data.begin() + static_cast<int64_t>(r) * d);
  const bool rg = detail::wants_grad(g, x.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int xid = x.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, oid, d, indices = std::move(indices)](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& xn = gr.node(xid);
    for (size_t r = 0; r < indices.size(); ++r)
      for (int64_t j = 0; j < d; ++j)
        xn.grad.data[static_cast<size_t>(indices[r] * d + j)] +=
            dout.data[static_cast<size_t>(static_cast<int64_t>(r) * d + j)];
  });
  return out_v;
}

// out = x; out[positions[i], :] += addend[i, :]. Positions may repeat.
template <typename Real>
Value<Real> index_add_rows(Value<Real> x, std::vector<int> positions, Value<Real> addend) {
  detail::require_same_graph(x.g, addend.g, "index_add_rows");
  Graph<Real>& g = *x.g;
  const Tensor<Real>& tx = g.node(x.id).value;
  const Tensor<Real>& tadd = g.node(addend.id).value;
  if (tx.rank() != 2 || tadd.rank() != 2 || tx.cols() != tadd.cols())
    throw ShapeError("index_add_rows: width mismatch " + tx.shape_str() + " vs " +
                     tadd.shape_str());
  if (static_cast<int64_t>(positions.size()) != tadd.rows())
    throw ShapeError("index_add_rows: positions count does not match addend rows");
  for (int p : positions)
    if (p < 0 || p >= tx.rows())
      throw IndexError("index_add_rows: position " + std::to_string(p) + " out of range");
  Tensor<Real> out = tx;
  const int64_t d = tx.cols();
  for (size_t i = 0; i < positions.size(); ++i)
    for (int64_t j = 0; j < d; ++j)
      out.data[static_cast<size_t>(positions[i] * d + j)] +=
          tadd.data[static_cast<size_t>(static_cast<int64_t>(i) * d + j)];
  const bool rg = detail::wants_grad(g, x.id) || detail::wants_grad(g, addend.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int xid = x.id, aid = addend.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, aid, oid, d, positions = std::move(positions)](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& xn = gr.node(xid);
    auto& an = gr.node(aid);
    if (xn.requires_grad)
      for (size_t i = 0; i < dout.data.size(); ++i) xn.grad.data[i] += dout.data[i];
    if (an.requires_grad)
      for (size_t i = 0; i < positions.size(); ++i)
        for (int64_t j = 0; j < d; ++j)
          an.grad.data[static_cast<size_t>(static_cast<int64_t>(i) * d + j)] +=
              dout.data[static_cast<size_t>(positions[i] * d + j)];
  });
  return out_v;
}

template <typename Real>
Value<Real> concat_rows(const std::vector<Value<Real>>& pieces) {
  if (pieces.empty()) throw ValueError("concat_rows: no pieces");
  Graph<Real>& g = *pieces[0].g;
  const int64_t d = g.node(pieces[0].id).value.cols();
  int64_t total = 0;
  bool rg = false;
  for (const auto& p : pieces) {
    detail::require_same_graph(p.g, &g, "concat_rows");
    const Tensor<Real>& t = g.node(p.id).value;
    if (t.rank() != 2 || t.cols() != d)
      throw ShapeError("concat_rows: width mismatch, expected " + std::to_string(d) + " got " +
                       t.shape_str());
    total += t.rows();
    rg = rg || g.node(p.id).requires_grad;
  }
  Tensor<Real> out = Tensor<Real>::zeros({total, d});
  int64_t row = 0;
  std::vector<int> ids;
  std::vector<int64_t> offsets;
  for (const auto& p : pieces) {
    const Tensor<Real>& t = g.node(p.id).value;
    std::copy(t.data.begin(), t.data.end(), out.data.begin() + row * d);
    ids.push_back(p.id);
    offsets.push_back(row);
    row += t.rows();
  }
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int oid = out_v.id;
  g.set_backprop(out_v, [oid, d, ids = std::move(ids), offsets = std::move(offsets)](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    for (size_t i = 0; i < ids.size(); ++i) {
      auto& pn = gr.node(ids[i]);
      if (!pn.requires_grad) continue;
      const int64_t nrows = pn.value.rows();
      for (int64_t r = 0; r < nrows; ++r)
        for (int64_t j = 0; j < d; ++j)
          pn.grad.data[static_cast<size_t>(r * d + j)] +=
              dout.data[static_cast<size_t>((offsets[i] + r) * d + j)];
    }
  });
  return out_v;
}

template <typename Real>
Value<Real> concat_cols(const std::vector<Value<Real>>& pieces) {
  if (pieces.empty()) throw ValueError("concat_cols: no pieces");
  Graph<Real>& g = *pieces[0].g;
  const int64_t n = g.node(pieces[0].id).value.rows();
  int64_t total = 0;
  bool rg = false;
  for (const auto& p : pieces) {
    detail::require_same_graph(p.g, &g, "concat_cols");
    const Tensor<Real>& t = g.node(p.id).value;
    if (t.rank() != 2 || t.rows() != n)
      throw ShapeError("concat_cols: row-count mismatch, expected " + std::to_string(n) +
                       " got " + t.shape_str());
    total += t.cols();
    rg = rg || g.node(p.id).requires_grad;
  }
  Tensor<Real> out = Tensor<Real>::zeros({n, total});
  int64_t col = 0;
  std::vector<int> ids;
  std::vector<int64_t> offsets;
  for (const auto& p : pieces) {
    const Tensor<Real>& t = g.node(p.id).value;
    const int64_t w = t.cols();
    for (int64_t r = 0; r < n; ++r)
      std::copy_n(t.data.begin() + r * w, w, out.data.begin() + r * total + col);
    ids.push_back(p.id);
    offsets.push_back(col);
    col += w;
  }
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int oid = out_v.id;
  g.set_backprop(out_v, [oid, n, total, ids = std::move(ids), offsets = std::move(offsets)](
                             Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    for (size_t i = 0; i < ids.size(); ++i) {
      auto& pn = gr.node(ids[i]);
      if (!pn.requires_grad) continue;
      const int64_t w = pn.value.cols();
      for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < w; ++j)
          pn.grad.data[static_cast<size_t>(r * w + j)] +=
              dout.data[static_cast<size_t>(r * total + offsets[i] + j)];
    }
  });
  return out_v;
}

template <typename Real>
Value<Real> slice_cols(Value<Real> x, int64_t start, int64_t len) {
  Graph<Real>& g = *x.g;
  const Tensor<Real>& tx = g.node(x.id).value;
  if (tx.rank() != 2) throw ShapeError("slice_cols requires rank-2 input");
  if (start < 0 || len < 1 || start + len > tx.cols())
    throw IndexError("slice_cols: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside width " + std::to_string(tx.cols()));
  const int64_t n = tx.rows(), d = tx.cols();
  Tensor<Real> out = Tensor<Real>::zeros({n, len});
  for (int64_t r = 0; r < n; ++r)
    std::copy_n(tx.data.begin() + r * d + start, len, out.data.begin() + r * len);
  const bool rg = detail::wants_grad(g, x.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int xid = x.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, oid, start, len, n, d](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& xn = gr.node(xid);
    for (int64_t r = 0; r < n; ++r)
      for (int64_t j = 0; j < len; ++j)
        xn.grad.data[static_cast<size_t>(r * d + start + j)] +=
            dout.data[static_cast<size_t>(r * len + j)];
  });
  return out_v;
}

// Per-row mean/variance normalization (biased variance), then scale/shift.
template <typename Real>
Value<Real> layer_norm(Value<Real> x, Value<Real> gamma, Value<Real> beta, Real eps) {
  detail::require_same_graph(x.g, gamma.g, "layer_norm");
  detail::require_same_graph(x.g, beta.g, "layer_norm");
  Graph<Real>& g = *x.g;
  const Tensor<Real>& tx = g.node(x.id).value;
  const Tensor<Real>& tg = g.node(gamma.id).value;
  const Tensor<Real>& tb = g.node(beta.id).value;
  if (tx.rank() != 2) throw ShapeError("layer_norm requires rank-2 input");
  const int64_t n = tx.rows(), d = tx.cols();
  if (tg.rank() != 1 || tb.rank() != 1 || tg.shape[0] != d || tb.shape[0] != d)
    throw ShapeError("layer_norm: gamma/beta must be rank-1 of width " + std::to_string(d));
  Tensor<Real> out = Tensor<Real>::zeros({n, d});
  Tensor<Real> xhat = Tensor<Real>::zeros({n, d});
  std::vector<Real> inv_sigma(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    const Real* xr = tx.data.data() + r * d;
    Real mean = 0;
    for (int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (int64_t j = 0; j < d; ++j) {
      const Real c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<Real>(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < d; ++j) {
      const Real xh = (xr[j] - mean) * is;
      xhat.data[static_cast<size_t>(r * d + j)] = xh;
      out.data[static_cast<size_t>(r * d + j)] = tg.data[static_cast<size_t>(j)] * xh + tb.data[static_cast<size_t>(j)];
    }
  }
  const bool rg = detail::wants_grad(g, x.id) || detail::wants_grad(g, gamma.id) ||
                  detail::wants_grad(g, beta.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int xid = x.id, gid = gamma.id, bid = beta.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, gid, bid, oid, n, d, xhat = std::move(xhat),
                         inv_sigma = std::move(inv_sigma)](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& xn = gr.node(xid);
    auto& gn = gr.node(gid);
    auto& bn = gr.node(bid);
    for (int64_t r = 0; r < n; ++r) {
      const Real* dy = dout.data.data() + r * d;
      const Real* xh = xhat.data.data() + r * d;
      if (gn.requires_grad || bn.requires_grad) {
        for (int64_t j = 0; j < d; ++j) {
          if (gn.requires_grad) gn.grad.data[static_cast<size_t>(j)] += dy[j] * xh[j];
          if (bn.requires_grad) bn.grad.data[static_cast<size_t>(j)] += dy[j];
        }
      }
      if (xn.requires_grad) {
        Real mean_dxhat = 0, mean_dxhat_xhat = 0;
        const Real* gv = gn.value.data.data();
        for (int64_t j = 0; j < d; ++j) {
          const Real dxh = dy[j] * gv[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= static_cast<Real>(d);
        mean_dxhat_xhat /= static_cast<Real>(d);
        const Real is = inv_sigma[static_cast<size_t>(r)];
        for (int64_t j = 0; j < d; ++j) {
          const Real dxh = dy[j] * gv[j];
          xn.grad.data[static_cast<size_t>(r * d + j)] +=
              is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
      }
    }
  });
  return out_v;
}

// Row softmax restricted to valid columns; a row with no valid column
// yields zeros rather than faulting (degenerate attention masks).
// Numerically stable via max subtraction. Rejects non-finite inputs.
template <typename Real>
Value<Real> masked_softmax_rows(Value<Real> x, const std::vector<uint8_t>& valid) {
  Graph<Real>& g = *x.g;
  const Tensor<Real>& tx = g.node(x.id).value;
  if (tx.rank() != 2) throw ShapeError("masked_softmax_rows requires rank-2 input");
  const int64_t n = tx.rows(), d = tx.cols();
  if (static_cast<int64_t>(valid.size()) != d)
    throw ShapeError("masked_softmax_rows: validity vector length " +
                     std::to_string(valid.size()) + " does not match width " + std::to_string(d));
  Tensor<Real> out = Tensor<Real>::zeros({n, d});
  for (int64_t r = 0; r < n; ++r) {
    const Real* xr = tx.data.data() + r * d;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (int64_t j = 0; j < d; ++j) {
      if (!valid[static_cast<size_t>(j)]) continue;
      if (!std::isfinite(xr[j]))
        throw NumericError("masked_softmax_rows: non-finite input at row " + std::to_string(r));
      mx = std::max(mx, xr[j]);
    }
    if (mx == -std::numeric_limits<Real>::infinity()) continue;  // all masked -> zero row
    Real denom = 0;
    for (int64_t j = 0; j < d; ++j)
      if (valid[static_cast<size_t>(j)]) denom += std::exp(xr[j] - mx);
    for (int64_t j = 0; j < d; ++j)
      if (valid[static_cast<size_t>(j)])
        out.data[static_cast<size_t>(r * d + j)] = std::exp(xr[j] - mx) / denom;
  }
  const bool rg = detail::wants_grad(g, x.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int xid = x.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, oid, n, d](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    const Tensor<Real>& y = gr.node(oid).value;
    auto& xn = gr.node(xid);
    for (int64_t r = 0; r < n; ++r) {
      const Real* dy = dout.data.data() + r * d;
      const Real* yr = y.data.data() + r * d;
      Real dot = 0;
      for (int64_t j = 0; j < d; ++j) dot += dy[j] * yr[j];
      for (int64_t j = 0; j < d; ++j)
        xn.grad.data[static_cast<size_t>(r * d + j)] += yr[j] * (dy[j] - dot);
    }
  });
  return out_v;
}

template <typename Real>
Value<Real> softmax_rows(Value<Real> x) {
  const auto d = static_cast<size_t>(x.tensor().cols());
  return masked_softmax_rows(x, std::vector<uint8_t>(d, uint8_t{1}));
}

// Mean over rows of -log softmax(logits)[target]; log-space throughout.
template <typename Real>
Value<Real> cross_entropy_logits(Value<Real> logits, const std::vector<int>& targets) {
  Graph<Real>& g = *logits.g;
  const Tensor<Real>& tl = g.node(logits.id).value;
  if (tl.rank() != 2) throw ShapeError("cross_entropy_logits requires rank-2 logits");
  const int64_t n = tl.rows(), k = tl.cols();
  if (static_cast<int64_t>(targets.size()) != n)
    throw ShapeError("cross_entropy_logits: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  for (int t : targets)
    if (t < 0 || t >= k)
      throw IndexError("cross_entropy_logits: target " + std::to_string(t) +
                       " out of range [0," + std::to_string(k) + ")");
  Tensor<Real> probs = Tensor<Real>::zeros({n, k});
  Real total = 0;
  for (int64_t r = 0; r < n; ++r) {
    const Real* xr = tl.data.data() + r * k;
    Real mx = xr[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
    Real denom = 0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(xr[j] - mx);
    const Real lse = mx + std::log(denom);
    total += lse - xr[targets[static_cast<size_t>(r)]];
    for (int64_t j = 0; j < k; ++j)
      probs.data[static_cast<size_t>(r * k + j)] = std::exp(xr[j] - lse);
  }
  Tensor<Real> out = Tensor<Real>::scalar(total / static_cast<Real>(n));
  const bool rg = detail::wants_grad(g, logits.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int lid = logits.id, oid = out_v.id;
  g.set_backprop(out_v, [lid, oid, n, k, targets, probs = std::move(probs)](Graph<Real>& gr) {
    const Real d = gr.node(oid).grad.data[0];
    auto& ln = gr.node(lid);
    const Real inv_n = Real(1) / static_cast<Real>(n);
    for (int64_t r = 0; r < n; ++r) {
      for (int64_t j = 0; j < k; ++j) {
        Real p = probs.data[static_cast<size_t>(r * k + j)];
        if (j == targets[static_cast<size_t>(r)]) p -= Real(1);
        ln.grad.data[static_cast<size_t>(r * k + j)] += d * inv_n * p;
      }
    }
  });
  return out_v;
}

// Mean binary cross-entropy computed from logits:
//   loss_i = max(z,0) - z*y + log(1 + exp(-|z|))
template <typename Real>
Value<Real> binary_cross_entropy_logits(Value<Real> logits, const std::vector<Real>& targets) {
  Graph<Real>& g = *logits.g;
  const Tensor<Real>& tl = g.node(logits.id).value;
  const int64_t n = tl.numel();
  if (static_cast<int64_t>(targets.size()) != n)
    throw ShapeError("binary_cross_entropy_logits: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " logits");
  Real total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const Real z = tl.data[static_cast<size_t>(i)];
    const Real y = targets[static_cast<size_t>(i)];
    total += std::max(z, Real(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor<Real> out = Tensor<Real>::scalar(total / static_cast<Real>(n));
  const bool rg = detail::wants_grad(g, logits.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int lid = logits.id, oid = out_v.id;
  g.set_backprop(out_v, [lid, oid, n, targets](Graph<Real>& gr) {
    const Real d = gr.node(oid).grad.data[0];
    auto& ln = gr.node(lid);
    const Real inv_n = Real(1) / static_cast<Real>(n);
    for (int64_t i = 0; i < n; ++i) {
      const Real z = ln.value.data[static_cast<size_t>(i)];
      const Real s = z >= Real(0) ? Real(1) / (Real(1) + std::exp(-z))
                                  : std::exp(z) / (Real(1) + std::exp(z));
      ln.grad.data[static_cast<size_t>(i)] += d * inv_n * (s - targets[static_cast<size_t>(i)]);
    }
  });
  return out_v;
}

template <typename Real>
Value<Real> sum_all(Value<Real> x) {
  Graph<Real>& g = *x.g;
  const Tensor<Real>& tx = g.node(x.id).value;
  Real total = 0;
  for (Real v : tx.data) total += v;
  const bool rg = detail::wants_grad(g, x.id);
  Value<Real> out_v = g.make_node(Tensor<Real>::scalar(total), rg);
  if (!rg) return out_v;
  const int xid = x.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, oid](Graph<Real>& gr) {
    const Real d = gr.node(oid).grad.data[0];
    auto& xn = gr.node(xid);
    for (Real& gv : xn.grad.data) gv += d;
  });
  return out_v;
}

template <typename Real>
Value<Real> mean_all(Value<Real> x) {
  const Real inv = Real(1) / static_cast<Real>(x.tensor().numel());
  return scale(sum_all(x), inv);
}

// Row-wise max; gradient flows to the argmax only (lowest index on ties).
template <typename Real>
Value<Real> max_rows(Value<Real> x) {
  Graph<Real>& g = *x.g;
  const Tensor<Real>& tx = g.node(x.id).value;
  if (tx.rank() != 2) throw ShapeError("max_rows requires rank-2 input");
  const int64_t n = tx.rows(), d = tx.cols();
  Tensor<Real> out = Tensor<Real>::zeros({n, 1});
  std::vector<int64_t> argmax(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    const Real* xr = tx.data.data() + r * d;
    int64_t best = 0;
    for (int64_t j = 1; j < d; ++j)
      if (xr[j] > xr[best]) best = j;
    argmax[static_cast<size_t>(r)] = best;
    out.data[static_cast<size_t>(r)] = xr[best];
  }
  const bool rg = detail::wants_grad(g, x.id);
  Value<Real> out_v = g.make_node(std::move(out), rg);
  if (!rg) return out_v;
  const int xid = x.id, oid = out_v.id;
  g.set_backprop(out_v, [xid, oid, n, d, argmax = std::move(argmax)](Graph<Real>& gr) {
    const Tensor<Real>& dout = gr.node(oid).grad;
    auto& xn = gr.node(xid);
    for (int64_t r = 0; r < n; ++r)
      xn.grad.data[static_cast<size_t>(r * d + argmax[static_cast<size_t>(r)])] +=
          dout.data[static_cast<size_t>(r)];
  });
  return out_v;
}

// Inverted-dropout: identity when the graph is in evaluation mode.
template <typename Real>
Value<Real> dropout(Value<Real> x, Real rate) {
  Graph<Real>& g = *x.g;
  if (!g.training() || rate <= Real(0)) return x;
  if (rate >= Real(1)) throw ValueError("dropout rate must be < 1");
  if (!g.rng()) throw ValueError("dropout in training mode requires an rng");
  const Tensor<Real>& tx = g.node(x.id).value;
  Tensor<Real> mask = Tensor<Real>::zeros(tx.shape);
  const Real keep_scale = Real(1) / (Real(1) - rate);
  for (size_t i = 0; i < mask.data.size(); ++i)
    mask.data[i] = g.rng()->bernoulli(static_cast<double>(rate)) ? Real(0) : keep_scale;
  Value<Real> mask_v = g.constant(std::move(mask));
  return mul(x, mask_v);
}

}  // namespace vlp
