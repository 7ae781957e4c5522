#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vlp/errors.hpp"

namespace vlp {

// Dense row-major tensor. Real is float for training, double for gradient
// checking. No views, no strides; every op copies.
template <typename Real>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<Real> data;

  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape_in)
      : shape(std::move(shape_in)), data(static_cast<size_t>(count(shape)), Real(0)) {}

  Tensor(std::vector<int64_t> shape_in, std::vector<Real> data_in)
      : shape(std::move(shape_in)), data(std::move(data_in)) {
    check_invariants();
  }

  static Tensor zeros(std::vector<int64_t> shape) {
    int64_t n = count(shape);
    return Tensor(std::move(shape), std::vector<Real>(static_cast<size_t>(n), Real(0)));
  }

  static Tensor full(std::vector<int64_t> shape, Real value) {
    int64_t n = count(shape);
    return Tensor(std::move(shape), std::vector<Real>(static_cast<size_t>(n), value));
  }

  static Tensor scalar(Real value) { return Tensor({1, 1}, {value}); }

  static Tensor row(std::vector<Real> values) {
    int64_t n = static_cast<int64_t>(values.size());
    return Tensor({1, n}, std::move(values));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  int64_t rows() const {
    require_rank2("rows");
    return shape[0];
  }
  int64_t cols() const {
    require_rank2("cols");
    return shape[1];
  }

  Real& at(int64_t r, int64_t c) {
    check_index(r, c);
    return data[static_cast<size_t>(r * cols() + c)];
  }
  Real at(int64_t r, int64_t c) const {
    check_index(r, c);
    return data[static_cast<size_t>(r * cols() + c)];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  std::string shape_str() const { return shape_to_string(shape); }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data.size());
    for (size_t i = 0; i < data.size(); ++i) out[i] = static_cast<Other>(data[i]);
    return Tensor<Other>(shape, std::move(out));
  }

  static std::string shape_to_string(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
      if (i) os << ',';
      os << s[i];
    }
    os << ']';
    return os.str();
  }

 private:
  static int64_t count(const std::vector<int64_t>& s) {
    if (s.empty()) throw ShapeError("tensor shape must have at least one dimension");
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 1) throw ShapeError("tensor dimensions must be >= 1, got " + shape_to_string(s));
      n *= d;
    }
    return n;
  }

  void check_invariants() const {
    int64_t n = count(shape);
    if (n != numel())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str());
  }

  void check_index(int64_t r, int64_t c) const {
    if (r < 0 || r >= rows() || c < 0 || c >= cols())
      throw IndexError("index (" + std::to_string(r) + "," + std::to_string(c) +
                       ") outside tensor " + shape_str());
  }

  void require_rank2(const char* what) const {
    if (shape.size() != 2)
      throw ShapeError(std::string(what) + " requires a rank-2 tensor, shape is " + shape_str());
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace vlp
