#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "metastep/errors.hpp"

namespace metastep {

/// Dense row-major array of 64-bit floats. The single numeric carrier for
/// parameters, gradients, activations and adjoints. Rank 1 and 2 are the
/// only shapes the op-set produces; the type itself does not restrict rank.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != checked_numel(shape_))
      throw ShapeMismatch("Tensor: data length does not match shape");
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, double value) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = value;
    return t;
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  static Tensor row(std::vector<double> values) {
    auto n = static_cast<int64_t>(values.size());
    return Tensor({n}, std::move(values));
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  int64_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  int64_t cols() const {
    if (shape_.size() == 1) return 1;
    return shape_.size() >= 2 ? shape_[1] : 0;
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  size_t byte_size() const { return data_.size() * sizeof(double); }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d <= 0) throw ShapeMismatch("Tensor: extents must be positive");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

// Flat-vector helpers used by the optimizer dynamics and the adjoint sweep.
// All require equal lengths; shapes of the results follow `a`.

inline void check_same_len(const Tensor& a, const Tensor& b, const char* who) {
  if (a.numel() != b.numel())
    throw DimensionMismatch(std::string(who) + ": length mismatch " + a.shape_str() + " vs " +
                            b.shape_str());
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_len(a, b, "add");
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_len(a, b, "sub");
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return out;
}

/// a + c*b
inline Tensor add_scaled(const Tensor& a, const Tensor& b, double c) {
  check_same_len(a, b, "add_scaled");
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c * b[i];
  return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
  check_same_len(a, b, "dot");
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_len(a, b, "max_abs_diff");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// ||a - b|| / max(||b||, floor); the relative-error measure used across the
/// test and acceptance suites.
inline double rel_l2_error(const Tensor& a, const Tensor& b, double floor = 1e-300) {
  check_same_len(a, b, "rel_l2_error");
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = a[i] - b[i];
    num += d * d;
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

}  // namespace metastep
