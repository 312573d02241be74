#pragma once

// Dense row-major tensors with value semantics. The scalar type is a
// template parameter: float for training, double for gradient checks.

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "icl/rng.hpp"

namespace icl {

template <class Real>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<Real> data;
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(numel_of(t.shape)), Real(0));
    return t;
  }

  static Tensor full(std::vector<int64_t> shape, Real v) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor scalar(Real v) { return full({1}, v); }

  static Tensor from(std::vector<int64_t> shape, std::vector<Real> values) {
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    if (static_cast<int64_t>(t.data.size()) != t.numel())
      throw std::invalid_argument("tensor: data length does not match shape");
    return t;
  }

  static int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t s : shape) {
      if (s < 0) throw std::invalid_argument("tensor: negative axis length");
      n *= s;
    }
    return n;
  }

  int64_t numel() const { return numel_of(shape); }
  int ndim() const { return static_cast<int>(shape.size()); }

  // 2-D accessors.
  int64_t rows() const { return shape.size() == 2 ? shape[0] : (shape.size() == 1 ? shape[0] : throw_not2d()); }
  int64_t cols() const { return shape.size() == 2 ? shape[1] : (shape.size() == 1 ? 1 : throw_not2d()); }
  Real& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
  Real operator()(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }
  Real& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  Real operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }

 private:
  static int64_t throw_not2d() { throw std::logic_error("tensor: 2-D accessor on tensor with ndim > 2"); }
};

// Eigen views over the flat storage (row major).
template <class Real>
using MatMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Real>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Real>
using ArrMap = Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>>;
template <class Real>
using ConstArrMap = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>;

template <class Real>
MatMap<Real> as_matrix(Tensor<Real>& t) {
  return MatMap<Real>(t.data.data(), t.rows(), t.cols());
}
template <class Real>
ConstMatMap<Real> as_matrix(const Tensor<Real>& t) {
  return ConstMatMap<Real>(t.data.data(), t.rows(), t.cols());
}
template <class Real>
ArrMap<Real> as_array(Tensor<Real>& t) {
  return ArrMap<Real>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}
template <class Real>
ConstArrMap<Real> as_array(const Tensor<Real>& t) {
  return ConstArrMap<Real>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

// i.i.d. standard normal entries; deterministic for a fixed generator state.
template <class Real>
Tensor<Real> gaussian(Rng& rng, std::vector<int64_t> shape) {
  Tensor<Real> t = Tensor<Real>::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<Real>(rng.normal());
  return t;
}

}  // namespace icl
