#pragma once

// Bias-corrected Adam, no weight decay. Moments are kept in the same
// precision as the parameters; bias corrections in double.

#include <cmath>
#include <cstdint>
#include <vector>

#include "icl/errors.hpp"
#include "icl/tensor.hpp"

namespace icl {

template <class Real>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<Tensor<Real>> m, v;

  static AdamState init(const std::vector<Tensor<Real>*>& params, double lr) {
    AdamState s;
    s.lr = lr;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor<Real>* p : params) {
      s.m.push_back(Tensor<Real>::zeros(p->shape));
      s.v.push_back(Tensor<Real>::zeros(p->shape));
    }
    return s;
  }
};

template <class Real>
void adam_step(const std::vector<Tensor<Real>*>& params, const std::vector<Tensor<Real>>& grads,
               AdamState<Real>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ConfigError("adam_step: parameter/gradient/moment counts disagree");
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.m[i]))
      throw ConfigError("adam_step: shape mismatch at parameter " + std::to_string(i));
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient at parameter " + std::to_string(i));
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  const Real b1 = static_cast<Real>(state.beta1), b2 = static_cast<Real>(state.beta2);
  const Real lr_t = static_cast<Real>(state.lr / bc1);
  const Real inv_sqrt_bc2 = static_cast<Real>(1.0 / std::sqrt(bc2));
  const Real eps = static_cast<Real>(state.eps);
  for (size_t i = 0; i < params.size(); ++i) {
    Real* p = params[i]->data.data();
    const Real* g = grads[i].data.data();
    Real* m = state.m[i].data.data();
    Real* v = state.v[i].data.data();
    const size_t n = params[i]->data.size();
    for (size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (Real(1) - b1) * g[j];
      v[j] = b2 * v[j] + (Real(1) - b2) * g[j] * g[j];
      // p -= lr * m_hat / (sqrt(v_hat) + eps)
      p[j] -= lr_t * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

// Global-norm gradient clipping (off by default in training; kept behind a
// flag for desk-scale stability).
template <class Real>
double clip_global_norm(std::vector<Tensor<Real>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (Real x : g.data) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const Real s = static_cast<Real>(max_norm / norm);
    for (auto& g : grads)
      for (Real& x : g.data) x *= s;
  }
  return norm;
}

}  // namespace icl
