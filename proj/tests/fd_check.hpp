#pragma once

// Finite-difference gradient oracle for the autodiff tests: rebuilds the
// graph under central perturbations of each input coordinate and compares
// against the tape's reverse-mode gradients. Independent of the backward
// implementation by construction.

#include <cmath>
#include <functional>
#include <vector>

#include "icl/rng.hpp"
#include "icl/tape.hpp"
#include "icl/tensor.hpp"

namespace icl::testing {

using BuildFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline double eval_scalar(const BuildFn& build, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) {
    Tensor<double> c = t;
    c.requires_grad = false;
    vars.push_back(tape.leaf(std::move(c)));
  }
  return tape.value(build(tape, vars)).data[0];
}

struct FdReport {
  double max_rel_error = 0;
  int checked = 0;
};

// Checks gradient coordinates against central differences. If
// coords_per_input > 0, a deterministic random subset of that size is
// checked per input tensor (for big parameter sets); otherwise every
// coordinate is checked.
inline FdReport fd_check(const BuildFn& build, const std::vector<Tensor<double>>& inputs, double h = 1e-5,
                         int coords_per_input = 0, uint64_t subset_seed = 1) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) {
    Tensor<double> c = t;
    c.requires_grad = true;
    vars.push_back(tape.leaf(std::move(c)));
  }
  Var out = build(tape, vars);
  tape.backward(out);
  std::vector<Tensor<double>> grads;
  grads.reserve(vars.size());
  for (Var v : vars) grads.push_back(tape.grad(v));

  Rng pick = Rng::from_seed(subset_seed);
  FdReport rep;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const size_t n = inputs[i].data.size();
    std::vector<size_t> coords;
    if (coords_per_input <= 0 || static_cast<size_t>(coords_per_input) >= n) {
      coords.resize(n);
      for (size_t j = 0; j < n; ++j) coords[j] = j;
    } else {
      for (int c = 0; c < coords_per_input; ++c) coords.push_back(static_cast<size_t>(pick.uniform_index(n)));
    }
    for (size_t j : coords) {
      std::vector<Tensor<double>> shifted = inputs;
      shifted[i].data[j] += h;
      const double fp = eval_scalar(build, shifted);
      shifted[i].data[j] -= 2 * h;
      const double fm = eval_scalar(build, shifted);
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = grads[i].data[j];
      ++rep.checked;
      // both sides vanish: relative error is ill-defined, treat as a match
      // (FD roundoff on an exactly-zero gradient is ~|f| eps / h)
      if (std::abs(analytic) < 1e-7 && std::abs(numeric) < 1e-7) continue;
      const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
      rep.max_rel_error = std::max(rep.max_rel_error, rel);
    }
  }
  return rep;
}

}  // namespace icl::testing
