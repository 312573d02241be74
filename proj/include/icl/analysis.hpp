#pragma once

// Evaluation: normalized error curves with bootstrap bands, projection onto
// the span of in-context inputs, line visualization and gradient-alignment
// probes, query-scale sweeps, and the streamed memorization bound.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "icl/baselines.hpp"
#include "icl/errors.hpp"
#include "icl/prompts.hpp"

namespace icl {

// (prediction - truth)^2 / d, where d is the class's normalization constant
// (E[f^2] of the prompt distribution, so the zero estimator scores 1).
inline double normalized_error(double prediction, double truth, double d) {
  if (d < 1) throw ConfigError("normalized_error: d must be >= 1");
  const double r = prediction - truth;
  return r * r / d;
}

struct ErrorCurve {
  std::vector<int> ks;
  std::vector<double> mean, lo, hi;
  int n_prompts = 0;
  int n_bootstrap = 0;
  double confidence = 0.9;
};

inline EvalCase eval_case_from_prompt(const Prompt& p) {
  EvalCase c;
  const int k = p.k();
  c.X = p.inputs.topRows(k);
  c.y = p.targets.head(k);
  c.xq = p.query();
  // Scored against the clean function value even when the in-context
  // targets carry label noise.
  c.truth = evaluate_function(p.descriptor, c.xq);
  return c;
}

namespace detail {

inline double percentile(std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto i = static_cast<size_t>(pos);
  const double frac = pos - static_cast<double>(i);
  if (i + 1 >= sorted.size()) return sorted.back();
  return sorted[i] * (1 - frac) + sorted[i + 1] * frac;
}

}  // namespace detail

// Mean normalized query error per prompt length, with percentile bootstrap
// bands over n_bootstrap resamples.
inline ErrorCurve error_curve(const Predictor& predictor, const ClassConfig& class_cfg,
                              const DistShiftConfig& shift, const std::vector<int>& ks, int n_prompts,
                              int n_bootstrap, double confidence, Rng rng) {
  if (ks.empty()) throw ConfigError("error_curve: ks must be nonempty");
  if (n_prompts < 1 || n_bootstrap < 0) throw ConfigError("error_curve: bad sample counts");
  const double norm = second_moment(class_cfg);
  ErrorCurve curve;
  curve.ks = ks;
  curve.n_prompts = n_prompts;
  curve.n_bootstrap = n_bootstrap;
  curve.confidence = confidence;
  for (int k : ks) {
    std::vector<EvalCase> cases;
    cases.reserve(static_cast<size_t>(n_prompts));
    Rng k_rng = rng.child(static_cast<uint64_t>(k));
    for (int i = 0; i < n_prompts; ++i) {
      Rng p_rng = k_rng.child(static_cast<uint64_t>(i));
      cases.push_back(eval_case_from_prompt(sample_prompt(class_cfg, shift, k, class_cfg.d, p_rng)));
    }
    const std::vector<double> preds = predictor.predict(cases);
    std::vector<double> errors(cases.size());
    for (size_t i = 0; i < cases.size(); ++i) {
      if (!std::isfinite(preds[i]))
        throw NumericError("error_curve: predictor '" + predictor.name() + "' returned a non-finite value at k=" +
                           std::to_string(k) + ", prompt " + std::to_string(i));
      errors[i] = normalized_error(preds[i], cases[i].truth, norm);
    }
    const double mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
    curve.mean.push_back(mean);
    if (n_bootstrap == 0) {
      curve.lo.push_back(mean);
      curve.hi.push_back(mean);
      continue;
    }
    Rng boot = k_rng.stream("bootstrap");
    std::vector<double> means(static_cast<size_t>(n_bootstrap));
    for (int b = 0; b < n_bootstrap; ++b) {
      double s = 0;
      for (int i = 0; i < n_prompts; ++i) s += errors[boot.uniform_index(errors.size())];
      means[static_cast<size_t>(b)] = s / n_prompts;
    }
    std::sort(means.begin(), means.end());
    const double tail = (1.0 - confidence) / 2.0;
    curve.lo.push_back(detail::percentile(means, tail));
    curve.hi.push_back(detail::percentile(means, 1.0 - tail));
  }
  return curve;
}

// Orthogonal projection of w onto the row span of X (singular values cut at
// 1e-10 * sigma_max).
inline Vec projection(const Eigen::Ref<const Vec>& w, const Mat& X, double rcond = 1e-10) {
  if (X.rows() == 0) return Vec::Zero(w.size());
  Eigen::JacobiSVD<Mat> svd(X, Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  const double cutoff = rcond * sv[0];
  Vec out = Vec::Zero(w.size());
  for (int i = 0; i < sv.size(); ++i) {
    if (sv[i] <= cutoff) break;
    const Vec v = svd.matrixV().col(i);
    out += v * v.dot(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Line visualization: fix a prompt prefix, move the query along a unit
// direction, compare against the true line and its projection onto the
// span of the prefix inputs.

struct LineVizPoint {
  double lambda = 0;
  double model_value = 0;
  double true_value = 0;
  double projected_true = 0;
};

inline std::vector<double> default_lambda_grid(int d, int points = 64) {
  std::vector<double> grid(static_cast<size_t>(points));
  const double span = 3.0 * std::sqrt(static_cast<double>(d));
  for (int i = 0; i < points; ++i)
    grid[static_cast<size_t>(i)] = -span + 2.0 * span * i / (points - 1);
  return grid;
}

inline std::vector<LineVizPoint> line_visualization(const Predictor& predictor, const Prompt& prefix,
                                                    const Vec& direction, const std::vector<double>& lambdas) {
  if (std::abs(direction.norm() - 1.0) > 1e-6) throw ConfigError("line_visualization: direction must be unit norm");
  const auto* lin = std::get_if<LinearFn>(&prefix.descriptor);
  if (!lin) throw ConfigError("line_visualization: prefix must come from the linear class");
  const Vec proj_w = projection(lin->w, prefix.inputs);
  std::vector<EvalCase> cases;
  cases.reserve(lambdas.size());
  for (double l : lambdas) {
    EvalCase c;
    c.X = prefix.inputs;
    c.y = prefix.targets;
    c.xq = l * direction;
    c.truth = lin->w.dot(c.xq);
    cases.push_back(std::move(c));
  }
  const std::vector<double> preds = predictor.predict(cases);
  std::vector<LineVizPoint> out;
  out.reserve(lambdas.size());
  for (size_t i = 0; i < lambdas.size(); ++i)
    out.push_back({lambdas[i], preds[i], cases[i].truth, proj_w.dot(cases[i].xq)});
  return out;
}

// ---------------------------------------------------------------------------
// Mean cosine between the query-input gradient and w / proj(w) per prompt
// length. The gradient source is abstract so an analytic estimator can
// stand in for the model in tests.

struct AlignmentReport {
  std::vector<int> ks;
  std::vector<double> cos_w, cos_proj;
  std::vector<int64_t> skipped;
  int n_prompts = 0;
};

using QueryGradientFn = std::function<Vec(const Prompt&)>;

inline AlignmentReport gradient_alignment(const QueryGradientFn& grad_fn, const ClassConfig& class_cfg,
                                          const std::vector<int>& ks, int n_prompts, Rng rng) {
  if (class_cfg.cls != FunctionClass::linear)
    throw ConfigError("gradient_alignment: defined for the linear class");
  const DistShiftConfig standard;
  AlignmentReport rep;
  rep.ks = ks;
  rep.n_prompts = n_prompts;
  for (int k : ks) {
    Rng k_rng = rng.child(static_cast<uint64_t>(k));
    double sum_w = 0, sum_proj = 0;
    int64_t used = 0, skipped = 0;
    for (int i = 0; i < n_prompts; ++i) {
      Rng p_rng = k_rng.child(static_cast<uint64_t>(i));
      const Prompt p = sample_prompt(class_cfg, standard, k, class_cfg.d, p_rng);
      const Vec g = grad_fn(p);
      const double gn = g.norm();
      if (gn < 1e-12) {
        ++skipped;
        continue;
      }
      const Vec& w = std::get<LinearFn>(p.descriptor).w;
      const Vec pw = projection(w, p.inputs.topRows(k));
      sum_w += g.dot(w) / (gn * w.norm());
      if (pw.norm() > 1e-12) sum_proj += g.dot(pw) / (gn * pw.norm());
      ++used;
    }
    rep.cos_w.push_back(used ? sum_w / used : 0.0);
    rep.cos_proj.push_back(used ? sum_proj / used : 0.0);
    rep.skipped.push_back(skipped);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Query-scale robustness: fixed prefixes, query multiplied by each scale,
// error measured against the scaled truth.

inline std::vector<double> query_scale_sweep(const Predictor& predictor, const ClassConfig& class_cfg,
                                             const std::vector<double>& scales, int k, int n_prompts, Rng rng) {
  for (double s : scales)
    if (s <= 0) throw ConfigError("query_scale_sweep: scales must be > 0");
  const DistShiftConfig standard;
  const double norm = second_moment(class_cfg);
  std::vector<Prompt> prompts;
  prompts.reserve(static_cast<size_t>(n_prompts));
  for (int i = 0; i < n_prompts; ++i) {
    Rng p_rng = rng.child(static_cast<uint64_t>(i));
    prompts.push_back(sample_prompt(class_cfg, standard, k, class_cfg.d, p_rng));
  }
  std::vector<double> out;
  out.reserve(scales.size());
  for (double s : scales) {
    std::vector<EvalCase> cases;
    cases.reserve(prompts.size());
    for (const Prompt& p : prompts) {
      EvalCase c = eval_case_from_prompt(p);
      c.xq *= s;
      c.truth = evaluate_function(p.descriptor, c.xq);
      cases.push_back(std::move(c));
    }
    const std::vector<double> preds = predictor.predict(cases);
    double mean = 0;
    for (size_t i = 0; i < cases.size(); ++i) mean += normalized_error(preds[i], cases[i].truth, norm);
    out.push_back(mean / static_cast<double>(cases.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Memorization bound: E_{w*} [ min_{w in S_w} ||w - w*||^2 / d ], estimated
// by streaming S_w in blocks so the 32M-vector setting stays in memory
// bounds.

struct MemorizationResult {
  double mean = 0;
  double sd = 0;
  std::vector<double> per_trial;
};

// Vectorized Box-Muller fill; pairs are consumed in order so the stream is
// reproducible.
inline void fill_normal(Rng& rng, double* dst, int64_t n) {
  constexpr double two_pi = 2.0 * 3.141592653589793238462643383279502884;
  int64_t i = 0;
  for (; i + 1 < n; i += 2) {
    const double u1 = (static_cast<double>(rng.next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng.next_u64() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    dst[i] = r * std::cos(two_pi * u2);
    dst[i + 1] = r * std::sin(two_pi * u2);
  }
  if (i < n) dst[i] = rng.normal();
}

inline MemorizationResult memorization_bound(int64_t n_w, int d, int n_queries, int trials, Rng rng,
                                             int64_t block = 1 << 16) {
  if (n_w < 1 || d < 1 || n_queries < 1 || trials < 1) throw ConfigError("memorization_bound: bad sizes");
  MemorizationResult res;
  res.per_trial.reserve(static_cast<size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    Rng trial_rng = rng.child(static_cast<uint64_t>(t));
    Mat queries(n_queries, d);
    fill_normal(trial_rng, queries.data(), static_cast<int64_t>(queries.size()));
    const Vec qnorm2 = queries.rowwise().squaredNorm();
    Vec best = Vec::Constant(n_queries, std::numeric_limits<double>::infinity());
    std::vector<double> wbuf(static_cast<size_t>(block) * static_cast<size_t>(d));
    int64_t remaining = n_w;
    while (remaining > 0) {
      const int64_t bs = std::min(block, remaining);
      remaining -= bs;
      fill_normal(trial_rng, wbuf.data(), bs * d);
      Eigen::Map<const Mat> W(wbuf.data(), bs, d);
      const Vec wnorm2 = W.rowwise().squaredNorm();
      Mat G = W * queries.transpose();  // bs x n_queries
      for (int q = 0; q < n_queries; ++q) {
        double m = best[q];
        for (int64_t i = 0; i < bs; ++i) {
          const double d2 = wnorm2[i] + qnorm2[q] - 2.0 * G(i, q);
          if (d2 < m) m = d2;
        }
        best[q] = m;
      }
    }
    res.per_trial.push_back(best.mean() / d);
  }
  double mean = 0;
  for (double v : res.per_trial) mean += v;
  mean /= trials;
  double var = 0;
  for (double v : res.per_trial) var += (v - mean) * (v - mean);
  res.mean = mean;
  res.sd = trials > 1 ? std::sqrt(var / (trials - 1)) : 0.0;
  return res;
}

}  // namespace icl
