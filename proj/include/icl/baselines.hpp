#pragma once

// Classical estimators evaluated against the trained models: minimum-norm
// least squares, the averaging estimator, n-nearest neighbors, Lasso via
// coordinate descent, greedy CART regression trees, squared-loss gradient
// boosting, a two-layer ReLU network trained with Adam, and the zero
// estimator.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "icl/adam.hpp"
#include "icl/errors.hpp"
#include "icl/function_classes.hpp"
#include "icl/rng.hpp"
#include "icl/tape.hpp"

namespace icl {

struct ExampleSet {
  Mat X;  // k x d
  Vec y;  // k
  int k() const { return static_cast<int>(X.rows()); }
};

// ---------------------------------------------------------------------------
// Least squares (Moore-Penrose pseudoinverse; minimum-norm under rank
// deficiency, singular values cut at 1e-10 * sigma_max).

inline Vec least_squares_fit(const Mat& X, const Vec& y, double rcond = 1e-10) {
  if (X.rows() == 0) return Vec::Zero(X.cols());
  Eigen::JacobiSVD<Mat> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(rcond);
  return svd.solve(y);
}

inline double least_squares(const ExampleSet& ex, const Eigen::Ref<const Vec>& xq) {
  if (ex.k() == 0) return 0.0;
  return least_squares_fit(ex.X, ex.y).dot(xq);
}

// ---------------------------------------------------------------------------
// Averaging estimator: w_hat = (1/k) sum y_i x_i.

inline double averaging(const ExampleSet& ex, const Eigen::Ref<const Vec>& xq) {
  if (ex.k() == 0) return 0.0;
  const Vec w = ex.X.transpose() * ex.y / static_cast<double>(ex.k());
  return w.dot(xq);
}

// ---------------------------------------------------------------------------
// n-nearest neighbors; ties broken toward the lowest index. k < n averages
// everything; k = 0 predicts 0.

inline double knn(const ExampleSet& ex, const Eigen::Ref<const Vec>& xq, int n) {
  if (n < 1) throw ConfigError("knn: n must be >= 1");
  const int k = ex.k();
  if (k == 0) return 0.0;
  if (k <= n) return ex.y.mean();
  std::vector<int> idx(static_cast<size_t>(k));
  std::iota(idx.begin(), idx.end(), 0);
  Vec d2(k);
  for (int i = 0; i < k; ++i) d2[i] = (ex.X.row(i).transpose() - xq).squaredNorm();
  std::partial_sort(idx.begin(), idx.begin() + n, idx.end(),
                    [&](int a, int b) { return d2[a] < d2[b] || (d2[a] == d2[b] && a < b); });
  double s = 0;
  for (int i = 0; i < n; ++i) s += ex.y[idx[static_cast<size_t>(i)]];
  return s / n;
}

// ---------------------------------------------------------------------------
// Lasso: coordinate descent on (1/2k)||y - Xw||^2 + alpha ||w||_1, no
// intercept, no standardization. Stops when the largest coordinate change
// in a sweep drops below tol.

struct LassoResult {
  Vec w;
  int sweeps = 0;
  bool converged = true;
};

inline double lasso_objective(const Mat& X, const Vec& y, const Vec& w, double alpha) {
  const double k = static_cast<double>(X.rows());
  return (y - X * w).squaredNorm() / (2.0 * k) + alpha * w.template lpNorm<1>();
}

inline LassoResult lasso_fit(const Mat& X, const Vec& y, double alpha, double tol = 1e-6, int max_sweeps = 1000) {
  if (X.rows() < 1) throw ConfigError("lasso: needs k >= 1");
  if (alpha <= 0) throw ConfigError("lasso: alpha must be > 0");
  const int d = static_cast<int>(X.cols());
  const double k = static_cast<double>(X.rows());
  LassoResult res;
  res.w = Vec::Zero(d);
  Vec col_sq(d);
  for (int j = 0; j < d; ++j) col_sq[j] = X.col(j).squaredNorm() / k;
  Vec r = y;  // residual y - Xw
  for (res.sweeps = 1; res.sweeps <= max_sweeps; ++res.sweeps) {
    double max_change = 0;
    for (int j = 0; j < d; ++j) {
      if (col_sq[j] == 0) continue;
      const double rho = X.col(j).dot(r) / k + col_sq[j] * res.w[j];
      const double wj = std::copysign(std::max(std::abs(rho) - alpha, 0.0), rho) / col_sq[j];
      const double delta = wj - res.w[j];
      if (delta != 0) {
        r -= delta * X.col(j);
        res.w[j] = wj;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    if (max_change < tol) return res;
  }
  res.sweeps = max_sweeps;
  res.converged = false;  // reported; the caller still gets the iterate
  return res;
}

inline double lasso(const ExampleSet& ex, const Eigen::Ref<const Vec>& xq, double alpha) {
  return lasso_fit(ex.X, ex.y, alpha).w.dot(xq);
}

// ---------------------------------------------------------------------------
// CART regression tree: each split minimizes the size-weighted sum of child
// variances (total squared error), thresholds at midpoints of consecutive
// distinct values. coordinate_only restricts candidates to threshold 0,
// matching the sign-based function class.

struct RegressionTree {
  struct Node {
    int feature = -1;  // -1: leaf
    double threshold = 0;
    int left = -1, right = -1;
    double value = 0;
  };
  std::vector<Node> nodes;

  double predict(const Eigen::Ref<const Vec>& x) const {
    int at = 0;
    while (nodes[static_cast<size_t>(at)].feature >= 0) {
      const Node& n = nodes[static_cast<size_t>(at)];
      at = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<size_t>(at)].value;
  }
};

namespace detail {

struct SplitChoice {
  int feature = -1;
  double threshold = 0;
  double sse = 0;
};

inline SplitChoice best_split(const Mat& X, const Vec& y, const std::vector<int>& idx, bool coordinate_only) {
  const int n = static_cast<int>(idx.size());
  SplitChoice best;
  best.sse = std::numeric_limits<double>::infinity();
  std::vector<int> order(idx);
  for (int f = 0; f < X.cols(); ++f) {
    std::sort(order.begin(), order.end(), [&](int a, int b) { return X(a, f) < X(b, f); });
    double sy_l = 0, syy_l = 0;
    double sy_r = 0, syy_r = 0;
    for (int i : order) {
      sy_r += y[i];
      syy_r += y[i] * y[i];
    }
    for (int p = 1; p < n; ++p) {
      const int moved = order[static_cast<size_t>(p - 1)];
      sy_l += y[moved];
      syy_l += y[moved] * y[moved];
      sy_r -= y[moved];
      syy_r -= y[moved] * y[moved];
      const double lo = X(moved, f), hi = X(order[static_cast<size_t>(p)], f);
      if (lo == hi) continue;
      const double thr = coordinate_only ? 0.0 : 0.5 * (lo + hi);
      if (coordinate_only && !(lo <= 0.0 && hi > 0.0)) continue;
      const double sse = (syy_l - sy_l * sy_l / p) + (syy_r - sy_r * sy_r / (n - p));
      if (sse < best.sse) {
        best.sse = sse;
        best.feature = f;
        best.threshold = thr;
      }
    }
  }
  return best;
}

inline int grow_tree(RegressionTree& tree, const Mat& X, const Vec& y, std::vector<int> idx, int depth,
                     int max_depth, bool coordinate_only) {
  const int me = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  double mean = 0;
  for (int i : idx) mean += y[i];
  mean /= static_cast<double>(idx.size());
  tree.nodes[static_cast<size_t>(me)].value = mean;

  bool pure = true;
  for (int i : idx)
    if (y[i] != y[idx[0]]) {
      pure = false;
      break;
    }
  if (pure || depth >= max_depth || idx.size() < 2) return me;

  const SplitChoice split = best_split(X, y, idx, coordinate_only);
  if (split.feature < 0) return me;  // all candidate splits leave a child empty

  std::vector<int> left, right;
  for (int i : idx) (X(i, split.feature) <= split.threshold ? left : right).push_back(i);
  tree.nodes[static_cast<size_t>(me)].feature = split.feature;
  tree.nodes[static_cast<size_t>(me)].threshold = split.threshold;
  const int l = grow_tree(tree, X, y, std::move(left), depth + 1, max_depth, coordinate_only);
  tree.nodes[static_cast<size_t>(me)].left = l;
  const int r = grow_tree(tree, X, y, std::move(right), depth + 1, max_depth, coordinate_only);
  tree.nodes[static_cast<size_t>(me)].right = r;
  return me;
}

}  // namespace detail

inline RegressionTree fit_regression_tree(const Mat& X, const Vec& y, int max_depth, bool coordinate_only = false) {
  if (X.rows() < 1) throw ConfigError("regression tree: needs k >= 1");
  RegressionTree tree;
  std::vector<int> idx(static_cast<size_t>(X.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  detail::grow_tree(tree, X, y, std::move(idx), 0, max_depth, coordinate_only);
  return tree;
}

inline double greedy_tree(const ExampleSet& ex, const Eigen::Ref<const Vec>& xq, int max_depth,
                          bool sign_transform, bool coordinate_only = false) {
  if (ex.k() < 1) throw ConfigError("greedy_tree: needs k >= 1");
  if (!sign_transform) {
    const RegressionTree tree = fit_regression_tree(ex.X, ex.y, max_depth, coordinate_only);
    return tree.predict(xq);
  }
  Mat xs = ex.X.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
  Vec qs = xq.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
  const RegressionTree tree = fit_regression_tree(xs, ex.y, max_depth, coordinate_only);
  return tree.predict(qs);
}

// ---------------------------------------------------------------------------
// Squared-loss gradient boosting over depth-limited CART trees, starting
// from the mean.

struct BoostedTreesConfig {
  int rounds = 50;
  int max_depth = 4;
  double lr = 0.1;
};

inline double boosted_trees(const ExampleSet& ex, const Eigen::Ref<const Vec>& xq, const BoostedTreesConfig& cfg) {
  if (ex.k() < 1) throw ConfigError("boosted_trees: needs k >= 1");
  const int k = ex.k();
  const double base = ex.y.mean();
  Vec fitted = Vec::Constant(k, base);
  double out = base;
  for (int round = 0; round < cfg.rounds; ++round) {
    if (cfg.lr == 0) break;
    const Vec residual = ex.y - fitted;
    const RegressionTree tree = fit_regression_tree(ex.X, residual, cfg.max_depth);
    for (int i = 0; i < k; ++i) fitted[i] += cfg.lr * tree.predict(ex.X.row(i).transpose());
    out += cfg.lr * tree.predict(xq);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Two-layer ReLU network (f(x) = alpha . relu(W x), no biases) trained on
// the in-context examples with Adam. Minibatches follow shuffled epochs;
// full batch below the minibatch size.

struct NNAdamConfig {
  int r = 100;
  int64_t steps = 5000;
  int batch = 10;
  double lr = 5e-3;  // 5e-2 when the data comes from a linear function
};

inline double nn_adam(const ExampleSet& ex, const Eigen::Ref<const Vec>& xq, const NNAdamConfig& cfg, Rng rng) {
  if (ex.k() < 1) throw ConfigError("nn_adam: needs k >= 1");
  const int k = ex.k(), d = static_cast<int>(ex.X.cols()), r = cfg.r;
  const int batch = std::min<int>(cfg.batch, k);

  Tensor<double> W1 = Tensor<double>::zeros({r, d});
  Tensor<double> alpha = Tensor<double>::zeros({r, 1});
  const double w_bound = 1.0 / std::sqrt(static_cast<double>(d));
  const double a_bound = 1.0 / std::sqrt(static_cast<double>(r));
  for (auto& v : W1.data) v = w_bound * (2.0 * rng.uniform() - 1.0);
  for (auto& v : alpha.data) v = a_bound * (2.0 * rng.uniform() - 1.0);

  std::vector<Tensor<double>*> params{&W1, &alpha};
  AdamState<double> opt = AdamState<double>::init(params, cfg.lr);

  std::vector<int> perm(static_cast<size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  size_t cursor = perm.size();  // forces a shuffle on the first step

  for (int64_t step = 0; step < cfg.steps; ++step) {
    Tensor<double> xb = Tensor<double>::zeros({batch, d});
    Tensor<double> yb = Tensor<double>::zeros({batch, 1});
    for (int b = 0; b < batch; ++b) {
      if (cursor >= perm.size()) {
        for (size_t i = perm.size(); i > 1; --i)
          std::swap(perm[i - 1], perm[static_cast<size_t>(rng.uniform_index(i))]);
        cursor = 0;
      }
      const int row = perm[cursor++];
      for (int j = 0; j < d; ++j) xb(b, j) = ex.X(row, j);
      yb(b, 0) = ex.y[row];
    }
    Tape<double> tape;
    W1.requires_grad = true;
    alpha.requires_grad = true;
    Var w1v = tape.leaf(W1);
    Var av = tape.leaf(alpha);
    Var x = tape.leaf(std::move(xb));
    Var h = tape.relu(tape.matmul(x, w1v, false, true));
    Var pred = tape.matmul(h, av);
    Var diff = tape.sub(pred, tape.leaf(std::move(yb)));
    Var loss = tape.mean(tape.mul(diff, diff));
    if (!std::isfinite(static_cast<double>(tape.value(loss).data[0])))
      throw NumericError("nn_adam: diverged (non-finite loss)");
    tape.backward(loss);
    std::vector<Tensor<double>> grads{tape.grad(w1v), tape.grad(av)};
    adam_step(params, grads, opt);
  }

  ConstMatMap<double> W(W1.data.data(), r, d);
  Vec h = (W * xq).cwiseMax(0.0);
  return h.dot(Eigen::Map<const Vec>(alpha.data.data(), r));
}

// ---------------------------------------------------------------------------
// Tagged estimator configuration + a shared predictor interface for models
// and baselines.

struct LeastSquaresCfg {};
struct AveragingCfg {};
struct KnnCfg {
  int n = 3;
};
struct LassoCfg {
  double alpha = 1e-2;
};
struct GreedyTreeCfg {
  int max_depth = 2;
  bool sign_transform = false;
  bool coordinate_only = false;
};
struct ZeroCfg {};

using EstimatorConfig =
    std::variant<LeastSquaresCfg, AveragingCfg, KnnCfg, LassoCfg, GreedyTreeCfg, BoostedTreesConfig, NNAdamConfig, ZeroCfg>;

inline std::string estimator_name(const EstimatorConfig& cfg) {
  return std::visit(
      [](const auto& c) -> std::string {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, LeastSquaresCfg>) return "least_squares";
        else if constexpr (std::is_same_v<T, AveragingCfg>) return "averaging";
        else if constexpr (std::is_same_v<T, KnnCfg>) return "knn" + std::to_string(c.n);
        else if constexpr (std::is_same_v<T, LassoCfg>) return "lasso";
        else if constexpr (std::is_same_v<T, GreedyTreeCfg>)
          return c.sign_transform ? "greedy_tree_sign" : "greedy_tree";
        else if constexpr (std::is_same_v<T, BoostedTreesConfig>) return "boosted_trees";
        else if constexpr (std::is_same_v<T, NNAdamConfig>) return "nn_adam";
        else return "zero";
      },
      cfg);
}

inline double estimate(const EstimatorConfig& cfg, const ExampleSet& ex, const Eigen::Ref<const Vec>& xq,
                       Rng rng) {
  return std::visit(
      [&](const auto& c) -> double {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, LeastSquaresCfg>) return least_squares(ex, xq);
        else if constexpr (std::is_same_v<T, AveragingCfg>) return averaging(ex, xq);
        else if constexpr (std::is_same_v<T, KnnCfg>) return knn(ex, xq, c.n);
        else if constexpr (std::is_same_v<T, LassoCfg>) return ex.k() == 0 ? 0.0 : lasso(ex, xq, c.alpha);
        else if constexpr (std::is_same_v<T, GreedyTreeCfg>)
          return ex.k() == 0 ? 0.0 : greedy_tree(ex, xq, c.max_depth, c.sign_transform, c.coordinate_only);
        else if constexpr (std::is_same_v<T, BoostedTreesConfig>) return ex.k() == 0 ? 0.0 : boosted_trees(ex, xq, c);
        else if constexpr (std::is_same_v<T, NNAdamConfig>) return ex.k() == 0 ? 0.0 : nn_adam(ex, xq, c, rng);
        else return 0.0;
      },
      cfg);
}

struct EvalCase {
  Mat X;
  Vec y;
  Vec xq;
  double truth = 0;
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual std::vector<double> predict(const std::vector<EvalCase>& cases) const = 0;
};

class EstimatorPredictor final : public Predictor {
 public:
  EstimatorPredictor(EstimatorConfig cfg, Rng rng) : cfg_(std::move(cfg)), rng_(rng) {}

  std::string name() const override { return estimator_name(cfg_); }

  std::vector<double> predict(const std::vector<EvalCase>& cases) const override {
    std::vector<double> out(cases.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (size_t i = 0; i < cases.size(); ++i) {
      const EvalCase& c = cases[i];
      out[i] = estimate(cfg_, ExampleSet{c.X, c.y}, c.xq, rng_.child(i));
    }
    return out;
  }

 private:
  EstimatorConfig cfg_;
  Rng rng_;
};

}  // namespace icl
