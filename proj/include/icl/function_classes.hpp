#pragma once

// The four function classes whose prompts the model learns in-context:
// dense linear maps, s-sparse linear maps, depth-4 decision trees over
// coordinate signs, and two-layer ReLU networks.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "icl/errors.hpp"
#include "icl/rng.hpp"

namespace icl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class FunctionClass { linear, sparse_linear, decision_tree, two_layer_nn };

inline std::string class_name(FunctionClass c) {
  switch (c) {
    case FunctionClass::linear: return "linear";
    case FunctionClass::sparse_linear: return "sparse";
    case FunctionClass::decision_tree: return "tree";
    case FunctionClass::two_layer_nn: return "nn";
  }
  return "?";
}

inline FunctionClass class_from_name(const std::string& s) {
  if (s == "linear") return FunctionClass::linear;
  if (s == "sparse" || s == "sparse_linear") return FunctionClass::sparse_linear;
  if (s == "tree" || s == "decision_tree") return FunctionClass::decision_tree;
  if (s == "nn" || s == "relu_nn" || s == "two_layer_nn") return FunctionClass::two_layer_nn;
  throw ConfigError("unknown function class: " + s);
}

struct ClassConfig {
  FunctionClass cls = FunctionClass::linear;
  int d = 20;        // input dimension
  int sparsity = 3;  // sparse class only
  int hidden = 100;  // NN class only
  static constexpr int tree_depth = 4;

  void validate() const {
    if (d < 1) throw ConfigError("class config: d must be >= 1");
    if (cls == FunctionClass::sparse_linear && (sparsity < 1 || sparsity > d))
      throw ConfigError("class config: need 1 <= s <= d");
    if (cls == FunctionClass::two_layer_nn && hidden < 1) throw ConfigError("class config: need r >= 1");
  }
};

struct LinearFn {
  Vec w;
};
struct SparseLinearFn {
  Vec w;
  std::vector<int> support;
};
// Full binary tree of depth 4 in heap layout: node i has children 2i+1 and
// 2i+2; the leaf reached by path bits b0..b3 (1 = right) is index
// b0 b1 b2 b3 read as a 4-bit number.
struct TreeFn {
  std::array<int, 15> node_coords{};
  std::array<double, 16> leaf_values{};
};
struct TwoLayerNNFn {
  Mat W;      // hidden x d
  Vec alpha;  // hidden
};

using FunctionDescriptor = std::variant<LinearFn, SparseLinearFn, TreeFn, TwoLayerNNFn>;

inline Vec gaussian_vec(Rng& rng, int n) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

// Draw a random function. cur_dim only affects where the sparse support may
// fall ("the first cur_dim coordinates"); input zeroing is the prompt
// sampler's job.
inline FunctionDescriptor sample_function(const ClassConfig& cfg, int cur_dim, Rng& rng) {
  cfg.validate();
  if (cur_dim < 1 || cur_dim > cfg.d) throw ConfigError("sample_function: need 1 <= cur_dim <= d");
  switch (cfg.cls) {
    case FunctionClass::linear:
      return LinearFn{gaussian_vec(rng, cfg.d)};
    case FunctionClass::sparse_linear: {
      if (cfg.sparsity > cur_dim) throw ConfigError("sample_function: s > cur_dim for the sparse class");
      Vec w = gaussian_vec(rng, cfg.d);
      // Floyd-style sampling without replacement from {0..cur_dim-1}.
      std::vector<int> pool(static_cast<size_t>(cur_dim));
      for (int i = 0; i < cur_dim; ++i) pool[static_cast<size_t>(i)] = i;
      std::vector<int> support;
      for (int i = 0; i < cfg.sparsity; ++i) {
        const auto j = static_cast<size_t>(rng.uniform_index(static_cast<uint64_t>(cur_dim - i)));
        support.push_back(pool[j]);
        std::swap(pool[j], pool[static_cast<size_t>(cur_dim - 1 - i)]);
      }
      std::sort(support.begin(), support.end());
      Vec sparse = Vec::Zero(cfg.d);
      for (int idx : support) sparse[idx] = w[idx];
      return SparseLinearFn{std::move(sparse), std::move(support)};
    }
    case FunctionClass::decision_tree: {
      TreeFn f;
      for (auto& c : f.node_coords) c = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(cfg.d)));
      for (auto& v : f.leaf_values) v = rng.normal();
      return f;
    }
    case FunctionClass::two_layer_nn: {
      TwoLayerNNFn f;
      f.W.resize(cfg.hidden, cfg.d);
      for (int i = 0; i < cfg.hidden; ++i)
        for (int j = 0; j < cfg.d; ++j) f.W(i, j) = rng.normal();
      const double sd = std::sqrt(2.0 / cfg.hidden);
      f.alpha.resize(cfg.hidden);
      for (int i = 0; i < cfg.hidden; ++i) f.alpha[i] = sd * rng.normal();
      return f;
    }
  }
  throw ConfigError("sample_function: unreachable");
}

inline int descriptor_dim(const FunctionDescriptor& f) {
  return std::visit(
      [](const auto& fn) -> int {
        using T = std::decay_t<decltype(fn)>;
        if constexpr (std::is_same_v<T, LinearFn>) return static_cast<int>(fn.w.size());
        else if constexpr (std::is_same_v<T, SparseLinearFn>) return static_cast<int>(fn.w.size());
        else if constexpr (std::is_same_v<T, TreeFn>) return -1;  // any d covering the coords
        else return static_cast<int>(fn.W.cols());
      },
      f);
}

inline double evaluate_function(const FunctionDescriptor& f, const Eigen::Ref<const Vec>& x) {
  return std::visit(
      [&](const auto& fn) -> double {
        using T = std::decay_t<decltype(fn)>;
        if constexpr (std::is_same_v<T, LinearFn>) {
          return fn.w.dot(x);
        } else if constexpr (std::is_same_v<T, SparseLinearFn>) {
          return fn.w.dot(x);
        } else if constexpr (std::is_same_v<T, TreeFn>) {
          int node = 0;
          for (int depth = 0; depth < 4; ++depth) {
            const int c = fn.node_coords[static_cast<size_t>(node)];
            node = 2 * node + (x[c] > 0.0 ? 2 : 1);  // ties (x == 0) go left
          }
          return fn.leaf_values[static_cast<size_t>(node - 15)];
        } else {
          double out = 0.0;
          Vec pre = fn.W * x;
          for (int i = 0; i < pre.size(); ++i) out += fn.alpha[i] * std::max(0.0, pre[i]);
          return out;
        }
      },
      f);
}

// E[f(x)^2] under the standard prompt distribution; the per-class constant
// that makes the zero estimator score exactly 1 after normalization.
inline double second_moment(const ClassConfig& cfg) {
  switch (cfg.cls) {
    case FunctionClass::linear: return static_cast<double>(cfg.d);
    case FunctionClass::sparse_linear: return static_cast<double>(cfg.sparsity);
    case FunctionClass::decision_tree: return 1.0;
    case FunctionClass::two_layer_nn: return static_cast<double>(cfg.d);
  }
  return 1.0;
}

inline nlohmann::json descriptor_to_json(const FunctionDescriptor& f) {
  nlohmann::json j;
  std::visit(
      [&](const auto& fn) {
        using T = std::decay_t<decltype(fn)>;
        if constexpr (std::is_same_v<T, LinearFn>) {
          j["class"] = "linear";
          j["w"] = std::vector<double>(fn.w.data(), fn.w.data() + fn.w.size());
        } else if constexpr (std::is_same_v<T, SparseLinearFn>) {
          j["class"] = "sparse";
          j["w"] = std::vector<double>(fn.w.data(), fn.w.data() + fn.w.size());
          j["support"] = fn.support;
        } else if constexpr (std::is_same_v<T, TreeFn>) {
          j["class"] = "tree";
          j["node_coords"] = fn.node_coords;
          j["leaf_values"] = fn.leaf_values;
        } else {
          j["class"] = "nn";
          j["alpha"] = std::vector<double>(fn.alpha.data(), fn.alpha.data() + fn.alpha.size());
          std::vector<std::vector<double>> rows;
          for (int i = 0; i < fn.W.rows(); ++i) {
            std::vector<double> row(static_cast<size_t>(fn.W.cols()));
            for (int c = 0; c < fn.W.cols(); ++c) row[static_cast<size_t>(c)] = fn.W(i, c);
            rows.push_back(std::move(row));
          }
          j["W"] = rows;
        }
      },
      f);
  return j;
}

inline FunctionDescriptor descriptor_from_json(const nlohmann::json& j) {
  const std::string cls = j.at("class").get<std::string>();
  if (cls == "linear") {
    auto w = j.at("w").get<std::vector<double>>();
    return LinearFn{Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()))};
  }
  if (cls == "sparse") {
    auto w = j.at("w").get<std::vector<double>>();
    return SparseLinearFn{Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size())),
                          j.at("support").get<std::vector<int>>()};
  }
  if (cls == "tree") {
    TreeFn f;
    auto nc = j.at("node_coords").get<std::vector<int>>();
    auto lv = j.at("leaf_values").get<std::vector<double>>();
    if (nc.size() != 15 || lv.size() != 16) throw ConfigError("tree descriptor: wrong table sizes");
    std::copy(nc.begin(), nc.end(), f.node_coords.begin());
    std::copy(lv.begin(), lv.end(), f.leaf_values.begin());
    return f;
  }
  if (cls == "nn") {
    TwoLayerNNFn f;
    auto alpha = j.at("alpha").get<std::vector<double>>();
    auto rows = j.at("W").get<std::vector<std::vector<double>>>();
    f.alpha = Eigen::Map<const Vec>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
    f.W.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.empty() ? 0 : rows[0].size()));
    for (size_t i = 0; i < rows.size(); ++i)
      for (size_t c = 0; c < rows[i].size(); ++c) f.W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    return f;
  }
  throw ConfigError("descriptor_from_json: unknown class tag '" + cls + "'");
}

}  // namespace icl
