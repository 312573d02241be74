#pragma once

// Prompt construction: training prompts, curriculum input-zeroing, and the
// eight out-of-distribution prompt families. Every renormalized variant is
// constructed so that E||x||^2 = d matches the training inputs.

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "icl/errors.hpp"
#include "icl/function_classes.hpp"
#include "icl/rng.hpp"

namespace icl {

struct Prompt {
  Mat inputs;   // m x d; row m-1 is the query, earlier rows are in-context examples
  Vec targets;  // m
  FunctionDescriptor descriptor;
  double noise_sd = 0.0;

  int m() const { return static_cast<int>(inputs.rows()); }
  int d() const { return static_cast<int>(inputs.cols()); }
  int k() const { return m() - 1; }
  Vec query() const { return inputs.row(inputs.rows() - 1); }
};

enum class Shift {
  standard,
  skewed_covariance,
  subspace,
  noisy,
  scale_x,
  scale_w,
  orthant,
  orthogonal_query,
  duplicate_query,
};

struct DistShiftConfig {
  Shift variant = Shift::standard;
  int subspace_dim = 0;    // 0 = d/2 at sampling time
  double noise_sd = -1.0;  // < 0 = sqrt(d/20) at sampling time
  double scale = 2.0;      // scale_x / scale_w factor
  bool renormalize = true; // false for the scale variants

  static DistShiftConfig standard() { return {}; }

  std::string name() const {
    switch (variant) {
      case Shift::standard: return "standard";
      case Shift::skewed_covariance: return "skewed";
      case Shift::subspace: return subspace_dim > 0 ? "subspace:" + std::to_string(subspace_dim) : "subspace";
      case Shift::noisy: return "noisy";
      case Shift::scale_x: return "scale_x:" + trim_number(scale);
      case Shift::scale_w: return "scale_w:" + trim_number(scale);
      case Shift::orthant: return "orthant";
      case Shift::orthogonal_query: return "orthogonal_query";
      case Shift::duplicate_query: return "duplicate_query";
    }
    return "?";
  }

  // Accepts "skewed", "subspace:10", "noisy:1.0", "scale_x:0.5", ...
  static DistShiftConfig parse(const std::string& spec) {
    std::string head = spec, arg;
    if (auto pos = spec.find(':'); pos != std::string::npos) {
      head = spec.substr(0, pos);
      arg = spec.substr(pos + 1);
    }
    DistShiftConfig c;
    if (head == "standard") c.variant = Shift::standard;
    else if (head == "skewed" || head == "skewed_covariance") c.variant = Shift::skewed_covariance;
    else if (head == "subspace") {
      c.variant = Shift::subspace;
      if (!arg.empty()) c.subspace_dim = std::stoi(arg);
    } else if (head == "noisy") {
      c.variant = Shift::noisy;
      if (!arg.empty()) c.noise_sd = std::stod(arg);
    } else if (head == "scale_x") {
      c.variant = Shift::scale_x;
      c.renormalize = false;
      if (!arg.empty()) c.scale = std::stod(arg);
    } else if (head == "scale_w") {
      c.variant = Shift::scale_w;
      c.renormalize = false;
      if (!arg.empty()) c.scale = std::stod(arg);
    } else if (head == "orthant") c.variant = Shift::orthant;
    else if (head == "orthogonal_query" || head == "orthogonal") c.variant = Shift::orthogonal_query;
    else if (head == "duplicate_query" || head == "duplicate") c.variant = Shift::duplicate_query;
    else throw ConfigError("unknown shift variant: " + spec);
    return c;
  }

  // The eight out-of-distribution families with their default parameters.
  static std::vector<DistShiftConfig> battery(int d) {
    std::vector<DistShiftConfig> out;
    out.push_back(parse("skewed"));
    out.push_back(parse("subspace:" + std::to_string(d / 2)));
    out.push_back(parse("noisy"));
    out.push_back(parse("scale_x:2"));
    out.push_back(parse("scale_w:2"));
    out.push_back(parse("orthant"));
    out.push_back(parse("orthogonal_query"));
    out.push_back(parse("duplicate_query"));
    return out;
  }

 private:
  static std::string trim_number(double v) {
    std::string s = std::to_string(v);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
};

inline Mat gaussian_mat(Rng& rng, int rows, int cols) {
  Mat x(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) x(i, j) = rng.normal();
  return x;
}

// Haar-distributed orthonormal columns: QR of a Gaussian matrix with the
// signs fixed by the diagonal of R.
inline Mat random_orthonormal(Rng& rng, int d, int cols) {
  Mat g = gaussian_mat(rng, d, cols);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(d, cols);
  Mat r = qr.matrixQR().topRows(cols).template triangularView<Eigen::Upper>();
  for (int j = 0; j < cols; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

// Inputs for one prompt under the given variant: (k+1) x d, last row is the
// query.
inline Mat shifted_inputs(const DistShiftConfig& cfg, int k, int d, Rng& rng) {
  if (k < 0) throw ConfigError("shifted_inputs: k must be >= 0");
  const int m = k + 1;
  switch (cfg.variant) {
    case Shift::standard:
    case Shift::noisy:
    case Shift::scale_w:
      return gaussian_mat(rng, m, d);
    case Shift::scale_x:
      return cfg.scale * gaussian_mat(rng, m, d);
    case Shift::skewed_covariance: {
      // Eigenbasis resampled per prompt; eigenvalue i proportional to 1/i^2,
      // scaled so trace(Sigma) = d.
      Mat q = random_orthonormal(rng, d, d);
      Vec lambda(d);
      for (int i = 0; i < d; ++i) lambda[i] = 1.0 / ((i + 1.0) * (i + 1.0));
      if (cfg.renormalize) lambda *= static_cast<double>(d) / lambda.sum();
      Mat z = gaussian_mat(rng, m, d);
      return z * lambda.cwiseSqrt().asDiagonal() * q.transpose();
    }
    case Shift::subspace: {
      const int dim = cfg.subspace_dim > 0 ? cfg.subspace_dim : d / 2;
      if (dim < 1 || dim > d) throw ConfigError("subspace shift: need 1 <= dim <= d");
      Mat basis = random_orthonormal(rng, d, dim);
      Mat z = gaussian_mat(rng, m, dim);
      const double s = cfg.renormalize ? std::sqrt(static_cast<double>(d) / dim) : 1.0;
      return s * (z * basis.transpose());
    }
    case Shift::orthant: {
      // One Rademacher sign vector per prompt for the in-context rows; the
      // query is plain N(0, I).
      Mat x = gaussian_mat(rng, m, d);
      Vec signs(d);
      for (int j = 0; j < d; ++j) signs[j] = rng.next_u64() & 1 ? 1.0 : -1.0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = signs[j] * std::abs(x(i, j));
      return x;
    }
    case Shift::orthogonal_query: {
      if (k >= d) throw ConfigError("orthogonal_query shift: requires k < d");
      Mat x = gaussian_mat(rng, m, d);
      if (k > 0) {
        Mat basis = Mat(x.topRows(k).transpose());
        Eigen::HouseholderQR<Mat> qr(basis);
        Mat q = qr.householderQ() * Mat::Identity(d, k);
        Vec query = x.row(k);
        query -= q * (q.transpose() * query);
        if (cfg.renormalize) query *= std::sqrt(static_cast<double>(d) / (d - k));
        x.row(k) = query;
      }
      return x;
    }
    case Shift::duplicate_query: {
      if (k < 1) throw ConfigError("duplicate_query shift: requires k >= 1");
      Mat x = gaussian_mat(rng, m, d);
      const auto j = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(k)));
      x.row(k) = x.row(j);
      return x;
    }
  }
  throw ConfigError("shifted_inputs: unreachable");
}

// Scale a linear function's weights by c.
inline FunctionDescriptor scale_function(const FunctionDescriptor& f, double c) {
  if (const auto* lin = std::get_if<LinearFn>(&f)) return LinearFn{c * lin->w};
  if (const auto* sp = std::get_if<SparseLinearFn>(&f)) return SparseLinearFn{c * sp->w, sp->support};
  throw ConfigError("scale_function: only linear descriptors can be scaled");
}

// Draw one complete prompt: function, inputs per the shift variant,
// curriculum zeroing of coordinates >= cur_dim, targets, label noise.
//
// Generator consumption order is fixed (function, inputs, noise) so prompts
// are reproducible from (seed, configs).
inline Prompt sample_prompt(const ClassConfig& class_cfg, const DistShiftConfig& shift, int k, int cur_dim,
                            Rng& rng) {
  if (cur_dim < 1 || cur_dim > class_cfg.d) throw ConfigError("sample_prompt: need 1 <= cur_dim <= d");
  Prompt p;
  p.descriptor = sample_function(class_cfg, cur_dim, rng);
  if (shift.variant == Shift::scale_w) p.descriptor = scale_function(p.descriptor, shift.scale);
  p.inputs = shifted_inputs(shift, k, class_cfg.d, rng);
  if (cur_dim < class_cfg.d) p.inputs.rightCols(class_cfg.d - cur_dim).setZero();
  const int m = k + 1;
  p.targets.resize(m);
  for (int i = 0; i < m; ++i) p.targets[i] = evaluate_function(p.descriptor, p.inputs.row(i).transpose());
  if (shift.variant == Shift::noisy) {
    p.noise_sd = shift.noise_sd >= 0 ? shift.noise_sd : std::sqrt(class_cfg.d / 20.0);
    for (int i = 0; i < m; ++i) p.targets[i] += p.noise_sd * rng.normal();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Prompt-set serialization: raw 32-bit floats (row-major inputs then
// targets, per prompt) with a JSON sidecar describing the configs and the
// ground-truth descriptors.

inline void save_prompts(const std::string& stem, const std::vector<Prompt>& prompts,
                         const nlohmann::json& config = {}) {
  if (prompts.empty()) throw ConfigError("save_prompts: empty set");
  const int m = prompts[0].m(), d = prompts[0].d();
  nlohmann::json side;
  side["n_prompts"] = prompts.size();
  side["m"] = m;
  side["d"] = d;
  side["config"] = config;
  std::ofstream bin(stem + ".bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw ConfigError("save_prompts: cannot open " + stem + ".bin");
  for (const Prompt& p : prompts) {
    if (p.m() != m || p.d() != d) throw ConfigError("save_prompts: prompts must share m and d");
    side["descriptors"].push_back(descriptor_to_json(p.descriptor));
    side["noise_sd"].push_back(p.noise_sd);
    std::vector<float> buf;
    buf.reserve(static_cast<size_t>(m) * (d + 1));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j) buf.push_back(static_cast<float>(p.inputs(i, j)));
    for (int i = 0; i < m; ++i) buf.push_back(static_cast<float>(p.targets[i]));
    bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  std::ofstream js(stem + ".json", std::ios::trunc);
  js << side.dump(2) << "\n";
  if (!bin || !js) throw ConfigError("save_prompts: write failed for " + stem);
}

inline std::vector<Prompt> load_prompts(const std::string& stem) {
  std::ifstream js(stem + ".json");
  if (!js) throw ConfigError("load_prompts: cannot open " + stem + ".json");
  nlohmann::json side = nlohmann::json::parse(js);
  const auto n = side.at("n_prompts").get<size_t>();
  const int m = side.at("m").get<int>(), d = side.at("d").get<int>();
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw ConfigError("load_prompts: cannot open " + stem + ".bin");
  std::vector<Prompt> out;
  out.reserve(n);
  std::vector<float> buf(static_cast<size_t>(m) * (d + 1));
  for (size_t i = 0; i < n; ++i) {
    bin.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!bin) throw ConfigError("load_prompts: truncated " + stem + ".bin");
    Prompt p;
    p.inputs.resize(m, d);
    size_t at = 0;
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < d; ++c) p.inputs(r, c) = buf[at++];
    p.targets.resize(m);
    for (int r = 0; r < m; ++r) p.targets[r] = buf[at++];
    p.descriptor = descriptor_from_json(side.at("descriptors").at(i));
    p.noise_sd = side.at("noise_sd").at(i).get<double>();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace icl
