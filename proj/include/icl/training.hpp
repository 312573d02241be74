#pragma once

// Training loop: sample a batch of random prompts, run the model over every
// prefix, take the mean squared error, Adam-update. Curriculum scheduling
// grows the live input dimension and prompt length; finite pools replay a
// fixed set of prompts or weight vectors.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icl/adam.hpp"
#include "icl/errors.hpp"
#include "icl/model.hpp"
#include "icl/prompts.hpp"

namespace icl {

inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

// Mean squared error over all prompt prefixes (unnormalized; the
// d-normalization belongs to evaluation).
inline double prefix_loss(const Eigen::Ref<const Vec>& predictions, const Eigen::Ref<const Vec>& targets) {
  if (predictions.size() != targets.size() || predictions.size() < 1)
    throw ConfigError("prefix_loss: length mismatch");
  return (predictions - targets).squaredNorm() / static_cast<double>(predictions.size());
}

struct CurriculumSchedule {
  int d_start = 5, k_start = 11;
  int d_step = 1, k_step = 2;
  int period = 2000;
  int d_end = 20, k_end = 41;

  // Linear/sparse prompts grow by (1, 2) from (5, 11) up to (d, 2d+1);
  // trees and networks by (1, 5) from (5, 26) up to (d, 5d+1).
  static CurriculumSchedule for_class(const ClassConfig& cfg) {
    const bool long_prompts =
        cfg.cls == FunctionClass::decision_tree || cfg.cls == FunctionClass::two_layer_nn;
    CurriculumSchedule s;
    s.d_end = cfg.d;
    s.k_end = long_prompts ? 5 * cfg.d + 1 : 2 * cfg.d + 1;
    s.k_start = long_prompts ? 26 : 11;
    s.k_step = long_prompts ? 5 : 2;
    s.d_start = std::min(s.d_start, s.d_end);
    s.k_start = std::min(s.k_start, s.k_end);
    return s;
  }

  std::pair<int, int> state(int64_t step) const {
    if (step < 0) throw ConfigError("curriculum_state: step must be >= 0");
    const int64_t inc = step / period;
    const int d = static_cast<int>(std::min<int64_t>(d_end, d_start + inc * d_step));
    const int k = static_cast<int>(std::min<int64_t>(k_end, k_start + inc * k_step));
    return {d, k};
  }
};

struct PoolConfig {
  enum class Kind { unlimited, prompts, functions };
  Kind kind = Kind::unlimited;
  int64_t n = 0;

  static PoolConfig parse(const std::string& spec) {
    PoolConfig p;
    if (spec.empty() || spec == "none" || spec == "unlimited") return p;
    const auto pos = spec.find(':');
    if (pos == std::string::npos) throw ConfigError("pool spec must be none, prompts:N, or functions:N");
    const std::string head = spec.substr(0, pos);
    p.n = std::stoll(spec.substr(pos + 1));
    if (p.n < 1) throw ConfigError("pool size must be >= 1");
    if (head == "prompts") p.kind = Kind::prompts;
    else if (head == "functions") p.kind = Kind::functions;
    else throw ConfigError("unknown pool kind: " + head);
    return p;
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::unlimited: return "none";
      case Kind::prompts: return "prompts:" + std::to_string(n);
      case Kind::functions: return "functions:" + std::to_string(n);
    }
    return "none";
  }
};

struct TrainConfig {
  ClassConfig class_cfg;
  std::string model_preset = "standard";
  int64_t steps = 500000;
  int batch = 64;
  double lr = 1e-4;
  bool curriculum = true;
  PoolConfig pool;
  uint64_t seed = 0;
  std::string out_dir;
  int64_t ckpt_every = 2000;
  double clip_norm = 0.0;  // 0 = off

  void validate() const {
    class_cfg.validate();
    if (steps < 1 || batch < 1 || lr <= 0) throw ConfigError("train config: need steps >= 1, batch >= 1, lr > 0");
    if (pool.kind == PoolConfig::Kind::prompts && curriculum)
      throw ConfigError("train config: a finite prompt pool cannot be combined with curriculum");
  }

  int max_pairs() const {
    const bool long_prompts =
        class_cfg.cls == FunctionClass::decision_tree || class_cfg.cls == FunctionClass::two_layer_nn;
    return long_prompts ? 5 * class_cfg.d + 1 : 2 * class_cfg.d + 1;
  }

  ModelConfig model() const { return ModelConfig::named(model_preset, class_cfg.d, max_pairs()); }

  nlohmann::json to_json() const {
    return {{"class", class_name(class_cfg.cls)},
            {"dim", class_cfg.d},
            {"sparsity", class_cfg.sparsity},
            {"hidden", class_cfg.hidden},
            {"model", model_preset},
            {"steps", steps},
            {"batch", batch},
            {"lr", lr},
            {"curriculum", curriculum},
            {"pool", pool.to_string()},
            {"seed", seed},
            {"ckpt_every", ckpt_every},
            {"clip_norm", clip_norm}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.class_cfg.cls = class_from_name(j.at("class").get<std::string>());
    c.class_cfg.d = j.at("dim").get<int>();
    c.class_cfg.sparsity = j.value("sparsity", 3);
    c.class_cfg.hidden = j.value("hidden", 100);
    c.model_preset = j.value("model", "standard");
    c.steps = j.value("steps", int64_t(500000));
    c.batch = j.value("batch", 64);
    c.lr = j.value("lr", 1e-4);
    c.curriculum = j.value("curriculum", true);
    c.pool = PoolConfig::parse(j.value("pool", "none"));
    c.seed = j.value("seed", uint64_t(0));
    c.ckpt_every = j.value("ckpt_every", int64_t(2000));
    c.clip_norm = j.value("clip_norm", 0.0);
    return c;
  }
};

// Finite training pools (Appendix-style ablations): either full prompts
// sampled once, or weight vectors with fresh inputs every step.
struct Pool {
  PoolConfig cfg;
  std::vector<Prompt> prompts;
  std::vector<FunctionDescriptor> functions;

  bool unlimited() const { return cfg.kind == PoolConfig::Kind::unlimited; }
};

inline Pool make_pool(const TrainConfig& cfg, Rng rng) {
  Pool pool;
  pool.cfg = cfg.pool;
  const DistShiftConfig standard;
  const int k_pairs = cfg.curriculum ? CurriculumSchedule::for_class(cfg.class_cfg).k_end : cfg.max_pairs();
  switch (cfg.pool.kind) {
    case PoolConfig::Kind::unlimited:
      break;
    case PoolConfig::Kind::prompts: {
      if (cfg.curriculum) throw ConfigError("make_pool: prompt pool cannot be combined with curriculum");
      pool.prompts.reserve(static_cast<size_t>(cfg.pool.n));
      for (int64_t i = 0; i < cfg.pool.n; ++i) {
        Rng r = rng.child(static_cast<uint64_t>(i));
        pool.prompts.push_back(sample_prompt(cfg.class_cfg, standard, k_pairs - 1, cfg.class_cfg.d, r));
      }
      break;
    }
    case PoolConfig::Kind::functions: {
      pool.functions.reserve(static_cast<size_t>(cfg.pool.n));
      for (int64_t i = 0; i < cfg.pool.n; ++i) {
        Rng r = rng.child(static_cast<uint64_t>(i));
        pool.functions.push_back(sample_function(cfg.class_cfg, cfg.class_cfg.d, r));
      }
      break;
    }
  }
  return pool;
}

// One training prompt for the given step state, honoring the pool.
inline Prompt draw_training_prompt(const TrainConfig& cfg, const Pool& pool, int k_pairs, int d_cur, Rng& rng) {
  const DistShiftConfig standard;
  switch (pool.cfg.kind) {
    case PoolConfig::Kind::unlimited:
      return sample_prompt(cfg.class_cfg, standard, k_pairs - 1, d_cur, rng);
    case PoolConfig::Kind::prompts:
      return pool.prompts[static_cast<size_t>(rng.uniform_index(pool.prompts.size()))];
    case PoolConfig::Kind::functions: {
      const auto idx = static_cast<size_t>(rng.uniform_index(pool.functions.size()));
      Prompt p;
      p.descriptor = pool.functions[idx];
      p.inputs = gaussian_mat(rng, k_pairs, cfg.class_cfg.d);
      if (d_cur < cfg.class_cfg.d) p.inputs.rightCols(cfg.class_cfg.d - d_cur).setZero();
      p.targets.resize(k_pairs);
      for (int i = 0; i < k_pairs; ++i) p.targets[i] = evaluate_function(p.descriptor, p.inputs.row(i).transpose());
      return p;
    }
  }
  throw ConfigError("draw_training_prompt: unreachable");
}

struct StepRecord {
  int64_t step;  // 1-based
  double loss;
  int d_cur, k_cur;
  double wallclock;
};

struct TrainResult {
  TransformerParams<float> params;
  std::string run_dir;
  std::vector<double> losses;  // per step
  std::vector<int64_t> checkpoint_steps;
};

// Runs the full loop; writes metrics.jsonl and ckpt_<step> files under
// cfg.out_dir when it is set.
inline TrainResult train(const TrainConfig& cfg, const std::function<void(const StepRecord&)>& on_step = {}) {
  cfg.validate();
  const Rng root = Rng::from_seed(cfg.seed);
  Rng init_rng = root.stream("init");
  const Rng data_rng = root.stream("data");
  const CurriculumSchedule schedule = CurriculumSchedule::for_class(cfg.class_cfg);
  const ModelConfig mcfg = cfg.model();

  TrainResult result;
  result.params = TransformerParams<float>::create(mcfg, init_rng);
  result.run_dir = cfg.out_dir;

  std::vector<Tensor<float>*> param_ptrs;
  result.params.for_each([&](const std::string&, Tensor<float>& t) { param_ptrs.push_back(&t); });
  AdamState<float> opt = AdamState<float>::init(param_ptrs, cfg.lr);
  Pool pool = make_pool(cfg, root.stream("pool"));

  std::ofstream metrics;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    metrics.open(cfg.out_dir + "/metrics.jsonl", std::ios::trunc);
    if (!metrics) throw ConfigError("train: cannot open metrics.jsonl under " + cfg.out_dir);
  }
  auto checkpoint = [&](int64_t completed) {
    if (cfg.out_dir.empty()) return;
    result.params.save(cfg.out_dir + "/ckpt_" + std::to_string(completed),
                       {{"step", completed}, {"train_config", cfg.to_json()}});
    result.checkpoint_steps.push_back(completed);
  };

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<const Prompt*> batch_ptrs(static_cast<size_t>(cfg.batch));
  for (int64_t step = 0; step < cfg.steps; ++step) {
    const auto [d_cur, k_cur] =
        cfg.curriculum ? schedule.state(step) : std::pair<int, int>{cfg.class_cfg.d, schedule.k_end};

    std::vector<Prompt> batch;
    batch.reserve(static_cast<size_t>(cfg.batch));
    Rng step_rng = data_rng.child(static_cast<uint64_t>(step));
    for (int b = 0; b < cfg.batch; ++b) {
      Rng prompt_rng = step_rng.child(static_cast<uint64_t>(b));
      batch.push_back(draw_training_prompt(cfg, pool, k_cur, d_cur, prompt_rng));
      batch_ptrs[static_cast<size_t>(b)] = &batch.back();
    }

    const int m = batch[0].m();
    Tape<float> tape;
    BoundModel<float> bm = bind_model(tape, result.params, true);
    Var x = tape.leaf(encode_prompt_batch<float>(batch_ptrs, mcfg.d_max));
    Var preds = model_predictions(tape, bm, x, 2 * m);

    Tensor<float> tgt = Tensor<float>::zeros({static_cast<int64_t>(cfg.batch) * m, 1});
    for (int b = 0; b < cfg.batch; ++b)
      for (int i = 0; i < m; ++i)
        tgt.data[static_cast<size_t>(b * m + i)] = static_cast<float>(batch[static_cast<size_t>(b)].targets[i]);
    Var diff = tape.sub(preds, tape.leaf(std::move(tgt)));
    Var loss = tape.mean(tape.mul(diff, diff));

    const double loss_v = static_cast<double>(tape.value(loss).data[0]);
    if (!std::isfinite(loss_v)) {
      if (metrics.is_open()) metrics.flush();
      throw NumericError("train: non-finite loss at step " + std::to_string(step + 1) +
                         " (last checkpoint retained)");
    }

    tape.backward(loss);
    std::vector<Tensor<float>> grads;
    grads.reserve(bm.ordered.size());
    for (Var v : bm.ordered) grads.push_back(tape.grad(v));
    if (cfg.clip_norm > 0) clip_global_norm(grads, cfg.clip_norm);
    adam_step(param_ptrs, grads, opt);

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.losses.push_back(loss_v);
    if (metrics.is_open()) {
      metrics << "{\"step\":" << (step + 1) << ",\"loss\":" << format_double(loss_v) << ",\"d_cur\":" << d_cur
              << ",\"k_cur\":" << k_cur << ",\"wallclock\":" << format_double(wall) << "}\n";
      if ((step + 1) % 200 == 0) metrics.flush();
    }
    if (on_step) on_step(StepRecord{step + 1, loss_v, d_cur, k_cur, wall});
    if ((step + 1) % cfg.ckpt_every == 0 && step + 1 != cfg.steps) checkpoint(step + 1);
  }
  checkpoint(cfg.steps);
  return result;
}

}  // namespace icl
