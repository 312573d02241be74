#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "icl/training.hpp"

using namespace icl;

TEST_CASE("prefix loss arithmetic", "[training]") {
  Vec a = Vec::Zero(2), b(2);
  b << 1.0, 3.0;
  REQUIRE(prefix_loss(b, b) == 0.0);
  REQUIRE(prefix_loss(a, b) == Catch::Approx(5.0));
  Vec c = Vec::Zero(3);
  REQUIRE_THROWS_AS(prefix_loss(a, c), ConfigError);
}

TEST_CASE("zero predictor scores the class second moment on linear prompts", "[training]") {
  const ClassConfig cfg{FunctionClass::linear, 20};
  Rng rng = Rng::from_seed(1);
  double acc = 0;
  const int n = 10'000;
  for (int i = 0; i < n; ++i) {
    Rng r = rng.child(static_cast<uint64_t>(i));
    const Prompt p = sample_prompt(cfg, DistShiftConfig{}, 9, 20, r);
    acc += prefix_loss(Vec::Zero(p.m()), p.targets);
  }
  // E[(w.x)^2] = d = 20, i.e. exactly 1.0 after d-normalization
  REQUIRE(std::abs(acc / n - 20.0) / 20.0 < 0.05);
}

TEST_CASE("curriculum arithmetic is exact", "[training]") {
  SECTION("linear/sparse schedule") {
    const CurriculumSchedule s = CurriculumSchedule::for_class({FunctionClass::linear, 20});
    REQUIRE(s.state(0) == std::pair{5, 11});
    REQUIRE(s.state(1999) == std::pair{5, 11});
    REQUIRE(s.state(2000) == std::pair{6, 13});
    REQUIRE(s.state(30000) == std::pair{20, 41});
    REQUIRE(s.state(1'000'000) == std::pair{20, 41});
  }
  SECTION("tree/NN schedule") {
    const CurriculumSchedule s = CurriculumSchedule::for_class({FunctionClass::decision_tree, 20});
    REQUIRE(s.state(0) == std::pair{5, 26});
    REQUIRE(s.state(1999) == std::pair{5, 26});
    REQUIRE(s.state(2000) == std::pair{6, 31});
    REQUIRE(s.state(30000) == std::pair{20, 101});
    REQUIRE(s.state(1'000'000) == std::pair{20, 101});
  }
  SECTION("monotone and clamped") {
    const CurriculumSchedule s = CurriculumSchedule::for_class({FunctionClass::linear, 8});
    std::pair<int, int> prev{0, 0};
    for (int64_t step = 0; step < 40000; step += 500) {
      const auto cur = s.state(step);
      REQUIRE(cur.first >= prev.first);
      REQUIRE(cur.second >= prev.second);
      REQUIRE(cur.first <= 8);
      REQUIRE(cur.second <= 17);
      prev = cur;
    }
  }
}

TEST_CASE("curriculum zeroing holds for every sampled input", "[training]") {
  TrainConfig cfg;
  cfg.class_cfg = {FunctionClass::sparse_linear, 12, 3};
  cfg.model_preset = "tiny";
  cfg.curriculum = true;
  const Pool pool;
  Rng rng = Rng::from_seed(2);
  const auto [d_cur, k_cur] = CurriculumSchedule::for_class(cfg.class_cfg).state(0);
  for (int i = 0; i < 50; ++i) {
    Rng r = rng.child(static_cast<uint64_t>(i));
    const Prompt p = draw_training_prompt(cfg, pool, k_cur, d_cur, r);
    REQUIRE(p.m() == k_cur);
    for (int row = 0; row < p.m(); ++row)
      for (int c = d_cur; c < 12; ++c) REQUIRE(p.inputs(row, c) == 0.0);
    const auto& sp = std::get<SparseLinearFn>(p.descriptor);
    for (int s : sp.support) REQUIRE(s < d_cur);
  }
}

TEST_CASE("one training step changes the parameters", "[training]") {
  TrainConfig cfg;
  cfg.class_cfg = {FunctionClass::linear, 4};
  cfg.model_preset = "tiny";
  cfg.steps = 1;
  cfg.batch = 4;
  cfg.curriculum = false;
  cfg.seed = 3;
  auto before = TransformerParams<float>::create(cfg.model(), Rng::from_seed(cfg.seed).stream("init"));
  const TrainResult res = train(cfg);
  double diff = 0;
  before.for_each([&](const std::string& name, const Tensor<float>& t) {
    const_cast<TransformerParams<float>&>(res.params).for_each(
        [&](const std::string& name2, Tensor<float>& t2) {
          if (name == name2)
            for (size_t i = 0; i < t.data.size(); ++i) diff += std::abs(double(t.data[i]) - double(t2.data[i]));
        });
  });
  REQUIRE(diff > 0.0);
}

TEST_CASE("function pools return stored descriptors; prompt pools stored prompts", "[training]") {
  TrainConfig cfg;
  cfg.class_cfg = {FunctionClass::linear, 6};
  cfg.curriculum = false;

  SECTION("singleton function pool repeats the descriptor") {
    cfg.pool = PoolConfig::parse("functions:1");
    const Pool pool = make_pool(cfg, Rng::from_seed(4));
    REQUIRE(pool.functions.size() == 1);
    const Vec w0 = std::get<LinearFn>(pool.functions[0]).w;
    Rng rng = Rng::from_seed(5);
    for (int i = 0; i < 20; ++i) {
      Rng r = rng.child(static_cast<uint64_t>(i));
      const Prompt p = draw_training_prompt(cfg, pool, 5, 6, r);
      REQUIRE(std::get<LinearFn>(p.descriptor).w == w0);
    }
  }
  SECTION("prompt pool membership over many draws") {
    cfg.pool = PoolConfig::parse("prompts:100");
    const Pool pool = make_pool(cfg, Rng::from_seed(6));
    REQUIRE(pool.prompts.size() == 100);
    Rng rng = Rng::from_seed(7);
    for (int i = 0; i < 10'000; ++i) {
      Rng r = rng.child(static_cast<uint64_t>(i));
      const Prompt p = draw_training_prompt(cfg, pool, 13, 6, r);
      bool member = false;
      for (const Prompt& q : pool.prompts)
        if (q.inputs == p.inputs && q.targets == p.targets) {
          member = true;
          break;
        }
      REQUIRE(member);
    }
  }
  SECTION("prompt pool rejects curriculum") {
    cfg.pool = PoolConfig::parse("prompts:10");
    cfg.curriculum = true;
    REQUIRE_THROWS_AS(make_pool(cfg, Rng::from_seed(8)), ConfigError);
    REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("taped loss agrees with prefix_loss recomputed offline", "[training]") {
  TrainConfig cfg;
  cfg.class_cfg = {FunctionClass::linear, 4};
  cfg.model_preset = "tiny";
  cfg.steps = 1;
  cfg.batch = 3;
  cfg.curriculum = false;
  cfg.seed = 11;
  const TrainResult res = train(cfg);

  // rebuild the same batch the loop used (data stream, step 0)
  const Rng root = Rng::from_seed(cfg.seed);
  auto before = TransformerParams<float>::create(cfg.model(), root.stream("init"));
  Rng step_rng = root.stream("data").child(0);
  const Pool pool;
  double loss = 0;
  for (int b = 0; b < cfg.batch; ++b) {
    Rng r = step_rng.child(static_cast<uint64_t>(b));
    const Prompt p = draw_training_prompt(cfg, pool, 9, 4, r);
    Vec preds = model_forward(before, p);
    // float pipeline: cast predictions and targets identically
    Vec tf(p.m());
    for (int i = 0; i < p.m(); ++i) tf[i] = static_cast<float>(p.targets[i]);
    loss += prefix_loss(preds, tf);
  }
  loss /= cfg.batch;
  REQUIRE(res.losses[0] == Catch::Approx(loss).epsilon(1e-5));
}

TEST_CASE("metrics stream is reproducible and complete", "[training]") {
  const std::string dir1 = (std::filesystem::temp_directory_path() / "icl_run_a").string();
  const std::string dir2 = (std::filesystem::temp_directory_path() / "icl_run_b").string();
  TrainConfig cfg;
  cfg.class_cfg = {FunctionClass::linear, 3};
  cfg.model_preset = "tiny";
  cfg.steps = 12;
  cfg.batch = 2;
  cfg.curriculum = false;
  cfg.seed = 9;
  cfg.out_dir = dir1;
  const TrainResult r1 = train(cfg);
  cfg.out_dir = dir2;
  const TrainResult r2 = train(cfg);
  REQUIRE(r1.losses == r2.losses);

  auto metric_lines = [](const std::string& dir) {
    std::ifstream in(dir + "/metrics.jsonl");
    std::vector<nlohmann::json> lines;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
    return lines;
  };
  const auto l1 = metric_lines(dir1), l2 = metric_lines(dir2);
  REQUIRE(l1.size() == 12);
  REQUIRE(l2.size() == 12);
  for (size_t i = 0; i < l1.size(); ++i) {
    // bitwise identity of everything except the timing field
    REQUIRE(l1[i].at("step") == l2[i].at("step"));
    REQUIRE(l1[i].at("loss").dump() == l2[i].at("loss").dump());
    REQUIRE(l1[i].at("d_cur") == l2[i].at("d_cur"));
    REQUIRE(l1[i].at("k_cur") == l2[i].at("k_cur"));
    REQUIRE(l1[i].contains("wallclock"));
  }
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("training a tiny model on d=5 linear reduces the loss toward the Bayes floor", "[training][slow]") {
  // The stated smoke target of a 10x reduction is unreachable: with m = 11
  // noiseless pairs the mean prefix loss is floored at
  // (1/11) * sum_i max(d - i, 0) = 15/11 ~ 1.36 while the initial loss is
  // ~d = 5, capping the reduction at ~3.7x. Asserted instead: >= 2x
  // reduction and a final smoothed loss within 1.8x of the floor.
  TrainConfig cfg;
  cfg.class_cfg = {FunctionClass::linear, 5};
  cfg.model_preset = "tiny";
  cfg.steps = 5000;
  cfg.batch = 64;
  cfg.lr = 1e-4;
  cfg.curriculum = false;
  cfg.seed = 17;
  const TrainResult res = train(cfg);
  auto avg = [&](int64_t from, int64_t to) {
    double s = 0;
    for (int64_t i = from; i < to; ++i) s += res.losses[static_cast<size_t>(i)];
    return s / static_cast<double>(to - from);
  };
  const double start = avg(0, 10);  // step-10 moving average
  const double final_loss = avg(cfg.steps - 100, cfg.steps);
  const double bayes_floor = 15.0 / 11.0;
  INFO("start=" << start << " final=" << final_loss << " floor=" << bayes_floor);
  REQUIRE(final_loss < start / 2.0);
  REQUIRE(final_loss < 1.8 * bayes_floor);
}

TEST_CASE("a singleton function pool is learned to near-zero loss", "[training][slow]") {
  TrainConfig cfg;
  cfg.class_cfg = {FunctionClass::linear, 5};
  cfg.model_preset = "tiny";
  cfg.steps = 2000;
  cfg.batch = 64;
  cfg.lr = 1e-4;
  cfg.curriculum = false;
  cfg.pool = PoolConfig::parse("functions:1");
  cfg.seed = 21;
  const TrainResult res = train(cfg);
  double tail = 0;
  for (int64_t i = cfg.steps - 50; i < cfg.steps; ++i) tail += res.losses[static_cast<size_t>(i)];
  tail /= 50;
  REQUIRE(tail < 0.05);
}
