#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "icl/prompts.hpp"

using namespace icl;

namespace {
const ClassConfig kLinear20{FunctionClass::linear, 20};
}

TEST_CASE("standard prompts: shape and mean squared row norm", "[prompts]") {
  Rng rng = Rng::from_seed(1);
  double acc = 0;
  int rows = 0;
  for (int i = 0; i < 2000; ++i) {
    Rng r = rng.child(static_cast<uint64_t>(i));
    const Prompt p = sample_prompt(kLinear20, DistShiftConfig{}, 40, 20, r);
    REQUIRE(p.inputs.rows() == 41);
    REQUIRE(p.inputs.cols() == 20);
    acc += p.inputs.rowwise().squaredNorm().sum();
    rows += 41;
  }
  REQUIRE(std::abs(acc / rows - 20.0) < 1.0);
}

TEST_CASE("curriculum zeroing kills the trailing coordinates", "[prompts]") {
  Rng rng = Rng::from_seed(2);
  const Prompt p = sample_prompt(kLinear20, DistShiftConfig{}, 10, 5, rng);
  for (int i = 0; i < p.m(); ++i)
    for (int j = 5; j < 20; ++j) REQUIRE(p.inputs(i, j) == 0.0);
  for (int i = 0; i < p.m(); ++i) REQUIRE(p.inputs.row(i).head(5).cwiseAbs().sum() > 0.0);
}

TEST_CASE("noisy prompts add unit-variance label noise at d=20", "[prompts]") {
  Rng rng = Rng::from_seed(3);
  const DistShiftConfig noisy = DistShiftConfig::parse("noisy");
  double acc = 0;
  int n = 0;
  for (int i = 0; i < 3000; ++i) {
    Rng r = rng.child(static_cast<uint64_t>(i));
    const Prompt p = sample_prompt(kLinear20, noisy, 40, 20, r);
    REQUIRE(p.noise_sd == Catch::Approx(1.0));  // sqrt(d/20) at d=20
    for (int j = 0; j < p.m(); ++j) {
      const double clean = evaluate_function(p.descriptor, p.inputs.row(j).transpose());
      const double eps = p.targets[j] - clean;
      acc += eps * eps;
      ++n;
    }
  }
  REQUIRE(std::abs(acc / n - 1.0) < 0.05);
}

TEST_CASE("skewed covariance: eigenvalue ratio and trace", "[prompts]") {
  Rng rng = Rng::from_seed(4);
  // one call shares one eigenbasis, so the empirical covariance is estimable
  const Mat x = shifted_inputs(DistShiftConfig::parse("skewed"), 100'000 - 1, 20, rng);
  const Mat cov = x.transpose() * x / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  const Vec ev = eig.eigenvalues().reverse();
  REQUIRE(std::abs(ev[0] / ev[1] - 4.0) < 0.2);
  REQUIRE(std::abs(cov.trace() - 20.0) < 0.4);
}

TEST_CASE("renormalized variants keep E||x||^2 = d", "[prompts]") {
  const int d = 20;
  Rng rng = Rng::from_seed(5);
  for (const char* name : {"skewed", "subspace:10", "orthant", "duplicate_query"}) {
    const DistShiftConfig cfg = DistShiftConfig::parse(name);
    double acc = 0;
    int n = 0;
    for (int i = 0; i < 3000; ++i) {
      Rng r = rng.child(static_cast<uint64_t>(i));
      const Mat x = shifted_inputs(cfg, 9, d, r);
      acc += x.rowwise().squaredNorm().sum();
      n += static_cast<int>(x.rows());
    }
    INFO(name);
    REQUIRE(std::abs(acc / n - d) / d < 0.02);
  }
}

TEST_CASE("orthogonal query is orthogonal to every example", "[prompts]") {
  Rng rng = Rng::from_seed(6);
  const Mat x = shifted_inputs(DistShiftConfig::parse("orthogonal_query"), 19, 20, rng);
  for (int i = 0; i < 19; ++i) REQUIRE(std::abs(x.row(19).dot(x.row(i))) < 1e-6);
  // expected squared norm restored by the sqrt(d/(d-k)) factor
  double acc = 0;
  for (int i = 0; i < 2000; ++i) {
    Rng r = rng.child(static_cast<uint64_t>(i));
    acc += shifted_inputs(DistShiftConfig::parse("orthogonal_query"), 10, 20, r).row(10).squaredNorm();
  }
  REQUIRE(std::abs(acc / 2000 - 20.0) / 20.0 < 0.05);
  REQUIRE_THROWS_AS(shifted_inputs(DistShiftConfig::parse("orthogonal_query"), 20, 20, rng), ConfigError);
}

TEST_CASE("orthant prompts share signs across in-context rows", "[prompts]") {
  Rng rng = Rng::from_seed(7);
  for (int i = 0; i < 200; ++i) {
    Rng r = rng.child(static_cast<uint64_t>(i));
    const Mat x = shifted_inputs(DistShiftConfig::parse("orthant"), 15, 20, r);
    for (int j = 0; j < 20; ++j) {
      const double s = x(0, j) > 0 ? 1.0 : -1.0;
      for (int row = 1; row < 15; ++row) REQUIRE(x(row, j) * s > 0.0);
    }
  }
}

TEST_CASE("duplicate query copies an example and its clean target", "[prompts]") {
  Rng rng = Rng::from_seed(8);
  for (int i = 0; i < 100; ++i) {
    Rng r = rng.child(static_cast<uint64_t>(i));
    const Prompt p = sample_prompt(kLinear20, DistShiftConfig::parse("duplicate_query"), 10, 20, r);
    int match = -1;
    for (int j = 0; j < 10; ++j)
      if ((p.inputs.row(j) - p.inputs.row(10)).norm() == 0.0) match = j;
    REQUIRE(match >= 0);
    REQUIRE(p.targets[10] == p.targets[match]);
  }
  REQUIRE_THROWS_AS(sample_prompt(kLinear20, DistShiftConfig::parse("duplicate_query"), 0, 20, rng), ConfigError);
}

TEST_CASE("subspace inputs have rank at most dim", "[prompts]") {
  Rng rng = Rng::from_seed(9);
  const Mat x = shifted_inputs(DistShiftConfig::parse("subspace:10"), 39, 20, rng);
  Eigen::JacobiSVD<Mat> svd(x);
  const Vec sv = svd.singularValues();
  for (int i = 10; i < sv.size(); ++i) REQUIRE(sv[i] < 1e-6 * sv[0]);
  REQUIRE_THROWS_AS(shifted_inputs(DistShiftConfig::parse("subspace:21"), 5, 20, rng), ConfigError);
}

TEST_CASE("scale_x multiplies inputs without renormalization", "[prompts]") {
  Rng rng = Rng::from_seed(10);
  double acc = 0;
  int n = 0;
  for (int i = 0; i < 2000; ++i) {
    Rng r = rng.child(static_cast<uint64_t>(i));
    const Mat x = shifted_inputs(DistShiftConfig::parse("scale_x:2"), 4, 20, r);
    acc += x.rowwise().squaredNorm().sum();
    n += static_cast<int>(x.rows());
  }
  REQUIRE(std::abs(acc / n - 80.0) / 80.0 < 0.05);  // 4 * d
}

TEST_CASE("scale_function scales linear weights and errors otherwise", "[prompts]") {
  Vec w = Vec::Zero(4);
  w[0] = 1.0;
  const FunctionDescriptor f = LinearFn{w};
  const FunctionDescriptor same = scale_function(f, 1.0);
  REQUIRE(std::get<LinearFn>(same).w == w);
  Vec e1 = Vec::Zero(4);
  e1[0] = 1.0;
  REQUIRE(evaluate_function(scale_function(f, 2.0), e1) == Catch::Approx(2.0));
  TreeFn tree;
  REQUIRE_THROWS_AS(scale_function(FunctionDescriptor{tree}, 2.0), ConfigError);
}

TEST_CASE("scale_w targets have second moment c^2 d", "[prompts][slow]") {
  Rng rng = Rng::from_seed(11);
  const DistShiftConfig cfg = DistShiftConfig::parse("scale_w:3");
  double acc = 0;
  int n = 0;
  for (int i = 0; i < 50'000; ++i) {
    Rng r = rng.child(static_cast<uint64_t>(i));
    const Prompt p = sample_prompt(kLinear20, cfg, 1, 20, r);
    acc += p.targets[0] * p.targets[0];
    ++n;
  }
  REQUIRE(std::abs(acc / n - 180.0) / 180.0 < 0.03);  // 9 * d
}

TEST_CASE("prompts are deterministic given (seed, configs)", "[prompts]") {
  Rng a = Rng::from_seed(12345).stream("eval").child(7);
  Rng b = Rng::from_seed(12345).stream("eval").child(7);
  const Prompt pa = sample_prompt(kLinear20, DistShiftConfig::parse("skewed"), 12, 20, a);
  const Prompt pb = sample_prompt(kLinear20, DistShiftConfig::parse("skewed"), 12, 20, b);
  REQUIRE(pa.inputs == pb.inputs);
  REQUIRE(pa.targets == pb.targets);
}

TEST_CASE("prompt sets round trip through the record stream", "[prompts]") {
  Rng rng = Rng::from_seed(13);
  std::vector<Prompt> set;
  for (int i = 0; i < 5; ++i) {
    Rng r = rng.child(static_cast<uint64_t>(i));
    set.push_back(sample_prompt(kLinear20, DistShiftConfig{}, 6, 20, r));
  }
  const std::string stem = (std::filesystem::temp_directory_path() / "icl_prompt_set").string();
  save_prompts(stem, set, {{"purpose", "test"}});
  const std::vector<Prompt> loaded = load_prompts(stem);
  REQUIRE(loaded.size() == set.size());
  for (size_t i = 0; i < set.size(); ++i) {
    REQUIRE(loaded[i].m() == set[i].m());
    // stored as f32
    REQUIRE((loaded[i].inputs.cast<float>() - set[i].inputs.cast<float>()).norm() == 0.0f);
    Vec x = set[i].query();
    REQUIRE(evaluate_function(loaded[i].descriptor, x) ==
            Catch::Approx(evaluate_function(set[i].descriptor, x)).margin(1e-12));
  }
  std::remove((stem + ".bin").c_str());
  std::remove((stem + ".json").c_str());
}
