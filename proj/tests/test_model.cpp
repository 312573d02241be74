#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "icl/model.hpp"

using namespace icl;

namespace {

Prompt random_prompt(int k, int d, uint64_t seed) {
  Rng rng = Rng::from_seed(seed);
  return sample_prompt(ClassConfig{FunctionClass::linear, d}, DistShiftConfig{}, k, d, rng);
}

}  // namespace

TEST_CASE("prompt encoding pads and interleaves", "[model]") {
  Prompt p;
  p.inputs.resize(1, 2);
  p.inputs << 1.0, 2.0;
  p.targets = Vec::Constant(1, 7.0);
  p.descriptor = LinearFn{Vec::Zero(2)};
  const Tensor<float> enc = encode_prompt<float>(p, 4);
  REQUIRE(enc.shape == std::vector<int64_t>{2, 4});
  REQUIRE(enc(0, 0) == 1.0f);
  REQUIRE(enc(0, 1) == 2.0f);
  REQUIRE(enc(0, 2) == 0.0f);
  REQUIRE(enc(0, 3) == 0.0f);
  REQUIRE(enc(1, 0) == 7.0f);
  REQUIRE(enc(1, 1) == 0.0f);
  REQUIRE_THROWS_AS(encode_prompt<float>(p, 1), ConfigError);
}

TEST_CASE("encoding produces 2m rows with targets on odd rows", "[model]") {
  const Prompt p = random_prompt(9, 6, 3);
  const Tensor<float> enc = encode_prompt<float>(p, 8);
  REQUIRE(enc.rows() == 2 * p.m());
  for (int i = 0; i < p.m(); ++i) REQUIRE(enc(2 * i + 1, 0) == static_cast<float>(p.targets[i]));
}

TEST_CASE("zero read-out vector means zero predictions", "[model]") {
  auto params = TransformerParams<float>::create(ModelConfig::tiny(5, 11), Rng::from_seed(1));
  for (auto& v : params.read_out.data) v = 0.0f;
  const Prompt p = random_prompt(6, 5, 4);
  const Vec preds = model_forward(params, p);
  REQUIRE(preds.size() == p.m());
  for (int i = 0; i < preds.size(); ++i) REQUIRE(preds[i] == 0.0);
}

TEST_CASE("freshly initialized standard model produces finite predictions", "[model]") {
  auto params = TransformerParams<float>::create(ModelConfig::standard(20, 41), Rng::from_seed(2));
  const Prompt p = random_prompt(40, 20, 5);
  const Vec preds = model_forward(params, p);
  REQUIRE(preds.size() == 41);
  for (int i = 0; i < preds.size(); ++i) REQUIRE(std::isfinite(preds[i]));
}

TEST_CASE("forward is a pure function of parameters and prompt", "[model]") {
  auto params = TransformerParams<float>::create(ModelConfig::tiny(8, 17), Rng::from_seed(3));
  const Prompt p = random_prompt(10, 8, 6);
  const Vec a = model_forward(params, p);
  const Vec b = model_forward(params, p);
  REQUIRE(a == b);
}

TEST_CASE("batched forward matches per-prompt forward", "[model]") {
  auto params = TransformerParams<float>::create(ModelConfig::tiny(6, 13), Rng::from_seed(4));
  std::vector<Prompt> prompts;
  std::vector<const Prompt*> ptrs;
  for (int i = 0; i < 7; ++i) prompts.push_back(random_prompt(5, 6, 100 + static_cast<uint64_t>(i)));
  for (const auto& p : prompts) ptrs.push_back(&p);
  const Mat batch = model_forward_batch(params, ptrs);
  for (size_t i = 0; i < prompts.size(); ++i) {
    const Vec single = model_forward(params, prompts[i]);
    for (int j = 0; j < single.size(); ++j)
      REQUIRE(batch(static_cast<Eigen::Index>(i), j) == Catch::Approx(single[j]).margin(1e-6));
  }
}

TEST_CASE("causality: later pairs cannot influence earlier predictions", "[model]") {
  auto params = TransformerParams<float>::create(ModelConfig::tiny(8, 17), Rng::from_seed(5));
  Rng rng = Rng::from_seed(77);
  for (int trial = 0; trial < 20; ++trial) {
    Prompt p = random_prompt(10, 8, 1000 + static_cast<uint64_t>(trial));
    const Vec before = model_forward(params, p);
    const int i = 2 + static_cast<int>(rng.uniform_index(4));       // prediction index (1-based)
    const int j = i + 1 + static_cast<int>(rng.uniform_index(4));   // perturbed pair > i
    Prompt q = p;
    for (int c = 0; c < q.d(); ++c) q.inputs(j - 1, c) = 100.0 * rng.normal();
    q.targets[j - 1] = 1000.0;
    const Vec after = model_forward(params, q);
    for (int t = 1; t <= i; ++t) REQUIRE(std::abs(after[t - 1] - before[t - 1]) <= 1e-6);
  }
}

TEST_CASE("y-position outputs are never exposed", "[model]") {
  // The public surface returns exactly m values, one per x position.
  auto params = TransformerParams<float>::create(ModelConfig::tiny(5, 11), Rng::from_seed(6));
  const Prompt p = random_prompt(7, 5, 8);
  REQUIRE(model_forward(params, p).size() == p.m());
}

TEST_CASE("parameter counts match the published presets", "[model]") {
  // Small and Standard match to well under 10%. Tiny's true GPT-2-family
  // count at these sizes is ~0.157M, which the source rounds to 0.2M; we
  // assert the one-decimal rounding band instead of a strict 10%.
  const auto tiny = TransformerParams<float>::create(ModelConfig::tiny(20, 41), Rng::from_seed(7));
  const auto small = TransformerParams<float>::create(ModelConfig::small(20, 41), Rng::from_seed(7));
  const auto standard = TransformerParams<float>::create(ModelConfig::standard(20, 41), Rng::from_seed(7));
  REQUIRE(std::abs(static_cast<double>(small.param_count()) - 1.2e6) / 1.2e6 < 0.10);
  REQUIRE(std::abs(static_cast<double>(standard.param_count()) - 9.5e6) / 9.5e6 < 0.10);
  REQUIRE(tiny.param_count() >= 150'000);
  REQUIRE(tiny.param_count() < 250'000);
}

TEST_CASE("input gradient matches finite differences in 32-bit", "[model]") {
  auto params = TransformerParams<float>::create(ModelConfig::tiny(5, 11), Rng::from_seed(8));
  const Prompt p = random_prompt(6, 5, 9);
  const int i = p.m();
  const Vec g = input_gradient(params, p, i);
  REQUIRE(g.size() == p.d());
  const double h = 2e-2;
  Vec fd(p.d());
  for (int c = 0; c < p.d(); ++c) {
    Prompt plus = p, minus = p;
    plus.inputs(i - 1, c) += h;
    minus.inputs(i - 1, c) -= h;
    fd[c] = (model_forward(params, plus)[i - 1] - model_forward(params, minus)[i - 1]) / (2 * h);
  }
  REQUIRE((fd - g).norm() / g.norm() < 1e-3);
  REQUIRE_THROWS_AS(input_gradient(params, p, 0), ConfigError);
  REQUIRE_THROWS_AS(input_gradient(params, p, p.m() + 1), ConfigError);
}

TEST_CASE("context and dimension limits are enforced", "[model]") {
  auto params = TransformerParams<float>::create(ModelConfig::tiny(5, 4), Rng::from_seed(9));
  const Prompt too_long = random_prompt(4, 5, 10);  // 5 pairs > max_pairs 4
  REQUIRE_THROWS_AS(model_forward(params, too_long), ConfigError);
  const Prompt too_wide = random_prompt(2, 6, 11);
  REQUIRE_THROWS_AS(model_forward(params, too_wide), ConfigError);
}

TEST_CASE("model save/load round trips through the checkpoint format", "[model]") {
  auto params = TransformerParams<float>::create(ModelConfig::tiny(5, 11), Rng::from_seed(12));
  const std::string path = (std::filesystem::temp_directory_path() / "icl_model_ckpt").string();
  params.save(path, {{"step", 7}});
  auto loaded = TransformerParams<float>::load(path);
  REQUIRE(loaded.cfg.embed_dim == params.cfg.embed_dim);
  const Prompt p = random_prompt(6, 5, 13);
  REQUIRE(model_forward(params, p) == model_forward(loaded, p));
  std::remove(path.c_str());
}
