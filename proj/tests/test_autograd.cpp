#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fd_check.hpp"
#include "icl/rng.hpp"
#include "icl/tape.hpp"

using namespace icl;
using icl::testing::fd_check;

namespace {

Tensor<double> randn(Rng& rng, std::vector<int64_t> shape) { return gaussian<double>(rng, std::move(shape)); }

}  // namespace

TEST_CASE("sum of a vector has gradient of ones", "[autograd]") {
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
  x.requires_grad = true;
  Var xv = tape.leaf(x);
  Var s = tape.sum(xv);
  REQUIRE(tape.value(s).data[0] == Catch::Approx(6.0));
  tape.backward(s);
  Tensor<double> g = tape.grad(xv);
  REQUIRE(g.data == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("gradient of a bilinear form w.x", "[autograd]") {
  Tape<double> tape;
  Tensor<double> w = Tensor<double>::from({2}, {2.0, -1.0});
  Tensor<double> x = Tensor<double>::from({2}, {3.0, 4.0});
  x.requires_grad = true;
  Var wv = tape.leaf(w);
  Var xv = tape.leaf(x);
  Var dot = tape.sum(tape.mul(wv, xv));
  REQUIRE(tape.value(dot).data[0] == Catch::Approx(2.0));
  tape.backward(dot);
  Tensor<double> g = tape.grad(xv);
  REQUIRE(g.data[0] == Catch::Approx(2.0));
  REQUIRE(g.data[1] == Catch::Approx(-1.0));
}

TEST_CASE("every primitive matches central finite differences", "[autograd]") {
  Rng rng = Rng::from_seed(2024);
  const double tol = 1e-4;

  SECTION("add / sub / mul / scale") {
    auto a = randn(rng, {3, 4}), b = randn(rng, {3, 4});
    auto rep = fd_check(
        [](Tape<double>& t, const std::vector<Var>& v) {
          return t.sum(t.scale(t.mul(t.add(v[0], v[1]), t.sub(v[0], v[1])), 0.7));
        },
        {a, b});
    REQUIRE(rep.max_rel_error < tol);
  }
  SECTION("add_row / mul_row") {
    auto a = randn(rng, {4, 5}), v1 = randn(rng, {5}), v2 = randn(rng, {5});
    auto rep = fd_check(
        [](Tape<double>& t, const std::vector<Var>& v) {
          return t.sum(t.mul_row(t.add_row(v[0], v[1]), v[2]));
        },
        {a, v1, v2});
    REQUIRE(rep.max_rel_error < tol);
  }
  SECTION("matmul, all transpose combinations") {
    auto a = randn(rng, {3, 4}), b = randn(rng, {4, 5});
    auto at = randn(rng, {4, 3}), bt = randn(rng, {5, 4});
    // weight the output so the gradient is not uniform
    auto with_weights = [&](Tape<double>& t, Var prod) {
      Rng wr = Rng::from_seed(5);
      Tensor<double> w = gaussian<double>(wr, t.value(prod).shape);
      return t.sum(t.mul(prod, t.leaf(std::move(w))));
    };
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return with_weights(t, t.matmul(v[0], v[1])); },
                     {a, b}).max_rel_error < tol);
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return with_weights(t, t.matmul(v[0], v[1], false, true)); },
                     {a, bt}).max_rel_error < tol);
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return with_weights(t, t.matmul(v[0], v[1], true, false)); },
                     {at, b}).max_rel_error < tol);
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return with_weights(t, t.matmul(v[0], v[1], true, true)); },
                     {at, bt}).max_rel_error < tol);
  }
  SECTION("softmax and causal softmax") {
    auto a = randn(rng, {5, 5});
    auto weight = [&](Tape<double>& t, Var y) {
      Rng wr = Rng::from_seed(6);
      Tensor<double> w = gaussian<double>(wr, t.value(y).shape);
      return t.sum(t.mul(y, t.leaf(std::move(w))));
    };
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return weight(t, t.softmax(v[0])); }, {a})
                .max_rel_error < tol);
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return weight(t, t.softmax_causal(v[0])); }, {a})
                .max_rel_error < tol);
  }
  SECTION("layer norm and activations") {
    auto a = randn(rng, {4, 6});
    auto weight = [&](Tape<double>& t, Var y) {
      Rng wr = Rng::from_seed(7);
      Tensor<double> w = gaussian<double>(wr, t.value(y).shape);
      return t.sum(t.mul(y, t.leaf(std::move(w))));
    };
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return weight(t, t.layer_norm(v[0])); }, {a})
                .max_rel_error < tol);
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return weight(t, t.gelu(v[0])); }, {a})
                .max_rel_error < tol);
    // keep values away from the relu kink where FD is undefined
    Tensor<double> r = randn(rng, {4, 6});
    for (auto& x : r.data)
      if (std::abs(x) < 0.05) x += 0.2;
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return weight(t, t.relu(v[0])); }, {r})
                .max_rel_error < tol);
  }
  SECTION("slicing, gathering, concatenation") {
    auto a = randn(rng, {6, 4}), b = randn(rng, {6, 4});
    auto weight = [&](Tape<double>& t, Var y) {
      Rng wr = Rng::from_seed(8);
      Tensor<double> w = gaussian<double>(wr, t.value(y).shape);
      return t.sum(t.mul(y, t.leaf(std::move(w))));
    };
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return weight(t, t.slice_rows(v[0], 1, 4)); }, {a})
                .max_rel_error < tol);
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return weight(t, t.slice_cols(v[0], 1, 3)); }, {a})
                .max_rel_error < tol);
    REQUIRE(fd_check(
                [&](Tape<double>& t, const std::vector<Var>& v) {
                  return weight(t, t.gather_rows(v[0], {0, 2, 2, 5}));  // repeated index: scatter must add
                },
                {a})
                .max_rel_error < tol);
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return weight(t, t.concat(v[0], v[1], 0)); },
                     {a, b}).max_rel_error < tol);
    REQUIRE(fd_check([&](Tape<double>& t, const std::vector<Var>& v) { return weight(t, t.concat(v[0], v[1], 1)); },
                     {a, b}).max_rel_error < tol);
  }
  SECTION("positional add") {
    auto h = randn(rng, {6, 4});  // two sequences of length 3
    auto p = randn(rng, {5, 4});
    auto rep = fd_check(
        [](Tape<double>& t, const std::vector<Var>& v) {
          Rng wr = Rng::from_seed(9);
          Tensor<double> w = gaussian<double>(wr, {6, 4});
          return t.sum(t.mul(t.add_pos(v[0], v[1], 3), t.leaf(std::move(w))));
        },
        {h, p});
    REQUIRE(rep.max_rel_error < tol);
  }
  SECTION("causal attention") {
    const int64_t B = 2, T = 4, e = 6;
    auto q = randn(rng, {B * T, e}), k = randn(rng, {B * T, e}), v = randn(rng, {B * T, e});
    auto rep = fd_check(
        [](Tape<double>& t, const std::vector<Var>& vars) {
          Rng wr = Rng::from_seed(10);
          Tensor<double> w = gaussian<double>(wr, {2 * 4, 6});
          return t.sum(t.mul(t.attention_causal(vars[0], vars[1], vars[2], 2, 4), t.leaf(std::move(w))));
        },
        {q, k, v});
    REQUIRE(rep.max_rel_error < tol);
  }
  SECTION("random composite: matmul -> layernorm -> gelu -> sum") {
    auto a = randn(rng, {4, 3}), b = randn(rng, {3, 5});
    auto rep = fd_check(
        [](Tape<double>& t, const std::vector<Var>& v) {
          return t.sum(t.gelu(t.layer_norm(t.matmul(v[0], v[1]))));
        },
        {a, b});
    REQUIRE(rep.max_rel_error < tol);
  }
}

TEST_CASE("backward is linear in the output", "[autograd]") {
  Rng rng = Rng::from_seed(3);
  Tensor<double> x = randn(rng, {4, 4});
  const double ca = 1.7, cb = -0.4;
  auto grad_of = [&](double wa, double wb) {
    Tape<double> tape;
    Tensor<double> copy = x;
    copy.requires_grad = true;
    Var xv = tape.leaf(copy);
    Var f = tape.sum(tape.gelu(xv));
    Var g = tape.sum(tape.mul(xv, xv));
    Var combo = tape.add(tape.scale(f, wa), tape.scale(g, wb));
    tape.backward(combo);
    return tape.grad(xv);
  };
  Tensor<double> gf = grad_of(1, 0), gg = grad_of(0, 1), gfg = grad_of(ca, cb);
  for (size_t i = 0; i < gfg.data.size(); ++i)
    REQUIRE(gfg.data[i] == Catch::Approx(ca * gf.data[i] + cb * gg.data[i]).margin(1e-10));
}

TEST_CASE("softmax rows sum to one; layer norm is standardized", "[autograd]") {
  Rng rng = Rng::from_seed(17);
  Tape<double> tape;
  Var x = tape.leaf(randn(rng, {40, 16}));
  const Tensor<double>& sm = tape.value(tape.softmax(x));
  for (int64_t r = 0; r < 40; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 16; ++c) s += sm(r, c);
    REQUIRE(std::abs(s - 1.0) < 1e-6);
  }
  const Tensor<double>& ln = tape.value(tape.layer_norm(x));
  for (int64_t r = 0; r < 40; ++r) {
    double mu = 0, var = 0;
    for (int64_t c = 0; c < 16; ++c) mu += ln(r, c);
    mu /= 16;
    for (int64_t c = 0; c < 16; ++c) var += (ln(r, c) - mu) * (ln(r, c) - mu);
    var /= 16;
    REQUIRE(std::abs(mu) < 1e-6);
    REQUIRE(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("replaying the tape reproduces recorded values bitwise", "[autograd]") {
  Rng rng = Rng::from_seed(23);
  Tape<double> tape;
  Var a = tape.leaf(randn(rng, {8, 6}));
  Var b = tape.leaf(randn(rng, {6, 6}));
  Var h = tape.matmul(a, b);
  Var att = tape.attention_causal(h, h, h, 2, 4);
  Var out = tape.sum(tape.gelu(tape.layer_norm(att)));
  std::vector<std::vector<double>> before;
  for (Var v : {h, att, out}) before.push_back(tape.value(v).data);
  tape.replay_forward();
  std::vector<std::vector<double>> after;
  for (Var v : {h, att, out}) after.push_back(tape.value(v).data);
  REQUIRE(before == after);
}

TEST_CASE("backward error paths", "[autograd]") {
  Rng rng = Rng::from_seed(29);
  SECTION("non-scalar output is rejected") {
    Tape<double> tape;
    Tensor<double> x = randn(rng, {3, 3});
    x.requires_grad = true;
    Var xv = tape.leaf(x);
    REQUIRE_THROWS_AS(tape.backward(xv), ConfigError);
  }
  SECTION("tensor not on tape") {
    Tape<double> tape;
    REQUIRE_THROWS_AS(tape.value(Var{3}), ConfigError);
  }
  SECTION("gradient for a constant is rejected") {
    Tape<double> tape;
    Var xv = tape.leaf(randn(rng, {2}));
    Var s = tape.sum(xv);
    tape.backward(s);
    REQUIRE_THROWS_AS(tape.grad(xv), ConfigError);
  }
  SECTION("non-finite accumulation raises NumericError") {
    Tape<double> tape;
    Tensor<double> a = randn(rng, {3});
    a.requires_grad = true;
    Tensor<double> b = Tensor<double>::from({3}, {1.0, std::numeric_limits<double>::infinity(), 2.0});
    Var av = tape.leaf(a);
    Var bv = tape.leaf(b);
    Var s = tape.sum(tape.mul(av, bv));
    REQUIRE_THROWS_AS(tape.backward(s), NumericError);
  }
}

TEST_CASE("shape validation on op construction", "[autograd]") {
  Rng rng = Rng::from_seed(31);
  Tape<double> tape;
  Var a = tape.leaf(randn(rng, {3, 4}));
  Var b = tape.leaf(randn(rng, {4, 4}));
  REQUIRE_THROWS_AS(tape.add(a, b), ConfigError);
  REQUIRE_THROWS_AS(tape.matmul(a, a), ConfigError);
  REQUIRE_THROWS_AS(tape.softmax_causal(a), ConfigError);
  REQUIRE_THROWS_AS(tape.slice_rows(a, 2, 9), ConfigError);
  REQUIRE_THROWS_AS(tape.gather_rows(a, {0, 3}), ConfigError);
}
