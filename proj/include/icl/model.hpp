#pragma once

// Decoder-only transformer (GPT-2 recipe: pre-layer-norm residual blocks,
// learned absolute positions, GELU MLP with 4x expansion) applied to the
// interleaved (x_1, y_1, x_2, y_2, ...) prompt encoding. One forward pass
// yields a prediction for every prompt prefix; predictions are read at the
// x positions, the y positions are never exposed.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icl/checkpoint.hpp"
#include "icl/errors.hpp"
#include "icl/prompts.hpp"
#include "icl/rng.hpp"
#include "icl/tape.hpp"
#include "icl/tensor.hpp"

namespace icl {

struct ModelConfig {
  int embed_dim = 256;
  int n_layers = 12;
  int n_heads = 8;
  int d_max = 20;
  int max_pairs = 41;
  double dropout = 0.0;  // fixed 0
  std::string preset = "standard";

  int context() const { return 2 * max_pairs; }

  void validate() const {
    if (embed_dim < 1 || n_layers < 1 || n_heads < 1) throw ConfigError("model config: bad sizes");
    if (embed_dim % n_heads != 0) throw ConfigError("model config: embed_dim must be divisible by n_heads");
    if (d_max < 1 || max_pairs < 1) throw ConfigError("model config: bad prompt limits");
    if (dropout != 0.0) throw ConfigError("model config: dropout is fixed at 0");
  }

  static ModelConfig tiny(int d_max, int max_pairs) { return {64, 3, 2, d_max, max_pairs, 0.0, "tiny"}; }
  static ModelConfig small(int d_max, int max_pairs) { return {128, 6, 4, d_max, max_pairs, 0.0, "small"}; }
  static ModelConfig standard(int d_max, int max_pairs) { return {256, 12, 8, d_max, max_pairs, 0.0, "standard"}; }

  static ModelConfig named(const std::string& name, int d_max, int max_pairs) {
    if (name == "tiny") return tiny(d_max, max_pairs);
    if (name == "small") return small(d_max, max_pairs);
    if (name == "standard") return standard(d_max, max_pairs);
    throw ConfigError("unknown model preset: " + name);
  }

  nlohmann::json to_json() const {
    return {{"embed_dim", embed_dim}, {"n_layers", n_layers}, {"n_heads", n_heads},
            {"d_max", d_max},         {"max_pairs", max_pairs}, {"preset", preset}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_max = j.at("d_max").get<int>();
    c.max_pairs = j.at("max_pairs").get<int>();
    c.preset = j.value("preset", "custom");
    c.validate();
    return c;
  }
};

template <class Real>
struct TransformerParams {
  ModelConfig cfg;

  Tensor<Real> read_in_w, read_in_b;  // (e x d_max), (e)
  Tensor<Real> wpe;                   // (context x e)
  struct Layer {
    Tensor<Real> ln1_g, ln1_b;
    Tensor<Real> w_qkv, b_qkv;  // (3e x e), (3e)
    Tensor<Real> w_proj, b_proj;
    Tensor<Real> ln2_g, ln2_b;
    Tensor<Real> w_fc, b_fc;    // (4e x e), (4e)
    Tensor<Real> w_out, b_out;  // (e x 4e), (e)
  };
  std::vector<Layer> layers;
  Tensor<Real> lnf_g, lnf_b;
  Tensor<Real> read_out;  // (e x 1)

  // Visits every parameter in one canonical order; this order defines the
  // initialization draws, the gradient list, and the checkpoint layout.
  template <class Fn>
  void for_each(Fn&& fn) {
    fn("read_in.w", read_in_w);
    fn("read_in.b", read_in_b);
    fn("wpe", wpe);
    for (size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "h" + std::to_string(i) + ".";
      Layer& l = layers[i];
      fn(p + "ln1.g", l.ln1_g);
      fn(p + "ln1.b", l.ln1_b);
      fn(p + "attn.w_qkv", l.w_qkv);
      fn(p + "attn.b_qkv", l.b_qkv);
      fn(p + "attn.w_proj", l.w_proj);
      fn(p + "attn.b_proj", l.b_proj);
      fn(p + "ln2.g", l.ln2_g);
      fn(p + "ln2.b", l.ln2_b);
      fn(p + "mlp.w_fc", l.w_fc);
      fn(p + "mlp.b_fc", l.b_fc);
      fn(p + "mlp.w_proj", l.w_out);
      fn(p + "mlp.b_proj", l.b_out);
    }
    fn("ln_f.g", lnf_g);
    fn("ln_f.b", lnf_b);
    fn("read_out.w", read_out);
  }
  template <class Fn>
  void for_each(Fn&& fn) const {
    const_cast<TransformerParams*>(this)->for_each(
        [&](const std::string& name, Tensor<Real>& t) { fn(name, static_cast<const Tensor<Real>&>(t)); });
  }

  static TransformerParams create(const ModelConfig& cfg, Rng rng) {
    cfg.validate();
    TransformerParams p;
    p.cfg = cfg;
    const int64_t e = cfg.embed_dim;
    p.read_in_w = Tensor<Real>::zeros({e, cfg.d_max});
    p.read_in_b = Tensor<Real>::zeros({e});
    p.wpe = Tensor<Real>::zeros({cfg.context(), e});
    p.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
      l.ln1_g = Tensor<Real>::zeros({e});
      l.ln1_b = Tensor<Real>::zeros({e});
      l.w_qkv = Tensor<Real>::zeros({3 * e, e});
      l.b_qkv = Tensor<Real>::zeros({3 * e});
      l.w_proj = Tensor<Real>::zeros({e, e});
      l.b_proj = Tensor<Real>::zeros({e});
      l.ln2_g = Tensor<Real>::zeros({e});
      l.ln2_b = Tensor<Real>::zeros({e});
      l.w_fc = Tensor<Real>::zeros({4 * e, e});
      l.b_fc = Tensor<Real>::zeros({4 * e});
      l.w_out = Tensor<Real>::zeros({e, 4 * e});
      l.b_out = Tensor<Real>::zeros({e});
    }
    p.lnf_g = Tensor<Real>::zeros({e});
    p.lnf_b = Tensor<Real>::zeros({e});
    p.read_out = Tensor<Real>::zeros({e, 1});
    p.init(rng);
    return p;
  }

  // normal(0, 0.02) for all weight matrices and position embeddings, zeros
  // for biases, ones for layer-norm gains; residual projections scaled by
  // 1/sqrt(2 * n_layers).
  void init(Rng& rng) {
    const double base_sd = 0.02;
    const double resid_sd = base_sd / std::sqrt(2.0 * cfg.n_layers);
    for_each([&](const std::string& name, Tensor<Real>& t) {
      const bool is_gain = name.ends_with(".g");
      const bool is_bias = name.ends_with(".b") && !is_gain;
      const bool is_resid = name.ends_with("attn.w_proj") || name.ends_with("mlp.w_proj");
      if (is_gain) {
        for (auto& v : t.data) v = Real(1);
      } else if (is_bias) {
        for (auto& v : t.data) v = Real(0);
      } else {
        const double sd = is_resid ? resid_sd : base_sd;
        for (auto& v : t.data) v = static_cast<Real>(sd * rng.normal());
      }
    });
  }

  int64_t param_count() const {
    int64_t n = 0;
    for_each([&](const std::string&, const Tensor<Real>& t) { n += t.numel(); });
    return n;
  }

  std::vector<std::pair<std::string, const Tensor<Real>*>> named_tensors() const {
    std::vector<std::pair<std::string, const Tensor<Real>*>> out;
    for_each([&](const std::string& name, const Tensor<Real>& t) { out.emplace_back(name, &t); });
    return out;
  }

  void save(const std::string& path, const nlohmann::json& extra_meta = {}) const {
    nlohmann::json meta = extra_meta;
    meta["model"] = cfg.to_json();
    save_checkpoint<Real>(path, named_tensors(), meta);
  }

  static TransformerParams load(const std::string& path) {
    CheckpointReader r = CheckpointReader::open(path);
    ModelConfig cfg = ModelConfig::from_json(r.meta.at("model"));
    TransformerParams p = create(cfg, Rng::from_seed(0));
    p.for_each([&](const std::string& name, Tensor<Real>& t) { t = r.template load<Real>(name); });
    return p;
  }
};

// ---------------------------------------------------------------------------
// Prompt encoding: pair (x_i, y_i) becomes two consecutive tokens. x rows
// are zero-padded from d to d_max; y tokens carry the target in coordinate 0.

template <class Real>
Tensor<Real> encode_prompt(const Prompt& prompt, int d_max) {
  if (prompt.d() > d_max) throw ConfigError("encode_prompt: prompt dimension exceeds d_max");
  const int m = prompt.m(), d = prompt.d();
  Tensor<Real> x = Tensor<Real>::zeros({2 * static_cast<int64_t>(m), d_max});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < d; ++j) x(2 * i, j) = static_cast<Real>(prompt.inputs(i, j));
    x(2 * i + 1, 0) = static_cast<Real>(prompt.targets[i]);
  }
  return x;
}

// Stacks a batch of equal-length prompts along the row axis.
template <class Real>
Tensor<Real> encode_prompt_batch(const std::vector<const Prompt*>& prompts, int d_max) {
  if (prompts.empty()) throw ConfigError("encode_prompt_batch: empty batch");
  const int m = prompts[0]->m();
  const int64_t T = 2 * static_cast<int64_t>(m);
  Tensor<Real> x = Tensor<Real>::zeros({static_cast<int64_t>(prompts.size()) * T, d_max});
  for (size_t b = 0; b < prompts.size(); ++b) {
    const Prompt& p = *prompts[b];
    if (p.m() != m) throw ConfigError("encode_prompt_batch: prompts must share length");
    if (p.d() > d_max) throw ConfigError("encode_prompt_batch: prompt dimension exceeds d_max");
    Tensor<Real> one = encode_prompt<Real>(p, d_max);
    std::copy(one.data.begin(), one.data.end(), x.data.begin() + static_cast<int64_t>(b) * T * d_max);
  }
  return x;
}

// Model parameters bound to a tape as leaves, in canonical order.
template <class Real>
struct BoundModel {
  const ModelConfig* cfg = nullptr;
  std::vector<Var> ordered;                  // matches TransformerParams::for_each order
  std::vector<std::string> names;

  Var at(size_t i) const { return ordered[i]; }
};

template <class Real>
BoundModel<Real> bind_model(Tape<Real>& tape, const TransformerParams<Real>& params, bool requires_grad) {
  BoundModel<Real> bm;
  bm.cfg = &params.cfg;
  params.for_each([&](const std::string& name, const Tensor<Real>& t) {
    Tensor<Real> copy = t;
    copy.requires_grad = requires_grad;
    bm.ordered.push_back(tape.leaf(std::move(copy)));
    bm.names.push_back(name);
  });
  return bm;
}

// Forward graph over an encoded batch. x holds B sequences of seq_len
// tokens; returns the (B * seq_len/2) x 1 predictions read at x positions.
template <class Real>
Var model_predictions(Tape<Real>& tape, const BoundModel<Real>& bm, Var x, int64_t seq_len) {
  const ModelConfig& cfg = *bm.cfg;
  const int64_t n = tape.value(x).rows();
  if (seq_len % 2 != 0 || seq_len <= 0) throw ConfigError("model: sequence length must be even");
  if (seq_len > cfg.context()) throw ConfigError("model: sequence exceeds the context length");
  if (n % seq_len != 0) throw ConfigError("model: rows must be a multiple of seq_len");
  const int64_t B = n / seq_len, e = cfg.embed_dim;

  size_t at = 0;
  auto next = [&]() { return bm.at(at++); };
  const Var read_in_w = next(), read_in_b = next(), wpe = next();

  Var h = tape.add_pos(tape.add_row(tape.matmul(x, read_in_w, false, true), read_in_b), wpe, seq_len);
  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    const Var ln1_g = next(), ln1_b = next(), w_qkv = next(), b_qkv = next(), w_proj = next(), b_proj = next();
    const Var ln2_g = next(), ln2_b = next(), w_fc = next(), b_fc = next(), w_out = next(), b_out = next();
    Var a = tape.add_row(tape.mul_row(tape.layer_norm(h), ln1_g), ln1_b);
    Var qkv = tape.add_row(tape.matmul(a, w_qkv, false, true), b_qkv);
    Var q = tape.slice_cols(qkv, 0, e);
    Var k = tape.slice_cols(qkv, e, 2 * e);
    Var v = tape.slice_cols(qkv, 2 * e, 3 * e);
    Var att = tape.attention_causal(q, k, v, cfg.n_heads, seq_len);
    h = tape.add(h, tape.add_row(tape.matmul(att, w_proj, false, true), b_proj));
    Var m = tape.add_row(tape.mul_row(tape.layer_norm(h), ln2_g), ln2_b);
    Var ff = tape.gelu(tape.add_row(tape.matmul(m, w_fc, false, true), b_fc));
    h = tape.add(h, tape.add_row(tape.matmul(ff, w_out, false, true), b_out));
  }
  const Var lnf_g = next(), lnf_b = next(), read_out = next();
  h = tape.add_row(tape.mul_row(tape.layer_norm(h), lnf_g), lnf_b);

  std::vector<int64_t> x_positions;
  x_positions.reserve(static_cast<size_t>(B * seq_len / 2));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < seq_len; t += 2) x_positions.push_back(b * seq_len + t);
  Var hx = tape.gather_rows(h, std::move(x_positions));
  return tape.matmul(hx, read_out);  // (B*m) x 1
}

// Predictions for every prefix of one prompt.
template <class Real>
Vec model_forward(const TransformerParams<Real>& params, const Prompt& prompt) {
  Tape<Real> tape;
  BoundModel<Real> bm = bind_model(tape, params, false);
  Var x = tape.leaf(encode_prompt<Real>(prompt, params.cfg.d_max));
  Var preds = model_predictions(tape, bm, x, 2 * prompt.m());
  const Tensor<Real>& v = tape.value(preds);
  if (!v.all_finite()) throw NumericError("model_forward: non-finite activations");
  Vec out(prompt.m());
  for (int i = 0; i < prompt.m(); ++i) out[i] = static_cast<double>(v.data[static_cast<size_t>(i)]);
  return out;
}

// Batched forward over equal-length prompts; row b of the result holds the
// per-prefix predictions of prompt b. Work is chunked to bound activation
// memory.
template <class Real>
Mat model_forward_batch(const TransformerParams<Real>& params, const std::vector<const Prompt*>& prompts) {
  if (prompts.empty()) return Mat(0, 0);
  const int m = prompts[0]->m();
  const int64_t e = params.cfg.embed_dim;
  // ~70 activation tensors of (B * 2m) x e scalars live on the tape; keep a
  // chunk's worth under ~512 MB.
  const int64_t per_prompt = 70 * 2 * static_cast<int64_t>(m) * e * static_cast<int64_t>(sizeof(Real));
  const size_t chunk = std::max<size_t>(1, static_cast<size_t>((int64_t(512) << 20) / per_prompt));
  Mat out(static_cast<Eigen::Index>(prompts.size()), m);
  for (size_t start = 0; start < prompts.size(); start += chunk) {
    const size_t end = std::min(prompts.size(), start + chunk);
    std::vector<const Prompt*> batch(prompts.begin() + static_cast<std::ptrdiff_t>(start),
                                     prompts.begin() + static_cast<std::ptrdiff_t>(end));
    Tape<Real> tape;
    BoundModel<Real> bm = bind_model(tape, params, false);
    Var x = tape.leaf(encode_prompt_batch<Real>(batch, params.cfg.d_max));
    Var preds = model_predictions(tape, bm, x, 2 * m);
    const Tensor<Real>& v = tape.value(preds);
    if (!v.all_finite()) throw NumericError("model_forward_batch: non-finite activations");
    for (size_t b = start; b < end; ++b)
      for (int i = 0; i < m; ++i)
        out(static_cast<Eigen::Index>(b), i) = static_cast<double>(v.data[(b - start) * static_cast<size_t>(m) + static_cast<size_t>(i)]);
  }
  return out;
}

// Gradient of prediction i (1-based) with respect to input x_i, restricted
// to the prompt's live coordinates.
template <class Real>
Vec input_gradient(const TransformerParams<Real>& params, const Prompt& prompt, int i) {
  if (i < 1 || i > prompt.m()) throw ConfigError("input_gradient: index out of range");
  Tape<Real> tape;
  BoundModel<Real> bm = bind_model(tape, params, false);
  Tensor<Real> enc = encode_prompt<Real>(prompt, params.cfg.d_max);
  enc.requires_grad = true;
  Var x = tape.leaf(std::move(enc));
  Var preds = model_predictions(tape, bm, x, 2 * prompt.m());
  Var yi = tape.gather_rows(preds, {static_cast<int64_t>(i - 1)});
  tape.backward(yi);
  Tensor<Real> gx = tape.grad(x);
  Vec out(prompt.d());
  for (int j = 0; j < prompt.d(); ++j) out[j] = static_cast<double>(gx(2 * (i - 1), j));
  return out;
}

}  // namespace icl
