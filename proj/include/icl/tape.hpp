#pragma once

// Reverse-mode automatic differentiation over a linear tape.
//
// Every operation appends one node holding the result tensor plus the
// operand indices and whatever parameters the primitive needs. Nodes are in
// topological order by construction, so backward() is a single reverse
// sweep and replay_forward() re-executes the recorded computation in place.
//
// Primitives cover what a pre-layer-norm decoder transformer needs: Eigen
// backs the matrix products, everything else is written out here.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "icl/errors.hpp"
#include "icl/tensor.hpp"

namespace icl {

struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

enum class Op : uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  AddRow,
  MulRow,
  MatMul,
  Softmax,
  SoftmaxCausal,
  LayerNorm,
  Gelu,
  Relu,
  SliceRows,
  SliceCols,
  GatherRows,
  Concat,
  Sum,
  AddPos,
  Attention,
};

template <class Real>
class Tape {
 public:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;  // allocated lazily during backward
    Op op = Op::Leaf;
    int a = -1, b = -1;
    // Per-op parameters: slice bounds, transpose flags, head counts, eps...
    int64_t i0 = 0, i1 = 0, i2 = 0;
    double x0 = 0.0;
    std::vector<int64_t> indices;  // GatherRows
    Tensor<Real> aux;              // Attention keeps softmax probabilities
    bool needs_grad = false;
  };

  void reset() { nodes_.clear(); }
  int size() const { return static_cast<int>(nodes_.size()); }
  void reserve(size_t n) { nodes_.reserve(n); }

  const Tensor<Real>& value(Var v) const { return node(v).value; }

  // Gradient of the last backward() output with respect to v. Zero for
  // differentiable tensors the output does not depend on.
  Tensor<Real> grad(Var v) const {
    const Node& n = node(v);
    if (!n.needs_grad) throw ConfigError("tape: gradient requested for a tensor that does not require it");
    if (n.grad.data.empty()) return Tensor<Real>::zeros(n.value.shape);
    return n.grad;
  }

  Var leaf(Tensor<Real> t) {
    Node n;
    n.op = Op::Leaf;
    n.needs_grad = t.requires_grad;
    n.value = std::move(t);
    return push(std::move(n));
  }

  Var add(Var a, Var b) { return binary_same_shape(Op::Add, a, b); }
  Var sub(Var a, Var b) { return binary_same_shape(Op::Sub, a, b); }
  Var mul(Var a, Var b) { return binary_same_shape(Op::Mul, a, b); }

  Var scale(Var a, double c) {
    Node n = make(Op::Scale, a);
    n.x0 = c;
    return push_fwd(std::move(n));
  }

  Var add_row(Var a, Var v) { return rowwise(Op::AddRow, a, v); }
  Var mul_row(Var a, Var v) { return rowwise(Op::MulRow, a, v); }

  // C = op(A) * op(B) with optional transposes.
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
    const Tensor<Real>&A = node(a).value, &B = node(b).value;
    if (A.ndim() > 2 || B.ndim() > 2) throw ConfigError("matmul: operands must be 1-D or 2-D");
    const int64_t am = trans_a ? A.cols() : A.rows(), ak = trans_a ? A.rows() : A.cols();
    const int64_t bk = trans_b ? B.cols() : B.rows(), bn = trans_b ? B.rows() : B.cols();
    if (ak != bk)
      throw ConfigError("matmul: inner dimensions disagree: " + A.shape_str() + " x " + B.shape_str());
    Node n = make(Op::MatMul, a, b);
    n.i0 = trans_a;
    n.i1 = trans_b;
    n.value = Tensor<Real>::zeros({am, bn});
    return push_fwd(std::move(n));
  }

  Var softmax(Var a) {
    require_2d(a, "softmax");
    return push_fwd(make(Op::Softmax, a));
  }

  // Row-wise softmax where row i is supported on columns 0..i.
  Var softmax_causal(Var a) {
    require_2d(a, "softmax_causal");
    if (node(a).value.rows() != node(a).value.cols())
      throw ConfigError("softmax_causal: matrix must be square");
    return push_fwd(make(Op::SoftmaxCausal, a));
  }

  // Row-wise normalization to zero mean / unit variance (no affine part).
  Var layer_norm(Var a, double eps = 1e-5) {
    require_2d(a, "layer_norm");
    Node n = make(Op::LayerNorm, a);
    n.x0 = eps;
    return push_fwd(std::move(n));
  }

  Var gelu(Var a) { return push_fwd(make(Op::Gelu, a)); }
  Var relu(Var a) { return push_fwd(make(Op::Relu, a)); }

  Var slice_rows(Var a, int64_t r0, int64_t r1) {
    require_2d(a, "slice_rows");
    const auto& A = node(a).value;
    if (r0 < 0 || r1 > A.rows() || r0 >= r1) throw ConfigError("slice_rows: bad range");
    Node n = make(Op::SliceRows, a);
    n.i0 = r0;
    n.i1 = r1;
    n.value = Tensor<Real>::zeros({r1 - r0, A.cols()});
    return push_fwd(std::move(n));
  }

  Var slice_cols(Var a, int64_t c0, int64_t c1) {
    require_2d(a, "slice_cols");
    const auto& A = node(a).value;
    if (c0 < 0 || c1 > A.cols() || c0 >= c1) throw ConfigError("slice_cols: bad range");
    Node n = make(Op::SliceCols, a);
    n.i0 = c0;
    n.i1 = c1;
    n.value = Tensor<Real>::zeros({A.rows(), c1 - c0});
    return push_fwd(std::move(n));
  }

  Var gather_rows(Var a, std::vector<int64_t> rows) {
    require_2d(a, "gather_rows");
    const auto& A = node(a).value;
    for (int64_t r : rows)
      if (r < 0 || r >= A.rows()) throw ConfigError("gather_rows: index out of range");
    Node n = make(Op::GatherRows, a);
    n.indices = std::move(rows);
    n.value = Tensor<Real>::zeros({static_cast<int64_t>(n.indices.size()), A.cols()});
    return push_fwd(std::move(n));
  }

  // Concatenate along axis 0 (rows) or 1 (columns).
  Var concat(Var a, Var b, int axis) {
    require_2d(a, "concat");
    require_2d(b, "concat");
    const auto &A = node(a).value, &B = node(b).value;
    if (axis != 0 && axis != 1) throw ConfigError("concat: axis must be 0 or 1");
    if (axis == 0 && A.cols() != B.cols()) throw ConfigError("concat: column counts disagree");
    if (axis == 1 && A.rows() != B.rows()) throw ConfigError("concat: row counts disagree");
    Node n = make(Op::Concat, a, b);
    n.i0 = axis;
    n.value = axis == 0 ? Tensor<Real>::zeros({A.rows() + B.rows(), A.cols()})
                        : Tensor<Real>::zeros({A.rows(), A.cols() + B.cols()});
    return push_fwd(std::move(n));
  }

  Var sum(Var a) {
    Node n = make(Op::Sum, a);
    n.value = Tensor<Real>::zeros({1});
    return push_fwd(std::move(n));
  }

  Var mean(Var a) {
    const int64_t n = node(a).value.numel();
    return scale(sum(a), 1.0 / static_cast<double>(n));
  }

  // h[b*T + t, :] += pos[t, :] for a batch of equal-length sequences.
  Var add_pos(Var h, Var pos, int64_t seq_len) {
    require_2d(h, "add_pos");
    require_2d(pos, "add_pos");
    const auto &H = node(h).value, &P = node(pos).value;
    if (H.cols() != P.cols()) throw ConfigError("add_pos: embedding widths disagree");
    if (seq_len <= 0 || H.rows() % seq_len != 0) throw ConfigError("add_pos: rows not a multiple of seq_len");
    if (P.rows() < seq_len) throw ConfigError("add_pos: sequence longer than the position table");
    Node n = make(Op::AddPos, h, pos);
    n.i0 = seq_len;
    return push_fwd(std::move(n));
  }

  // Multi-head causal self-attention over a batch of equal-length sequences
  // stacked along the row axis (row = b*seq_len + t). Softmax probabilities
  // are kept on the node for the backward pass.
  Var attention_causal(Var q, Var k, Var v, int64_t n_heads, int64_t seq_len) {
    const auto &Q = node(q).value, &K = node(k).value, &V = node(v).value;
    if (!Q.same_shape(K) || !Q.same_shape(V)) throw ConfigError("attention: q/k/v shapes disagree");
    require_2d(q, "attention");
    if (seq_len <= 0 || Q.rows() % seq_len != 0) throw ConfigError("attention: rows not a multiple of seq_len");
    if (n_heads <= 0 || Q.cols() % n_heads != 0) throw ConfigError("attention: width not a multiple of n_heads");
    Node n;
    n.op = Op::Attention;
    n.a = q.idx;
    n.b = k.idx;
    n.i0 = n_heads;
    n.i1 = seq_len;
    n.i2 = v.idx;
    n.needs_grad = node(q).needs_grad || node(k).needs_grad || node(v).needs_grad;
    return push_fwd(std::move(n));
  }

  // Reverse sweep from a scalar output. Gradients of all differentiable
  // ancestors are accumulated; a non-finite value encountered during the
  // accumulation raises NumericError.
  void backward(Var out) {
    Node& o = node(out);
    if (o.value.numel() != 1) throw ConfigError("backward: output must be a scalar");
    for (auto& n : nodes_) {
      n.grad.data.clear();
      n.grad.shape.clear();
    }
    if (!o.needs_grad) return;  // nothing differentiable feeds the output
    touch_grad(out.idx);
    o.grad.data[0] = Real(1);
    for (int i = out.idx; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.needs_grad || n.grad.data.empty() || n.op == Op::Leaf) continue;
      if (!n.grad.all_finite())
        throw NumericError("backward: non-finite gradient at node " + std::to_string(i));
      backward_op(i);
    }
    for (auto& n : nodes_)
      if (n.op == Op::Leaf && !n.grad.data.empty() && !n.grad.all_finite())
        throw NumericError("backward: non-finite gradient accumulated into a leaf");
  }

  // Recompute every non-leaf value from the recorded operands, in order.
  void replay_forward() {
    for (int i = 0; i < size(); ++i)
      if (nodes_[static_cast<size_t>(i)].op != Op::Leaf) forward_op(i);
  }

  Node& node(Var v) {
    if (v.idx < 0 || v.idx >= size()) throw ConfigError("tape: tensor is not on this tape");
    return nodes_[static_cast<size_t>(v.idx)];
  }
  const Node& node(Var v) const {
    if (v.idx < 0 || v.idx >= size()) throw ConfigError("tape: tensor is not on this tape");
    return nodes_[static_cast<size_t>(v.idx)];
  }

 private:
  std::vector<Node> nodes_;

  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MMap = MatMap<Real>;
  using CMap = ConstMatMap<Real>;
  using Arr = Eigen::Array<Real, Eigen::Dynamic, 1>;

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{size() - 1};
  }

  Var push_fwd(Node n) {
    Var v = push(std::move(n));
    forward_op(v.idx);
    return v;
  }

  Node make(Op op, Var a, Var b = Var{}) {
    Node n;
    n.op = op;
    n.a = a.idx;
    n.b = b.idx;
    n.needs_grad = node(a).needs_grad || (b.valid() && node(b).needs_grad);
    return n;
  }

  Var binary_same_shape(Op op, Var a, Var b) {
    if (!node(a).value.same_shape(node(b).value))
      throw ConfigError("elementwise op: shapes disagree: " + node(a).value.shape_str() + " vs " +
                        node(b).value.shape_str());
    return push_fwd(make(op, a, b));
  }

  Var rowwise(Op op, Var a, Var v) {
    require_2d(a, "rowwise op");
    if (node(v).value.ndim() != 1 || node(v).value.numel() != node(a).value.cols())
      throw ConfigError("rowwise op: vector length must match matrix columns");
    return push_fwd(make(op, a, v));
  }

  void require_2d(Var a, const char* what) const {
    if (node(a).value.ndim() != 2) throw ConfigError(std::string(what) + ": expected a 2-D tensor");
  }

  void touch_grad(int i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.data.empty()) n.grad = Tensor<Real>::zeros(n.value.shape);
  }

  Tensor<Real>& gbuf(int i) {
    touch_grad(i);
    return nodes_[static_cast<size_t>(i)].grad;
  }

  static Real gelu_scalar(Real x) {
    const Real c = Real(0.7978845608028654);  // sqrt(2/pi)
    const Real a = Real(0.044715);
    return Real(0.5) * x * (Real(1) + std::tanh(c * (x + a * x * x * x)));
  }

  void forward_op(int i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    const Tensor<Real>& A = nodes_[static_cast<size_t>(n.a)].value;
    switch (n.op) {
      case Op::Leaf:
        return;
      case Op::Add: {
        const Tensor<Real>& B = nodes_[static_cast<size_t>(n.b)].value;
        n.value = A;
        as_array(n.value) += as_array(B);
        return;
      }
      case Op::Sub: {
        const Tensor<Real>& B = nodes_[static_cast<size_t>(n.b)].value;
        n.value = A;
        as_array(n.value) -= as_array(B);
        return;
      }
      case Op::Mul: {
        const Tensor<Real>& B = nodes_[static_cast<size_t>(n.b)].value;
        n.value = A;
        as_array(n.value) *= as_array(B);
        return;
      }
      case Op::Scale: {
        n.value = A;
        as_array(n.value) *= static_cast<Real>(n.x0);
        return;
      }
      case Op::AddRow: {
        const Tensor<Real>& V = nodes_[static_cast<size_t>(n.b)].value;
        n.value = A;
        MMap M = as_matrix(n.value);
        Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> v(V.data.data(), V.numel());
        M.rowwise() += v;
        return;
      }
      case Op::MulRow: {
        const Tensor<Real>& V = nodes_[static_cast<size_t>(n.b)].value;
        n.value = A;
        MMap M = as_matrix(n.value);
        Eigen::Map<const Eigen::Array<Real, 1, Eigen::Dynamic>> v(V.data.data(), V.numel());
        M.array().rowwise() *= v;
        return;
      }
      case Op::MatMul: {
        const Tensor<Real>& B = nodes_[static_cast<size_t>(n.b)].value;
        const int64_t am = n.i0 ? A.cols() : A.rows(), bn = n.i1 ? B.rows() : B.cols();
        if (n.value.numel() != am * bn) n.value = Tensor<Real>::zeros({am, bn});
        MMap C = as_matrix(n.value);
        CMap MA(A.data.data(), A.rows(), A.cols());
        CMap MB(B.data.data(), B.rows(), B.cols());
        if (!n.i0 && !n.i1)
          C.noalias() = MA * MB;
        else if (!n.i0 && n.i1)
          C.noalias() = MA * MB.transpose();
        else if (n.i0 && !n.i1)
          C.noalias() = MA.transpose() * MB;
        else
          C.noalias() = MA.transpose() * MB.transpose();
        return;
      }
      case Op::Softmax: {
        n.value = A;
        MMap M = as_matrix(n.value);
        for (Eigen::Index r = 0; r < M.rows(); ++r) {
          auto row = M.row(r).array();
          row -= row.maxCoeff();
          row = row.exp();
          row /= row.sum();
        }
        return;
      }
      case Op::SoftmaxCausal: {
        n.value = Tensor<Real>::zeros(A.shape);
        CMap X = as_matrix(A);
        MMap Y = as_matrix(n.value);
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
          auto x = X.row(r).head(r + 1).array();
          auto y = Y.row(r).head(r + 1).array();
          y = (x - x.maxCoeff()).exp();
          y /= y.sum();
        }
        return;
      }
      case Op::LayerNorm: {
        n.value = A;
        MMap M = as_matrix(n.value);
        const Real eps = static_cast<Real>(n.x0);
        for (Eigen::Index r = 0; r < M.rows(); ++r) {
          auto row = M.row(r).array();
          const Real mu = row.mean();
          row -= mu;
          const Real var = row.square().mean();
          row /= std::sqrt(var + eps);
        }
        return;
      }
      case Op::Gelu: {
        n.value = A;
        auto x = as_array(n.value);
        const Real c = Real(0.7978845608028654), a = Real(0.044715);
        x = Real(0.5) * x * (Real(1) + (c * (x + a * x.cube())).tanh());
        return;
      }
      case Op::Relu: {
        n.value = A;
        auto x = as_array(n.value);
        x = x.max(Real(0));
        return;
      }
      case Op::SliceRows: {
        const int64_t r0 = n.i0, r1 = n.i1;
        if (n.value.numel() != (r1 - r0) * A.cols()) n.value = Tensor<Real>::zeros({r1 - r0, A.cols()});
        as_matrix(n.value) = as_matrix(A).middleRows(r0, r1 - r0);
        return;
      }
      case Op::SliceCols: {
        const int64_t c0 = n.i0, c1 = n.i1;
        if (n.value.numel() != A.rows() * (c1 - c0)) n.value = Tensor<Real>::zeros({A.rows(), c1 - c0});
        as_matrix(n.value) = as_matrix(A).middleCols(c0, c1 - c0);
        return;
      }
      case Op::GatherRows: {
        const int64_t m = static_cast<int64_t>(n.indices.size());
        if (n.value.numel() != m * A.cols()) n.value = Tensor<Real>::zeros({m, A.cols()});
        MMap Y = as_matrix(n.value);
        CMap X = as_matrix(A);
        for (int64_t r = 0; r < m; ++r) Y.row(r) = X.row(n.indices[static_cast<size_t>(r)]);
        return;
      }
      case Op::Concat: {
        const Tensor<Real>& B = nodes_[static_cast<size_t>(n.b)].value;
        const int64_t rows = n.i0 == 0 ? A.rows() + B.rows() : A.rows();
        const int64_t cols = n.i0 == 0 ? A.cols() : A.cols() + B.cols();
        if (n.value.numel() != rows * cols) n.value = Tensor<Real>::zeros({rows, cols});
        MMap Y = as_matrix(n.value);
        if (n.i0 == 0) {
          Y.topRows(A.rows()) = as_matrix(A);
          Y.bottomRows(B.rows()) = as_matrix(B);
        } else {
          Y.leftCols(A.cols()) = as_matrix(A);
          Y.rightCols(B.cols()) = as_matrix(B);
        }
        return;
      }
      case Op::Sum: {
        if (n.value.numel() != 1) n.value = Tensor<Real>::zeros({1});
        n.value.data[0] = as_array(A).sum();
        return;
      }
      case Op::AddPos: {
        const Tensor<Real>& P = nodes_[static_cast<size_t>(n.b)].value;
        n.value = A;
        MMap H = as_matrix(n.value);
        CMap Pos(P.data.data(), P.rows(), P.cols());
        const int64_t T = n.i0;
        for (int64_t r = 0; r < H.rows(); ++r) H.row(r) += Pos.row(r % T);
        return;
      }
      case Op::Attention: {
        attention_forward(n);
        return;
      }
    }
  }

  void attention_forward(Node& n) {
    const Tensor<Real>& Q = nodes_[static_cast<size_t>(n.a)].value;
    const Tensor<Real>& K = nodes_[static_cast<size_t>(n.b)].value;
    const Tensor<Real>& V = nodes_[static_cast<size_t>(n.i2)].value;
    const int64_t H = n.i0, T = n.i1, e = Q.cols(), B = Q.rows() / T, dh = e / H;
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
    if (n.value.numel() != Q.numel()) n.value = Tensor<Real>::zeros(Q.shape);
    if (n.aux.numel() != B * H * T * T) n.aux = Tensor<Real>::zeros({B * H, T * T});
    else as_array(n.aux).setZero();
    as_array(n.value).setZero();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (B * H > 1)
#endif
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < H; ++h) {
        using Stride = Eigen::OuterStride<>;
        using Block = Eigen::Map<const Mat, 0, Stride>;
        using MBlock = Eigen::Map<Mat, 0, Stride>;
        Block Qb(Q.data.data() + b * T * e + h * dh, T, dh, Stride(e));
        Block Kb(K.data.data() + b * T * e + h * dh, T, dh, Stride(e));
        Block Vb(V.data.data() + b * T * e + h * dh, T, dh, Stride(e));
        MBlock Ob(n.value.data.data() + b * T * e + h * dh, T, dh, Stride(e));
        Eigen::Map<Mat> P(n.aux.data.data() + (b * H + h) * T * T, T, T);
        for (int64_t t = 0; t < T; ++t) {
          auto row = P.row(t).head(t + 1);
          row.noalias() = scale * (Qb.row(t) * Kb.topRows(t + 1).transpose());
          auto arr = row.array();
          arr = (arr - arr.maxCoeff()).exp();
          arr /= arr.sum();
          Ob.row(t).noalias() = row * Vb.topRows(t + 1);
        }
      }
  }

  void backward_op(int i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    const Tensor<Real>& g = n.grad;
    const Node& an = nodes_[static_cast<size_t>(n.a)];
    const bool need_a = an.needs_grad;
    const bool need_b = n.b >= 0 && nodes_[static_cast<size_t>(n.b)].needs_grad;
    switch (n.op) {
      case Op::Leaf:
        return;
      case Op::Add: {
        if (need_a) as_array(gbuf(n.a)) += as_array(g);
        if (need_b) as_array(gbuf(static_cast<int>(n.b))) += as_array(g);
        return;
      }
      case Op::Sub: {
        if (need_a) as_array(gbuf(n.a)) += as_array(g);
        if (need_b) as_array(gbuf(static_cast<int>(n.b))) -= as_array(g);
        return;
      }
      case Op::Mul: {
        const Tensor<Real>& B = nodes_[static_cast<size_t>(n.b)].value;
        if (need_a) as_array(gbuf(n.a)) += as_array(g) * as_array(B);
        if (need_b) as_array(gbuf(static_cast<int>(n.b))) += as_array(g) * as_array(an.value);
        return;
      }
      case Op::Scale: {
        if (need_a) as_array(gbuf(n.a)) += static_cast<Real>(n.x0) * as_array(g);
        return;
      }
      case Op::AddRow: {
        if (need_a) as_array(gbuf(n.a)) += as_array(g);
        if (need_b) {
          Tensor<Real>& gv = gbuf(static_cast<int>(n.b));
          Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>> v(gv.data.data(), gv.numel());
          v += ConstMatMap<Real>(g.data.data(), n.value.rows(), n.value.cols()).colwise().sum();
        }
        return;
      }
      case Op::MulRow: {
        const Tensor<Real>& V = nodes_[static_cast<size_t>(n.b)].value;
        const int64_t r = n.value.rows(), c = n.value.cols();
        CMap G(g.data.data(), r, c);
        if (need_a) {
          MMap GA(gbuf(n.a).data.data(), r, c);
          Eigen::Map<const Eigen::Array<Real, 1, Eigen::Dynamic>> v(V.data.data(), c);
          GA.array() += G.array().rowwise() * v;
        }
        if (need_b) {
          Tensor<Real>& gv = gbuf(static_cast<int>(n.b));
          CMap A(an.value.data.data(), r, c);
          Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>> v(gv.data.data(), c);
          v += (G.array() * A.array()).matrix().colwise().sum();
        }
        return;
      }
      case Op::MatMul: {
        const Node& bn = nodes_[static_cast<size_t>(n.b)];
        const Tensor<Real>& B = bn.value;
        CMap G(g.data.data(), n.value.rows(), n.value.cols());
        CMap A(an.value.data.data(), an.value.rows(), an.value.cols());
        CMap Bm(B.data.data(), B.rows(), B.cols());
        const bool ta = n.i0, tb = n.i1;
        if (need_a) {
          MMap GA(gbuf(n.a).data.data(), an.value.rows(), an.value.cols());
          if (!ta && !tb) GA.noalias() += G * Bm.transpose();
          else if (!ta && tb) GA.noalias() += G * Bm;
          else if (ta && !tb) GA.noalias() += Bm * G.transpose();
          else GA.noalias() += Bm.transpose() * G.transpose();
        }
        if (need_b) {
          MMap GB(gbuf(static_cast<int>(n.b)).data.data(), B.rows(), B.cols());
          if (!ta && !tb) GB.noalias() += A.transpose() * G;
          else if (!ta && tb) GB.noalias() += G.transpose() * A;
          else if (ta && !tb) GB.noalias() += A * G;
          else GB.noalias() += G.transpose() * A.transpose();
        }
        return;
      }
      case Op::Softmax: {
        if (!need_a) return;
        MMap GA(gbuf(n.a).data.data(), n.value.rows(), n.value.cols());
        CMap Y(n.value.data.data(), n.value.rows(), n.value.cols());
        CMap G(g.data.data(), n.value.rows(), n.value.cols());
        for (Eigen::Index r = 0; r < Y.rows(); ++r) {
          const Real dot = Y.row(r).dot(G.row(r));
          GA.row(r).array() += Y.row(r).array() * (G.row(r).array() - dot);
        }
        return;
      }
      case Op::SoftmaxCausal: {
        if (!need_a) return;
        MMap GA(gbuf(n.a).data.data(), n.value.rows(), n.value.cols());
        CMap Y(n.value.data.data(), n.value.rows(), n.value.cols());
        CMap G(g.data.data(), n.value.rows(), n.value.cols());
        for (Eigen::Index r = 0; r < Y.rows(); ++r) {
          auto y = Y.row(r).head(r + 1);
          auto gr = G.row(r).head(r + 1);
          const Real dot = y.dot(gr);
          GA.row(r).head(r + 1).array() += y.array() * (gr.array() - dot);
        }
        return;
      }
      case Op::LayerNorm: {
        if (!need_a) return;
        const Real eps = static_cast<Real>(n.x0);
        MMap GA(gbuf(n.a).data.data(), n.value.rows(), n.value.cols());
        CMap X(an.value.data.data(), n.value.rows(), n.value.cols());
        CMap Y(n.value.data.data(), n.value.rows(), n.value.cols());
        CMap G(g.data.data(), n.value.rows(), n.value.cols());
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
          auto x = X.row(r).array();
          const Real mu = x.mean();
          const Real var = (x - mu).square().mean();
          const Real inv = Real(1) / std::sqrt(var + eps);
          auto xhat = Y.row(r).array();
          auto gr = G.row(r).array();
          const Real gmean = gr.mean();
          const Real gx = (gr * xhat).mean();
          GA.row(r).array() += inv * (gr - gmean - xhat * gx);
        }
        return;
      }
      case Op::Gelu: {
        if (!need_a) return;
        auto x = as_array(an.value);
        auto ga = as_array(gbuf(n.a));
        const Real c = Real(0.7978845608028654), a = Real(0.044715);
        // d/dx [0.5 x (1 + tanh(u))], u = c (x + a x^3)
        Arr t = (c * (x + a * x.cube())).tanh();
        ga += as_array(g) *
              (Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t.square()) * c * (Real(1) + Real(3) * a * x.square()));
        return;
      }
      case Op::Relu: {
        if (!need_a) return;
        auto x = as_array(an.value);
        as_array(gbuf(n.a)) += as_array(g) * (x > Real(0)).template cast<Real>();
        return;
      }
      case Op::SliceRows: {
        if (!need_a) return;
        MMap GA(gbuf(n.a).data.data(), an.value.rows(), an.value.cols());
        GA.middleRows(n.i0, n.i1 - n.i0) += ConstMatMap<Real>(g.data.data(), n.value.rows(), n.value.cols());
        return;
      }
      case Op::SliceCols: {
        if (!need_a) return;
        MMap GA(gbuf(n.a).data.data(), an.value.rows(), an.value.cols());
        GA.middleCols(n.i0, n.i1 - n.i0) += ConstMatMap<Real>(g.data.data(), n.value.rows(), n.value.cols());
        return;
      }
      case Op::GatherRows: {
        if (!need_a) return;
        MMap GA(gbuf(n.a).data.data(), an.value.rows(), an.value.cols());
        CMap G(g.data.data(), n.value.rows(), n.value.cols());
        for (size_t r = 0; r < n.indices.size(); ++r) GA.row(n.indices[r]) += G.row(static_cast<Eigen::Index>(r));
        return;
      }
      case Op::Concat: {
        const Node& bn = nodes_[static_cast<size_t>(n.b)];
        CMap G(g.data.data(), n.value.rows(), n.value.cols());
        if (need_a) {
          MMap GA(gbuf(n.a).data.data(), an.value.rows(), an.value.cols());
          if (n.i0 == 0) GA += G.topRows(an.value.rows());
          else GA += G.leftCols(an.value.cols());
        }
        if (need_b) {
          MMap GB(gbuf(static_cast<int>(n.b)).data.data(), bn.value.rows(), bn.value.cols());
          if (n.i0 == 0) GB += G.bottomRows(bn.value.rows());
          else GB += G.rightCols(bn.value.cols());
        }
        return;
      }
      case Op::Sum: {
        if (!need_a) return;
        as_array(gbuf(n.a)) += g.data[0];
        return;
      }
      case Op::AddPos: {
        if (need_a) as_array(gbuf(n.a)) += as_array(g);
        if (need_b) {
          const Node& bn = nodes_[static_cast<size_t>(n.b)];
          MMap GP(gbuf(static_cast<int>(n.b)).data.data(), bn.value.rows(), bn.value.cols());
          CMap G(g.data.data(), n.value.rows(), n.value.cols());
          const int64_t T = n.i0;
          for (int64_t r = 0; r < n.value.rows(); ++r) GP.row(r % T) += G.row(r);
        }
        return;
      }
      case Op::Attention: {
        attention_backward(n);
        return;
      }
    }
  }

  void attention_backward(Node& n) {
    const Tensor<Real>& Q = nodes_[static_cast<size_t>(n.a)].value;
    const Tensor<Real>& K = nodes_[static_cast<size_t>(n.b)].value;
    const Tensor<Real>& V = nodes_[static_cast<size_t>(n.i2)].value;
    const int64_t H = n.i0, T = n.i1, e = Q.cols(), B = Q.rows() / T, dh = e / H;
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
    const bool need_q = nodes_[static_cast<size_t>(n.a)].needs_grad;
    const bool need_k = nodes_[static_cast<size_t>(n.b)].needs_grad;
    const bool need_v = nodes_[static_cast<size_t>(n.i2)].needs_grad;
    Tensor<Real>* gq = need_q ? &gbuf(n.a) : nullptr;
    Tensor<Real>* gk = need_k ? &gbuf(static_cast<int>(n.b)) : nullptr;
    Tensor<Real>* gv = need_v ? &gbuf(static_cast<int>(n.i2)) : nullptr;
    const Tensor<Real>& g = n.grad;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (B * H > 1)
#endif
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < H; ++h) {
        using Stride = Eigen::OuterStride<>;
        using Block = Eigen::Map<const Mat, 0, Stride>;
        using MBlock = Eigen::Map<Mat, 0, Stride>;
        const int64_t off = b * T * e + h * dh;
        Block Qb(Q.data.data() + off, T, dh, Stride(e));
        Block Kb(K.data.data() + off, T, dh, Stride(e));
        Block Vb(V.data.data() + off, T, dh, Stride(e));
        Block Gb(g.data.data() + off, T, dh, Stride(e));
        Eigen::Map<const Mat> P(n.aux.data.data() + (b * H + h) * T * T, T, T);
        Mat gP(T, T);
        for (int64_t t = 0; t < T; ++t) {
          auto p = P.row(t).head(t + 1);
          auto gp = gP.row(t).head(t + 1);
          gp.noalias() = Gb.row(t) * Vb.topRows(t + 1).transpose();
          // softmax jacobian: gS = P .* (gP - <gP, P>)
          const Real dot = p.dot(gp);
          gp.array() = p.array() * (gp.array() - dot);  // gP row now holds gS
        }
        if (need_v) {
          MBlock GV(gv->data.data() + off, T, dh, Stride(e));
          for (int64_t t = 0; t < T; ++t) GV.topRows(t + 1).noalias() += P.row(t).head(t + 1).transpose() * Gb.row(t);
        }
        if (need_q) {
          MBlock GQ(gq->data.data() + off, T, dh, Stride(e));
          for (int64_t t = 0; t < T; ++t)
            GQ.row(t).noalias() += scale * (gP.row(t).head(t + 1) * Kb.topRows(t + 1));
        }
        if (need_k) {
          MBlock GK(gk->data.data() + off, T, dh, Stride(e));
          for (int64_t t = 0; t < T; ++t)
            GK.topRows(t + 1).noalias() += scale * (gP.row(t).head(t + 1).transpose() * Qb.row(t));
        }
      }
  }
};

}  // namespace icl
