#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include "ddhom/tensor.hpp"

namespace ddhom {

// Eagerly evaluated autodiff tape. Every backward rule is expressed in terms
// of tape operations, so gradients are themselves differentiable graph
// nodes: input gradients and parameter gradients of losses containing input
// gradients (double backpropagation) use one mechanism.
//
// All reductions are compensated or fixed-order, which makes losses and
// gradients bitwise deterministic for a given build.

using NodeId = int;

struct ConvGeom {
  int kh = 1, kw = 1, sh = 1, sw = 1, ph = 0, pw = 0;
  int out(int in, bool along_h) const {
    int k = along_h ? kh : kw, s = along_h ? sh : sw, p = along_h ? ph : pw;
    return (in + 2 * p - k) / s + 1;
  }
};

enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  Affine,
  MatMul,
  AddBias,
  ColSum,
  BroadcastRow,
  Softplus,
  Sigmoid,
  Relu,
  MaskMul,
  Conv2d,
  ConvDx,
  ConvDw,
  AddBiasChan,
  ChanSum,
  BroadcastChan,
  MaxPool,
  PoolScatter,
  PoolGather,
  Reshape,
  Concat2,
  SliceCols,
  PadCols,
  ColAffine,
  SumAll,
  FillLike,
  PkStress,
  PkStressAdj,
};

struct Node {
  Op op = Op::Leaf;
  std::array<NodeId, 2> in{-1, -1};
  Tensor val;
  // op-specific attributes
  double k0 = 0.0, k1 = 0.0;
  bool ta = false, tb = false;
  int i0 = 0, i1 = 0;
  ConvGeom geom;
  std::vector<int> ishape;
  std::shared_ptr<std::vector<long long>> indices;
  std::shared_ptr<Tensor> cdata;   // constant per-column / per-row data
  std::shared_ptr<Tensor> cdata2;  // optional second constant (shift)
};

class Tape {
 public:
  const Tensor& val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].val; }
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  NodeId leaf(Tensor t) {
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(t);
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) {
    check_same(a, b, "add");
    Node n = binary(Op::Add, a, b, val(a).shape);
    const auto& A = val(a).data;
    const auto& B = val(b).data;
    for (std::size_t k = 0; k < A.size(); ++k) n.val.data[k] = A[k] + B[k];
    return push(std::move(n));
  }

  NodeId sub(NodeId a, NodeId b) {
    check_same(a, b, "sub");
    Node n = binary(Op::Sub, a, b, val(a).shape);
    const auto& A = val(a).data;
    const auto& B = val(b).data;
    for (std::size_t k = 0; k < A.size(); ++k) n.val.data[k] = A[k] - B[k];
    return push(std::move(n));
  }

  NodeId mul(NodeId a, NodeId b) {
    check_same(a, b, "mul");
    Node n = binary(Op::Mul, a, b, val(a).shape);
    const auto& A = val(a).data;
    const auto& B = val(b).data;
    for (std::size_t k = 0; k < A.size(); ++k) n.val.data[k] = A[k] * B[k];
    return push(std::move(n));
  }

  NodeId scale(NodeId a, double k) {
    Node n = unary(Op::Scale, a, val(a).shape);
    n.k0 = k;
    const auto& A = val(a).data;
    for (std::size_t j = 0; j < A.size(); ++j) n.val.data[j] = k * A[j];
    return push(std::move(n));
  }

  NodeId affine(NodeId a, double k0, double k1) {
    Node n = unary(Op::Affine, a, val(a).shape);
    n.k0 = k0;
    n.k1 = k1;
    const auto& A = val(a).data;
    for (std::size_t j = 0; j < A.size(); ++j) n.val.data[j] = k0 * A[j] + k1;
    return push(std::move(n));
  }

  // y = op(A) * op(B), rank-2 operands
  NodeId matmul(NodeId a, NodeId b, bool ta = false, bool tb = false) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.rank() != 2 || B.rank() != 2) throw InvalidInputError("matmul: rank-2 required");
    int m = ta ? A.dim(1) : A.dim(0);
    int k = ta ? A.dim(0) : A.dim(1);
    int kb = tb ? B.dim(1) : B.dim(0);
    int nn = tb ? B.dim(0) : B.dim(1);
    if (k != kb) throw InvalidInputError("matmul: inner dimensions differ");
    Node n = binary(Op::MatMul, a, b, {m, nn});
    n.ta = ta;
    n.tb = tb;
    auto at = [&](const Tensor& T, bool tr, int r, int c) {
      return tr ? T.data[static_cast<std::size_t>(c) * T.dim(1) + r]
                : T.data[static_cast<std::size_t>(r) * T.dim(1) + c];
    };
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        double av = at(A, ta, i, p);
        if (av == 0.0) continue;
        for (int j = 0; j < nn; ++j) n.val.data[static_cast<std::size_t>(i) * nn + j] += av * at(B, tb, p, j);
      }
    return push(std::move(n));
  }

  NodeId add_bias(NodeId x, NodeId b) {
    const Tensor& X = val(x);
    const Tensor& B = val(b);
    if (X.rank() != 2 || B.rank() != 1 || B.dim(0) != X.dim(1))
      throw InvalidInputError("add_bias: want (N,M) + (M)");
    Node n = binary(Op::AddBias, x, b, X.shape);
    int N = X.dim(0), M = X.dim(1);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < M; ++j)
        n.val.data[static_cast<std::size_t>(i) * M + j] = X.data[static_cast<std::size_t>(i) * M + j] + B.data[j];
    return push(std::move(n));
  }

  NodeId col_sum(NodeId x) {
    const Tensor& X = val(x);
    if (X.rank() != 2) throw InvalidInputError("col_sum: rank-2 required");
    Node n = unary(Op::ColSum, x, {X.dim(1)});
    n.ishape = X.shape;
    int N = X.dim(0), M = X.dim(1);
    for (int j = 0; j < M; ++j) {
      KahanSum s;
      for (int i = 0; i < N; ++i) s.add(X.data[static_cast<std::size_t>(i) * M + j]);
      n.val.data[j] = s.value();
    }
    return push(std::move(n));
  }

  NodeId broadcast_row(NodeId v, int N) {
    const Tensor& V = val(v);
    if (V.rank() != 1) throw InvalidInputError("broadcast_row: rank-1 required");
    Node n = unary(Op::BroadcastRow, v, {N, V.dim(0)});
    n.i0 = N;
    int M = V.dim(0);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < M; ++j) n.val.data[static_cast<std::size_t>(i) * M + j] = V.data[j];
    return push(std::move(n));
  }

  NodeId softplus(NodeId x) {
    Node n = unary(Op::Softplus, x, val(x).shape);
    const auto& X = val(x).data;
    for (std::size_t k = 0; k < X.size(); ++k)
      n.val.data[k] = X[k] > 0.0 ? X[k] + std::log1p(std::exp(-X[k])) : std::log1p(std::exp(X[k]));
    return push(std::move(n));
  }

  NodeId sigmoid(NodeId x) {
    Node n = unary(Op::Sigmoid, x, val(x).shape);
    const auto& X = val(x).data;
    for (std::size_t k = 0; k < X.size(); ++k) {
      double v = X[k];
      n.val.data[k] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return push(std::move(n));
  }

  NodeId relu(NodeId x) {
    const Tensor& X = val(x);
    Tensor mask(X.shape);
    Tensor y(X.shape);
    for (std::size_t k = 0; k < X.data.size(); ++k) {
      bool pos = X.data[k] > 0.0;
      mask.data[k] = pos ? 1.0 : 0.0;
      y.data[k] = pos ? X.data[k] : 0.0;
    }
    NodeId mask_id = leaf(std::move(mask));
    Node n = unary(Op::Relu, x, X.shape);
    n.i0 = mask_id;
    n.val = std::move(y);
    return push(std::move(n));
  }

  NodeId mask_mul(NodeId x, NodeId mask_id) {
    check_same(x, mask_id, "mask_mul");
    Node n = unary(Op::MaskMul, x, val(x).shape);
    n.i0 = mask_id;
    const auto& X = val(x).data;
    const auto& M = val(mask_id).data;
    for (std::size_t k = 0; k < X.size(); ++k) n.val.data[k] = X[k] * M[k];
    return push(std::move(n));
  }

  NodeId conv2d(NodeId x, NodeId w, const ConvGeom& g) {
    const Tensor& X = val(x);
    const Tensor& W = val(w);
    if (X.rank() != 4 || W.rank() != 4) throw InvalidInputError("conv2d: want NHWC input and KKIO kernel");
    if (W.dim(2) != X.dim(3)) throw InvalidInputError("conv2d: channel mismatch");
    int N = X.dim(0), H = X.dim(1), Wd = X.dim(2), Co = W.dim(3);
    int Ho = g.out(H, true), Wo = g.out(Wd, false);
    if (Ho <= 0 || Wo <= 0) throw InvalidInputError("conv2d: empty output");
    Node n = binary(Op::Conv2d, x, w, {N, Ho, Wo, Co});
    n.geom = g;
    conv_forward(X, W, g, n.val);
    return push(std::move(n));
  }

  // x-shaped result: adjoint of conv2d w.r.t. its input
  NodeId conv_dx(NodeId gy, NodeId w, const ConvGeom& g, const std::vector<int>& xshape) {
    Node n = binary(Op::ConvDx, gy, w, xshape);
    n.geom = g;
    n.ishape = xshape;
    conv_backward_input(val(gy), val(w), g, n.val);
    return push(std::move(n));
  }

  // w-shaped result: adjoint of conv2d w.r.t. its kernel
  NodeId conv_dw(NodeId x, NodeId gy, const ConvGeom& g, const std::vector<int>& wshape) {
    Node n = binary(Op::ConvDw, x, gy, wshape);
    n.geom = g;
    n.ishape = wshape;
    conv_backward_kernel(val(x), val(gy), g, n.val);
    return push(std::move(n));
  }

  NodeId add_bias_chan(NodeId x, NodeId b) {
    const Tensor& X = val(x);
    const Tensor& B = val(b);
    if (X.rank() != 4 || B.rank() != 1 || B.dim(0) != X.dim(3))
      throw InvalidInputError("add_bias_chan: want NHWC + (C)");
    Node n = binary(Op::AddBiasChan, x, b, X.shape);
    int C = X.dim(3);
    for (std::size_t k = 0; k < X.data.size(); ++k) n.val.data[k] = X.data[k] + B.data[k % C];
    return push(std::move(n));
  }

  NodeId chan_sum(NodeId x) {
    const Tensor& X = val(x);
    if (X.rank() != 4) throw InvalidInputError("chan_sum: rank-4 required");
    Node n = unary(Op::ChanSum, x, {X.dim(3)});
    n.ishape = X.shape;
    int C = X.dim(3);
    std::vector<KahanSum> s(static_cast<std::size_t>(C));
    for (std::size_t k = 0; k < X.data.size(); ++k) s[k % C].add(X.data[k]);
    for (int c = 0; c < C; ++c) n.val.data[c] = s[static_cast<std::size_t>(c)].value();
    return push(std::move(n));
  }

  NodeId broadcast_chan(NodeId v, const std::vector<int>& nhwc) {
    const Tensor& V = val(v);
    if (V.rank() != 1 || nhwc.size() != 4 || nhwc[3] != V.dim(0))
      throw InvalidInputError("broadcast_chan: shape mismatch");
    Node n = unary(Op::BroadcastChan, v, nhwc);
    int C = nhwc[3];
    for (std::size_t k = 0; k < n.val.data.size(); ++k) n.val.data[k] = V.data[k % C];
    return push(std::move(n));
  }

  NodeId maxpool(NodeId x, const ConvGeom& g) {
    const Tensor& X = val(x);
    if (X.rank() != 4) throw InvalidInputError("maxpool: rank-4 required");
    int N = X.dim(0), H = X.dim(1), Wd = X.dim(2), C = X.dim(3);
    int Ho = g.out(H, true), Wo = g.out(Wd, false);
    if (Ho <= 0 || Wo <= 0) throw InvalidInputError("maxpool: empty output");
    Node n = unary(Op::MaxPool, x, {N, Ho, Wo, C});
    n.geom = g;
    n.ishape = X.shape;
    n.indices = std::make_shared<std::vector<long long>>(n.val.data.size(), -1);
    auto& idx = *n.indices;
    std::size_t o = 0;
    for (int b = 0; b < N; ++b)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow)
          for (int c = 0; c < C; ++c, ++o) {
            double best = 0.0;
            long long best_at = -1;
            for (int r = 0; r < g.kh; ++r) {
              int ih = oh * g.sh - g.ph + r;
              if (ih < 0 || ih >= H) continue;
              for (int q = 0; q < g.kw; ++q) {
                int iw = ow * g.sw - g.pw + q;
                if (iw < 0 || iw >= Wd) continue;
                long long flat = ((static_cast<long long>(b) * H + ih) * Wd + iw) * C + c;
                double v = X.data[static_cast<std::size_t>(flat)];
                if (best_at < 0 || v > best) {
                  best = v;
                  best_at = flat;
                }
              }
            }
            n.val.data[o] = best_at < 0 ? 0.0 : best;
            idx[o] = best_at;
          }
    return push(std::move(n));
  }

  NodeId pool_scatter(NodeId gy, std::shared_ptr<std::vector<long long>> idx, const std::vector<int>& xshape) {
    Node n = unary(Op::PoolScatter, gy, xshape);
    n.indices = std::move(idx);
    n.ishape = xshape;
    const auto& G = val(gy).data;
    for (std::size_t o = 0; o < G.size(); ++o) {
      long long at = (*n.indices)[o];
      if (at >= 0) n.val.data[static_cast<std::size_t>(at)] += G[o];
    }
    return push(std::move(n));
  }

  NodeId pool_gather(NodeId t, std::shared_ptr<std::vector<long long>> idx, const std::vector<int>& oshape) {
    Node n = unary(Op::PoolGather, t, oshape);
    n.indices = std::move(idx);
    n.ishape = val(t).shape;
    const auto& T = val(t).data;
    for (std::size_t o = 0; o < n.val.data.size(); ++o) {
      long long at = (*n.indices)[o];
      n.val.data[o] = at >= 0 ? T[static_cast<std::size_t>(at)] : 0.0;
    }
    return push(std::move(n));
  }

  NodeId reshape(NodeId x, const std::vector<int>& shape) {
    const Tensor& X = val(x);
    if (Tensor::numel_of(shape) != X.numel()) throw InvalidInputError("reshape: element count mismatch");
    Node n = unary(Op::Reshape, x, shape);
    n.ishape = X.shape;
    n.val.data = X.data;
    return push(std::move(n));
  }

  NodeId concat2(NodeId a, NodeId b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(0) != B.dim(0))
      throw InvalidInputError("concat2: want matching row counts");
    int N = A.dim(0), Ma = A.dim(1), Mb = B.dim(1);
    Node n = binary(Op::Concat2, a, b, {N, Ma + Mb});
    n.i0 = Ma;
    n.i1 = Mb;
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < Ma; ++j)
        n.val.data[static_cast<std::size_t>(i) * (Ma + Mb) + j] = A.data[static_cast<std::size_t>(i) * Ma + j];
      for (int j = 0; j < Mb; ++j)
        n.val.data[static_cast<std::size_t>(i) * (Ma + Mb) + Ma + j] =
            B.data[static_cast<std::size_t>(i) * Mb + j];
    }
    return push(std::move(n));
  }

  NodeId slice_cols(NodeId x, int begin, int len) {
    const Tensor& X = val(x);
    if (X.rank() != 2 || begin < 0 || begin + len > X.dim(1)) throw InvalidInputError("slice_cols: bad range");
    Node n = unary(Op::SliceCols, x, {X.dim(0), len});
    n.i0 = begin;
    n.i1 = len;
    n.ishape = X.shape;
    int N = X.dim(0), M = X.dim(1);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < len; ++j)
        n.val.data[static_cast<std::size_t>(i) * len + j] = X.data[static_cast<std::size_t>(i) * M + begin + j];
    return push(std::move(n));
  }

  NodeId pad_cols(NodeId x, int begin, int total) {
    const Tensor& X = val(x);
    if (X.rank() != 2 || begin < 0 || begin + X.dim(1) > total) throw InvalidInputError("pad_cols: bad range");
    Node n = unary(Op::PadCols, x, {X.dim(0), total});
    n.i0 = begin;
    n.i1 = X.dim(1);
    for (int i = 0; i < X.dim(0); ++i)
      for (int j = 0; j < X.dim(1); ++j)
        n.val.data[static_cast<std::size_t>(i) * total + begin + j] =
            X.data[static_cast<std::size_t>(i) * X.dim(1) + j];
    return push(std::move(n));
  }

  // per-column y = x * scale + shift with constant vectors
  NodeId col_affine(NodeId x, std::shared_ptr<Tensor> scale, std::shared_ptr<Tensor> shift) {
    const Tensor& X = val(x);
    if (X.rank() != 2) throw InvalidInputError("col_affine: rank-2 required");
    int M = X.dim(1);
    if (scale->numel() != M || (shift && shift->numel() != M))
      throw InvalidInputError("col_affine: stat length mismatch");
    Node n = unary(Op::ColAffine, x, X.shape);
    n.cdata = scale;
    n.indices = nullptr;
    n.i0 = shift ? 1 : 0;
    if (shift) n.cdata2 = shift;
    int N = X.dim(0);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < M; ++j)
        n.val.data[static_cast<std::size_t>(i) * M + j] =
            X.data[static_cast<std::size_t>(i) * M + j] * scale->data[static_cast<std::size_t>(j)] +
            (shift ? shift->data[static_cast<std::size_t>(j)] : 0.0);
    return push(std::move(n));
  }

  NodeId sum_all(NodeId x) {
    Node n = unary(Op::SumAll, x, {1});
    n.ishape = val(x).shape;
    KahanSum s;
    for (double v : val(x).data) s.add(v);
    n.val.data[0] = s.value();
    return push(std::move(n));
  }

  NodeId fill_like(NodeId scalar, const std::vector<int>& shape) {
    const Tensor& S = val(scalar);
    if (S.numel() != 1) throw InvalidInputError("fill_like: scalar source required");
    Node n = unary(Op::FillLike, scalar, shape);
    for (auto& v : n.val.data) v = S.data[0];
    return push(std::move(n));
  }

  // P = F * sym(S) per row; S = (S11, S12, S22), F = (F11,F12,F21,F22) const.
  NodeId pk_stress(NodeId s3, std::shared_ptr<Tensor> Fconst) {
    const Tensor& S = val(s3);
    if (S.rank() != 2 || S.dim(1) != 3) throw InvalidInputError("pk_stress: want (N,3)");
    int N = S.dim(0);
    if (Fconst->rank() != 2 || Fconst->dim(0) != N || Fconst->dim(1) != 4)
      throw InvalidInputError("pk_stress: want (N,4) deformation gradients");
    Node n = unary(Op::PkStress, s3, {N, 4});
    n.cdata = Fconst;
    for (int i = 0; i < N; ++i) {
      const double* f = &Fconst->data[static_cast<std::size_t>(i) * 4];
      const double* s = &S.data[static_cast<std::size_t>(i) * 3];
      double* p = &n.val.data[static_cast<std::size_t>(i) * 4];
      double s11 = s[0], sh = 0.5 * s[1], s22 = s[2];
      p[0] = f[0] * s11 + f[1] * sh;
      p[1] = f[0] * sh + f[1] * s22;
      p[2] = f[2] * s11 + f[3] * sh;
      p[3] = f[2] * sh + f[3] * s22;
    }
    return push(std::move(n));
  }

  NodeId pk_stress_adj(NodeId g4, std::shared_ptr<Tensor> Fconst) {
    const Tensor& G = val(g4);
    if (G.rank() != 2 || G.dim(1) != 4) throw InvalidInputError("pk_stress_adj: want (N,4)");
    int N = G.dim(0);
    Node n = unary(Op::PkStressAdj, g4, {N, 3});
    n.cdata = Fconst;
    for (int i = 0; i < N; ++i) {
      const double* f = &Fconst->data[static_cast<std::size_t>(i) * 4];
      const double* g = &G.data[static_cast<std::size_t>(i) * 4];
      double* s = &n.val.data[static_cast<std::size_t>(i) * 3];
      s[0] = f[0] * g[0] + f[2] * g[2];
      s[1] = 0.5 * (f[1] * g[0] + f[0] * g[1] + f[3] * g[2] + f[2] * g[3]);
      s[2] = f[1] * g[1] + f[3] * g[3];
    }
    return push(std::move(n));
  }

  // Reverse-mode differentiation: appends the adjoint graph of `target` and
  // returns adjoint node ids for each requested node (zero tensors where the
  // target does not depend on them). The adjoint graph consists of ordinary
  // tape nodes, so results can be differentiated again.
  std::vector<NodeId> gradients(NodeId target, const std::vector<NodeId>& wrt, NodeId seed = -1) {
    std::vector<NodeId> adj(static_cast<std::size_t>(target) + 1, -1);
    adj[static_cast<std::size_t>(target)] =
        seed >= 0 ? seed : leaf(Tensor::full(val(target).shape, 1.0));
    for (NodeId i = target; i >= 0; --i) {
      NodeId g = adj[static_cast<std::size_t>(i)];
      if (g < 0) continue;
      const Node& node = nodes_[static_cast<std::size_t>(i)];
      if (node.op == Op::Leaf) continue;
      backprop(i, g, adj);
    }
    std::vector<NodeId> out;
    out.reserve(wrt.size());
    for (NodeId w : wrt) {
      NodeId g = (w <= target) ? adj[static_cast<std::size_t>(w)] : -1;
      out.push_back(g >= 0 ? g : leaf(Tensor::zeros(val(w).shape)));
    }
    return out;
  }

 private:
  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }
  Node unary(Op op, NodeId a, std::vector<int> shape) {
    Node n;
    n.op = op;
    n.in = {a, -1};
    n.val = Tensor(std::move(shape));
    return n;
  }
  Node binary(Op op, NodeId a, NodeId b, std::vector<int> shape) {
    Node n;
    n.op = op;
    n.in = {a, b};
    n.val = Tensor(std::move(shape));
    return n;
  }
  void check_same(NodeId a, NodeId b, const char* what) const {
    if (!val(a).same_shape(val(b)))
      throw InvalidInputError(std::string(what) + ": shape mismatch " + val(a).shape_str() + " vs " +
                              val(b).shape_str());
  }

  static void conv_forward(const Tensor& X, const Tensor& W, const ConvGeom& g, Tensor& Y) {
    int N = X.dim(0), H = X.dim(1), Wd = X.dim(2), Ci = X.dim(3);
    int Ho = Y.dim(1), Wo = Y.dim(2), Co = Y.dim(3);
    for (int b = 0; b < N; ++b)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double* y = &Y.data[(((static_cast<std::size_t>(b) * Ho + oh) * Wo) + ow) * Co];
          for (int r = 0; r < g.kh; ++r) {
            int ih = oh * g.sh - g.ph + r;
            if (ih < 0 || ih >= H) continue;
            for (int q = 0; q < g.kw; ++q) {
              int iw = ow * g.sw - g.pw + q;
              if (iw < 0 || iw >= Wd) continue;
              const double* x = &X.data[(((static_cast<std::size_t>(b) * H + ih) * Wd) + iw) * Ci];
              const double* w = &W.data[((static_cast<std::size_t>(r) * g.kw + q) * Ci) * Co];
              for (int ci = 0; ci < Ci; ++ci) {
                double xv = x[ci];
                if (xv == 0.0) continue;
                const double* wrow = w + static_cast<std::size_t>(ci) * Co;
                for (int co = 0; co < Co; ++co) y[co] += xv * wrow[co];
              }
            }
          }
        }
  }

  static void conv_backward_input(const Tensor& Gy, const Tensor& W, const ConvGeom& g, Tensor& Gx) {
    int N = Gx.dim(0), H = Gx.dim(1), Wd = Gx.dim(2), Ci = Gx.dim(3);
    int Ho = Gy.dim(1), Wo = Gy.dim(2), Co = Gy.dim(3);
    for (int b = 0; b < N; ++b)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          const double* gy = &Gy.data[(((static_cast<std::size_t>(b) * Ho + oh) * Wo) + ow) * Co];
          for (int r = 0; r < g.kh; ++r) {
            int ih = oh * g.sh - g.ph + r;
            if (ih < 0 || ih >= H) continue;
            for (int q = 0; q < g.kw; ++q) {
              int iw = ow * g.sw - g.pw + q;
              if (iw < 0 || iw >= Wd) continue;
              double* gx = &Gx.data[(((static_cast<std::size_t>(b) * H + ih) * Wd) + iw) * Ci];
              const double* w = &W.data[((static_cast<std::size_t>(r) * g.kw + q) * Ci) * Co];
              for (int ci = 0; ci < Ci; ++ci) {
                const double* wrow = w + static_cast<std::size_t>(ci) * Co;
                double acc = 0.0;
                for (int co = 0; co < Co; ++co) acc += gy[co] * wrow[co];
                gx[ci] += acc;
              }
            }
          }
        }
  }

  static void conv_backward_kernel(const Tensor& X, const Tensor& Gy, const ConvGeom& g, Tensor& Gw) {
    int N = X.dim(0), H = X.dim(1), Wd = X.dim(2), Ci = X.dim(3);
    int Ho = Gy.dim(1), Wo = Gy.dim(2), Co = Gy.dim(3);
    for (int b = 0; b < N; ++b)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          const double* gy = &Gy.data[(((static_cast<std::size_t>(b) * Ho + oh) * Wo) + ow) * Co];
          for (int r = 0; r < g.kh; ++r) {
            int ih = oh * g.sh - g.ph + r;
            if (ih < 0 || ih >= H) continue;
            for (int q = 0; q < g.kw; ++q) {
              int iw = ow * g.sw - g.pw + q;
              if (iw < 0 || iw >= Wd) continue;
              const double* x = &X.data[(((static_cast<std::size_t>(b) * H + ih) * Wd) + iw) * Ci];
              double* gw = &Gw.data[((static_cast<std::size_t>(r) * g.kw + q) * Ci) * Co];
              for (int ci = 0; ci < Ci; ++ci) {
                double xv = x[ci];
                if (xv == 0.0) continue;
                double* gwrow = gw + static_cast<std::size_t>(ci) * Co;
                for (int co = 0; co < Co; ++co) gwrow[co] += xv * gy[co];
              }
            }
          }
        }
  }

  void accumulate(std::vector<NodeId>& adj, NodeId node, NodeId contrib) {
    if (node < 0 || static_cast<std::size_t>(node) >= adj.size()) return;
    NodeId& slot = adj[static_cast<std::size_t>(node)];
    slot = (slot < 0) ? contrib : add(slot, contrib);
  }

  void backprop(NodeId i, NodeId g, std::vector<NodeId>& adj) {
    // copy attributes needed before push() may reallocate nodes_
    const Node& n0 = nodes_[static_cast<std::size_t>(i)];
    const Op op = n0.op;
    const NodeId a = n0.in[0], b = n0.in[1];
    const double k0 = n0.k0;
    const bool ta = n0.ta, tb = n0.tb;
    const int i0 = n0.i0, i1 = n0.i1;
    const ConvGeom geom = n0.geom;
    const std::vector<int> ishape = n0.ishape;
    auto indices = n0.indices;
    auto cdata = n0.cdata;

    switch (op) {
      case Op::Leaf: break;
      case Op::Add:
        accumulate(adj, a, g);
        accumulate(adj, b, g);
        break;
      case Op::Sub:
        accumulate(adj, a, g);
        accumulate(adj, b, scale(g, -1.0));
        break;
      case Op::Mul:
        accumulate(adj, a, mul(g, b));
        accumulate(adj, b, mul(g, a));
        break;
      case Op::Scale:
      case Op::Affine:
        accumulate(adj, a, scale(g, k0));
        break;
      case Op::MatMul: {
        NodeId da, db;
        if (!ta && !tb) {
          da = matmul(g, b, false, true);
          db = matmul(a, g, true, false);
        } else if (ta && !tb) {
          da = matmul(b, g, false, true);
          db = matmul(a, g, false, false);
        } else if (!ta && tb) {
          da = matmul(g, b, false, false);
          db = matmul(g, a, true, false);
        } else {
          da = matmul(b, g, true, true);
          db = matmul(g, a, true, true);
        }
        accumulate(adj, a, da);
        accumulate(adj, b, db);
        break;
      }
      case Op::AddBias:
        accumulate(adj, a, g);
        accumulate(adj, b, col_sum(g));
        break;
      case Op::ColSum:
        accumulate(adj, a, broadcast_row(g, ishape[0]));
        break;
      case Op::BroadcastRow:
        accumulate(adj, a, col_sum(g));
        break;
      case Op::Softplus:
        accumulate(adj, a, mul(g, sigmoid(a)));
        break;
      case Op::Sigmoid: {
        NodeId s = i;  // the sigmoid output itself
        accumulate(adj, a, mul(g, mul(s, affine(s, -1.0, 1.0))));
        break;
      }
      case Op::Relu:
      case Op::MaskMul:
        accumulate(adj, a, mask_mul(g, i0));
        break;
      case Op::Conv2d:
        accumulate(adj, a, conv_dx(g, b, geom, val(a).shape));
        accumulate(adj, b, conv_dw(a, g, geom, val(b).shape));
        break;
      case Op::ConvDx:
        accumulate(adj, a, conv2d(g, b, geom));
        accumulate(adj, b, conv_dw(g, a, geom, val(b).shape));
        break;
      case Op::ConvDw:
        accumulate(adj, a, conv_dx(b, g, geom, val(a).shape));
        accumulate(adj, b, conv2d(a, g, geom));
        break;
      case Op::AddBiasChan:
        accumulate(adj, a, g);
        accumulate(adj, b, chan_sum(g));
        break;
      case Op::ChanSum:
        accumulate(adj, a, broadcast_chan(g, ishape));
        break;
      case Op::BroadcastChan:
        accumulate(adj, a, chan_sum(g));
        break;
      case Op::MaxPool:
        accumulate(adj, a, pool_scatter(g, indices, ishape));
        break;
      case Op::PoolScatter:
        accumulate(adj, a, pool_gather(g, indices, val(a).shape));
        break;
      case Op::PoolGather:
        accumulate(adj, a, pool_scatter(g, indices, val(a).shape));
        break;
      case Op::Reshape:
        accumulate(adj, a, reshape(g, ishape));
        break;
      case Op::Concat2:
        accumulate(adj, a, slice_cols(g, 0, i0));
        accumulate(adj, b, slice_cols(g, i0, i1));
        break;
      case Op::SliceCols:
        accumulate(adj, a, pad_cols(g, i0, ishape[1]));
        break;
      case Op::PadCols:
        accumulate(adj, a, slice_cols(g, i0, i1));
        break;
      case Op::ColAffine:
        accumulate(adj, a, col_affine(g, cdata, nullptr));
        break;
      case Op::SumAll:
        accumulate(adj, a, fill_like(g, ishape));
        break;
      case Op::FillLike:
        accumulate(adj, a, sum_all(g));
        break;
      case Op::PkStress:
        accumulate(adj, a, pk_stress_adj(g, cdata));
        break;
      case Op::PkStressAdj:
        accumulate(adj, a, pk_stress(g, cdata));
        break;
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace ddhom
