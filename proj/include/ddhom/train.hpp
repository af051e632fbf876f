#pragma once

#include <array>
#include <limits>
#include <cstdint>
#include <functional>
#include <vector>

#include "ddhom/network.hpp"
#include "ddhom/optim.hpp"

namespace ddhom {

enum class StrainInput { Primary, Extra };

// Stress-penalty attachment for the derivative-penalized loss: the network's
// strain input gradient is pushed through P = F * sym(dPsi/dE) and compared
// with reference stresses, component-normalized so the weight beta is
// dimensionless.
struct PenaltySpec {
  const Tensor* P_ref = nullptr;  // (N,4) physical reference stresses
  const Tensor* F_avg = nullptr;  // (N,4) deformation gradients
  double beta = 0.0;
  std::array<double, 4> sigmaP{1.0, 1.0, 1.0, 1.0};
  StrainInput strain_input = StrainInput::Primary;
};

struct LossGrads {
  double loss = 0.0;
  double mse = 0.0;
  double penalty = 0.0;
  std::vector<Tensor> grads;  // per trainable parameter leaf, build order
};

namespace detail {

inline Tensor rows(const Tensor& X, int begin, int len) { return Network::slice_rows(X, begin, len); }

}  // namespace detail

/// Loss and exact parameter gradients of
///   (1/m) sum[(y - z)^2 + beta * ||(P_kbnn - P_ref)/sigma||^2] + l2 term,
/// evaluated in chunks to bound tape memory. The penalty path differentiates
/// the input gradient, i.e. genuine double backpropagation.
inline LossGrads loss_and_grads(const Network& net, const Tensor& X, const Tensor* extra,
                                const Tensor& y_scaled, const PenaltySpec* pen = nullptr,
                                int chunk = 128) {
  const int N = X.dim(0);
  if (y_scaled.dim(0) != N) throw InvalidInputError("loss_and_grads: label count mismatch");
  LossGrads out;
  KahanSum mse_acc, pen_acc;
  auto sigma_inv = std::make_shared<Tensor>(Tensor({4}));
  if (pen)
    for (int j = 0; j < 4; ++j) sigma_inv->data[static_cast<std::size_t>(j)] = 1.0 / pen->sigmaP[static_cast<std::size_t>(j)];

  for (int begin = 0; begin < N; begin += chunk) {
    int len = std::min(chunk, N - begin);
    Tensor Xc = detail::rows(X, begin, len);
    Tensor Ec;
    const Tensor* ep = nullptr;
    if (extra) {
      Ec = detail::rows(*extra, begin, len);
      ep = &Ec;
    }
    Tape tape;
    Network::Built built = net.build(tape, Xc, ep);
    NodeId ylab = tape.leaf(detail::rows(y_scaled, begin, len));
    NodeId diff = tape.sub(built.out_scaled, ylab);
    NodeId loss_id = tape.sum_all(tape.mul(diff, diff));
    NodeId pen_id = -1;
    if (pen && pen->beta != 0.0) {
      NodeId strain_leaf = pen->strain_input == StrainInput::Primary ? built.primary : built.extra;
      if (strain_leaf < 0) throw InvalidInputError("loss_and_grads: penalty strain input missing");
      std::vector<NodeId> gin = tape.gradients(built.out_physical, {strain_leaf});
      auto F_chunk = std::make_shared<Tensor>(detail::rows(*pen->F_avg, begin, len));
      NodeId P = tape.pk_stress(gin[0], F_chunk);
      NodeId Pref = tape.leaf(detail::rows(*pen->P_ref, begin, len));
      NodeId pd = tape.col_affine(tape.sub(P, Pref), sigma_inv, nullptr);
      pen_id = tape.sum_all(tape.mul(pd, pd));
      loss_id = tape.add(loss_id, tape.scale(pen_id, pen->beta));
    }
    std::vector<NodeId> g = tape.gradients(loss_id, built.param_ids);
    if (out.grads.empty()) {
      out.grads.reserve(g.size());
      for (NodeId gi : g) out.grads.push_back(tape.val(gi));
    } else {
      for (std::size_t k = 0; k < g.size(); ++k) {
        const Tensor& gv = tape.val(g[k]);
        for (std::size_t i = 0; i < gv.data.size(); ++i) out.grads[k].data[i] += gv.data[i];
      }
    }
    mse_acc.add(tape.val(loss_id).data[0] - (pen_id >= 0 ? pen->beta * tape.val(pen_id).data[0] : 0.0));
    if (pen_id >= 0) pen_acc.add(tape.val(pen_id).data[0]);
  }

  double inv_m = 1.0 / static_cast<double>(N);
  for (auto& gt : out.grads)
    for (auto& v : gt.data) v *= inv_m;
  out.mse = mse_acc.value() * inv_m;
  out.penalty = (pen ? pen->beta : 0.0) * pen_acc.value() * inv_m;
  out.loss = out.mse + out.penalty;

  // L2 kernel regularization on the first dense layer (when configured):
  // factor * sum(W^2), not averaged over the batch.
  if (net.input_l2_factor > 0.0 && !out.grads.empty()) {
    // first trainable dense layer's W is the first entry in build order
    const std::vector<LayerParams>& lp = net.params();
    const std::vector<bool>& tr = net.trainable();
    for (std::size_t l = 0; l < lp.size(); ++l) {
      if (!lp[l].has_params() || !tr[l]) continue;
      KahanSum sq;
      for (double w : lp[l].W.data) sq.add(w * w);
      out.loss += net.input_l2_factor * sq.value();
      for (std::size_t i = 0; i < lp[l].W.data.size(); ++i)
        out.grads[0].data[i] += 2.0 * net.input_l2_factor * lp[l].W.data[i];
      break;
    }
  }
  return out;
}

/// Exact gradient of the physical-units output w.r.t. one raw input block
/// (normalization and label scaling chain rules included).
inline Tensor input_gradient(const Network& net, const Tensor& X, const Tensor* extra,
                             StrainInput which = StrainInput::Primary, int chunk = 256) {
  const int N = X.dim(0);
  Tensor out;
  for (int begin = 0; begin < N; begin += chunk) {
    int len = std::min(chunk, N - begin);
    Tensor Xc = detail::rows(X, begin, len);
    Tensor Ec;
    const Tensor* ep = nullptr;
    if (extra) {
      Ec = detail::rows(*extra, begin, len);
      ep = &Ec;
    }
    Tape tape;
    Network::Built built = net.build(tape, Xc, ep);
    NodeId leafid = which == StrainInput::Primary ? built.primary : built.extra;
    if (leafid < 0) throw InvalidInputError("input_gradient: requested input missing");
    std::vector<NodeId> g = tape.gradients(built.out_physical, {leafid});
    const Tensor& gv = tape.val(g[0]);
    if (out.shape.empty()) {
      std::vector<int> shape = gv.shape;
      shape[0] = N;
      out = Tensor(shape);
    }
    long long row = gv.numel() / len;
    std::copy(gv.data.begin(), gv.data.end(), out.data.begin() + static_cast<long long>(begin) * row);
  }
  return out;
}

inline Tensor gather_rows(const Tensor& X, const std::vector<int>& order, int begin, int len) {
  std::vector<int> shape = X.shape;
  shape[0] = len;
  Tensor out(shape);
  long long row = X.numel() / X.dim(0);
  for (int i = 0; i < len; ++i) {
    long long src = order[static_cast<std::size_t>(begin + i)];
    std::copy(X.data.begin() + src * row, X.data.begin() + (src + 1) * row,
              out.data.begin() + static_cast<long long>(i) * row);
  }
  return out;
}

struct TrainConfig {
  int epochs = 2000;
  LrSchedule schedule;
  std::uint64_t seed = 0;
  int chunk = 128;
  int batch_size = 0;  // 0 = full batch
  bool fit_normalization = true;
};

struct TrainHistory {
  std::vector<double> epoch_loss;
  double final_loss = 0.0;
};

/// Adam training against the (optionally penalized) MSE; deterministic for a
/// given seed. Normalization and label scaling are fit on the given data
/// when requested, then frozen into the network.
inline TrainHistory train_network(Network& net, const Tensor& X, const Tensor* extra,
                                  const std::vector<double>& y, const TrainConfig& cfg,
                                  const PenaltySpec* pen = nullptr) {
  const int N = X.dim(0);
  if (static_cast<int>(y.size()) != N) throw InvalidInputError("train_network: label count mismatch");
  if (cfg.fit_normalization) {
    if (!net.input().image) net.feature_stats = ColumnStats::fit(X);
    if (extra && net.input().extra_features > 0) net.extra_stats = ColumnStats::fit(*extra);
    net.label_stats = LabelStats::fit(y);
  }
  Tensor y_scaled({N, 1});
  for (int i = 0; i < N; ++i) y_scaled.data[static_cast<std::size_t>(i)] = net.label_stats.scale(y[static_cast<std::size_t>(i)]);

  // collect trainable parameter pointers in build order
  std::vector<Tensor*> tparams;
  for (std::size_t l = 0; l < net.params().size(); ++l)
    if (net.params()[l].has_params() && net.trainable()[l]) {
      tparams.push_back(&net.params()[l].W);
      tparams.push_back(&net.params()[l].b);
    }
  if (tparams.empty()) throw InvalidInputError("train_network: no trainable parameters");

  Adam adam;
  TrainHistory hist;
  hist.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_at(cfg.schedule, epoch);
    if (cfg.batch_size <= 0 || cfg.batch_size >= N) {
      LossGrads lg = loss_and_grads(net, X, extra, y_scaled, pen, cfg.chunk);
      if (!std::isfinite(lg.loss))
        throw ConvergenceError("train_network: non-finite loss at epoch " + std::to_string(epoch), lg.loss);
      adam.step(tparams, lg.grads, lr);
      hist.epoch_loss.push_back(lg.loss);
    } else {
      // deterministic minibatch order per epoch
      std::vector<int> order(static_cast<std::size_t>(N));
      for (int i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i;
      Philox rng = make_rng(cfg.seed, RngStream::WeightInit, 0xB000 + static_cast<std::uint64_t>(epoch));
      shuffle(order, rng);
      KahanSum epoch_acc;
      int batches = 0;
      for (int begin = 0; begin < N; begin += cfg.batch_size) {
        int len = std::min(cfg.batch_size, N - begin);
        Tensor Xb = gather_rows(X, order, begin, len);
        Tensor Eb;
        const Tensor* ep = nullptr;
        if (extra) {
          Eb = gather_rows(*extra, order, begin, len);
          ep = &Eb;
        }
        Tensor yb = gather_rows(y_scaled, order, begin, len);
        Tensor Pb, Fb;
        PenaltySpec pb;
        const PenaltySpec* pps = nullptr;
        if (pen) {
          pb = *pen;
          Pb = gather_rows(*pen->P_ref, order, begin, len);
          Fb = gather_rows(*pen->F_avg, order, begin, len);
          pb.P_ref = &Pb;
          pb.F_avg = &Fb;
          pps = &pb;
        }
        LossGrads lg = loss_and_grads(net, Xb, ep, yb, pps, cfg.chunk);
        if (!std::isfinite(lg.loss))
          throw ConvergenceError("train_network: non-finite loss at epoch " + std::to_string(epoch), lg.loss);
        adam.step(tparams, lg.grads, lr);
        epoch_acc.add(lg.loss);
        ++batches;
      }
      hist.epoch_loss.push_back(epoch_acc.value() / batches);
    }
  }
  // post-training loss so a reload can reproduce it exactly
  Tensor y_all({N, 1});
  for (int i = 0; i < N; ++i) y_all.data[static_cast<std::size_t>(i)] = net.label_stats.scale(y[static_cast<std::size_t>(i)]);
  hist.final_loss = loss_and_grads(net, X, extra, y_all, pen, cfg.chunk).loss;
  hist.epoch_loss.push_back(hist.final_loss);
  return hist;
}

/// Mean squared error in scaled-label space (validation metric).
inline double mse_scaled(const Network& net, const Tensor& X, const Tensor* extra,
                         const std::vector<double>& y) {
  Tensor z = net.predict(X, extra);
  KahanSum acc;
  for (int i = 0; i < z.dim(0); ++i) {
    double d = net.label_stats.scale(z.data[static_cast<std::size_t>(i)]) -
               net.label_stats.scale(y[static_cast<std::size_t>(i)]);
    acc.add(d * d);
  }
  return acc.value() / z.dim(0);
}

/// Coefficient of determination of predictions vs. actuals.
inline double r_squared(const std::vector<double>& pred, const std::vector<double>& actual) {
  if (pred.size() != actual.size() || pred.empty()) throw InvalidInputError("r_squared: size mismatch");
  KahanSum mean_acc;
  for (double a : actual) mean_acc.add(a);
  double mean = mean_acc.value() / actual.size();
  KahanSum ss_res, ss_tot;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ss_res.add((actual[i] - pred[i]) * (actual[i] - pred[i]));
    ss_tot.add((actual[i] - mean) * (actual[i] - mean));
  }
  if (ss_tot.value() == 0.0) return ss_res.value() == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  return 1.0 - ss_res.value() / ss_tot.value();
}

}  // namespace ddhom
