#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "ddhom/rng.hpp"
#include "ddhom/tape.hpp"
#include "ddhom/tensor.hpp"

namespace ddhom {

enum class Activation { Linear, ReLU, Softplus };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::ReLU: return "relu";
    case Activation::Softplus: return "softplus";
  }
  return "?";
}
inline Activation activation_from(const std::string& s) {
  if (s == "linear") return Activation::Linear;
  if (s == "relu") return Activation::ReLU;
  if (s == "softplus") return Activation::Softplus;
  throw SchemaError("unknown activation: " + s);
}

struct DenseSpec {
  int units = 1;
  Activation act = Activation::Linear;
};
struct Conv2DSpec {
  int filters = 1;
  ConvGeom geom;
  Activation act = Activation::ReLU;
};
struct MaxPool2DSpec {
  ConvGeom geom;
};
struct FlattenSpec {};
// Joins the auxiliary feature input (e.g. strain components) at this point.
struct ConcatExtraSpec {};

using LayerSpec = std::variant<DenseSpec, Conv2DSpec, MaxPool2DSpec, FlattenSpec, ConcatExtraSpec>;

struct InputSpec {
  bool image = false;
  int features = 0;  // width of the vector input when !image
  int h = 0, w = 0, c = 1;
  int extra_features = 0;  // width of the input joined at ConcatExtra
};

// Per-feature z-score statistics; a constant column keeps std = 1.
struct ColumnStats {
  std::vector<double> mean, stdev;

  static ColumnStats fit(const Tensor& X) {
    if (X.rank() != 2) throw InvalidInputError("ColumnStats::fit: rank-2 required");
    int N = X.dim(0), M = X.dim(1);
    ColumnStats s;
    s.mean.assign(M, 0.0);
    s.stdev.assign(M, 1.0);
    for (int j = 0; j < M; ++j) {
      KahanSum acc;
      for (int i = 0; i < N; ++i) acc.add(X.data[static_cast<std::size_t>(i) * M + j]);
      s.mean[j] = acc.value() / N;
      KahanSum sq;
      for (int i = 0; i < N; ++i) {
        double d = X.data[static_cast<std::size_t>(i) * M + j] - s.mean[j];
        sq.add(d * d);
      }
      double var = sq.value() / N;
      s.stdev[j] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }
  bool empty() const { return mean.empty(); }
};

struct LabelStats {
  double mean = 0.0;
  double stdev = 1.0;

  static LabelStats fit(const std::vector<double>& y) {
    LabelStats s;
    KahanSum acc;
    for (double v : y) acc.add(v);
    s.mean = y.empty() ? 0.0 : acc.value() / y.size();
    KahanSum sq;
    for (double v : y) sq.add((v - s.mean) * (v - s.mean));
    double var = y.empty() ? 0.0 : sq.value() / y.size();
    s.stdev = var > 0.0 ? std::sqrt(var) : 1.0;
    return s;
  }
  double scale(double v) const { return (v - mean) / stdev; }
  double unscale(double v) const { return v * stdev + mean; }
};

struct LayerParams {
  Tensor W, b;
  bool has_params() const { return !W.shape.empty(); }
  long long count() const { return has_params() ? W.numel() + b.numel() : 0; }
};

// Feedforward network over the layer vocabulary of this project: dense and
// convolutional stacks with an optional second input joined mid-graph.
// Normalization statistics and label scaling are part of the model and are
// applied inside the tape graph so input gradients chain through them.
class Network {
 public:
  Network() = default;
  Network(InputSpec in, std::vector<LayerSpec> layers) : input_(in), layers_(std::move(layers)) {
    infer_shapes();
    params_.resize(layers_.size());
    trainable_.assign(layers_.size(), true);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (auto* d = std::get_if<DenseSpec>(&layers_[l])) {
        params_[l].W = Tensor({in_width_[l], d->units});
        params_[l].b = Tensor({d->units});
      } else if (auto* cv = std::get_if<Conv2DSpec>(&layers_[l])) {
        params_[l].W = Tensor({cv->geom.kh, cv->geom.kw, in_chan_[l], cv->filters});
        params_[l].b = Tensor({cv->filters});
      }
    }
  }

  const InputSpec& input() const { return input_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }
  std::vector<bool>& trainable() { return trainable_; }
  const std::vector<bool>& trainable() const { return trainable_; }
  void set_all_trainable(bool v) { trainable_.assign(layers_.size(), v); }

  ColumnStats feature_stats;  // primary vector input
  ColumnStats extra_stats;    // auxiliary input
  LabelStats label_stats;
  double input_l2_factor = 0.0;  // L2 kernel penalty on the first dense layer

  long long count_variables() const {
    long long n = 0;
    for (const auto& p : params_) n += p.count();
    return n;
  }

  /// Fan-based uniform initialization, deterministic in the seed.
  void init_params(std::uint64_t seed) {
    int pindex = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (!params_[l].has_params()) continue;
      long long fan_in = 0, fan_out = 0;
      if (std::holds_alternative<DenseSpec>(layers_[l])) {
        fan_in = params_[l].W.dim(0);
        fan_out = params_[l].W.dim(1);
      } else {
        const auto& Wt = params_[l].W;
        fan_in = static_cast<long long>(Wt.dim(0)) * Wt.dim(1) * Wt.dim(2);
        fan_out = static_cast<long long>(Wt.dim(0)) * Wt.dim(1) * Wt.dim(3);
      }
      double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Philox rng = make_rng(seed, RngStream::WeightInit, static_cast<std::uint64_t>(pindex));
      for (auto& w : params_[l].W.data) w = rng.uniform(-limit, limit);
      for (auto& b : params_[l].b.data) b = 0.0;
      ++pindex;
    }
  }

  struct Built {
    NodeId primary = -1;
    NodeId extra = -1;
    NodeId out_scaled = -1;
    NodeId out_physical = -1;
    std::vector<NodeId> param_ids;           // ids of trainable parameter leaves, in order
    std::vector<std::size_t> param_layers;   // layer index per entry (W and b pairs)
    std::vector<NodeId> layer_outputs;       // post-activation output of each layer
    NodeId l2_term = -1;                     // optional input-layer L2 penalty (unscaled)
  };

  /// Builds the forward graph for a batch; parameters become tape leaves.
  Built build(Tape& tape, const Tensor& primary, const Tensor* extra = nullptr) const {
    validate_batch(primary, extra);
    Built built;
    built.primary = tape.leaf(primary);
    NodeId cur = built.primary;
    if (!input_.image && !feature_stats.empty()) cur = apply_norm(tape, cur, feature_stats);
    NodeId extra_in = -1;
    if (input_.extra_features > 0) {
      if (!extra) throw InvalidInputError("network: extra input required");
      built.extra = tape.leaf(*extra);
      extra_in = built.extra;
      if (!extra_stats.empty()) extra_in = apply_norm(tape, extra_in, extra_stats);
    }

    bool l2_done = false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (const auto* d = std::get_if<DenseSpec>(&layers_[l])) {
        NodeId W = tape.leaf(params_[l].W);
        NodeId b = tape.leaf(params_[l].b);
        if (trainable_[l]) {
          built.param_ids.push_back(W);
          built.param_ids.push_back(b);
          built.param_layers.push_back(l);
          built.param_layers.push_back(l);
        }
        cur = tape.add_bias(tape.matmul(cur, W), b);
        cur = activate(tape, cur, d->act);
        if (!l2_done && input_l2_factor > 0.0) {
          built.l2_term = tape.sum_all(tape.mul(W, W));
          l2_done = true;
        }
      } else if (const auto* cv = std::get_if<Conv2DSpec>(&layers_[l])) {
        NodeId W = tape.leaf(params_[l].W);
        NodeId b = tape.leaf(params_[l].b);
        if (trainable_[l]) {
          built.param_ids.push_back(W);
          built.param_ids.push_back(b);
          built.param_layers.push_back(l);
          built.param_layers.push_back(l);
        }
        cur = tape.add_bias_chan(tape.conv2d(cur, W, cv->geom), b);
        cur = activate(tape, cur, cv->act);
      } else if (const auto* mp = std::get_if<MaxPool2DSpec>(&layers_[l])) {
        cur = tape.maxpool(cur, mp->geom);
      } else if (std::holds_alternative<FlattenSpec>(layers_[l])) {
        const Tensor& t = tape.val(cur);
        cur = tape.reshape(cur, {t.dim(0), static_cast<int>(t.numel() / t.dim(0))});
      } else if (std::holds_alternative<ConcatExtraSpec>(layers_[l])) {
        if (extra_in < 0) throw InvalidInputError("network: concat layer but no extra input");
        cur = tape.concat2(cur, extra_in);
      }
      built.layer_outputs.push_back(cur);
    }
    built.out_scaled = cur;
    built.out_physical = tape.affine(cur, label_stats.stdev, label_stats.mean);
    return built;
  }

  /// Physical-units prediction (label scaling inverted).
  Tensor predict(const Tensor& primary, const Tensor* extra = nullptr, int chunk = 256) const {
    int N = primary.dim(0);
    Tensor out({N, out_width_});
    for (int begin = 0; begin < N; begin += chunk) {
      int len = std::min(chunk, N - begin);
      Tensor pc = slice_rows(primary, begin, len);
      Tensor ec;
      const Tensor* ep = nullptr;
      if (input_.extra_features > 0 && extra) {
        ec = slice_rows(*extra, begin, len);
        ep = &ec;
      }
      Tape tape;
      Built b = build(tape, pc, ep);
      const Tensor& y = tape.val(b.out_physical);
      for (int i = 0; i < len; ++i)
        for (int j = 0; j < out_width_; ++j)
          out.data[static_cast<std::size_t>(begin + i) * out_width_ + j] =
              y.data[static_cast<std::size_t>(i) * out_width_ + j];
    }
    return out;
  }

  static Tensor slice_rows(const Tensor& X, int begin, int len) {
    std::vector<int> shape = X.shape;
    shape[0] = len;
    long long row = X.numel() / X.dim(0);
    Tensor out(shape);
    std::copy(X.data.begin() + static_cast<long long>(begin) * row,
              X.data.begin() + static_cast<long long>(begin + len) * row, out.data.begin());
    return out;
  }

  int output_width() const { return out_width_; }
  const std::vector<std::vector<int>>& layer_shapes() const { return out_shapes_; }

 private:
  static NodeId activate(Tape& tape, NodeId x, Activation a) {
    switch (a) {
      case Activation::Linear: return x;
      case Activation::ReLU: return tape.relu(x);
      case Activation::Softplus: return tape.softplus(x);
    }
    return x;
  }

  static NodeId apply_norm(Tape& tape, NodeId x, const ColumnStats& st) {
    auto scale = std::make_shared<Tensor>(Tensor({static_cast<int>(st.mean.size())}));
    auto shift = std::make_shared<Tensor>(Tensor({static_cast<int>(st.mean.size())}));
    for (std::size_t j = 0; j < st.mean.size(); ++j) {
      scale->data[j] = 1.0 / st.stdev[j];
      shift->data[j] = -st.mean[j] / st.stdev[j];
    }
    return tape.col_affine(x, scale, shift);
  }

  void validate_batch(const Tensor& primary, const Tensor* extra) const {
    if (input_.image) {
      if (primary.rank() != 4 || primary.dim(1) != input_.h || primary.dim(2) != input_.w ||
          primary.dim(3) != input_.c)
        throw InvalidInputError("network: image input shape mismatch, got " + primary.shape_str());
    } else {
      if (primary.rank() != 2 || primary.dim(1) != input_.features)
        throw InvalidInputError("network: feature input shape mismatch, got " + primary.shape_str());
    }
    if (input_.extra_features > 0 && extra && (extra->rank() != 2 || extra->dim(1) != input_.extra_features))
      throw InvalidInputError("network: extra input shape mismatch, got " + extra->shape_str());
  }

  void infer_shapes() {
    std::vector<int> cur;
    if (input_.image)
      cur = {1, input_.h, input_.w, input_.c};
    else
      cur = {1, input_.features};
    in_width_.assign(layers_.size(), 0);
    in_chan_.assign(layers_.size(), 0);
    out_shapes_.clear();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (const auto* d = std::get_if<DenseSpec>(&layers_[l])) {
        if (cur.size() != 2)
          throw InvalidInputError("network layer " + std::to_string(l) + ": dense needs rank-2 input");
        in_width_[l] = cur[1];
        cur = {1, d->units};
      } else if (const auto* cv = std::get_if<Conv2DSpec>(&layers_[l])) {
        if (cur.size() != 4)
          throw InvalidInputError("network layer " + std::to_string(l) + ": conv needs rank-4 input");
        in_chan_[l] = cur[3];
        int ho = cv->geom.out(cur[1], true), wo = cv->geom.out(cur[2], false);
        if (ho <= 0 || wo <= 0)
          throw InvalidInputError("network layer " + std::to_string(l) + ": empty conv output");
        cur = {1, ho, wo, cv->filters};
      } else if (const auto* mp = std::get_if<MaxPool2DSpec>(&layers_[l])) {
        if (cur.size() != 4)
          throw InvalidInputError("network layer " + std::to_string(l) + ": pool needs rank-4 input");
        int ho = mp->geom.out(cur[1], true), wo = mp->geom.out(cur[2], false);
        if (ho <= 0 || wo <= 0)
          throw InvalidInputError("network layer " + std::to_string(l) + ": empty pool output");
        cur = {1, ho, wo, cur[3]};
      } else if (std::holds_alternative<FlattenSpec>(layers_[l])) {
        long long n = 1;
        for (std::size_t k = 1; k < cur.size(); ++k) n *= cur[k];
        cur = {1, static_cast<int>(n)};
      } else if (std::holds_alternative<ConcatExtraSpec>(layers_[l])) {
        if (cur.size() != 2)
          throw InvalidInputError("network layer " + std::to_string(l) + ": concat needs rank-2 input");
        if (input_.extra_features <= 0)
          throw InvalidInputError("network layer " + std::to_string(l) + ": no extra input declared");
        cur = {1, cur[1] + input_.extra_features};
      }
      out_shapes_.push_back(cur);
    }
    if (cur.size() != 2)
      throw InvalidInputError("network: output must be rank-2 (add a flatten/dense tail)");
    out_width_ = cur[1];
  }

  InputSpec input_;
  std::vector<LayerSpec> layers_;
  std::vector<LayerParams> params_;
  std::vector<bool> trainable_;
  std::vector<int> in_width_, in_chan_;
  std::vector<std::vector<int>> out_shapes_;
  int out_width_ = 1;
};

}  // namespace ddhom
