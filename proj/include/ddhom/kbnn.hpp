#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ddhom/checkpoint.hpp"
#include "ddhom/dataset.hpp"
#include "ddhom/frameio.hpp"
#include "ddhom/network.hpp"
#include "ddhom/train.hpp"

namespace ddhom {

// ---------------------------------------------------------------------------
// Architecture presets
// ---------------------------------------------------------------------------

inline Network enn_dnn_preset(int n_hl = 1, int n_npl = 76) {
  InputSpec is;
  is.features = 5;
  std::vector<LayerSpec> layers;
  for (int l = 0; l < n_hl; ++l) layers.push_back(DenseSpec{n_npl, Activation::Softplus});
  layers.push_back(DenseSpec{1, Activation::Linear});
  return Network(is, std::move(layers));
}

namespace detail {

inline void conv_pool_block(std::vector<LayerSpec>& layers, int filters) {
  ConvGeom cg;
  cg.kh = cg.kw = 3;
  cg.sh = cg.sw = 1;
  cg.ph = cg.pw = 2;
  ConvGeom pg;
  pg.kh = pg.kw = 2;
  pg.sh = pg.sw = 1;
  pg.ph = pg.pw = 1;
  layers.push_back(Conv2DSpec{filters, cg, Activation::ReLU});
  layers.push_back(MaxPool2DSpec{pg});
}

}  // namespace detail

/// Convolutional base-energy network for a single run's microstructures.
inline Network enn_cnn_single_preset(int nx = 61, int ny = 61) {
  InputSpec is;
  is.image = true;
  is.h = ny;
  is.w = nx;
  is.c = 1;
  std::vector<LayerSpec> layers;
  for (int f : {2, 3, 5, 6}) detail::conv_pool_block(layers, f);
  layers.push_back(FlattenSpec{});
  layers.push_back(DenseSpec{1, Activation::Linear});
  return Network(is, std::move(layers));
}

/// Convolutional base-energy network across runs.
inline Network enn_cnn_multi_preset(int nx = 61, int ny = 61) {
  InputSpec is;
  is.image = true;
  is.h = ny;
  is.w = nx;
  is.c = 1;
  std::vector<LayerSpec> layers;
  for (int f : {9, 15, 16}) detail::conv_pool_block(layers, f);
  layers.push_back(FlattenSpec{});
  layers.push_back(DenseSpec{1, Activation::Linear});
  return Network(is, std::move(layers));
}

/// Plain master network on the strain components.
inline Network mnn_plain_preset(int n_hl = 2, int n_npl = 26, double l2 = 0.001) {
  InputSpec is;
  is.features = 3;
  std::vector<LayerSpec> layers;
  for (int l = 0; l < n_hl; ++l) layers.push_back(DenseSpec{n_npl, Activation::Softplus});
  layers.push_back(DenseSpec{1, Activation::Linear});
  Network net(is, std::move(layers));
  net.input_l2_factor = l2;
  return net;
}

/// Convolution-enhanced master network: e2 image branch concatenated with
/// the strain components.
inline Network mnn_cnn_enhanced_preset(int nx = 61, int ny = 61) {
  InputSpec is;
  is.image = true;
  is.h = ny;
  is.w = nx;
  is.c = 1;
  is.extra_features = 3;
  ConvGeom cg;
  cg.kh = cg.kw = 3;
  cg.sh = cg.sw = 2;
  cg.ph = cg.pw = 2;
  ConvGeom pg;
  pg.kh = pg.kw = 2;
  pg.sh = pg.sw = 1;
  pg.ph = pg.pw = 1;
  std::vector<LayerSpec> layers;
  for (int f : {8, 16, 24}) {
    layers.push_back(Conv2DSpec{f, cg, Activation::ReLU});
    layers.push_back(MaxPool2DSpec{pg});
  }
  layers.push_back(FlattenSpec{});
  layers.push_back(DenseSpec{8, Activation::ReLU});
  layers.push_back(ConcatExtraSpec{});
  for (int l = 0; l < 3; ++l) layers.push_back(DenseSpec{48, Activation::Softplus});
  layers.push_back(DenseSpec{1, Activation::Linear});
  return Network(is, std::move(layers));
}

// ---------------------------------------------------------------------------
// KBNN model
// ---------------------------------------------------------------------------

enum class ShiftSource { EnnPrediction, DatasetPsi0 };
enum class MnnImageMode { None, Perturbed, Original, OriginalBoundary };

inline std::string shift_source_name(ShiftSource s) {
  return s == ShiftSource::EnnPrediction ? "enn" : "dataset_psi0";
}
inline ShiftSource shift_source_from(const std::string& s) {
  if (s == "enn") return ShiftSource::EnnPrediction;
  if (s == "dataset_psi0") return ShiftSource::DatasetPsi0;
  throw ConfigError("unknown shift source: " + s);
}
inline std::string image_mode_name(MnnImageMode m) {
  switch (m) {
    case MnnImageMode::None: return "none";
    case MnnImageMode::Perturbed: return "perturbed";
    case MnnImageMode::Original: return "original";
    case MnnImageMode::OriginalBoundary: return "original_boundary";
  }
  return "?";
}
inline MnnImageMode image_mode_from(const std::string& s) {
  if (s == "none") return MnnImageMode::None;
  if (s == "perturbed") return MnnImageMode::Perturbed;
  if (s == "original") return MnnImageMode::Original;
  if (s == "original_boundary") return MnnImageMode::OriginalBoundary;
  throw ConfigError("unknown mnn image mode: " + s);
}

// Frozen embedded network plus trainable master network. The prediction
// decomposes as Psi = ENN(microstructure) + MNN(strains, [e2 image]).
struct KBNNModel {
  Network enn;
  Network mnn;
  bool enn_takes_image = false;
  ShiftSource shift = ShiftSource::EnnPrediction;
  MnnImageMode mnn_image = MnnImageMode::None;
  double beta = 0.0;
  std::array<double, 4> sigmaP{1.0, 1.0, 1.0, 1.0};
};

/// FNV-1a over the raw parameter bytes; used to assert ENN freezing.
inline std::uint64_t param_hash(const Network& net) {
  std::uint64_t h = 1469598103934665603ull;
  auto eat = [&](const Tensor& t) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data.data());
    for (std::size_t i = 0; i < t.data.size() * sizeof(double); ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& lp : net.params())
    if (lp.has_params()) {
      eat(lp.W);
      eat(lp.b);
    }
  return h;
}

/// Zeroes interior pixels, keeping the one-pixel boundary ring. Idempotent.
inline Tensor boundary_mask(const Tensor& image) {
  if (image.rank() == 2) {
    Tensor out = image;
    int H = image.dim(0), W = image.dim(1);
    for (int i = 1; i + 1 < H; ++i)
      for (int j = 1; j + 1 < W; ++j) out.data[static_cast<std::size_t>(i) * W + j] = 0.0;
    return out;
  }
  if (image.rank() == 4) {
    Tensor out = image;
    int N = image.dim(0), H = image.dim(1), W = image.dim(2), C = image.dim(3);
    for (int n = 0; n < N; ++n)
      for (int i = 1; i + 1 < H; ++i)
        for (int j = 1; j + 1 < W; ++j)
          for (int c = 0; c < C; ++c)
            out.data[(((static_cast<std::size_t>(n) * H + i) * W) + j) * C + c] = 0.0;
    return out;
  }
  throw InvalidInputError("boundary_mask: rank-2 or rank-4 image required");
}

// ---------------------------------------------------------------------------
// Training and prediction
// ---------------------------------------------------------------------------

/// Base-energy (ENN) training on D_I or D_II. The label is the
/// volume-averaged base mechanical free energy.
inline TrainHistory train_enn(Network& net, const Dataset& d, const std::vector<int>& rows,
                              const TrainConfig& cfg) {
  if (d.schema != "D_I" && d.schema != "D_II")
    throw SchemaError("train_enn expects D_I or D_II, got " + d.schema);
  std::vector<double> y = d.gather("psi_mech_0_avg", rows);
  if (net.input().image) {
    Tensor imgs = load_image_batch(d, rows, /*perturbed=*/false);
    return train_network(net, imgs, nullptr, y, cfg);
  }
  Tensor X = d.matrix(microstructure_feature_names(), rows);
  return train_network(net, X, nullptr, y, cfg);
}

/// ENN base-energy predictions for selected rows (cached by callers).
inline std::vector<double> enn_base_energy(const KBNNModel& model, const Dataset& d,
                                           const std::vector<int>& rows) {
  Tensor z;
  if (model.enn_takes_image) {
    Tensor imgs = load_image_batch(d, rows, /*perturbed=*/false);
    z = model.enn.predict(imgs);
  } else {
    Tensor X = d.matrix(microstructure_feature_names(), rows);
    z = model.enn.predict(X);
  }
  return std::vector<double>(z.data.begin(), z.data.end());
}

/// Shifted labels Y_i = Psi_mech_i - Psi0_i with the configured shift source.
inline std::vector<double> shifted_labels(const KBNNModel& model, const Dataset& d,
                                          const std::vector<int>& rows) {
  std::vector<double> y = d.gather("psi_mech_avg", rows);
  std::vector<double> base;
  if (model.shift == ShiftSource::EnnPrediction)
    base = enn_base_energy(model, d, rows);
  else
    base = d.gather("psi_mech_0_avg", rows);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= base[i];
  return y;
}

namespace detail {

inline Tensor mnn_primary_input(const KBNNModel& model, const Dataset& d, const std::vector<int>& rows) {
  switch (model.mnn_image) {
    case MnnImageMode::None: return d.matrix(strain_feature_names(), rows);
    case MnnImageMode::Perturbed: return load_image_batch(d, rows, /*perturbed=*/true);
    case MnnImageMode::Original: return load_image_batch(d, rows, /*perturbed=*/false);
    case MnnImageMode::OriginalBoundary:
      return boundary_mask(load_image_batch(d, rows, /*perturbed=*/false));
  }
  throw InvalidInputError("mnn_primary_input: bad mode");
}

}  // namespace detail

struct KbnnPrediction {
  std::vector<double> delta_psi;  // MNN output
  std::vector<double> psi;        // ENN + MNN
};

/// Energy prediction: delta from the MNN, total with the ENN base added.
inline KbnnPrediction predict_energy(const KBNNModel& model, const Dataset& d,
                                     const std::vector<int>& rows) {
  KbnnPrediction out;
  Tensor primary = detail::mnn_primary_input(model, d, rows);
  Tensor z;
  if (model.mnn_image == MnnImageMode::None) {
    z = model.mnn.predict(primary);
  } else {
    Tensor E = d.matrix(strain_feature_names(), rows);
    z = model.mnn.predict(primary, &E);
  }
  out.delta_psi.assign(z.data.begin(), z.data.end());
  std::vector<double> base = enn_base_energy(model, d, rows);
  out.psi.resize(out.delta_psi.size());
  for (std::size_t i = 0; i < out.psi.size(); ++i) out.psi[i] = out.delta_psi[i] + base[i];
  return out;
}

/// Stress prediction P = F_avg * sym(d(dPsi)/dE); the E12 derivative is
/// split evenly between the offdiagonal slots.
inline Tensor predict_stress(const KBNNModel& model, const Dataset& d, const std::vector<int>& rows) {
  Tensor primary = detail::mnn_primary_input(model, d, rows);
  Tensor S;
  Tensor E;
  if (model.mnn_image == MnnImageMode::None) {
    S = input_gradient(model.mnn, primary, nullptr, StrainInput::Primary);
  } else {
    E = d.matrix(strain_feature_names(), rows);
    S = input_gradient(model.mnn, primary, &E, StrainInput::Extra);
  }
  Tensor F = d.matrix(defgrad_aux_names(), rows);
  int N = S.dim(0);
  Tensor P({N, 4});
  for (int i = 0; i < N; ++i) {
    const double* f = &F.data[static_cast<std::size_t>(i) * 4];
    const double* s = &S.data[static_cast<std::size_t>(i) * 3];
    double s11 = s[0], sh = 0.5 * s[1], s22 = s[2];
    double* p = &P.data[static_cast<std::size_t>(i) * 4];
    p[0] = f[0] * s11 + f[1] * sh;
    p[1] = f[0] * sh + f[1] * s22;
    p[2] = f[2] * s11 + f[3] * sh;
    p[3] = f[2] * sh + f[3] * s22;
  }
  return P;
}

/// The penalized MSE of given values; pure arithmetic so hand-checkable.
inline double penalized_mse(const std::vector<double>& Y, const std::vector<double>& Z,
                            const Tensor& P_kbnn, const Tensor& P_dns, double beta) {
  if (Y.size() != Z.size() || static_cast<int>(Y.size()) != P_kbnn.dim(0) ||
      !P_kbnn.same_shape(P_dns))
    throw SchemaError("penalized_mse: size mismatch");
  KahanSum acc;
  for (std::size_t i = 0; i < Y.size(); ++i) {
    double d = Y[i] - Z[i];
    double term = d * d;
    for (int j = 0; j < 4; ++j) {
      double pd = P_kbnn.data[i * 4 + static_cast<std::size_t>(j)] -
                  P_dns.data[i * 4 + static_cast<std::size_t>(j)];
      term += beta * pd * pd;
    }
    acc.add(term);
  }
  return acc.value() / static_cast<double>(Y.size());
}

/// Trains the MNN on shifted labels; ENN parameters are never touched. For
/// penalized runs the stress targets come from the dataset's auxiliary
/// columns and the per-component normalization is fit on the training rows.
inline TrainHistory train_kbnn(KBNNModel& model, const Dataset& d, const std::vector<int>& rows,
                               const TrainConfig& cfg) {
  if (d.schema != "D_III" && d.schema != "D_IV")
    throw SchemaError("train_kbnn expects D_III or D_IV, got " + d.schema);
  model.enn.set_all_trainable(false);
  std::vector<double> y = shifted_labels(model, d, rows);

  Tensor primary = detail::mnn_primary_input(model, d, rows);
  Tensor E;
  const Tensor* extra = nullptr;
  StrainInput strain_in = StrainInput::Primary;
  if (model.mnn_image != MnnImageMode::None) {
    E = d.matrix(strain_feature_names(), rows);
    extra = &E;
    strain_in = StrainInput::Extra;
  }

  Tensor P_ref, F_avg;
  PenaltySpec pen;
  const PenaltySpec* pp = nullptr;
  if (model.beta != 0.0) {
    for (const auto& cname : stress_aux_names()) d.col(cname);  // schema check
    P_ref = d.matrix(stress_aux_names(), rows);
    F_avg = d.matrix(defgrad_aux_names(), rows);
    ColumnStats ps = ColumnStats::fit(P_ref);
    for (int j = 0; j < 4; ++j) model.sigmaP[static_cast<std::size_t>(j)] = ps.stdev[static_cast<std::size_t>(j)];
    pen.P_ref = &P_ref;
    pen.F_avg = &F_avg;
    pen.beta = model.beta;
    pen.sigmaP = model.sigmaP;
    pen.strain_input = strain_in;
    pp = &pen;
  }
  return train_network(model.mnn, primary, extra, y, cfg, pp);
}

// ---------------------------------------------------------------------------
// Persistence: a KBNN checkpoint is a pair of network checkpoints plus the
// routing and loss flags in a manifest.
// ---------------------------------------------------------------------------

inline void save_kbnn(const KBNNModel& model, const std::string& dir,
                      const nlohmann::json& training_config = {},
                      const std::string& loss_history_file = "") {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_network(model.enn, (fs::path(dir) / "enn").string());
  save_network(model.mnn, (fs::path(dir) / "mnn").string(), training_config, loss_history_file);
  nlohmann::json j;
  j["format"] = "ddhom-kbnn-v1";
  j["enn_takes_image"] = model.enn_takes_image;
  j["shift_source"] = shift_source_name(model.shift);
  j["mnn_image_mode"] = image_mode_name(model.mnn_image);
  j["beta"] = model.beta;
  j["sigmaP"] = model.sigmaP;
  std::ofstream out(fs::path(dir) / "kbnn.json");
  if (!out) throw Error("cannot write kbnn manifest in " + dir);
  out << j.dump(2) << "\n";
}

inline KBNNModel load_kbnn(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "kbnn.json");
  if (!in) throw Error("not a kbnn checkpoint (kbnn.json missing): " + dir);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != std::string("ddhom-kbnn-v1")) throw SchemaError("bad kbnn manifest in " + dir);
  KBNNModel model;
  model.enn = load_network((fs::path(dir) / "enn").string());
  model.mnn = load_network((fs::path(dir) / "mnn").string());
  model.enn_takes_image = j["enn_takes_image"];
  model.shift = shift_source_from(j["shift_source"]);
  model.mnn_image = image_mode_from(j["mnn_image_mode"]);
  model.beta = j["beta"];
  auto sp = j["sigmaP"].get<std::vector<double>>();
  for (int k = 0; k < 4; ++k) model.sigmaP[static_cast<std::size_t>(k)] = sp[static_cast<std::size_t>(k)];
  return model;
}

}  // namespace ddhom
