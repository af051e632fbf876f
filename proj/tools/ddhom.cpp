// ddhom - batch front-end for the microstructure homogenization pipeline:
// phase-field simulation, homogenization, feature extraction, mechanical
// testing, dataset assembly, network training / search / prediction, and
// local benchmarks. Every command is reproducible from the experiment
// manifest (config + seeds).

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>

#include "ddhom/checkpoint.hpp"
#include "ddhom/config.hpp"
#include "ddhom/contour.hpp"
#include "ddhom/csvio.hpp"
#include "ddhom/dataset.hpp"
#include "ddhom/features.hpp"
#include "ddhom/frameio.hpp"
#include "ddhom/homogenize.hpp"
#include "ddhom/hypersearch.hpp"
#include "ddhom/kbnn.hpp"
#include "ddhom/mechtest.hpp"
#include "ddhom/pipeline.hpp"
#include "ddhom/simulate.hpp"
#include "ddhom/svg.hpp"

namespace fs = std::filesystem;
using namespace ddhom;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSchema = 3;
constexpr int kExitSolver = 4;

struct Experiment {
  fs::path dir;
  ExperimentConfig cfg;

  Pipeline pipeline() const {
    Pipeline p;
    p.dir = dir;
    p.cfg = cfg;
    return p;
  }

  fs::path runs_dir() const { return dir / "runs"; }
  fs::path images_dir() const { return dir / "images"; }
  fs::path datasets_dir() const { return dir / "datasets"; }
  fs::path models_dir() const { return dir / "models"; }
  fs::path run_dir(int r) const { return runs_dir() / Pipeline::run_name(r); }
  static std::string run_name(int r) { return Pipeline::run_name(r); }
  static std::string frame_name(int f) { return Pipeline::frame_name(f); }

  void update_manifest(const std::string& command, const nlohmann::json& outputs) const {
    nlohmann::json m;
    fs::path mp = dir / "manifest.json";
    if (fs::exists(mp)) {
      std::ifstream in(mp);
      m = nlohmann::json::parse(in, nullptr, false);
      if (m.is_discarded()) m = nlohmann::json::object();
    }
    m["format"] = "ddhom-experiment-v1";
    m["rng"] = Philox::kName;
    m["config"] = cfg.to_json();
    m["inventory"][command] = outputs;
    std::ofstream out(mp);
    out << m.dump(2) << "\n";
  }
};

std::vector<std::string> homog_header() {
  return {"run_id", "frame_id", "F11", "F12", "F21", "F22", "E11", "E12", "E22",
          "P11",    "P12",      "P21", "P22", "Psi_mech", "Psi_total"};
}

void append_homog_row(CsvWriter& w, const HomogenizedRecord& r) {
  w.row({r.run_id, std::to_string(r.frame_id), fmt_double(r.F_avg(0, 0)), fmt_double(r.F_avg(0, 1)),
         fmt_double(r.F_avg(1, 0)), fmt_double(r.F_avg(1, 1)), fmt_double(r.E_avg(0, 0)),
         fmt_double(r.E_avg(0, 1)), fmt_double(r.E_avg(1, 1)), fmt_double(r.P_avg(0, 0)),
         fmt_double(r.P_avg(0, 1)), fmt_double(r.P_avg(1, 0)), fmt_double(r.P_avg(1, 1)),
         fmt_double(r.Psi_mech), fmt_double(r.Psi_total)});
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(Experiment& exp, int runs_override, std::int64_t seed_override) {
  if (seed_override >= 0) exp.cfg.master_seed = static_cast<std::uint64_t>(seed_override);
  int runs = runs_override > 0 ? runs_override : exp.cfg.runs;
  auto outcomes = exp.pipeline().simulate_runs(runs);
  nlohmann::json outputs;
  outputs["runs"] = nlohmann::json::array();
  int failures = 0;
  for (const auto& oc : outcomes) {
    if (oc.ok)
      outputs["runs"].push_back({{"run_id", oc.run_id}, {"seed", oc.seed}, {"u1", oc.bc.u1},
                                 {"u2", oc.bc.u2}, {"frames", exp.cfg.sim.steps}});
    else {
      ++failures;
      outputs["runs"].push_back({{"run_id", oc.run_id}, {"error", oc.error}});
    }
  }
  exp.update_manifest("simulate", outputs);
  if (failures == runs) throw ConvergenceError("all simulation runs failed", 0.0);
  if (failures > 0) std::cerr << "[simulate] " << failures << " of " << runs << " runs failed\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// featurize
// ---------------------------------------------------------------------------

int cmd_featurize(Experiment& exp) {
  int count = exp.pipeline().featurize_all();
  nlohmann::json outputs;
  outputs["frames"] = count;
  exp.update_manifest("featurize", outputs);
  std::cout << "[featurize] " << count << " frames\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// mechtest
// ---------------------------------------------------------------------------

int cmd_mechtest(Experiment& exp) {
  Pipeline::MechTestSummary summary = exp.pipeline().mechtest_all();
  nlohmann::json outputs;
  outputs["d3"] = {{"run", exp.cfg.d3_run}, {"frame", summary.d3_frame}, {"tests", exp.cfg.d3_tests}};
  nlohmann::json sampled = nlohmann::json::array();
  for (auto [r, f] : summary.sampled) sampled.push_back({{"run", r}, {"frame", f}});
  outputs["d4"] = {{"microstructures", summary.d4_microstructures},
                   {"tests_per_microstructure", exp.cfg.d4_tests_per_microstructure},
                   {"sampled", sampled}};
  exp.update_manifest("mechtest", outputs);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

int cmd_dataset(Experiment& exp) {
  auto sizes = exp.pipeline().build_datasets();
  nlohmann::json outputs;
  for (const auto& [name, n] : sizes) outputs[name] = n;
  exp.update_manifest("dataset", outputs);
  std::cout << "[dataset] built: " << outputs.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void write_history(const fs::path& dir, const TrainHistory& hist) {
  CsvWriter w((dir / "loss_history.csv").string(), {"epoch", "loss"});
  for (std::size_t e = 0; e < hist.epoch_loss.size(); ++e)
    w.row({std::to_string(e), fmt_double(hist.epoch_loss[e])});
  std::vector<double> xs(hist.epoch_loss.size()), ys = hist.epoch_loss;
  for (std::size_t e = 0; e < xs.size(); ++e) xs[e] = static_cast<double>(e);
  SvgPlot plot("learning curve", "epoch", "loss");
  plot.log_y(true);
  plot.add_line(xs, ys, "#1f77b4", "training loss");
  plot.write((dir / "learning_curve.svg").string());
}

void write_train_rows(const fs::path& dir, const std::vector<int>& rows) {
  nlohmann::json j = rows;
  std::ofstream out(dir / "train_rows.json");
  out << j.dump() << "\n";
}

int cmd_train(Experiment& exp, const std::string& model_kind, std::string dataset_name, double beta_flag,
              bool boundary_only, std::string image_mode, const std::string& enn_path,
              std::string out_name) {
  if (beta_flag < 0.0) throw ConfigError("--penalize must be >= 0");
  fs::create_directories(exp.models_dir());
  SplitSpec split_spec;
  split_spec.test_fraction = exp.cfg.test_fraction;
  split_spec.seed = exp.cfg.master_seed;
  TrainConfig tc = exp.cfg.train_config(/*final=*/true);
  nlohmann::json outputs;

  auto finish_net = [&](Network& net, const Dataset& d, const std::vector<int>& trainval,
                        const std::vector<int>& test, const TrainHistory& hist, const fs::path& mdir,
                        const std::string& label_col) {
    write_history(mdir, hist);
    write_train_rows(mdir, trainval);
    // held-out quality
    std::vector<double> actual = d.gather(label_col, test);
    Tensor X = net.input().image ? load_image_batch(d, test, false) : d.matrix(microstructure_feature_names(), test);
    Tensor z = net.predict(X);
    double r2 = r_squared(std::vector<double>(z.data.begin(), z.data.end()), actual);
    std::cout << "[train] final loss " << hist.final_loss << ", held-out R^2(" << label_col << ") = " << r2
              << "\n";
    outputs["final_loss"] = hist.final_loss;
    outputs["holdout_r2"] = r2;
  };

  if (model_kind == "enn-dnn" || model_kind == "enn-cnn") {
    if (dataset_name.empty()) dataset_name = "D_I";
    Dataset d = load_dataset((exp.datasets_dir() / (dataset_name + ".csv")).string());
    if (d.schema != "D_I" && d.schema != "D_II")
      throw SchemaError("model " + model_kind + " expects D_I or D_II, got " + d.schema);
    Split sp = split_dataset(d.size(), split_spec);
    Network net;
    if (model_kind == "enn-dnn") {
      net = enn_dnn_preset(exp.cfg.enn_hidden_layers, exp.cfg.enn_neurons);
    } else {
      net = d.schema == "D_I" ? enn_cnn_single_preset(d.image_nx, d.image_ny)
                              : enn_cnn_multi_preset(d.image_nx, d.image_ny);
    }
    net.init_params(exp.cfg.master_seed);
    TrainHistory hist = train_enn(net, d, sp.trainval, tc);
    if (out_name.empty()) out_name = model_kind == "enn-dnn" ? "enn_dnn" : "enn_cnn";
    fs::path mdir = exp.models_dir() / out_name;
    save_network(net, mdir.string(), exp.cfg.to_json()["training"], "loss_history.csv");
    finish_net(net, d, sp.trainval, sp.test, hist, mdir, "psi_mech_0_avg");
    outputs["checkpoint"] = mdir.string();
    outputs["dataset"] = dataset_name;
    exp.update_manifest("train_" + out_name, outputs);
    return kExitOk;
  }

  if (model_kind != "kbnn" && model_kind != "kbnn-cnn")
    throw ConfigError("unknown --model: " + model_kind);

  if (dataset_name.empty()) dataset_name = model_kind == "kbnn" ? "D_III" : "D_IV";
  Dataset d = load_dataset((exp.datasets_dir() / (dataset_name + ".csv")).string());
  Split sp = split_dataset(d.size(), split_spec);

  KBNNModel model;
  std::string enn_dir = enn_path.empty() ? (exp.models_dir() / "enn_dnn").string() : enn_path;
  model.enn = load_network(enn_dir);
  model.enn_takes_image = model.enn.input().image;
  model.shift = shift_source_from(exp.cfg.shift_source);
  model.beta = beta_flag >= 0.0 ? beta_flag : 0.0;
  if (model_kind == "kbnn") {
    d.require_schema("D_III");
    model.mnn = mnn_plain_preset(exp.cfg.mnn_hidden_layers, exp.cfg.mnn_neurons, exp.cfg.l2_factor);
    model.mnn_image = MnnImageMode::None;
  } else {
    d.require_schema("D_IV");
    model.mnn = mnn_cnn_enhanced_preset(d.image_nx, d.image_ny);
    if (boundary_only)
      model.mnn_image = MnnImageMode::OriginalBoundary;
    else if (image_mode.empty() || image_mode == "perturbed")
      model.mnn_image = MnnImageMode::Perturbed;
    else
      model.mnn_image = image_mode_from(image_mode);
  }
  model.mnn.init_params(exp.cfg.master_seed);

  std::uint64_t enn_hash_before = param_hash(model.enn);
  TrainHistory hist = train_kbnn(model, d, sp.trainval, tc);
  if (param_hash(model.enn) != enn_hash_before)
    throw Error("internal: embedded network changed during training");

  if (out_name.empty())
    out_name = model_kind == "kbnn" ? "kbnn" : ("kbnn_cnn_" + image_mode_name(model.mnn_image));
  fs::path mdir = exp.models_dir() / out_name;
  save_kbnn(model, mdir.string(), exp.cfg.to_json()["training"], "mnn/loss_history.csv");
  write_history(mdir / "mnn", hist);
  write_train_rows(mdir, sp.trainval);

  // held-out quality on the shifted labels and the stress components
  KbnnPrediction pred = predict_energy(model, d, sp.test);
  std::vector<double> actual_dpsi = shifted_labels(model, d, sp.test);
  double r2_dpsi = r_squared(pred.delta_psi, actual_dpsi);
  Tensor P = predict_stress(model, d, sp.test);
  const char* pnames[4] = {"P11", "P12", "P21", "P22"};
  std::cout << "[train] final loss " << hist.final_loss << ", held-out R^2(dPsi) = " << r2_dpsi << "\n";
  outputs["holdout_r2_dpsi"] = r2_dpsi;
  for (int q = 0; q < 4; ++q) {
    std::vector<double> pq(sp.test.size()), aq = d.gather(pnames[q], sp.test);
    for (std::size_t i = 0; i < pq.size(); ++i) pq[i] = P.data[i * 4 + static_cast<std::size_t>(q)];
    double r2 = r_squared(pq, aq);
    std::cout << "[train] held-out R^2(" << pnames[q] << ") = " << r2 << "\n";
    outputs[std::string("holdout_r2_") + pnames[q]] = r2;
  }
  outputs["final_loss"] = hist.final_loss;
  outputs["checkpoint"] = mdir.string();
  outputs["dataset"] = dataset_name;
  outputs["beta"] = model.beta;
  outputs["image_mode"] = image_mode_name(model.mnn_image);
  exp.update_manifest("train_" + out_name, outputs);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

int cmd_search(Experiment& exp, const std::string& space_kind, std::string dataset_name) {
  if (dataset_name.empty()) dataset_name = "D_I";
  Dataset d = load_dataset((exp.datasets_dir() / (dataset_name + ".csv")).string());
  if (d.schema != "D_I" && d.schema != "D_II")
    throw SchemaError("search expects a base-energy dataset, got " + d.schema);
  SplitSpec split_spec;
  split_spec.test_fraction = exp.cfg.test_fraction;
  split_spec.seed = exp.cfg.master_seed;
  Split sp = split_dataset(d.size(), split_spec);

  SearchSpace space;
  if (space_kind == "dense") {
    space.kind = SearchKind::Dense;
    space.input_features = 5;
  } else if (space_kind == "conv") {
    space.kind = SearchKind::Conv;
    space.image_nx = d.image_nx;
    space.image_ny = d.image_ny;
  } else {
    throw ConfigError("--space must be dense or conv");
  }
  SearchConfig scfg = exp.cfg.search;
  scfg.epochs_per_trial = exp.cfg.search_epochs;
  scfg.seed = exp.cfg.master_seed;

  std::vector<double> psi0 = d.column("psi_mech_0_avg");
  Tensor Xall = space.kind == SearchKind::Dense
                    ? d.matrix(microstructure_feature_names(),
                               [&] {
                                 std::vector<int> all(d.size());
                                 for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
                                 return all;
                               }())
                    : Tensor{};

  TrialTrainer trainer = [&](const Candidate& c, const std::vector<int>& train_rows,
                             const std::vector<int>& val_rows) {
    Network net = candidate_network(space, c);
    net.init_params(exp.cfg.master_seed);
    TrainConfig tc = exp.cfg.train_config(/*final=*/false);
    std::vector<double> yt;
    for (int r : train_rows) yt.push_back(psi0[static_cast<std::size_t>(r)]);
    std::vector<double> yv;
    for (int r : val_rows) yv.push_back(psi0[static_cast<std::size_t>(r)]);
    if (space.kind == SearchKind::Dense) {
      Tensor Xt = gather_rows(Xall, train_rows, 0, static_cast<int>(train_rows.size()));
      train_network(net, Xt, nullptr, yt, tc);
      Tensor Xv = gather_rows(Xall, val_rows, 0, static_cast<int>(val_rows.size()));
      return mse_scaled(net, Xv, nullptr, yv);
    }
    Tensor Xt = load_image_batch(d, train_rows, false);
    train_network(net, Xt, nullptr, yt, tc);
    Tensor Xv = load_image_batch(d, val_rows, false);
    return mse_scaled(net, Xv, nullptr, yv);
  };

  std::cout << "[search] space=" << space_kind << " rows=" << sp.trainval.size() << "\n";
  SearchResult res = run_search(space, sp.trainval, scfg, trainer);

  fs::create_directories(exp.dir / "search");
  CsvWriter log((exp.dir / "search" / ("search_" + space_kind + ".csv")).string(),
                {"stage", "candidate", "v_total", "fold_losses", "mean_loss", "status"});
  for (const auto& t : res.trials) {
    std::string folds;
    for (std::size_t k = 0; k < t.fold_losses.size(); ++k)
      folds += (k ? ";" : "") + fmt_double(t.fold_losses[k]);
    log.row({std::to_string(t.stage), t.candidate.describe(space.kind), std::to_string(t.candidate.v_total),
             folds, t.failed ? "nan" : fmt_double(t.mean_loss), t.failed ? "failed" : "ok"});
  }

  // final retraining of the winner on all train+validation rows
  Network winner = candidate_network(space, res.best);
  winner.init_params(exp.cfg.master_seed);
  TrainConfig tc = exp.cfg.train_config(/*final=*/true);
  std::vector<double> yt;
  for (int r : sp.trainval) yt.push_back(psi0[static_cast<std::size_t>(r)]);
  TrainHistory hist;
  if (space.kind == SearchKind::Dense) {
    Tensor Xt = gather_rows(Xall, sp.trainval, 0, static_cast<int>(sp.trainval.size()));
    hist = train_network(winner, Xt, nullptr, yt, tc);
  } else {
    Tensor Xt = load_image_batch(d, sp.trainval, false);
    hist = train_network(winner, Xt, nullptr, yt, tc);
  }
  fs::path mdir = exp.models_dir() / ("search_" + space_kind + "_winner");
  save_network(winner, mdir.string(), exp.cfg.to_json()["search"], "loss_history.csv");
  write_history(mdir, hist);
  write_train_rows(mdir, sp.trainval);

  std::cout << "[search] winner " << res.best.describe(space.kind) << " v_total=" << res.best.v_total
            << " cv_loss=" << res.best_mean_loss << "\n";
  nlohmann::json outputs;
  outputs["winner"] = res.best.describe(space.kind);
  outputs["v_total"] = res.best.v_total;
  outputs["cv_loss"] = res.best_mean_loss;
  outputs["checkpoint"] = mdir.string();
  exp.update_manifest("search_" + space_kind, outputs);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

void parity_svg(const fs::path& path, const std::string& qty, const std::vector<double>& actual,
                const std::vector<double>& predicted) {
  SvgPlot plot("parity: " + qty, "actual " + qty, "predicted " + qty);
  plot.add_scatter(actual, predicted, "#1f77b4", qty);
  plot.add_diagonal();
  plot.write(path.string());
}

int cmd_predict(Experiment& exp, const std::string& checkpoint, std::string dataset_name,
                std::string out_name) {
  Dataset d = load_dataset((exp.datasets_dir() / (dataset_name + ".csv")).string());
  std::vector<int> all(d.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  fs::create_directories(exp.dir / "predictions");
  if (out_name.empty()) out_name = fs::path(checkpoint).filename().string() + "_" + dataset_name;
  nlohmann::json outputs;

  bool is_kbnn = fs::exists(fs::path(checkpoint) / "kbnn.json");
  if (is_kbnn) {
    KBNNModel model = load_kbnn(checkpoint);
    d.require_schema(d.schema == "D_III" ? "D_III" : "D_IV");
    KbnnPrediction pred = predict_energy(model, d, all);
    std::vector<double> actual_dpsi = shifted_labels(model, d, all);
    std::vector<double> actual_psi = d.gather("psi_mech_avg", all);
    Tensor P = predict_stress(model, d, all);
    Tensor Pa = d.matrix(stress_aux_names(), all);

    CsvWriter w((exp.dir / "predictions" / (out_name + ".csv")).string(),
                {"run_id", "frame_id", "test_id", "psi_actual", "psi_pred", "dpsi_actual", "dpsi_pred",
                 "P11_actual", "P11_pred", "P12_actual", "P12_pred", "P21_actual", "P21_pred",
                 "P22_actual", "P22_pred"});
    for (std::size_t i = 0; i < all.size(); ++i) {
      std::vector<std::string> cells = {d.run_ids[i], fmt_double(d.at(i, "frame_id")),
                                        fmt_double(d.at(i, "test_id")), fmt_double(actual_psi[i]),
                                        fmt_double(pred.psi[i]), fmt_double(actual_dpsi[i]),
                                        fmt_double(pred.delta_psi[i])};
      for (int q = 0; q < 4; ++q) {
        cells.push_back(fmt_double(Pa.data[i * 4 + static_cast<std::size_t>(q)]));
        cells.push_back(fmt_double(P.data[i * 4 + static_cast<std::size_t>(q)]));
      }
      w.row(cells);
    }

    double r2 = r_squared(pred.delta_psi, actual_dpsi);
    std::cout << "[predict] R^2(dPsi) = " << r2 << "\n";
    outputs["r2_dpsi"] = r2;
    parity_svg(exp.dir / "predictions" / (out_name + "_dpsi.svg"), "dPsi", actual_dpsi, pred.delta_psi);
    const char* pnames[4] = {"P11", "P12", "P21", "P22"};
    SvgPlot combined("parity (normalized): dPsi and P", "actual (normalized)", "predicted (normalized)");
    combined.add_diagonal();
    auto normalize = [](std::vector<double> v) {
      double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
      double span = hi - lo > 0 ? hi - lo : 1.0;
      for (auto& x : v) x = (x - lo) / span;
      return v;
    };
    const char* colors[5] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    combined.add_scatter(normalize(actual_dpsi), normalize(pred.delta_psi), colors[0], "dPsi");
    for (int q = 0; q < 4; ++q) {
      std::vector<double> pq(all.size()), aq(all.size());
      for (std::size_t i = 0; i < all.size(); ++i) {
        pq[i] = P.data[i * 4 + static_cast<std::size_t>(q)];
        aq[i] = Pa.data[i * 4 + static_cast<std::size_t>(q)];
      }
      double r2q = r_squared(pq, aq);
      std::cout << "[predict] R^2(" << pnames[q] << ") = " << r2q << "\n";
      outputs[std::string("r2_") + pnames[q]] = r2q;
      parity_svg(exp.dir / "predictions" / (out_name + "_" + pnames[q] + ".svg"), pnames[q], aq, pq);
      combined.add_scatter(normalize(aq), normalize(pq), colors[q + 1], pnames[q]);
    }
    combined.write((exp.dir / "predictions" / (out_name + "_all.svg")).string());

    // reproduce the stored training loss on the training rows
    fs::path trj = fs::path(checkpoint) / "train_rows.json";
    if (fs::exists(trj)) {
      std::ifstream in(trj);
      std::vector<int> rows = nlohmann::json::parse(in).get<std::vector<int>>();
      std::vector<double> y = shifted_labels(model, d, rows);
      Tensor primary = model.mnn_image == MnnImageMode::None
                           ? d.matrix(strain_feature_names(), rows)
                           : (model.mnn_image == MnnImageMode::OriginalBoundary
                                  ? boundary_mask(load_image_batch(d, rows, false))
                                  : load_image_batch(d, rows, model.mnn_image == MnnImageMode::Perturbed));
      Tensor E = d.matrix(strain_feature_names(), rows);
      const Tensor* extra = model.mnn_image == MnnImageMode::None ? nullptr : &E;
      Tensor y_scaled({static_cast<int>(rows.size()), 1});
      for (std::size_t i = 0; i < rows.size(); ++i)
        y_scaled.data[i] = model.mnn.label_stats.scale(y[i]);
      PenaltySpec pen;
      Tensor Pref, Favg;
      const PenaltySpec* pp = nullptr;
      if (model.beta != 0.0) {
        Pref = d.matrix(stress_aux_names(), rows);
        Favg = d.matrix(defgrad_aux_names(), rows);
        pen.P_ref = &Pref;
        pen.F_avg = &Favg;
        pen.beta = model.beta;
        pen.sigmaP = model.sigmaP;
        pen.strain_input = model.mnn_image == MnnImageMode::None ? StrainInput::Primary : StrainInput::Extra;
        pp = &pen;
      }
      double loss = loss_and_grads(model.mnn, primary, extra, y_scaled, pp, exp.cfg.chunk).loss;
      outputs["training_loss_recomputed"] = loss;
      std::cout << "[predict] training loss recomputed = " << loss << "\n";
    }
  } else {
    Network net = load_network(checkpoint);
    std::vector<double> actual = d.gather("psi_mech_0_avg", all);
    Tensor X = net.input().image ? load_image_batch(d, all, false) : d.matrix(microstructure_feature_names(), all);
    Tensor z = net.predict(X);
    std::vector<double> pred(z.data.begin(), z.data.end());
    CsvWriter w((exp.dir / "predictions" / (out_name + ".csv")).string(),
                {"run_id", "frame_id", "psi0_actual", "psi0_pred"});
    for (std::size_t i = 0; i < all.size(); ++i)
      w.row({d.run_ids[i], fmt_double(d.at(i, "frame_id")), fmt_double(actual[i]), fmt_double(pred[i])});
    double r2 = r_squared(pred, actual);
    std::cout << "[predict] R^2(psi0) = " << r2 << "\n";
    outputs["r2_psi0"] = r2;
    parity_svg(exp.dir / "predictions" / (out_name + "_psi0.svg"), "psi0", actual, pred);

    fs::path trj = fs::path(checkpoint) / "train_rows.json";
    if (fs::exists(trj)) {
      std::ifstream in(trj);
      std::vector<int> rows = nlohmann::json::parse(in).get<std::vector<int>>();
      std::vector<double> y;
      for (int r : rows) y.push_back(actual[static_cast<std::size_t>(r)]);
      Tensor Xt = net.input().image ? load_image_batch(d, rows, false)
                                    : d.matrix(microstructure_feature_names(), rows);
      Tensor y_scaled({static_cast<int>(rows.size()), 1});
      for (std::size_t i = 0; i < rows.size(); ++i) y_scaled.data[i] = net.label_stats.scale(y[i]);
      double loss = loss_and_grads(net, Xt, nullptr, y_scaled, nullptr, exp.cfg.chunk).loss;
      outputs["training_loss_recomputed"] = loss;
      std::cout << "[predict] training loss recomputed = " << loss << "\n";
    }
  }
  exp.update_manifest("predict_" + out_name, outputs);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

int cmd_activations(Experiment& exp, const std::string& checkpoint, const std::string& frame_path,
                    std::string out_dir) {
  Network net = load_network(checkpoint);
  if (!net.input().image) throw SchemaError("activations: checkpoint must be an image-input network");
  GridOperators ops(exp.cfg.grid);
  FieldState s = load_frame(frame_path);
  KinematicsSnapshot k = compute_kinematics(ops, s.u1, s.u2);
  Tensor img({1, exp.cfg.grid.ny, exp.cfg.grid.nx, 1});
  std::copy(k.e2.data(), k.e2.data() + k.e2.size(), img.data.begin());

  Tape tape;
  Network::Built built = net.build(tape, img);
  // first convolutional layer's post-activation output
  int conv_layer = -1;
  for (std::size_t l = 0; l < net.layers().size(); ++l)
    if (std::holds_alternative<Conv2DSpec>(net.layers()[l])) {
      conv_layer = static_cast<int>(l);
      break;
    }
  if (conv_layer < 0) throw SchemaError("activations: network has no convolutional layer");
  const Tensor& act = tape.val(built.layer_outputs[static_cast<std::size_t>(conv_layer)]);
  int H = act.dim(1), W = act.dim(2), C = act.dim(3);
  if (out_dir.empty()) out_dir = (exp.dir / "activations").string();
  fs::create_directories(out_dir);
  for (int c = 0; c < C; ++c) {
    std::vector<double> map(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        map[static_cast<std::size_t>(i) * W + j] =
            act.data[((static_cast<std::size_t>(i) * W) + j) * C + static_cast<std::size_t>(c)];
    char name[64];
    std::snprintf(name, sizeof(name), "filter_%02d.pgm", c);
    write_pgm((fs::path(out_dir) / name).string(), W, H, map);
  }
  std::cout << "[activations] wrote " << C << " filter maps to " << out_dir << "\n";
  nlohmann::json outputs;
  outputs["filters"] = C;
  outputs["dir"] = out_dir;
  exp.update_manifest("activations", outputs);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

int cmd_bench(Experiment& exp, const std::string& checkpoint, std::string dataset_name) {
  using Clock = std::chrono::steady_clock;
  if (dataset_name.empty()) dataset_name = "D_III";
  Dataset d = load_dataset((exp.datasets_dir() / (dataset_name + ".csv")).string());
  std::vector<int> rows(std::min<std::size_t>(d.size(), 64));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);

  CsvWriter w((exp.dir / "bench.csv").string(), {"name", "count", "total_seconds", "per_item_ms"});

  double nn_per_ms = 0.0;
  {
    bool is_kbnn = fs::exists(fs::path(checkpoint) / "kbnn.json");
    auto t0 = Clock::now();
    int reps = 5;
    if (is_kbnn) {
      KBNNModel model = load_kbnn(checkpoint);
      t0 = Clock::now();
      for (int rep = 0; rep < reps; ++rep) {
        predict_energy(model, d, rows);
        predict_stress(model, d, rows);
      }
    } else {
      Network net = load_network(checkpoint);
      Tensor X = net.input().image ? load_image_batch(d, rows, false) : d.matrix(microstructure_feature_names(), rows);
      t0 = Clock::now();
      for (int rep = 0; rep < reps; ++rep) net.predict(X);
    }
    double total = std::chrono::duration<double>(Clock::now() - t0).count();
    long count = static_cast<long>(rows.size()) * reps;
    nn_per_ms = total / count * 1e3;
    w.row({"nn_predict", std::to_string(count), fmt_double(total), fmt_double(nn_per_ms)});
  }

  double dns_per_ms = 0.0;
  {
    // one representative mechanical test on the first run's last frame
    GridOperators ops(exp.cfg.grid);
    MechanicsSolver mech(ops, exp.cfg.material);
    fs::path fp = exp.run_dir(0) / Experiment::frame_name(exp.cfg.sim.steps);
    if (!fs::exists(fp)) throw SchemaError("bench: missing frame " + fp.string());
    FrameMeta meta;
    FieldState base = load_frame(fp.string(), &meta);
    auto specs = sample_loadings(4, exp.cfg.master_seed ^ 0xBE, exp.cfg.perturbation);
    auto t0 = Clock::now();
    for (const auto& spec : specs)
      run_mech_test(ops, mech, base, meta.bc, spec, exp.cfg.mech_newton_tol,
                    exp.cfg.sim.newton_max_iters, 0.0);
    double total = std::chrono::duration<double>(Clock::now() - t0).count();
    dns_per_ms = total / specs.size() * 1e3;
    w.row({"dns_mech_test", std::to_string(specs.size()), fmt_double(total), fmt_double(dns_per_ms)});
  }

  double speedup = nn_per_ms > 0 ? dns_per_ms / nn_per_ms : 0.0;
  w.row({"speedup_dns_over_nn", "1", fmt_double(0.0), fmt_double(speedup)});
  std::cout << "[bench] nn_predict " << nn_per_ms << " ms, dns_mech_test " << dns_per_ms
            << " ms, speedup x" << speedup << "\n";
  nlohmann::json outputs;
  outputs["nn_predict_ms"] = nn_per_ms;
  outputs["dns_mech_test_ms"] = dns_per_ms;
  outputs["speedup"] = speedup;
  exp.update_manifest("bench", outputs);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ddhom: microstructure homogenization and multi-resolution learning pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string exp_dir = "experiment";
  if (const char* env = std::getenv("DDHOM_CONFIG")) config_path = env;
  app.add_option("--config", config_path, "JSON config file (or DDHOM_CONFIG env var)");
  app.add_option("--exp", exp_dir, "experiment directory");

  auto* sim = app.add_subcommand("simulate", "run phase-evolution simulations, write frames");
  int runs = 0;
  std::int64_t seed = -1;
  int workers = 1;
  sim->add_option("--runs", runs, "number of runs (overrides config)");
  sim->add_option("--seed", seed, "master seed (overrides config)");
  sim->add_option("--workers", workers, "worker count (runs are independent; informational here)");

  auto* feat = app.add_subcommand("featurize", "extract features and e2 images from frames");

  auto* mech = app.add_subcommand("mechtest", "apply perturbation loadings to frozen microstructures");
  mech->add_option("--workers", workers, "worker count (tests are independent; informational here)");

  auto* ds = app.add_subcommand("dataset", "assemble the four dataset schemas");

  auto* tr = app.add_subcommand("train", "train a network or KBNN");
  std::string model, dataset_name, image_mode, enn_path, out_name, checkpoint, frame_path, out_dir;
  double beta = -1.0;
  bool boundary_only = false;
  tr->add_option("--model", model, "enn-dnn|enn-cnn|kbnn|kbnn-cnn")->required();
  tr->add_option("--dataset", dataset_name, "dataset name (D_I..D_IV)");
  tr->add_option("--penalize", beta, "stress-penalty weight beta (>= 0)");
  tr->add_flag("--boundary-only", boundary_only, "expose only the boundary ring of the e2 image");
  tr->add_option("--image-mode", image_mode, "perturbed|original|original_boundary|none");
  tr->add_option("--enn", enn_path, "embedded-network checkpoint directory");
  tr->add_option("--out", out_name, "model output name");

  auto* se = app.add_subcommand("search", "hyperparameter grid search");
  std::string space_kind = "dense";
  se->add_option("--space", space_kind, "dense|conv");
  se->add_option("--dataset", dataset_name, "dataset name");
  se->add_option("--workers", workers, "worker count (trials are independent; informational here)");

  auto* pr = app.add_subcommand("predict", "predictions, parity plots and R^2");
  pr->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  pr->add_option("--dataset", dataset_name, "dataset name")->required();
  pr->add_option("--out", out_name, "output name");

  auto* ac = app.add_subcommand("activations", "per-filter activation maps of the first conv layer");
  ac->add_option("--checkpoint", checkpoint, "image-input network checkpoint")->required();
  ac->add_option("--frame", frame_path, "frame file")->required();
  ac->add_option("--out", out_dir, "output directory");

  auto* be = app.add_subcommand("bench", "local timing of NN prediction vs DNS testing");
  be->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  be->add_option("--dataset", dataset_name, "dataset name");

  CLI11_PARSE(app, argc, argv);

  try {
    Experiment exp;
    exp.dir = exp_dir;
    fs::create_directories(exp.dir);
    exp.cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    exp.cfg.validate();

    if (sim->parsed()) return cmd_simulate(exp, runs, seed);
    if (feat->parsed()) return cmd_featurize(exp);
    if (mech->parsed()) return cmd_mechtest(exp);
    if (ds->parsed()) return cmd_dataset(exp);
    if (tr->parsed()) {
      if (tr->count("--penalize") && beta < 0.0) throw ConfigError("--penalize must be >= 0");
      double beta_eff = beta >= 0.0 ? beta : (model == "kbnn-cnn" ? exp.cfg.beta : 0.0);
      return cmd_train(exp, model, dataset_name, beta_eff, boundary_only, image_mode, enn_path, out_name);
    }
    if (se->parsed()) return cmd_search(exp, space_kind, dataset_name);
    if (pr->parsed()) return cmd_predict(exp, checkpoint, dataset_name, out_name);
    if (ac->parsed()) return cmd_activations(exp, checkpoint, frame_path, out_dir);
    if (be->parsed()) return cmd_bench(exp, checkpoint, dataset_name);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SchemaError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitSchema;
  } catch (const ConvergenceError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const StepFailureError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
