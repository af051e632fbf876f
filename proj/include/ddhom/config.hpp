#pragma once

#include <fstream>
#include <json.hpp>
#include <set>
#include <string>

#include "ddhom/dataset.hpp"
#include "ddhom/grid.hpp"
#include "ddhom/hypersearch.hpp"
#include "ddhom/material.hpp"
#include "ddhom/mechtest.hpp"
#include "ddhom/train.hpp"

namespace ddhom {

// Whole-pipeline configuration. Defaults reproduce the reference protocol at
// production scale; experiments override through a single JSON file whose
// unknown keys are rejected.
struct ExperimentConfig {
  // simulation
  GridSpec grid;
  SimConfig sim;
  MaterialParams material;
  int runs = 1;
  double bc_min = -1e-5;
  double bc_max = 3e-5;

  // features
  FeatureConfig features;

  // mechanical testing
  int d3_run = 0;
  int d3_frame = 400;
  int d3_tests = 1600;
  int d4_microstructures_per_run = 9;
  int d4_tests_per_microstructure = 335;
  double mech_newton_tol = 1e-8;
  PerturbationRanges perturbation;

  // training
  int epochs = 10000;
  int search_epochs = 2000;
  double lr0 = 0.001;
  double v_decay = 0.92;
  double search_v_decay = 0.7;
  int n_decay = 100;
  int batch_size = 0;
  int chunk = 64;
  double beta = 0.01;
  double l2_factor = 0.001;
  std::string shift_source = "enn";
  double test_fraction = 0.10;
  int enn_hidden_layers = 1;
  int enn_neurons = 76;
  int mnn_hidden_layers = 2;
  int mnn_neurons = 26;

  // hyperparameter search
  SearchConfig search;

  std::uint64_t master_seed = 0;

  TrainConfig train_config(bool final_training) const {
    TrainConfig tc;
    tc.epochs = final_training ? epochs : search_epochs;
    tc.schedule.lr0 = lr0;
    tc.schedule.v_decay = final_training ? v_decay : search_v_decay;
    tc.schedule.n_decay = n_decay;
    tc.seed = master_seed;
    tc.batch_size = batch_size;
    tc.chunk = chunk;
    return tc;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seeds"] = {{"master", master_seed}};
    j["simulation"] = {{"nx", grid.nx},
                       {"ny", grid.ny},
                       {"Lx", grid.Lx},
                       {"Ly", grid.Ly},
                       {"runs", runs},
                       {"steps", sim.steps},
                       {"discard", sim.discard},
                       {"dt", sim.dt},
                       {"c0_mean", sim.c0_mean},
                       {"c0_amplitude", sim.c0_amplitude},
                       {"newton_tol", sim.newton_tol},
                       {"newton_max_iters", sim.newton_max_iters},
                       {"dt_backtrack_factor", sim.dt_backtrack_factor},
                       {"max_backtracks", sim.max_backtracks},
                       {"stabilization", sim.stabilization},
                       {"bc_min", bc_min},
                       {"bc_max", bc_max}};
    j["material"] = {{"d_c", material.d_c},      {"d_e", material.d_e},
                     {"s_e", material.s_e},      {"kappa", material.kappa},
                     {"lambda_e", material.lambda_e}, {"mobility", material.mobility},
                     {"l_e", material.l_e}};
    j["features"] = {{"c_threshold", features.c_threshold},
                     {"e2_level", features.e2_level},
                     {"include_domain_boundary", features.include_domain_boundary}};
    j["mechtest"] = {{"d3_run", d3_run},
                     {"d3_frame", d3_frame},
                     {"d3_tests", d3_tests},
                     {"d4_microstructures_per_run", d4_microstructures_per_run},
                     {"d4_tests_per_microstructure", d4_tests_per_microstructure},
                     {"newton_tol", mech_newton_tol},
                     {"biaxial_range", perturbation.biaxial},
                     {"shear_range", perturbation.shear}};
    j["training"] = {{"epochs", epochs},
                     {"search_epochs", search_epochs},
                     {"lr0", lr0},
                     {"v_decay", v_decay},
                     {"search_v_decay", search_v_decay},
                     {"n_decay", n_decay},
                     {"batch_size", batch_size},
                     {"chunk", chunk},
                     {"beta", beta},
                     {"l2_factor", l2_factor},
                     {"shift_source", shift_source},
                     {"test_fraction", test_fraction},
                     {"enn_hidden_layers", enn_hidden_layers},
                     {"enn_neurons", enn_neurons},
                     {"mnn_hidden_layers", mnn_hidden_layers},
                     {"mnn_neurons", mnn_neurons}};
    j["search"] = {{"stages", search.stages},
                   {"samples_per_stage", search.samples_per_stage},
                   {"K", search.K},
                   {"top_fraction", search.top_fraction}};
    return j;
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    auto section = [&](const char* name, const std::set<std::string>& known) -> nlohmann::json {
      if (!j.contains(name)) return nlohmann::json::object();
      const auto& s = j.at(name);
      if (!s.is_object()) throw ConfigError(std::string("config section must be an object: ") + name);
      for (auto it = s.begin(); it != s.end(); ++it)
        if (!known.count(it.key()))
          throw ConfigError(std::string("unknown config key: ") + name + "." + it.key());
      return s;
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
      static const std::set<std::string> top = {"seeds", "simulation", "material", "features",
                                                "mechtest", "training", "search"};
      if (!top.count(it.key())) throw ConfigError("unknown config section: " + it.key());
    }

    auto seeds = section("seeds", {"master"});
    c.master_seed = seeds.value("master", c.master_seed);

    auto sim = section("simulation",
                       {"nx", "ny", "Lx", "Ly", "runs", "steps", "discard", "dt", "c0_mean", "c0_amplitude",
                        "newton_tol", "newton_max_iters", "dt_backtrack_factor", "max_backtracks",
                        "stabilization", "bc_min", "bc_max"});
    c.grid.nx = sim.value("nx", c.grid.nx);
    c.grid.ny = sim.value("ny", c.grid.ny);
    c.grid.Lx = sim.value("Lx", c.grid.Lx);
    c.grid.Ly = sim.value("Ly", c.grid.Ly);
    c.runs = sim.value("runs", c.runs);
    c.sim.steps = sim.value("steps", c.sim.steps);
    c.sim.discard = sim.value("discard", c.sim.discard);
    c.sim.dt = sim.value("dt", c.sim.dt);
    c.sim.c0_mean = sim.value("c0_mean", c.sim.c0_mean);
    c.sim.c0_amplitude = sim.value("c0_amplitude", c.sim.c0_amplitude);
    c.sim.newton_tol = sim.value("newton_tol", c.sim.newton_tol);
    c.sim.newton_max_iters = sim.value("newton_max_iters", c.sim.newton_max_iters);
    c.sim.dt_backtrack_factor = sim.value("dt_backtrack_factor", c.sim.dt_backtrack_factor);
    c.sim.max_backtracks = sim.value("max_backtracks", c.sim.max_backtracks);
    c.sim.stabilization = sim.value("stabilization", c.sim.stabilization);
    c.bc_min = sim.value("bc_min", c.bc_min);
    c.bc_max = sim.value("bc_max", c.bc_max);

    auto mat = section("material", {"d_c", "d_e", "s_e", "kappa", "lambda_e", "mobility", "l_e"});
    c.material.d_c = mat.value("d_c", c.material.d_c);
    c.material.d_e = mat.value("d_e", c.material.d_e);
    c.material.s_e = mat.value("s_e", c.material.s_e);
    c.material.kappa = mat.value("kappa", c.material.kappa);
    c.material.lambda_e = mat.value("lambda_e", c.material.lambda_e);
    c.material.mobility = mat.value("mobility", c.material.mobility);
    c.material.l_e = mat.value("l_e", c.material.l_e);

    auto feat = section("features", {"c_threshold", "e2_level", "include_domain_boundary"});
    c.features.c_threshold = feat.value("c_threshold", c.features.c_threshold);
    c.features.e2_level = feat.value("e2_level", c.features.e2_level);
    c.features.include_domain_boundary =
        feat.value("include_domain_boundary", c.features.include_domain_boundary);

    auto mech = section("mechtest", {"d3_run", "d3_frame", "d3_tests", "d4_microstructures_per_run",
                                     "d4_tests_per_microstructure", "newton_tol", "biaxial_range",
                                     "shear_range"});
    c.d3_run = mech.value("d3_run", c.d3_run);
    c.d3_frame = mech.value("d3_frame", c.d3_frame);
    c.d3_tests = mech.value("d3_tests", c.d3_tests);
    c.d4_microstructures_per_run = mech.value("d4_microstructures_per_run", c.d4_microstructures_per_run);
    c.d4_tests_per_microstructure =
        mech.value("d4_tests_per_microstructure", c.d4_tests_per_microstructure);
    c.mech_newton_tol = mech.value("newton_tol", c.mech_newton_tol);
    c.perturbation.biaxial = mech.value("biaxial_range", c.perturbation.biaxial);
    c.perturbation.shear = mech.value("shear_range", c.perturbation.shear);

    auto tr = section("training",
                      {"epochs", "search_epochs", "lr0", "v_decay", "search_v_decay", "n_decay",
                       "batch_size", "chunk", "beta", "l2_factor", "shift_source", "test_fraction",
                       "enn_hidden_layers", "enn_neurons", "mnn_hidden_layers", "mnn_neurons"});
    c.epochs = tr.value("epochs", c.epochs);
    c.search_epochs = tr.value("search_epochs", c.search_epochs);
    c.lr0 = tr.value("lr0", c.lr0);
    c.v_decay = tr.value("v_decay", c.v_decay);
    c.search_v_decay = tr.value("search_v_decay", c.search_v_decay);
    c.n_decay = tr.value("n_decay", c.n_decay);
    c.batch_size = tr.value("batch_size", c.batch_size);
    c.chunk = tr.value("chunk", c.chunk);
    c.beta = tr.value("beta", c.beta);
    c.l2_factor = tr.value("l2_factor", c.l2_factor);
    c.shift_source = tr.value("shift_source", c.shift_source);
    c.test_fraction = tr.value("test_fraction", c.test_fraction);
    c.enn_hidden_layers = tr.value("enn_hidden_layers", c.enn_hidden_layers);
    c.enn_neurons = tr.value("enn_neurons", c.enn_neurons);
    c.mnn_hidden_layers = tr.value("mnn_hidden_layers", c.mnn_hidden_layers);
    c.mnn_neurons = tr.value("mnn_neurons", c.mnn_neurons);

    auto se = section("search", {"stages", "samples_per_stage", "K", "top_fraction"});
    c.search.stages = se.value("stages", c.search.stages);
    c.search.samples_per_stage = se.value("samples_per_stage", c.search.samples_per_stage);
    c.search.K = se.value("K", c.search.K);
    c.search.top_fraction = se.value("top_fraction", c.search.top_fraction);
    c.search.seed = c.master_seed;

    c.validate();
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
    return from_json(j);
  }

  void validate() const {
    grid.validate();
    sim.validate();
    material.validate();
    search.validate();
    if (runs < 1) throw ConfigError("simulation.runs must be >= 1");
    if (beta < 0.0) throw ConfigError("training.beta must be >= 0");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
      throw ConfigError("training.test_fraction must be in (0,1)");
    if (bc_max < bc_min) throw ConfigError("simulation.bc_max must be >= bc_min");
    if (d3_tests < 1 || d4_tests_per_microstructure < 1 || d4_microstructures_per_run < 1)
      throw ConfigError("mechtest counts must be positive");
    shift_source_check(shift_source);
  }

 private:
  static void shift_source_check(const std::string& s) {
    if (s != "enn" && s != "dataset_psi0") throw ConfigError("training.shift_source must be enn or dataset_psi0");
  }
};

}  // namespace ddhom
