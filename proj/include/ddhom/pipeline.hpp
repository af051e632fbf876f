#pragma once

#include <filesystem>
#include <iostream>
#include <map>

#include "ddhom/config.hpp"
#include "ddhom/csvio.hpp"
#include "ddhom/dataset.hpp"
#include "ddhom/frameio.hpp"
#include "ddhom/homogenize.hpp"
#include "ddhom/mechtest.hpp"
#include "ddhom/simulate.hpp"

namespace ddhom {

// Filesystem layout and batch stages shared by the CLI and the acceptance
// suite. All stage outputs are deterministic functions of (config, seeds).
struct Pipeline {
  std::filesystem::path dir;
  ExperimentConfig cfg;
  bool verbose = true;

  std::filesystem::path runs_dir() const { return dir / "runs"; }
  std::filesystem::path images_dir() const { return dir / "images"; }
  std::filesystem::path datasets_dir() const { return dir / "datasets"; }
  std::filesystem::path models_dir() const { return dir / "models"; }
  std::filesystem::path run_dir(int r) const { return runs_dir() / run_name(r); }

  static std::string run_name(int r) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "run_%03d", r);
    return buf;
  }
  static std::string frame_name(int f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06d.bin", f);
    return buf;
  }

  std::uint64_t run_seed(int r) const { return cfg.master_seed * 1000003ull + static_cast<std::uint64_t>(r); }

  BoundaryConditions run_bc(int r) const {
    Philox rng = make_rng(cfg.master_seed, RngStream::BoundarySampling, static_cast<std::uint64_t>(r));
    BoundaryConditions bc;
    bc.u1 = rng.uniform(cfg.bc_min, cfg.bc_max);
    bc.u2 = rng.uniform(cfg.bc_min, cfg.bc_max);
    return bc;
  }

  static std::vector<std::string> homog_header() {
    return {"run_id", "frame_id", "F11", "F12", "F21", "F22", "E11", "E12", "E22",
            "P11",    "P12",      "P21", "P22", "Psi_mech", "Psi_total"};
  }

  // ---- simulate ----------------------------------------------------------

  struct RunOutcome {
    std::string run_id;
    std::uint64_t seed = 0;
    BoundaryConditions bc;
    bool ok = false;
    std::string error;
    SimulationResult result;
  };

  std::vector<RunOutcome> simulate_runs(int runs) const {
    GridOperators ops(cfg.grid);
    std::filesystem::create_directories(runs_dir());
    CsvWriter homog((dir / "homogenization.csv").string(), homog_header());
    CsvWriter quality((dir / "homogenization_quality.csv").string(),
                      {"run_id", "frame_id", "face_imbalance"});
    std::vector<RunOutcome> outcomes;
    for (int r = 0; r < runs; ++r) {
      RunOutcome oc;
      oc.run_id = run_name(r);
      oc.seed = run_seed(r);
      oc.bc = run_bc(r);
      std::filesystem::create_directories(run_dir(r));
      SimConfig sim = cfg.sim;
      sim.seed = oc.seed;
      FrameMeta meta;
      meta.grid = cfg.grid;
      meta.params = cfg.material;
      meta.bc = oc.bc;
      meta.seed = sim.seed;
      meta.run_id = oc.run_id;
      CsvWriter diag((run_dir(r) / "diagnostics.csv").string(),
                     {"frame", "time", "mass", "energy_total", "dt_used", "ch_backtracks",
                      "newton_iterations"});
      if (verbose)
        std::cout << "[simulate] " << oc.run_id << " seed=" << sim.seed << " u1=" << oc.bc.u1
                  << " u2=" << oc.bc.u2 << "\n";
      try {
        oc.result = run_simulation(ops, sim, oc.bc, cfg.material, [&](const FieldState& s) {
          save_frame((run_dir(r) / frame_name(s.step)).string(), s, meta);
          HomogenizedRecord h = homogenize_frame(ops, s, cfg.material, oc.run_id, s.step);
          homog.row({h.run_id, std::to_string(h.frame_id), fmt_double(h.F_avg(0, 0)),
                     fmt_double(h.F_avg(0, 1)), fmt_double(h.F_avg(1, 0)), fmt_double(h.F_avg(1, 1)),
                     fmt_double(h.E_avg(0, 0)), fmt_double(h.E_avg(0, 1)), fmt_double(h.E_avg(1, 1)),
                     fmt_double(h.P_avg(0, 0)), fmt_double(h.P_avg(0, 1)), fmt_double(h.P_avg(1, 0)),
                     fmt_double(h.P_avg(1, 1)), fmt_double(h.Psi_mech), fmt_double(h.Psi_total)});
          quality.row({oc.run_id, std::to_string(s.step), fmt_double(h.face_imbalance)});
        });
        diag.row({"0", "0", fmt_double(oc.result.initial_mass), fmt_double(oc.result.initial_energy),
                  "0", "0", "0"});
        for (const auto& d : oc.result.frames)
          diag.row({std::to_string(d.frame), fmt_double(d.time), fmt_double(d.mass),
                    fmt_double(d.energy_total), fmt_double(d.dt_used), std::to_string(d.ch_backtracks),
                    std::to_string(d.newton_iterations)});
        oc.ok = true;
      } catch (const Error& e) {
        oc.error = e.what();
        if (verbose) std::cerr << "[simulate] " << oc.run_id << " failed: " << e.what() << "\n";
      }
      outcomes.push_back(std::move(oc));
    }
    return outcomes;
  }

  // ---- featurize ---------------------------------------------------------

  int featurize_all() const {
    GridOperators ops(cfg.grid);
    std::filesystem::create_directories(images_dir());
    CsvWriter feats((dir / "features.csv").string(),
                    {"run_id", "frame_id", "phi_r_plus", "phi_r_minus", "l_s_r", "l_r_plus", "l_r_minus"});
    int count = 0;
    for (int r = 0;; ++r) {
      if (!std::filesystem::exists(run_dir(r))) break;
      std::string run_id = run_name(r);
      for (int f = cfg.sim.discard + 1; f <= cfg.sim.steps; ++f) {
        std::filesystem::path fp = run_dir(r) / frame_name(f);
        if (!std::filesystem::exists(fp))
          throw SchemaError("missing frame (" + run_id + ", " + std::to_string(f) + ")");
        FieldState s = load_frame(fp.string());
        KinematicsSnapshot k = compute_kinematics(ops, s.u1, s.u2);
        MicrostructureFeatures mf = extract_features(ops, s.c, k.e2, cfg.features);
        feats.row({run_id, std::to_string(f), fmt_double(mf.phi_r_plus), fmt_double(mf.phi_r_minus),
                   fmt_double(mf.l_s_r), fmt_double(mf.l_r_plus), fmt_double(mf.l_r_minus)});
        char img[64];
        std::snprintf(img, sizeof(img), "%s_f%06d_e2.bin", run_id.c_str(), f);
        save_image((images_dir() / img).string(), k.e2);
        ++count;
      }
    }
    if (count == 0) throw SchemaError("featurize: no frames found under " + runs_dir().string());
    return count;
  }

  // ---- mechtest ----------------------------------------------------------

  static std::vector<std::string> mech_records_header(bool with_pert) {
    std::vector<std::string> h = {"run_id", "microstructure_id", "test_id", "E11", "E12", "E22",
                                  "P11",    "P12",               "P21",     "P22", "F11", "F12",
                                  "F21",    "F22",               "psi_mech", "psi_mech_0",
                                  "bc_u1",  "bc_u2",             "bc_shear"};
    if (with_pert) h.push_back("e2_pert_path");
    return h;
  }

  std::vector<int> sampled_frames() const {
    int lo = cfg.sim.discard + 1, hi = cfg.sim.steps;
    int n = cfg.d4_microstructures_per_run;
    std::vector<int> out;
    for (int k = 0; k < n; ++k) {
      double t = n == 1 ? 0.5 : static_cast<double>(k) / (n - 1);
      out.push_back(lo + static_cast<int>(std::llround(t * (hi - lo))));
    }
    return out;
  }

  void test_microstructure(GridOperators& ops, MechanicsSolver& mech, int run, int frame, int ntests,
                           CsvWriter& w, bool with_pert, std::uint64_t salt) const {
    std::filesystem::path fp = run_dir(run) / frame_name(frame);
    if (!std::filesystem::exists(fp))
      throw SchemaError("missing frame (" + run_name(run) + ", " + std::to_string(frame) + ")");
    FrameMeta meta;
    FieldState base = load_frame(fp.string(), &meta);
    double psi0 = mechanical_free_energy(ops, base, cfg.material);
    auto specs = sample_loadings(ntests, cfg.master_seed ^ salt, cfg.perturbation);
    mech.reset_cache();
    for (const auto& spec : specs) {
      FieldState tested;
      MechTestRecord rec = run_mech_test(ops, mech, base, meta.bc, spec, cfg.mech_newton_tol,
                                         cfg.sim.newton_max_iters, psi0, &tested);
      std::string pert_rel;
      if (with_pert) {
        char img[96];
        std::snprintf(img, sizeof(img), "pert/%s_f%06d_t%05d_e2.bin", run_name(run).c_str(), frame,
                      spec.test_id);
        pert_rel = std::string("../images/") + img;
        KinematicsSnapshot k = compute_kinematics(ops, tested.u1, tested.u2);
        save_image((images_dir() / img).string(), k.e2);
      }
      std::vector<std::string> cells = {run_name(run),
                                        std::to_string(frame),
                                        std::to_string(rec.test_id),
                                        fmt_double(rec.E_avg(0, 0)),
                                        fmt_double(rec.E_avg(0, 1)),
                                        fmt_double(rec.E_avg(1, 1)),
                                        fmt_double(rec.P_avg(0, 0)),
                                        fmt_double(rec.P_avg(0, 1)),
                                        fmt_double(rec.P_avg(1, 0)),
                                        fmt_double(rec.P_avg(1, 1)),
                                        fmt_double(rec.F_avg(0, 0)),
                                        fmt_double(rec.F_avg(0, 1)),
                                        fmt_double(rec.F_avg(1, 0)),
                                        fmt_double(rec.F_avg(1, 1)),
                                        fmt_double(rec.Psi_mech),
                                        fmt_double(rec.Psi_mech_0),
                                        fmt_double(rec.applied_bc.u1),
                                        fmt_double(rec.applied_bc.u2),
                                        fmt_double(rec.applied_bc.shear)};
      if (with_pert) cells.push_back(pert_rel);
      w.row(cells);
    }
  }

  struct MechTestSummary {
    int d3_frame = 0;
    int d4_microstructures = 0;
    std::vector<std::pair<int, int>> sampled;  // (run, frame)
  };

  MechTestSummary mechtest_all() const {
    GridOperators ops(cfg.grid);
    MechanicsSolver mech(ops, cfg.material);
    std::filesystem::create_directories(dir / "mechtests");
    std::filesystem::create_directories(images_dir() / "pert");
    MechTestSummary summary;
    {
      int frame = std::min(cfg.d3_frame, cfg.sim.steps);
      frame = std::max(frame, cfg.sim.discard + 1);
      summary.d3_frame = frame;
      CsvWriter w((dir / "mechtests" / "records_d3.csv").string(), mech_records_header(false));
      if (verbose)
        std::cout << "[mechtest] single microstructure run=" << cfg.d3_run << " frame=" << frame
                  << " tests=" << cfg.d3_tests << "\n";
      test_microstructure(ops, mech, cfg.d3_run, frame, cfg.d3_tests, w, false, 0xD3);
    }
    {
      CsvWriter w((dir / "mechtests" / "records_d4.csv").string(), mech_records_header(true));
      std::vector<int> frames = sampled_frames();
      for (int r = 0;; ++r) {
        if (!std::filesystem::exists(run_dir(r))) break;
        for (int f : frames) {
          if (verbose)
            std::cout << "[mechtest] run=" << r << " frame=" << f
                      << " tests=" << cfg.d4_tests_per_microstructure << "\n";
          test_microstructure(ops, mech, r, f, cfg.d4_tests_per_microstructure, w, true,
                              0xD400 + static_cast<std::uint64_t>(r) * 1009 +
                                  static_cast<std::uint64_t>(f));
          summary.sampled.emplace_back(r, f);
          ++summary.d4_microstructures;
        }
      }
      if (summary.d4_microstructures == 0) throw SchemaError("mechtest: no runs found");
    }
    return summary;
  }

  // ---- dataset -----------------------------------------------------------

  std::map<std::string, std::size_t> build_datasets() const {
    namespace fs = std::filesystem;
    fs::create_directories(datasets_dir());
    const double volume = cfg.grid.volume();
    std::map<std::string, std::size_t> sizes;

    CsvTable feats = read_csv((dir / "features.csv").string());
    CsvTable homog = read_csv((dir / "homogenization.csv").string());
    std::map<std::pair<std::string, int>, MicrostructureFeatures> fmap;
    for (std::size_t r = 0; r < feats.rows.size(); ++r) {
      MicrostructureFeatures mf;
      mf.phi_r_plus = feats.num(r, feats.col("phi_r_plus"));
      mf.phi_r_minus = feats.num(r, feats.col("phi_r_minus"));
      mf.l_s_r = feats.num(r, feats.col("l_s_r"));
      mf.l_r_plus = feats.num(r, feats.col("l_r_plus"));
      mf.l_r_minus = feats.num(r, feats.col("l_r_minus"));
      fmap[{feats.rows[r][static_cast<std::size_t>(feats.col("run_id"))],
            static_cast<int>(feats.num(r, feats.col("frame_id")))}] = mf;
    }

    std::vector<FrameRecord> records;
    for (std::size_t r = 0; r < homog.rows.size(); ++r) {
      FrameRecord fr;
      fr.run_id = homog.rows[r][static_cast<std::size_t>(homog.col("run_id"))];
      fr.frame_id = static_cast<int>(homog.num(r, homog.col("frame_id")));
      if (fr.frame_id <= cfg.sim.discard) continue;
      auto it = fmap.find({fr.run_id, fr.frame_id});
      if (it == fmap.end())
        throw SchemaError("missing features for (" + fr.run_id + ", " + std::to_string(fr.frame_id) + ")");
      fr.features = it->second;
      fr.hom.Psi_mech = homog.num(r, homog.col("Psi_mech"));
      fr.hom.Psi_total = homog.num(r, homog.col("Psi_total"));
      char img[64];
      std::snprintf(img, sizeof(img), "%s_f%06d_e2.bin", fr.run_id.c_str(), fr.frame_id);
      fr.e2_path = std::string("../images/") + img;
      records.push_back(fr);
    }

    Dataset dI = build_base_energy_dataset(records, true, "run_000", volume, cfg.grid.nx, cfg.grid.ny);
    save_dataset(dI, (datasets_dir() / "D_I.csv").string());
    sizes["D_I"] = dI.size();
    Dataset dII = build_base_energy_dataset(records, false, "", volume, cfg.grid.nx, cfg.grid.ny);
    save_dataset(dII, (datasets_dir() / "D_II.csv").string());
    sizes["D_II"] = dII.size();

    auto build_mech = [&](const std::string& csv, bool single) -> Dataset {
      CsvTable t = read_csv(csv);
      std::vector<MechTestRow> rows;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        MechTestRow row;
        row.run_id = t.rows[r][static_cast<std::size_t>(t.col("run_id"))];
        row.microstructure_id = static_cast<int>(t.num(r, t.col("microstructure_id")));
        row.test_id = static_cast<int>(t.num(r, t.col("test_id")));
        auto it = fmap.find({row.run_id, row.microstructure_id});
        if (it == fmap.end())
          throw SchemaError("missing features for (" + row.run_id + ", " +
                            std::to_string(row.microstructure_id) + ")");
        row.features = it->second;
        Mat2& E = row.rec.E_avg;
        E(0, 0) = t.num(r, t.col("E11"));
        E(0, 1) = E(1, 0) = t.num(r, t.col("E12"));
        E(1, 1) = t.num(r, t.col("E22"));
        Mat2& P = row.rec.P_avg;
        P(0, 0) = t.num(r, t.col("P11"));
        P(0, 1) = t.num(r, t.col("P12"));
        P(1, 0) = t.num(r, t.col("P21"));
        P(1, 1) = t.num(r, t.col("P22"));
        Mat2& F = row.rec.F_avg;
        F(0, 0) = t.num(r, t.col("F11"));
        F(0, 1) = t.num(r, t.col("F12"));
        F(1, 0) = t.num(r, t.col("F21"));
        F(1, 1) = t.num(r, t.col("F22"));
        row.rec.Psi_mech = t.num(r, t.col("psi_mech"));
        row.rec.Psi_mech_0 = t.num(r, t.col("psi_mech_0"));
        char img[64];
        std::snprintf(img, sizeof(img), "%s_f%06d_e2.bin", row.run_id.c_str(), row.microstructure_id);
        row.e2_path = std::string("../images/") + img;
        if (t.has_col("e2_pert_path"))
          row.e2_pert_path = t.rows[r][static_cast<std::size_t>(t.col("e2_pert_path"))];
        rows.push_back(row);
      }
      return build_mech_test_dataset(rows, single, volume, cfg.grid.nx, cfg.grid.ny);
    };

    std::filesystem::path d3csv = dir / "mechtests" / "records_d3.csv";
    if (std::filesystem::exists(d3csv)) {
      Dataset dIII = build_mech(d3csv.string(), true);
      save_dataset(dIII, (datasets_dir() / "D_III.csv").string());
      sizes["D_III"] = dIII.size();
    }
    std::filesystem::path d4csv = dir / "mechtests" / "records_d4.csv";
    if (std::filesystem::exists(d4csv)) {
      Dataset dIV = build_mech(d4csv.string(), false);
      save_dataset(dIV, (datasets_dir() / "D_IV.csv").string());
      sizes["D_IV"] = dIV.size();
    }
    return sizes;
  }
};

}  // namespace ddhom
