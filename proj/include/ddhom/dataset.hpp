#pragma once

#include <filesystem>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "ddhom/csvio.hpp"
#include "ddhom/features.hpp"
#include "ddhom/frameio.hpp"
#include "ddhom/homogenize.hpp"
#include "ddhom/mechtest.hpp"
#include "ddhom/rng.hpp"
#include "ddhom/tensor.hpp"

namespace ddhom {

// In-memory dataset with a named schema. Numeric columns hold features,
// labels and auxiliary data; image columns hold relative paths to raw
// float64 e2 fields.
struct Dataset {
  std::string schema;  // D_I, D_II, D_III, D_IV
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> run_ids;       // per row
  std::vector<std::string> e2_paths;      // original e2 field per row ("" if none)
  std::vector<std::string> e2_pert_paths; // perturbed e2 field per row ("" if none)
  std::string base_dir;
  int image_nx = 0, image_ny = 0;
  double volume = 0.0;

  std::size_t size() const { return rows.size(); }

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw SchemaError("dataset " + schema + ": missing column " + name);
  }

  double at(std::size_t r, const std::string& name) const { return rows[r][static_cast<std::size_t>(col(name))]; }

  std::vector<double> column(const std::string& name) const {
    int c = col(name);
    std::vector<double> out(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) out[r] = rows[r][static_cast<std::size_t>(c)];
    return out;
  }

  // (n, names.size()) feature matrix gathered over selected rows
  Tensor matrix(const std::vector<std::string>& names, const std::vector<int>& idx) const {
    Tensor t({static_cast<int>(idx.size()), static_cast<int>(names.size())});
    std::vector<int> cs;
    for (const auto& n : names) cs.push_back(col(n));
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < cs.size(); ++j)
        t.data[i * cs.size() + j] = rows[static_cast<std::size_t>(idx[i])][static_cast<std::size_t>(cs[j])];
    return t;
  }

  std::vector<double> gather(const std::string& name, const std::vector<int>& idx) const {
    int c = col(name);
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = rows[static_cast<std::size_t>(idx[i])][static_cast<std::size_t>(c)];
    return out;
  }

  void require_schema(const std::string& expected) const {
    if (schema != expected)
      throw SchemaError("dataset schema mismatch: have " + schema + ", expected " + expected);
  }
};

inline const std::vector<std::string>& microstructure_feature_names() {
  static const std::vector<std::string> names = {"phi_r_plus", "phi_r_minus", "l_s_r", "l_r_plus",
                                                 "l_r_minus"};
  return names;
}
inline const std::vector<std::string>& strain_feature_names() {
  static const std::vector<std::string> names = {"E11", "E12", "E22"};
  return names;
}
inline const std::vector<std::string>& stress_aux_names() {
  static const std::vector<std::string> names = {"P11", "P12", "P21", "P22"};
  return names;
}
inline const std::vector<std::string>& defgrad_aux_names() {
  static const std::vector<std::string> names = {"F11", "F12", "F21", "F22"};
  return names;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& d, const std::string& csv_path) {
  std::vector<std::string> header = {"run_id"};
  header.insert(header.end(), d.columns.begin(), d.columns.end());
  bool has_orig = false, has_pert = false;
  for (const auto& p : d.e2_paths) has_orig |= !p.empty();
  for (const auto& p : d.e2_pert_paths) has_pert |= !p.empty();
  if (has_orig) header.push_back("e2_path");
  if (has_pert) header.push_back("e2_pert_path");
  CsvWriter w(csv_path, header);
  for (std::size_t r = 0; r < d.rows.size(); ++r) {
    std::vector<std::string> cells;
    cells.push_back(d.run_ids[r]);
    for (double v : d.rows[r]) cells.push_back(fmt_double(v));
    if (has_orig) cells.push_back(d.e2_paths[r]);
    if (has_pert) cells.push_back(d.e2_pert_paths[r]);
    w.row(cells);
  }
  w.flush();

  nlohmann::json meta;
  meta["schema"] = d.schema;
  meta["rows"] = d.rows.size();
  meta["image_nx"] = d.image_nx;
  meta["image_ny"] = d.image_ny;
  meta["volume"] = d.volume;
  std::ofstream mo(csv_path + ".meta.json");
  mo << meta.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& csv_path) {
  Dataset d;
  std::ifstream mi(csv_path + ".meta.json");
  if (!mi) throw SchemaError("dataset meta not found for " + csv_path);
  nlohmann::json meta = nlohmann::json::parse(mi);
  d.schema = meta["schema"];
  d.image_nx = meta["image_nx"];
  d.image_ny = meta["image_ny"];
  d.volume = meta["volume"];
  d.base_dir = std::filesystem::path(csv_path).parent_path().string();

  CsvTable t = read_csv(csv_path);
  int run_c = t.col("run_id");
  int orig_c = t.has_col("e2_path") ? t.col("e2_path") : -1;
  int pert_c = t.has_col("e2_pert_path") ? t.col("e2_pert_path") : -1;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    int ji = static_cast<int>(j);
    if (ji == run_c || ji == orig_c || ji == pert_c) continue;
    d.columns.push_back(t.header[j]);
  }
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::vector<double> row;
    row.reserve(d.columns.size());
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      int ji = static_cast<int>(j);
      if (ji == run_c || ji == orig_c || ji == pert_c) continue;
      row.push_back(t.num(r, ji));
    }
    d.rows.push_back(std::move(row));
    d.run_ids.push_back(t.rows[r][static_cast<std::size_t>(run_c)]);
    d.e2_paths.push_back(orig_c >= 0 ? t.rows[r][static_cast<std::size_t>(orig_c)] : "");
    d.e2_pert_paths.push_back(pert_c >= 0 ? t.rows[r][static_cast<std::size_t>(pert_c)] : "");
  }
  return d;
}

/// Loads the referenced e2 fields of the selected rows as an image batch.
inline Tensor load_image_batch(const Dataset& d, const std::vector<int>& idx, bool perturbed) {
  if (d.image_nx <= 0 || d.image_ny <= 0) throw SchemaError("dataset has no image geometry");
  Tensor out({static_cast<int>(idx.size()), d.image_ny, d.image_nx, 1});
  const long long per = static_cast<long long>(d.image_nx) * d.image_ny;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::string& rel =
        perturbed ? d.e2_pert_paths[static_cast<std::size_t>(idx[i])] : d.e2_paths[static_cast<std::size_t>(idx[i])];
    if (rel.empty()) throw SchemaError("dataset row has no e2 image reference");
    Vec img = load_image((std::filesystem::path(d.base_dir) / rel).string(), static_cast<int>(per));
    std::copy(img.data(), img.data() + per, out.data.begin() + static_cast<long long>(i) * per);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

// Joined per-frame record used when assembling the base-energy datasets.
struct FrameRecord {
  std::string run_id;
  int frame_id = 0;
  MicrostructureFeatures features;
  HomogenizedRecord hom;
  std::string e2_path;
};

/// D_I (one run) / D_II (all runs): one row per retained frame. Labels are
/// the base mechanical free energy, both as the raw integral and as the
/// volume average used for training.
inline Dataset build_base_energy_dataset(const std::vector<FrameRecord>& frames, bool single_run,
                                         const std::string& run_filter, double volume, int image_nx,
                                         int image_ny) {
  Dataset d;
  d.schema = single_run ? "D_I" : "D_II";
  d.columns = {"frame_id",  "phi_r_plus", "phi_r_minus", "l_s_r",          "l_r_plus",
               "l_r_minus", "psi_mech_0", "psi_mech_0_avg", "psi_total"};
  d.volume = volume;
  d.image_nx = image_nx;
  d.image_ny = image_ny;
  for (const auto& f : frames) {
    if (single_run && f.run_id != run_filter) continue;
    d.rows.push_back({static_cast<double>(f.frame_id), f.features.phi_r_plus, f.features.phi_r_minus,
                      f.features.l_s_r, f.features.l_r_plus, f.features.l_r_minus, f.hom.Psi_mech,
                      f.hom.Psi_mech / volume, f.hom.Psi_total});
    d.run_ids.push_back(f.run_id);
    d.e2_paths.push_back(f.e2_path);
    d.e2_pert_paths.push_back("");
  }
  if (d.rows.empty()) throw SchemaError("base-energy dataset: no frames matched (empty dataset)");
  return d;
}

// One mechanical test joined with its microstructure's features.
struct MechTestRow {
  std::string run_id;
  int microstructure_id = 0;
  int test_id = 0;
  MicrostructureFeatures features;
  MechTestRecord rec;
  std::string e2_path;
  std::string e2_pert_path;
};

/// D_III (one microstructure) / D_IV (all sampled microstructures).
inline Dataset build_mech_test_dataset(const std::vector<MechTestRow>& tests, bool single_microstructure,
                                       double volume, int image_nx, int image_ny) {
  Dataset d;
  d.schema = single_microstructure ? "D_III" : "D_IV";
  d.columns = {"frame_id",   "test_id",    "E11",        "E12",          "E22",
               "phi_r_plus", "phi_r_minus", "l_s_r",     "l_r_plus",     "l_r_minus",
               "psi_mech",   "psi_mech_avg", "psi_mech_0", "psi_mech_0_avg", "P11",
               "P12",        "P21",        "P22",        "F11",          "F12",
               "F21",        "F22"};
  d.volume = volume;
  d.image_nx = image_nx;
  d.image_ny = image_ny;
  for (const auto& t : tests) {
    const Mat2& E = t.rec.E_avg;
    const Mat2& P = t.rec.P_avg;
    const Mat2& F = t.rec.F_avg;
    d.rows.push_back({static_cast<double>(t.microstructure_id), static_cast<double>(t.test_id), E(0, 0),
                      E(0, 1), E(1, 1), t.features.phi_r_plus, t.features.phi_r_minus, t.features.l_s_r,
                      t.features.l_r_plus, t.features.l_r_minus, t.rec.Psi_mech, t.rec.Psi_mech / volume,
                      t.rec.Psi_mech_0, t.rec.Psi_mech_0 / volume, P(0, 0), P(0, 1), P(1, 0), P(1, 1),
                      F(0, 0), F(0, 1), F(1, 0), F(1, 1)});
    d.run_ids.push_back(t.run_id);
    d.e2_paths.push_back(t.e2_path);
    d.e2_pert_paths.push_back(t.e2_pert_path);
  }
  if (d.rows.empty()) throw SchemaError("mech-test dataset: zero tests (empty dataset)");
  return d;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  double test_fraction = 0.10;
  int cv_folds = 5;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<int> trainval;
  std::vector<int> test;
};

/// Deterministic shuffled train+validation / test split.
inline Split split_dataset(std::size_t n, const SplitSpec& spec) {
  if (n < 10) throw InvalidInputError("split_dataset: need at least 10 rows");
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  Philox rng = make_rng(spec.seed, RngStream::DatasetSplit);
  shuffle(idx, rng);
  std::size_t ntest = static_cast<std::size_t>(spec.test_fraction * static_cast<double>(n) + 0.5);
  Split s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<long>(ntest));
  s.trainval.assign(idx.begin() + static_cast<long>(ntest), idx.end());
  return s;
}

/// K mutually exclusive, jointly exhaustive folds with sizes differing by at
/// most one; deterministic for a given seed.
inline std::vector<std::vector<int>> kfold_split(const std::vector<int>& indices, int K, std::uint64_t seed) {
  if (K < 2) throw InvalidInputError("kfold_split: K must be >= 2");
  if (indices.size() < static_cast<std::size_t>(K)) throw InvalidInputError("kfold_split: fewer rows than folds");
  std::vector<int> idx = indices;
  Philox rng = make_rng(seed, RngStream::KFold);
  shuffle(idx, rng);
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(K));
  for (std::size_t i = 0; i < idx.size(); ++i) folds[i % static_cast<std::size_t>(K)].push_back(idx[i]);
  return folds;
}

}  // namespace ddhom
