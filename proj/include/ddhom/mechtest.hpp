#pragma once

#include <string>
#include <vector>

#include "ddhom/homogenize.hpp"
#include "ddhom/mechanics.hpp"
#include "ddhom/rng.hpp"

namespace ddhom {

// A small perturbation loading on a frozen microstructure. The sampled
// Green-Lagrange increments are realized exactly through affine Dirichlet
// data once a base boundary condition is known.
struct PerturbationSpec {
  double dE11 = 0.0;
  double dE22 = 0.0;
  double dE12 = 0.0;
  int test_id = 0;
};

struct PerturbationRanges {
  double biaxial = 5e-5;  // |dE11|, |dE22| bound
  double shear = 3e-4;    // |dE12| bound
};

/// Uniform perturbation sampling; deterministic for a given seed.
inline std::vector<PerturbationSpec> sample_loadings(int n, std::uint64_t seed,
                                                     const PerturbationRanges& ranges = {}) {
  if (n < 1) throw InvalidInputError("sample_loadings: n must be >= 1");
  Philox rng = make_rng(seed, RngStream::LoadingSampling);
  std::vector<PerturbationSpec> specs(n);
  for (int k = 0; k < n; ++k) {
    specs[k].dE11 = rng.uniform(-ranges.biaxial, ranges.biaxial);
    specs[k].dE22 = rng.uniform(-ranges.biaxial, ranges.biaxial);
    specs[k].dE12 = rng.uniform(-ranges.shear, ranges.shear);
    specs[k].test_id = k;
  }
  return specs;
}

struct MechTestRecord {
  std::string microstructure_id;
  int test_id = 0;
  Mat2 F_avg = Mat2::Identity();
  Mat2 E_avg = Mat2::Zero();
  Mat2 P_avg = Mat2::Zero();
  double Psi_mech = 0.0;
  double Psi_mech_0 = 0.0;
  BoundaryConditions applied_bc;
};

/// Re-equilibrates a copy of the frame under the perturbed boundary data and
/// records the homogenized response. The composition is never stepped, so
/// the microstructure itself is untouched.
inline MechTestRecord run_mech_test(const GridOperators& ops, MechanicsSolver& mech,
                                    const FieldState& frame, const BoundaryConditions& base_bc,
                                    const PerturbationSpec& spec, double newton_tol = 1e-9,
                                    int newton_max_iters = 60, double psi_mech_0 = 0.0,
                                    FieldState* out_state = nullptr) {
  const GridSpec& g = ops.grid();
  Mat2 H_base = base_bc.affine_gradient(g);
  Mat2 E_base = green_lagrange(Mat2::Identity() + H_base);
  Mat2 dE;
  dE << spec.dE11, spec.dE12, spec.dE12, spec.dE22;
  BoundaryConditions bc;
  try {
    bc = BoundaryConditions::from_strain(g, Mat2(E_base + dE));
  } catch (const Error& e) {
    throw InvalidInputError(std::string("run_mech_test: bad perturbation target: ") + e.what());
  }

  FieldState work = frame;
  try {
    mech.solve(work, bc, newton_tol, newton_max_iters);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError("run_mech_test(test " + std::to_string(spec.test_id) + "): " + e.what(),
                           e.residual);
  }

  MechTestRecord rec;
  rec.test_id = spec.test_id;
  rec.applied_bc = bc;
  HomogenizedRecord h = homogenize_frame(ops, work, mech.params(), "", frame.step);
  rec.F_avg = h.F_avg;
  rec.E_avg = h.E_avg;
  rec.P_avg = h.P_avg;
  rec.Psi_mech = h.Psi_mech;
  rec.Psi_mech_0 = psi_mech_0;
  if (out_state) *out_state = std::move(work);
  return rec;
}

}  // namespace ddhom
