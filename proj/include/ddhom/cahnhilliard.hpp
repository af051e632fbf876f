#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "ddhom/energy.hpp"
#include "ddhom/fields.hpp"
#include "ddhom/grid.hpp"
#include "ddhom/material.hpp"

namespace ddhom {

struct ChStepInfo {
  double dt_used = 0.0;
  int backtracks = 0;
  double mass_before = 0.0;
  double mass_after = 0.0;
  double energy_before = 0.0;
  double energy_after = 0.0;
};

// One conservative semi-implicit step of the mixed (c, mu) Cahn-Hilliard
// system at frozen displacement. The fourth-order operator and the linear
// stabilization are implicit, the well nonlinearity explicit. Because the
// transport operator annihilates constants, nodal mass is conserved to
// solver roundoff; an energy check with dt backtracking enforces
// dissipation for the accepted step.
class CahnHilliardStepper {
 public:
  CahnHilliardStepper(const GridOperators& ops, const MaterialParams& params, const SimConfig& cfg)
      : ops_(&ops), params_(params), cfg_(cfg) {
    params.validate();
    cfg.validate();
  }

  // Relative energy-increase tolerance; scale chosen by the caller (typically
  // the initial total energy of the run) so plateaus near zero crossing do
  // not trip the check.
  ChStepInfo step(FieldState& s, double dt, double energy_scale = 0.0) {
    const GridOperators& ops = *ops_;
    GpFields fields = compute_gp_fields(ops, s.c, s.u1, s.u2);
    const double a = params_.a();

    // Consistent load of the explicit well + coupling nonlinearity.
    Vec load_gp(ops.ngp());
    for (int q = 0; q < ops.ngp(); ++q)
      load_gp[q] = ops.gp_weights()[q] *
                   (chem_energy_dc(fields.c_gp[q], params_) - 2.0 * a * fields.e2[q] * fields.e2[q]);
    Vec bhat = ops.N().transpose() * load_gp;

    ChStepInfo info;
    info.mass_before = ops.integrate(s.c);
    info.energy_before = total_free_energy(ops, fields, params_);

    double dt_try = dt;
    for (int attempt = 0; attempt <= cfg_.max_backtracks; ++attempt) {
      Vec c_new = solve_linear(s.c, bhat, dt_try);
      double energy_new = total_free_energy(ops, c_new, s.u1, s.u2, params_);
      double scale = std::max({std::abs(info.energy_before), std::abs(energy_new), energy_scale});
      if (energy_new <= info.energy_before + 1e-10 * scale) {
        s.c = c_new;
        GpFields updated = compute_gp_fields(ops, s.c, s.u1, s.u2);
        s.mu = chemical_potential(ops, s.c, updated, params_);
        s.time += dt_try;
        s.step += 1;
        info.dt_used = dt_try;
        info.backtracks = attempt;
        info.mass_after = ops.integrate(s.c);
        info.energy_after = energy_new;
        return info;
      }
      dt_try *= cfg_.dt_backtrack_factor;
      if (!(dt_try > 0.0)) break;
    }
    throw StepFailureError("cahn-hilliard step: dt underflow after repeated energy backtracking");
  }

 private:
  Vec solve_linear(const Vec& c_old, const Vec& bhat, double dt) {
    const GridOperators& ops = *ops_;
    const int n = static_cast<int>(c_old.size());
    if (dt != cached_dt_) {
      SpMat A = ops.K() * (cfg_.stabilization * params_.mobility);
      A += SpMat(params_.mobility * params_.kappa * ops.KWK());
      std::vector<Eigen::Triplet<double>> t;
      t.reserve(n);
      for (int m = 0; m < n; ++m) t.emplace_back(m, m, ops.weights()[m] / dt);
      SpMat Wdt(n, n);
      Wdt.setFromTriplets(t.begin(), t.end());
      A += Wdt;
      solver_.compute(A);
      if (solver_.info() != Eigen::Success)
        throw ConvergenceError("cahn-hilliard step: factorization failed", 0.0);
      cached_dt_ = dt;
    }
    Vec rhs = ops.weights().cwiseProduct(c_old) / dt +
              cfg_.stabilization * params_.mobility * (ops.K() * c_old) -
              params_.mobility * (ops.K() * bhat.cwiseQuotient(ops.weights()));
    Vec c_new = solver_.solve(rhs);
    if (solver_.info() != Eigen::Success)
      throw ConvergenceError("cahn-hilliard step: linear solve failed", 0.0);
    return c_new;
  }

  const GridOperators* ops_;
  MaterialParams params_;
  SimConfig cfg_;
  Eigen::SimplicialLDLT<SpMat> solver_;
  double cached_dt_ = -1.0;
};

}  // namespace ddhom
