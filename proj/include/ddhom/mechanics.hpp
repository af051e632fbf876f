#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <vector>

#include "ddhom/energy.hpp"
#include "ddhom/fields.hpp"
#include "ddhom/grid.hpp"
#include "ddhom/material.hpp"

namespace ddhom {

struct NewtonLog {
  std::vector<double> residual_norms;
  std::vector<double> energies;
  int iterations = 0;
  int factorizations = 0;
  bool converged = false;
};

// Equilibrium solver for the strain-gradient elasticity problem at frozen
// composition. The residual is the exact gradient of the discrete free
// energy with respect to interior displacement DOFs and the Hessian is
// assembled analytically from the same expression, so Newton converges
// quadratically once in the basin. Saddle configurations (unstable e2 = 0
// states) are escaped by Levenberg-style diagonal regularization plus an
// energy line search.
//
// The LDLT factorization is the dominant cost, so it is reused across
// iterations (and across calls, i.e. across time steps of a simulation)
// until step quality degrades; the residual itself is always exact.
class MechanicsSolver {
 public:
  MechanicsSolver(const GridOperators& ops, const MaterialParams& params)
      : ops_(&ops), params_(params) {
    params.validate();
    const GridSpec& g = ops.grid();
    const int n = g.n();
    const int ngp = ops.ngp();
    // DOF -> Gauss-point deformation-gradient map, block rows (F11,F12,F21,F22).
    std::vector<Eigen::Triplet<double>> t;
    auto add_block = [&](int block, const SpMat& D, int ucol) {
      for (int kOuter = 0; kOuter < D.outerSize(); ++kOuter)
        for (SpMat::InnerIterator it(D, kOuter); it; ++it)
          t.emplace_back(block * ngp + static_cast<int>(it.row()), ucol * n + static_cast<int>(it.col()),
                         it.value());
    };
    add_block(0, ops.Gx(), 0);
    add_block(1, ops.Gy(), 0);
    add_block(2, ops.Gx(), 1);
    add_block(3, ops.Gy(), 1);
    Ju_ = SpMat(4 * ngp, 2 * n);
    Ju_.setFromTriplets(t.begin(), t.end());
    Ju_.makeCompressed();
    JuT_ = Ju_.transpose();

    free_of_full_.assign(2 * n, -1);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        if (!g.on_boundary(i, j)) {
          int k = g.idx(i, j);
          full_of_free_.push_back(k);
          full_of_free_.push_back(n + k);
        }
    std::sort(full_of_free_.begin(), full_of_free_.end());
    for (std::size_t f = 0; f < full_of_free_.size(); ++f)
      free_of_full_[full_of_free_[f]] = static_cast<int>(f);
  }

  const MaterialParams& params() const { return params_; }

  // Exact gradient of the discrete free energy w.r.t. all displacement DOFs
  // (including boundary ones; callers mask).
  Vec residual_full(const Vec& c, const Vec& u1, const Vec& u2) const {
    return residual_from_fields(compute_gp_fields(*ops_, c, u1, u2));
  }

  Vec residual_from_fields(const GpFields& f) const {
    const GridOperators& ops = *ops_;
    const int ngp = ops.ngp();
    // dPsi/d(e2 at gp) through the projected nodal field
    Vec r_nodal = params_.lambda_e * (ops.K() * f.e2_nodal);
    Vec s_gp = ops.Pn().transpose() * r_nodal;
    const Vec& w = ops.gp_weights();
    Vec sigma(4 * ngp);
    for (int q = 0; q < ngp; ++q) {
      ReparamStrains e{f.e1[q], f.e2[q], f.e3[q]};
      Eigen::Vector4d Fv = f.F_at(q);
      Eigen::Vector3d dfde = homogeneous_energy_de(f.c_gp[q], e, params_);
      Eigen::Vector4d sv =
          w[q] * (dfde[0] * de1_dF(Fv) + dfde[1] * de2_dF(Fv) + dfde[2] * de3_dF(Fv)) +
          s_gp[q] * de2_dF(Fv);
      sigma[q] = sv[0];
      sigma[ngp + q] = sv[1];
      sigma[2 * ngp + q] = sv[2];
      sigma[3 * ngp + q] = sv[3];
    }
    return JuT_ * sigma;
  }

  // Max-norm of the residual in PDE form (energy gradient divided by the
  // nodal volume), over free DOFs only.
  double pde_residual_norm(const Vec& r_full) const {
    const Vec& w = ops_->weights();
    const int n = ops_->grid().n();
    double norm = 0.0;
    for (int f : full_of_free_) norm = std::max(norm, std::abs(r_full[f]) / w[f % n]);
    return norm;
  }

  SpMat hessian_full(const Vec& c, const Vec& u1, const Vec& u2) const {
    return hessian_from_fields(compute_gp_fields(*ops_, c, u1, u2));
  }

  SpMat hessian_from_fields(const GpFields& f) const {
    const GridOperators& ops = *ops_;
    const int ngp = ops.ngp();
    Vec r_nodal = params_.lambda_e * (ops.K() * f.e2_nodal);
    Vec s_gp = ops.Pn().transpose() * r_nodal;
    const Vec& w = ops.gp_weights();
    const Eigen::Matrix4d s1 = d2e1_dF2(), s2 = d2e2_dF2(), s3 = d2e3_dF2();
    std::vector<Eigen::Triplet<double>> ta;
    ta.reserve(16 * ngp);
    std::vector<Eigen::Triplet<double>> tp;
    tp.reserve(4 * ngp);
    // Structural pattern must not depend on field values (factorization
    // symbolic analysis is done once), so zeros are emitted too.
    for (int q = 0; q < ngp; ++q) {
      ReparamStrains e{f.e1[q], f.e2[q], f.e3[q]};
      Eigen::Vector4d Fv = f.F_at(q);
      Eigen::Vector3d dfde = homogeneous_energy_de(f.c_gp[q], e, params_);
      Eigen::Vector3d d2fde = homogeneous_energy_d2e(f.c_gp[q], e, params_);
      Eigen::Vector4d g1 = de1_dF(Fv), g2 = de2_dF(Fv), g3 = de3_dF(Fv);
      Eigen::Matrix4d A =
          w[q] * (dfde[0] * s1 + dfde[1] * s2 + dfde[2] * s3 + d2fde[0] * g1 * g1.transpose() +
                  d2fde[1] * g2 * g2.transpose() + d2fde[2] * g3 * g3.transpose()) +
          s_gp[q] * s2;
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) ta.emplace_back(a * ngp + q, b * ngp + q, A(a, b));
      for (int a = 0; a < 4; ++a) tp.emplace_back(q, a * ngp + q, g2[a]);
    }
    SpMat Ablk(4 * ngp, 4 * ngp);
    Ablk.setFromTriplets(ta.begin(), ta.end());
    SpMat Pe2(ngp, 4 * ngp);
    Pe2.setFromTriplets(tp.begin(), tp.end());
    SpMat Bop = SpMat(SpMat(ops.Pn() * Pe2) * Ju_);
    SpMat H = SpMat(JuT_ * SpMat(Ablk * Ju_)) +
              SpMat(Bop.transpose() * SpMat(params_.lambda_e * ops.K() * Bop));
    H.makeCompressed();
    return H;
  }

  /// Solves mechanical equilibrium in place; Dirichlet data applied exactly.
  NewtonLog solve(FieldState& s, const BoundaryConditions& bc, double newton_tol, int max_iters) {
    bc.validate();
    apply_dirichlet(s, bc);
    const GridOperators& ops = *ops_;
    const int n = ops.grid().n();
    const int nf = static_cast<int>(full_of_free_.size());
    NewtonLog log;
    double energy = total_free_energy(ops, s.c, s.u1, s.u2, params_);
    double prev_rnorm = -1.0;
    for (int iter = 0; iter <= max_iters; ++iter) {
      GpFields fields = compute_gp_fields(ops, s.c, s.u1, s.u2);
      Vec r_full = residual_from_fields(fields);
      double rnorm = pde_residual_norm(r_full);
      log.residual_norms.push_back(rnorm);
      log.energies.push_back(energy);
      if (rnorm <= newton_tol) {
        log.converged = true;
        log.iterations = iter;
        return log;
      }
      if (iter == max_iters) break;
      // Slow contraction with a stale factorization: refresh.
      if (fact_valid_ && prev_rnorm > 0.0 && rnorm > 0.5 * prev_rnorm && fact_age_ > 0) fact_valid_ = false;
      if (fact_age_ >= 12) fact_valid_ = false;
      prev_rnorm = rnorm;

      Vec rf(nf);
      for (int f = 0; f < nf; ++f) rf[f] = r_full[full_of_free_[f]];

      Vec d;
      bool have_direction = false;
      for (int attempt = 0; attempt < 16 && !have_direction; ++attempt) {
        if (!fact_valid_) {
          SpMat H = hessian_from_fields(fields);
          refactor(H, tau_);
          ++log.factorizations;
        }
        Vec cand = ldlt_.solve(-rf);
        if (cand.allFinite() && cand.dot(rf) < 0.0) {
          d = cand;
          have_direction = true;
        } else if (fact_age_ > 0) {
          fact_valid_ = false;  // stale direction unusable; try fresh
        } else {
          tau_ = (tau_ == 0.0) ? 1e-8 * diag_scale_ : tau_ * 100.0;
          fact_valid_ = false;
        }
      }
      if (!have_direction) throw ConvergenceError("mechanical equilibrium: no descent direction", rnorm);

      // Armijo backtracking on the total free energy. Near the floor of the
      // energy's resolution the predicted decrease is below summation noise;
      // then the full (tiny) step is taken as is.
      double slope = d.dot(rf);
      double noise = 1e-13 * (std::abs(energy) + 1e-300);
      double alpha = 1.0;
      bool accepted = false;
      Vec u1_trial, u2_trial;
      for (int ls = 0; ls < 40 && !accepted; ++ls) {
        u1_trial = s.u1;
        u2_trial = s.u2;
        for (int f = 0; f < nf; ++f) {
          int full = full_of_free_[f];
          if (full < n)
            u1_trial[full] += alpha * d[f];
          else
            u2_trial[full - n] += alpha * d[f];
        }
        double trial_energy = total_free_energy(ops, s.c, u1_trial, u2_trial, params_);
        if (trial_energy <= energy + 1e-4 * alpha * slope + noise) {
          s.u1 = u1_trial;
          s.u2 = u2_trial;
          energy = trial_energy;
          accepted = true;
        } else {
          alpha *= 0.5;
        }
      }
      if (!accepted) {
        if (fact_age_ > 0) {
          fact_valid_ = false;  // retry this iterate with a fresh Hessian
          prev_rnorm = -1.0;
          continue;
        }
        throw ConvergenceError("mechanical equilibrium: line search failed", rnorm);
      }
      ++fact_age_;
      if (alpha < 0.2) fact_valid_ = false;
      // After a healthy full step the regularization can be retired.
      if (alpha == 1.0 && tau_ > 0.0) {
        tau_ = 0.0;
        fact_valid_ = false;
      }
    }
    throw ConvergenceError("mechanical equilibrium: Newton did not converge", log.residual_norms.back());
  }

  // Drops any cached factorization (e.g. when switching to an unrelated
  // problem on the same grid).
  void reset_cache() {
    fact_valid_ = false;
    tau_ = 0.0;
  }

 private:
  void refactor(const SpMat& H, double tau) {
    const int nf = static_cast<int>(full_of_free_.size());
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(H.nonZeros());
    double dscale = 0.0;
    for (int kOuter = 0; kOuter < H.outerSize(); ++kOuter)
      for (SpMat::InnerIterator it(H, kOuter); it; ++it) {
        int r = free_of_full_[it.row()];
        int c = free_of_full_[it.col()];
        if (r >= 0 && c >= 0) {
          t.emplace_back(r, c, it.value());
          if (r == c) dscale = std::max(dscale, std::abs(it.value()));
        }
      }
    diag_scale_ = (dscale == 0.0) ? 1.0 : dscale;
    if (tau > 0.0)
      for (int f = 0; f < nf; ++f) t.emplace_back(f, f, tau);
    SpMat Hff(nf, nf);
    Hff.setFromTriplets(t.begin(), t.end());
    Hff.makeCompressed();
    if (!pattern_done_) {
      ldlt_.analyzePattern(Hff);
      pattern_done_ = true;
    }
    ldlt_.factorize(Hff);
    if (ldlt_.info() != Eigen::Success) {
      ldlt_.compute(Hff);  // pattern changed (tau diagonal); full compute
      if (ldlt_.info() != Eigen::Success)
        throw ConvergenceError("mechanical equilibrium: factorization failed", 0.0);
    }
    fact_valid_ = true;
    fact_age_ = 0;
  }

  const GridOperators* ops_;
  MaterialParams params_;
  SpMat Ju_, JuT_;
  std::vector<int> full_of_free_;
  std::vector<int> free_of_full_;

  Eigen::SimplicialLDLT<SpMat> ldlt_;
  bool pattern_done_ = false;
  bool fact_valid_ = false;
  int fact_age_ = 0;
  double tau_ = 0.0;
  double diag_scale_ = 1.0;
};

}  // namespace ddhom
