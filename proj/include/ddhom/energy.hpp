#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "ddhom/fields.hpp"
#include "ddhom/grid.hpp"
#include "ddhom/kinematics.hpp"
#include "ddhom/material.hpp"

namespace ddhom {

// ---------------------------------------------------------------------------
// Pointwise densities
// ---------------------------------------------------------------------------

inline double chem_energy(double c, const MaterialParams& p) {
  return 16.0 * p.d_c * c * c * (c * c - 2.0 * c + 1.0);
}

inline double chem_energy_dc(double c, const MaterialParams& p) {
  return p.d_c * (64.0 * c * c * c - 96.0 * c * c + 32.0 * c);
}

inline double chem_energy_d2c(double c, const MaterialParams& p) {
  return p.d_c * (192.0 * c * c - 192.0 * c + 32.0);
}

/// Homogeneous free-energy density: chemistry + mechanics + mechanochemistry.
inline double homogeneous_energy(double c, const ReparamStrains& e, const MaterialParams& p) {
  double a = p.a(), b = p.b();
  return chem_energy(c, p) + a * (e.e1 * e.e1 + e.e3 * e.e3) + b * std::pow(e.e2, 4) +
         (1.0 - 2.0 * c) * a * e.e2 * e.e2;
}

/// Gradient (inhomogeneous) energy density.
inline double gradient_energy(const Eigen::Vector2d& grad_c, const Eigen::Vector2d& grad_e2,
                              const MaterialParams& p) {
  return 0.5 * p.kappa * grad_c.squaredNorm() + 0.5 * p.lambda_e * grad_e2.squaredNorm();
}

/// Mechanical + mechanochemical part of the density (the chemistry-free part
/// used for homogenized energies).
inline double mech_energy_density(double c, const ReparamStrains& e, const Eigen::Vector2d& grad_e2,
                                  const MaterialParams& p) {
  double a = p.a(), b = p.b();
  return a * (e.e1 * e.e1 + e.e3 * e.e3) + b * std::pow(e.e2, 4) +
         0.5 * p.lambda_e * p.l_e * p.l_e * grad_e2.squaredNorm() + (1.0 - 2.0 * c) * a * e.e2 * e.e2;
}

// dPsi/de_alpha of the homogeneous density (chemistry drops out).
inline Eigen::Vector3d homogeneous_energy_de(double c, const ReparamStrains& e, const MaterialParams& p) {
  double a = p.a(), b = p.b();
  return {2.0 * a * e.e1, 4.0 * b * e.e2 * e.e2 * e.e2 + 2.0 * (1.0 - 2.0 * c) * a * e.e2, 2.0 * a * e.e3};
}

// Diagonal d^2 Psi / de^2 (cross terms vanish).
inline Eigen::Vector3d homogeneous_energy_d2e(double c, const ReparamStrains& e, const MaterialParams& p) {
  double a = p.a(), b = p.b();
  return {2.0 * a, 12.0 * b * e.e2 * e.e2 + 2.0 * (1.0 - 2.0 * c) * a, 2.0 * a};
}

// ---------------------------------------------------------------------------
// Discrete energy on the grid
// ---------------------------------------------------------------------------

// The discrete free energy lives on the bilinear-element Gauss points; the
// chemical potential and the mechanical residual are its exact partial
// derivatives. The strain-gradient term uses the lumped nodal projection of
// the Gauss-point e2 so only C0 data is ever needed.

struct GpFields {
  Vec c_gp;
  Vec gcx, gcy;
  Vec F11, F12, F21, F22;
  Vec e1, e2, e3;
  Vec e2_nodal;
  Vec ge2x, ge2y;

  Eigen::Vector4d F_at(int q) const { return {F11[q], F12[q], F21[q], F22[q]}; }
};

inline GpFields compute_gp_fields(const GridOperators& ops, const Vec& c, const Vec& u1, const Vec& u2) {
  GpFields f;
  const int ngp = ops.ngp();
  f.c_gp = ops.N() * c;
  f.gcx = ops.Gx() * c;
  f.gcy = ops.Gy() * c;
  f.F11 = Vec::Ones(ngp) + ops.Gx() * u1;
  f.F12 = ops.Gy() * u1;
  f.F21 = ops.Gx() * u2;
  f.F22 = Vec::Ones(ngp) + ops.Gy() * u2;
  Vec E11 = 0.5 * (f.F11.array().square() + f.F21.array().square() - 1.0).matrix();
  Vec E22 = 0.5 * (f.F12.array().square() + f.F22.array().square() - 1.0).matrix();
  Vec E12 = 0.5 * (f.F11.array() * f.F12.array() + f.F21.array() * f.F22.array()).matrix();
  f.e1 = (E11 + E22) / kSqrt2;
  f.e2 = (E11 - E22) / kSqrt2;
  f.e3 = kSqrt2 * E12;
  f.e2_nodal = ops.Pn() * f.e2;
  f.ge2x = ops.Gx() * f.e2_nodal;
  f.ge2y = ops.Gy() * f.e2_nodal;
  return f;
}

inline double total_free_energy(const GridOperators& ops, const GpFields& f, const MaterialParams& p) {
  const Vec& w = ops.gp_weights();
  KahanSum s;
  for (int q = 0; q < ops.ngp(); ++q) {
    ReparamStrains e{f.e1[q], f.e2[q], f.e3[q]};
    double dens = homogeneous_energy(f.c_gp[q], e, p) +
                  0.5 * p.kappa * (f.gcx[q] * f.gcx[q] + f.gcy[q] * f.gcy[q]) +
                  0.5 * p.lambda_e * (f.ge2x[q] * f.ge2x[q] + f.ge2y[q] * f.ge2y[q]);
    s.add(w[q] * dens);
  }
  return s.value();
}

inline double total_free_energy(const GridOperators& ops, const Vec& c, const Vec& u1, const Vec& u2,
                                const MaterialParams& p) {
  return total_free_energy(ops, compute_gp_fields(ops, c, u1, u2), p);
}

inline double total_free_energy(const GridOperators& ops, const FieldState& s, const MaterialParams& p) {
  return total_free_energy(ops, s.c, s.u1, s.u2, p);
}

/// Variational chemical potential: mu_m = (dPsi_h/dc_m) / w_m.
inline Vec chemical_potential(const GridOperators& ops, const Vec& c, const GpFields& f,
                              const MaterialParams& p) {
  const Vec& wgp = ops.gp_weights();
  Vec load(ops.ngp());
  const double a = p.a();
  for (int q = 0; q < ops.ngp(); ++q)
    load[q] = wgp[q] * (chem_energy_dc(f.c_gp[q], p) - 2.0 * a * f.e2[q] * f.e2[q]);
  Vec out = ops.N().transpose() * load + p.kappa * (ops.K() * c);
  return out.cwiseQuotient(ops.weights());
}

inline Vec chemical_potential(const GridOperators& ops, const FieldState& s, const MaterialParams& p) {
  GpFields f = compute_gp_fields(ops, s.c, s.u1, s.u2);
  return chemical_potential(ops, s.c, f, p);
}

// ---------------------------------------------------------------------------
// Pointwise stress diagnostics
// ---------------------------------------------------------------------------

// First Piola-Kirchhoff stress and higher-order stress per node.
struct StressFields {
  std::vector<Mat2> P;
  // B[m][K] is the 2x2 block B(:, :, K) at node m.
  std::vector<std::array<Mat2, 2>> B;
};

/// Nodal stresses conjugate to F and grad F, evaluated with the nodal
/// difference operators (one-sided at boundaries).
inline StressFields stresses(const GridOperators& ops, const FieldState& s, const MaterialParams& p) {
  KinematicsSnapshot k = compute_kinematics(ops, s.u1, s.u2);
  const int n = ops.grid().n();
  StressFields out;
  out.P.resize(n);
  out.B.resize(n);
  Eigen::Matrix4d d2e2 = d2e2_dF2();
  std::array<Vec, 4> dFx = {ops.Dx() * k.F11, ops.Dx() * k.F12, ops.Dx() * k.F21, ops.Dx() * k.F22};
  std::array<Vec, 4> dFy = {ops.Dy() * k.F11, ops.Dy() * k.F12, ops.Dy() * k.F21, ops.Dy() * k.F22};
  for (int m = 0; m < n; ++m) {
    ReparamStrains e{k.e1[m], k.e2[m], k.e3[m]};
    Eigen::Vector4d Fv(k.F11[m], k.F12[m], k.F21[m], k.F22[m]);
    Eigen::Vector3d dfde = homogeneous_energy_de(s.c[m], e, p);
    Eigen::Vector4d pvec = dfde[0] * de1_dF(Fv) + dfde[1] * de2_dF(Fv) + dfde[2] * de3_dF(Fv);
    // Gradient-energy contribution: lambda_e * e2_{,I} * d(e2_{,I})/dF with
    // e2_{,I} = (de2/dF_kL) F_{kL,I}; its F-derivative at fixed grad F is
    // d2e2/dF^2 contracted with the nodal gradient of F.
    Eigen::Vector4d gFx(dFx[0][m], dFx[1][m], dFx[2][m], dFx[3][m]);
    Eigen::Vector4d gFy(dFy[0][m], dFy[1][m], dFy[2][m], dFy[3][m]);
    pvec += p.lambda_e * (k.grad_e2_x[m] * (d2e2 * gFx) + k.grad_e2_y[m] * (d2e2 * gFy));
    out.P[m] << pvec[0], pvec[1], pvec[2], pvec[3];
    Eigen::Vector4d de2 = de2_dF(Fv);
    Mat2 de2m;
    de2m << de2[0], de2[1], de2[2], de2[3];
    out.B[m][0] = p.lambda_e * k.grad_e2_x[m] * de2m;
    out.B[m][1] = p.lambda_e * k.grad_e2_y[m] * de2m;
  }
  return out;
}

}  // namespace ddhom
