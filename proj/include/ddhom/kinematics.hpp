#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "ddhom/common.hpp"
#include "ddhom/grid.hpp"

namespace ddhom {

using Mat2 = Eigen::Matrix2d;

inline constexpr double kSqrt2 = 1.4142135623730951;

/// Green-Lagrange strain E = (F^T F - I)/2, symmetrized exactly.
inline Mat2 green_lagrange(const Mat2& F) {
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) require_finite(F(r, c), "green_lagrange");
  if (!(F.determinant() > 0.0)) throw InvalidInputError("green_lagrange: det F must be > 0");
  Mat2 E = 0.5 * (F.transpose() * F - Mat2::Identity());
  E(0, 1) = E(1, 0) = 0.5 * (E(0, 1) + E(1, 0));
  return E;
}

struct ReparamStrains {
  double e1 = 0.0;
  double e2 = 0.0;
  double e3 = 0.0;
};

/// Symmetry-adapted strains: e1 dilatational, e2 square->rectangle order
/// parameter, e3 shear.
inline ReparamStrains reparam_strains(const Mat2& E) {
  require_finite(E(0, 0), "reparam_strains");
  require_finite(E(1, 1), "reparam_strains");
  require_finite(E(0, 1), "reparam_strains");
  ReparamStrains e;
  e.e1 = (E(0, 0) + E(1, 1)) / kSqrt2;
  e.e2 = (E(0, 0) - E(1, 1)) / kSqrt2;
  e.e3 = kSqrt2 * E(0, 1);
  return e;
}

// Nodal kinematic fields derived from a displacement field. F components are
// stored as separate nodal vectors so the discrete energy and its exact
// derivatives can be written in terms of the grid operators.
struct KinematicsSnapshot {
  Vec F11, F12, F21, F22;
  Vec E11, E12, E22;
  Vec e1, e2, e3;
  Vec grad_e2_x, grad_e2_y;

  int size() const { return static_cast<int>(e2.size()); }

  Mat2 F_at(int k) const {
    Mat2 F;
    F << F11[k], F12[k], F21[k], F22[k];
    return F;
  }
  Mat2 E_at(int k) const {
    Mat2 E;
    E << E11[k], E12[k], E12[k], E22[k];
    return E;
  }
};

inline KinematicsSnapshot compute_kinematics(const GridOperators& ops, const Vec& u1, const Vec& u2) {
  KinematicsSnapshot k;
  const int n = ops.grid().n();
  k.F11 = Vec::Ones(n) + ops.Dx() * u1;
  k.F12 = ops.Dy() * u1;
  k.F21 = ops.Dx() * u2;
  k.F22 = Vec::Ones(n) + ops.Dy() * u2;
  k.E11 = 0.5 * (k.F11.array().square() + k.F21.array().square() - 1.0).matrix();
  k.E22 = 0.5 * (k.F12.array().square() + k.F22.array().square() - 1.0).matrix();
  k.E12 = 0.5 * (k.F11.array() * k.F12.array() + k.F21.array() * k.F22.array()).matrix();
  k.e1 = (k.E11 + k.E22) / kSqrt2;
  k.e2 = (k.E11 - k.E22) / kSqrt2;
  k.e3 = kSqrt2 * k.E12;
  k.grad_e2_x = ops.Dx() * k.e2;
  k.grad_e2_y = ops.Dy() * k.e2;
  return k;
}

// d e_alpha / d (F11,F12,F21,F22) at one evaluation point.
inline Eigen::Vector4d de1_dF(const Eigen::Vector4d& F) {
  return Eigen::Vector4d(F[0], F[1], F[2], F[3]) / kSqrt2;
}
inline Eigen::Vector4d de2_dF(const Eigen::Vector4d& F) {
  return Eigen::Vector4d(F[0], -F[1], F[2], -F[3]) / kSqrt2;
}
inline Eigen::Vector4d de3_dF(const Eigen::Vector4d& F) {
  return Eigen::Vector4d(F[1], F[0], F[3], F[2]) / kSqrt2;
}

// Constant second derivatives d^2 e_alpha / dF^2.
inline Eigen::Matrix4d d2e1_dF2() {
  return Eigen::Matrix4d::Identity() / kSqrt2;
}
inline Eigen::Matrix4d d2e2_dF2() {
  Eigen::Vector4d d(1.0, -1.0, 1.0, -1.0);
  return (d / kSqrt2).asDiagonal();
}
inline Eigen::Matrix4d d2e3_dF2() {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m(0, 1) = m(1, 0) = 1.0 / kSqrt2;
  m(2, 3) = m(3, 2) = 1.0 / kSqrt2;
  return m;
}

}  // namespace ddhom
