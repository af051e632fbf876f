#pragma once

#include <Eigen/Dense>
#include <string>

#include "ddhom/energy.hpp"
#include "ddhom/fields.hpp"
#include "ddhom/grid.hpp"

namespace ddhom {

enum class Face { XPlus, XMinus, YPlus, YMinus };

struct HomogenizedRecord {
  std::string run_id;
  int frame_id = 0;
  Mat2 F_avg = Mat2::Identity();
  Mat2 E_avg = Mat2::Zero();
  Mat2 P_avg = Mat2::Zero();
  double Psi_mech = 0.0;
  double Psi_total = 0.0;
  // Max relative traction mismatch between opposite faces; a quality metric,
  // not part of the record schema.
  double face_imbalance = 0.0;
};

/// Volume-averaged deformation gradient (trapezoidal quadrature).
inline Mat2 average_deformation_gradient(const GridOperators& ops, const FieldState& s) {
  KinematicsSnapshot k = compute_kinematics(ops, s.u1, s.u2);
  const double vol = ops.grid().volume();
  Mat2 F;
  F << ops.integrate(k.F11) / vol, ops.integrate(k.F12) / vol, ops.integrate(k.F21) / vol,
      ops.integrate(k.F22) / vol;
  return F;
}

/// Mechanical free energy: volume integral of the mechanical +
/// mechanochemical density, including the l_e-scaled strain-gradient term.
inline double mechanical_free_energy(const GridOperators& ops, const FieldState& s, const MaterialParams& p) {
  KinematicsSnapshot k = compute_kinematics(ops, s.u1, s.u2);
  const Vec& w = ops.weights();
  KahanSum acc;
  for (int m = 0; m < s.c.size(); ++m) {
    ReparamStrains e{k.e1[m], k.e2[m], k.e3[m]};
    Eigen::Vector2d ge2(k.grad_e2_x[m], k.grad_e2_y[m]);
    acc.add(w[m] * mech_energy_density(s.c[m], e, ge2, p));
  }
  return acc.value();
}

/// Traction components averaged over one boundary face: returns
/// (1/A) * integral of P.N along the face, a 2-vector (T1, T2).
inline Eigen::Vector2d average_stress(const GridOperators& ops, const FieldState& s, Face face,
                                      const MaterialParams& p) {
  StressFields sf = stresses(ops, s, p);
  const GridSpec& g = ops.grid();
  Eigen::Vector2d N;
  bool along_y;  // whether the face runs along the y axis
  int fixed_i = 0, fixed_j = 0;
  switch (face) {
    case Face::XPlus: N = {1, 0}; along_y = true; fixed_i = g.nx - 1; break;
    case Face::XMinus: N = {-1, 0}; along_y = true; fixed_i = 0; break;
    case Face::YPlus: N = {0, 1}; along_y = false; fixed_j = g.ny - 1; break;
    case Face::YMinus: N = {0, -1}; along_y = false; fixed_j = 0; break;
    default: throw InvalidInputError("average_stress: bad face");
  }
  const int count = along_y ? g.ny : g.nx;
  const double h = along_y ? g.hy() : g.hx();
  const double area = along_y ? g.Ly : g.Lx;
  KahanSum t1, t2;
  for (int q = 0; q < count; ++q) {
    int k = along_y ? g.idx(fixed_i, q) : g.idx(q, fixed_j);
    double wq = (q == 0 || q == count - 1) ? 0.5 * h : h;
    Eigen::Vector2d T = sf.P[k] * N;
    t1.add(wq * T[0]);
    t2.add(wq * T[1]);
  }
  return Eigen::Vector2d(t1.value() / area, t2.value() / area);
}

/// Full homogenized record for a frame. P_avg columns come from the +X and
/// +Y faces; the opposite faces only feed the imbalance metric.
inline HomogenizedRecord homogenize_frame(const GridOperators& ops, const FieldState& s,
                                          const MaterialParams& p, const std::string& run_id, int frame_id) {
  HomogenizedRecord r;
  r.run_id = run_id;
  r.frame_id = frame_id;
  r.F_avg = average_deformation_gradient(ops, s);
  r.E_avg = green_lagrange(r.F_avg);
  Eigen::Vector2d tx = average_stress(ops, s, Face::XPlus, p);
  Eigen::Vector2d ty = average_stress(ops, s, Face::YPlus, p);
  r.P_avg << tx[0], ty[0], tx[1], ty[1];
  Eigen::Vector2d txm = -average_stress(ops, s, Face::XMinus, p);
  Eigen::Vector2d tym = -average_stress(ops, s, Face::YMinus, p);
  double scale = std::max(1e-300, std::max(r.P_avg.cwiseAbs().maxCoeff(),
                                           std::max(txm.cwiseAbs().maxCoeff(), tym.cwiseAbs().maxCoeff())));
  r.face_imbalance = std::max((tx - txm).cwiseAbs().maxCoeff(), (ty - tym).cwiseAbs().maxCoeff()) / scale;
  r.Psi_mech = mechanical_free_energy(ops, s, p);
  r.Psi_total = total_free_energy(ops, s, p);
  return r;
}

}  // namespace ddhom
