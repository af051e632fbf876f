#include <catch2/catch_amalgamated.hpp>

#include "ddhom/homogenize.hpp"
#include "ddhom/mechanics.hpp"
#include "ddhom/rng.hpp"

using namespace ddhom;

namespace {

GridSpec grid61() {
  GridSpec g;
  return g;  // 61x61 over 0.01 x 0.01
}

void set_affine(FieldState& s, const Mat2& H) {
  const GridSpec& g = s.grid;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      int k = g.idx(i, j);
      s.u1[k] = H(0, 0) * g.x(i) + H(0, 1) * g.y(j);
      s.u2[k] = H(1, 0) * g.x(i) + H(1, 1) * g.y(j);
    }
}

}  // namespace

TEST_CASE("average deformation gradient: reference, affine, divergence theorem") {
  GridSpec g = grid61();
  GridOperators ops(g);
  FieldState s = FieldState::zero(g);
  REQUIRE((average_deformation_gradient(ops, s) - Mat2::Identity()).cwiseAbs().maxCoeff() == 0.0);

  Mat2 H;
  H << 2e-3, 5e-4, -3e-4, -1e-3;
  set_affine(s, H);
  Mat2 F = average_deformation_gradient(ops, s);
  REQUIRE((F - (Mat2::Identity() + H)).cwiseAbs().maxCoeff() < 1e-12 * (1 + H.cwiseAbs().maxCoeff()));

  // generic smooth displacement: volume average of grad u equals the
  // boundary integral of u x N / V
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      double x = g.x(i) / g.Lx, y = g.y(j) / g.Ly;
      int k = g.idx(i, j);
      s.u1[k] = 1e-3 * (x * x * 0.5 + 0.3 * x * y);
      s.u2[k] = 1e-3 * (0.2 * y * y - 0.1 * x * y + 0.05 * x);
    }
  F = average_deformation_gradient(ops, s);
  Mat2 S = Mat2::Zero();
  auto face_sum = [&](bool along_y, int fixed, double nx_, double ny_) {
    const int count = along_y ? g.ny : g.nx;
    const double h = along_y ? g.hy() : g.hx();
    KahanSum s1, s2;
    for (int q = 0; q < count; ++q) {
      int k = along_y ? g.idx(fixed, q) : g.idx(q, fixed);
      double wq = (q == 0 || q == count - 1) ? 0.5 * h : h;
      s1.add(wq * s.u1[k]);
      s2.add(wq * s.u2[k]);
    }
    S(0, 0) += s1.value() * nx_;
    S(0, 1) += s1.value() * ny_;
    S(1, 0) += s2.value() * nx_;
    S(1, 1) += s2.value() * ny_;
  };
  face_sum(true, g.nx - 1, 1.0, 0.0);
  face_sum(true, 0, -1.0, 0.0);
  face_sum(false, g.ny - 1, 0.0, 1.0);
  face_sum(false, 0, 0.0, -1.0);
  Mat2 expected = Mat2::Identity() + S / g.volume();
  REQUIRE((F - expected).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("mechanical free energy closed forms") {
  GridSpec g = grid61();
  GridOperators ops(g);
  MaterialParams p;
  FieldState s = FieldState::zero(g);

  // mechanochemical term vanishes at c = 0.5
  s.c.setConstant(0.5);
  Mat2 E_target = Mat2::Zero();
  E_target(0, 0) = 0.1 / kSqrt2;
  E_target(1, 1) = -0.1 / kSqrt2;  // e2 = 0.1, e1 = 0
  BoundaryConditions bc = BoundaryConditions::from_strain(g, E_target);
  set_affine(s, bc.affine_gradient(g));
  KinematicsSnapshot k = compute_kinematics(ops, s.u1, s.u2);
  REQUIRE(k.e2[g.idx(30, 30)] == Catch::Approx(0.1).epsilon(1e-10));
  double psi_c05 = mechanical_free_energy(ops, s, p);
  // only the purely mechanical terms remain: b*e2^4 * V
  REQUIRE(psi_c05 == Catch::Approx(p.b() * std::pow(0.1, 4) * g.volume()).epsilon(1e-9));

  // uniform c = 1, e2 = 0.1: density = 0.1 - 0.2 = -0.1
  s.c.setConstant(1.0);
  double psi = mechanical_free_energy(ops, s, p);
  REQUIRE(psi == Catch::Approx(-0.1 * g.volume()).epsilon(1e-9));

  // uniform e1 = a: psi = (2 d_e / s_e^2) a^2 V
  double e1 = 2e-3;
  E_target.setZero();
  E_target(0, 0) = E_target(1, 1) = e1 / kSqrt2;
  bc = BoundaryConditions::from_strain(g, E_target);
  s = FieldState::zero(g);
  set_affine(s, bc.affine_gradient(g));
  psi = mechanical_free_energy(ops, s, p);
  REQUIRE(psi == Catch::Approx(p.a() * e1 * e1 * g.volume()).epsilon(1e-9));
}

TEST_CASE("total free energy closed forms") {
  GridSpec g = grid61();
  GridOperators ops(g);
  MaterialParams p;
  FieldState s = FieldState::zero(g);
  REQUIRE(total_free_energy(ops, s, p) == 0.0);
  s.c.setConstant(0.5);
  REQUIRE(total_free_energy(ops, s, p) == Catch::Approx(2.0 * g.volume()).epsilon(1e-12));
}

TEST_CASE("uniform states: psi_mech equals volume times pointwise density") {
  GridSpec g = grid61();
  GridOperators ops(g);
  MaterialParams p;
  Philox rng(31, 0);
  for (int trial = 0; trial < 5; ++trial) {
    Mat2 E_target;
    double a11 = rng.uniform(-2e-3, 2e-3), a22 = rng.uniform(-2e-3, 2e-3), a12 = rng.uniform(-1e-3, 1e-3);
    E_target << a11, a12, a12, a22;
    BoundaryConditions bc = BoundaryConditions::from_strain(g, E_target);
    FieldState s = FieldState::zero(g);
    double c0 = rng.uniform(0.0, 1.0);
    s.c.setConstant(c0);
    set_affine(s, bc.affine_gradient(g));
    ReparamStrains e = reparam_strains(E_target);
    double density = mech_energy_density(c0, e, Eigen::Vector2d::Zero(), p);
    REQUIRE(mechanical_free_energy(ops, s, p) ==
            Catch::Approx(density * g.volume()).epsilon(1e-12).margin(1e-300));
  }
}

TEST_CASE("average stress: zero state, uniform stress, equilibrium balance") {
  GridSpec g = grid61();
  GridOperators ops(g);
  MaterialParams p;
  FieldState s = FieldState::zero(g);
  REQUIRE(average_stress(ops, s, Face::XPlus, p).cwiseAbs().maxCoeff() == 0.0);

  // uniform stress state: traction average equals P.N exactly
  Mat2 E_target;
  E_target << 1.5e-3, 4e-4, 4e-4, -8e-4;
  BoundaryConditions bc = BoundaryConditions::from_strain(g, E_target);
  s.c.setConstant(0.2);
  set_affine(s, bc.affine_gradient(g));
  StressFields sf = stresses(ops, s, p);
  Mat2 P0 = sf.P[g.idx(30, 30)];
  Eigen::Vector2d tx = average_stress(ops, s, Face::XPlus, p);
  REQUIRE(tx[0] == Catch::Approx(P0(0, 0)).epsilon(1e-12).margin(1e-300));
  REQUIRE(tx[1] == Catch::Approx(P0(1, 0)).epsilon(1e-12).margin(1e-300));
  Eigen::Vector2d ty = average_stress(ops, s, Face::YPlus, p);
  REQUIRE(ty[0] == Catch::Approx(P0(0, 1)).epsilon(1e-12).margin(1e-300));
  REQUIRE(ty[1] == Catch::Approx(P0(1, 1)).epsilon(1e-12).margin(1e-300));

  // analytic derivative of the mechanical density at a uniform equilibrated
  // phase equals the averaged traction
  MechanicsSolver mech(ops, p);
  s = FieldState::zero(g);
  s.c.setConstant(0.0);
  mech.solve(s, bc, 1e-8, 60);
  HomogenizedRecord r = homogenize_frame(ops, s, p, "t", 0);
  Mat2 F = Mat2::Identity() + bc.affine_gradient(g);
  Mat2 P_analytic;
  {
    double h = 1e-7;
    for (int rr = 0; rr < 2; ++rr)
      for (int cc = 0; cc < 2; ++cc) {
        Mat2 Fp = F, Fm = F;
        Fp(rr, cc) += h;
        Fm(rr, cc) -= h;
        double ep = mech_energy_density(0.0, reparam_strains(green_lagrange(Fp)), Eigen::Vector2d::Zero(), p);
        double em = mech_energy_density(0.0, reparam_strains(green_lagrange(Fm)), Eigen::Vector2d::Zero(), p);
        P_analytic(rr, cc) = (ep - em) / (2 * h);
      }
  }
  REQUIRE((r.P_avg - P_analytic).cwiseAbs().maxCoeff() < 1e-8 * std::max(1e-4, P_analytic.cwiseAbs().maxCoeff()));
  REQUIRE(r.face_imbalance < 1e-9);
}

TEST_CASE("opposite faces balance for an equilibrated heterogeneous state") {
  GridSpec g = grid61();
  GridOperators ops(g);
  MaterialParams p;
  MechanicsSolver mech(ops, p);
  FieldState s = FieldState::zero(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      double x = g.x(i) / g.Lx, y = g.y(j) / g.Ly;
      s.c[g.idx(i, j)] = 0.25 + 0.1 * std::sin(M_PI * x) * std::sin(M_PI * y);
    }
  BoundaryConditions bc{2e-5, 1e-5, 0.0};
  mech.solve(s, bc, 1e-8, 60);
  Eigen::Vector2d tx = average_stress(ops, s, Face::XPlus, p);
  Eigen::Vector2d txm = -average_stress(ops, s, Face::XMinus, p);
  double scale = std::max(tx.cwiseAbs().maxCoeff(), txm.cwiseAbs().maxCoeff());
  REQUIRE((tx - txm).cwiseAbs().maxCoeff() < 1e-6 * scale);
}

TEST_CASE("E_avg is consistent with F_avg") {
  GridSpec g = grid61();
  GridOperators ops(g);
  MaterialParams p;
  FieldState s = FieldState::zero(g);
  Philox rng(8, 8);
  for (int m = 0; m < g.n(); ++m) {
    s.u1[m] = rng.uniform(-1e-5, 1e-5);
    s.u2[m] = rng.uniform(-1e-5, 1e-5);
  }
  HomogenizedRecord r = homogenize_frame(ops, s, p, "t", 3);
  Mat2 E_check = green_lagrange(r.F_avg);
  REQUIRE((r.E_avg - E_check).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(r.E_avg(0, 1) == r.E_avg(1, 0));
}
