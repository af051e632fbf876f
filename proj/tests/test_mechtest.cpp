#include <catch2/catch_amalgamated.hpp>

#include "ddhom/mechtest.hpp"

using namespace ddhom;

TEST_CASE("loading samples are deterministic and in range") {
  auto a = sample_loadings(1, 99);
  auto b = sample_loadings(1, 99);
  REQUIRE(a[0].dE11 == b[0].dE11);
  REQUIRE(a[0].dE22 == b[0].dE22);
  REQUIRE(a[0].dE12 == b[0].dE12);

  PerturbationRanges ranges;
  auto many = sample_loadings(1600, 7);
  for (const auto& s : many) {
    REQUIRE(std::abs(s.dE11) <= ranges.biaxial);
    REQUIRE(std::abs(s.dE22) <= ranges.biaxial);
    REQUIRE(std::abs(s.dE12) <= ranges.shear);
  }

  // empirical mean within 3 sigma of the midpoint
  auto big = sample_loadings(10000, 12345);
  KahanSum sum;
  for (const auto& s : big) sum.add(s.dE11);
  double mean = sum.value() / big.size();
  double sigma = 2 * ranges.biaxial / std::sqrt(12.0) / std::sqrt(static_cast<double>(big.size()));
  REQUIRE(std::abs(mean) < 3 * sigma);
}

TEST_CASE("resulting strain increments hit the sampled targets exactly") {
  GridSpec g;
  BoundaryConditions base{2e-5, 1e-5, 0.0};
  Mat2 E_base = green_lagrange(Mat2::Identity() + base.affine_gradient(g));
  auto specs = sample_loadings(50, 4);
  for (const auto& spec : specs) {
    Mat2 dE;
    dE << spec.dE11, spec.dE12, spec.dE12, spec.dE22;
    BoundaryConditions bc = BoundaryConditions::from_strain(g, Mat2(E_base + dE));
    Mat2 E_new = green_lagrange(Mat2::Identity() + bc.affine_gradient(g));
    REQUIRE((E_new - (E_base + dE)).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("mech tests on a uniform square-phase frame") {
  GridSpec g;
  g.nx = g.ny = 31;
  GridOperators ops(g);
  MaterialParams p;
  MechanicsSolver mech(ops, p);

  BoundaryConditions base{2e-5, 1e-5, 0.0};
  FieldState frame = FieldState::zero(g);
  const double tol = 1e-9;
  mech.solve(frame, base, tol, 60);
  double psi0 = mechanical_free_energy(ops, frame, p);
  Vec c_before = frame.c;
  Vec e2_before = compute_kinematics(ops, frame.u1, frame.u2).e2;

  SECTION("zero increment is a no-op") {
    PerturbationSpec zero;
    MechTestRecord rec = run_mech_test(ops, mech, frame, base, zero, tol, 60, psi0);
    REQUIRE(rec.Psi_mech == Catch::Approx(psi0).epsilon(1e-10));
    HomogenizedRecord basehom = homogenize_frame(ops, frame, p, "t", 0);
    REQUIRE((rec.P_avg - basehom.P_avg).cwiseAbs().maxCoeff() <=
            1e-10 * std::max(1e-12, basehom.P_avg.cwiseAbs().maxCoeff()));
  }

  SECTION("paired increments are symmetric to leading order") {
    PerturbationSpec plus;
    plus.dE11 = 3e-5;
    plus.dE22 = -2e-5;
    plus.dE12 = 1e-4;
    PerturbationSpec minus;
    minus.dE11 = -plus.dE11;
    minus.dE22 = -plus.dE22;
    minus.dE12 = -plus.dE12;
    double dpsi_p = run_mech_test(ops, mech, frame, base, plus, tol, 60, psi0).Psi_mech - psi0;
    double dpsi_m = run_mech_test(ops, mech, frame, base, minus, tol, 60, psi0).Psi_mech - psi0;
    // linear parts cancel; the residual asymmetry is quadratic-small
    double scale = std::max(std::abs(dpsi_p), std::abs(dpsi_m));
    REQUIRE(std::abs(dpsi_p + dpsi_m) < 0.5 * scale);
  }

  SECTION("analytic quadratic response of the uniform square phase") {
    // equal biaxial + shear keeps e2 = 0 so the closed form is exact
    PerturbationSpec spec;
    spec.dE11 = 4e-5;
    spec.dE22 = 4e-5;
    spec.dE12 = 2e-4;
    // measure against the unloaded reference so the analytic form applies
    BoundaryConditions unloaded{};
    FieldState ref = FieldState::zero(g);
    mech.solve(ref, unloaded, tol, 60);
    double psi_ref = mechanical_free_energy(ops, ref, p);
    REQUIRE(std::abs(psi_ref) < 1e-18);
    MechTestRecord rec = run_mech_test(ops, mech, ref, unloaded, spec, tol, 60, psi_ref);
    ReparamStrains e = reparam_strains(rec.E_avg);
    double analytic = p.a() * (e.e1 * e.e1 + e.e3 * e.e3) * g.volume();
    REQUIRE(rec.Psi_mech - psi_ref == Catch::Approx(analytic).epsilon(1e-6));

    // full quadratic-plus-quartic form for a generic increment
    PerturbationSpec generic;
    generic.dE11 = 4e-5;
    generic.dE22 = -3e-5;
    generic.dE12 = 1.5e-4;
    rec = run_mech_test(ops, mech, ref, unloaded, generic, tol, 60, psi_ref);
    e = reparam_strains(rec.E_avg);
    double full = (p.a() * (e.e1 * e.e1 + e.e3 * e.e3) + p.b() * std::pow(e.e2, 4) + p.a() * e.e2 * e.e2) *
                  g.volume();
    REQUIRE(rec.Psi_mech - psi_ref == Catch::Approx(full).epsilon(1e-6));
  }

  SECTION("testing leaves the frame untouched") {
    PerturbationSpec spec;
    spec.dE11 = 5e-5;
    run_mech_test(ops, mech, frame, base, spec, tol, 60, psi0);
    REQUIRE(frame.c == c_before);
    Vec e2_after = compute_kinematics(ops, frame.u1, frame.u2).e2;
    REQUIRE(e2_after == e2_before);
  }
}
