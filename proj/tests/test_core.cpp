#include <catch2/catch_amalgamated.hpp>

#include "ddhom/common.hpp"
#include "ddhom/grid.hpp"
#include "ddhom/rng.hpp"

using namespace ddhom;

TEST_CASE("philox streams are deterministic and independent") {
  Philox a(42, 1), b(42, 1), c(42, 2);
  std::vector<double> xs, ys, zs;
  for (int k = 0; k < 64; ++k) {
    xs.push_back(a.uniform());
    ys.push_back(b.uniform());
    zs.push_back(c.uniform());
  }
  REQUIRE(xs == ys);
  REQUIRE(xs != zs);
  for (double x : xs) {
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
  }
}

TEST_CASE("philox uniform covers the requested interval") {
  Philox rng(7, 0);
  double lo = 1e9, hi = -1e9, sum = 0;
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    double x = rng.uniform(-2.0, 3.0);
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    sum += x;
  }
  REQUIRE(lo >= -2.0);
  REQUIRE(hi <= 3.0);
  // mean of U(-2,3) is 0.5 with sd 5/sqrt(12n)
  REQUIRE(std::abs(sum / n - 0.5) < 3.0 * 5.0 / std::sqrt(12.0 * n));
}

TEST_CASE("kahan sum is permutation stable") {
  Philox rng(3, 9);
  std::vector<double> xs(5000);
  for (auto& x : xs) x = rng.uniform(-1.0, 1.0) * std::pow(10.0, rng.uniform(-8.0, 8.0));
  double s1 = kahan_total(xs);
  shuffle(xs, rng);
  double s2 = kahan_total(xs);
  REQUIRE(std::abs(s1 - s2) <= 1e-12 * std::max(1.0, std::abs(s1)));
}

TEST_CASE("difference operators annihilate constants and differentiate quadratics") {
  GridSpec g;
  g.nx = 13;
  g.ny = 11;
  g.Lx = 1.3;
  g.Ly = 0.9;
  GridOperators ops(g);
  Vec ones = Vec::Ones(g.n());
  REQUIRE((ops.Dx() * ones).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE((ops.Dy() * ones).cwiseAbs().maxCoeff() < 1e-12);

  Vec f(g.n()), dfdx(g.n()), dfdy(g.n());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      double x = g.x(i), y = g.y(j);
      f[g.idx(i, j)] = 2.0 + 0.5 * x - 1.5 * y + 0.25 * x * x + 0.75 * y * y + 0.3 * x * y;
      dfdx[g.idx(i, j)] = 0.5 + 0.5 * x + 0.3 * y;
      dfdy[g.idx(i, j)] = -1.5 + 1.5 * y + 0.3 * x;
    }
  REQUIRE(((ops.Dx() * f) - dfdx).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(((ops.Dy() * f) - dfdy).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("trapezoidal quadrature integrates bilinear fields exactly") {
  GridSpec g;
  g.nx = 9;
  g.ny = 17;
  g.Lx = 2.0;
  g.Ly = 0.5;
  GridOperators ops(g);
  Vec f(g.n());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) f[g.idx(i, j)] = 3.0 + 2.0 * g.x(i) - g.y(j) + 4.0 * g.x(i) * g.y(j);
  // integral of 3 + 2x - y + 4xy over [0,2]x[0,0.5] is 3 + 2 - 0.25 + 1
  double I = 5.75;
  REQUIRE(std::abs(ops.integrate(f) - I) < 1e-14);
}

TEST_CASE("grid validation rejects degenerate specs") {
  GridSpec g;
  g.nx = 4;
  REQUIRE_THROWS_AS(g.validate(), InvalidInputError);
  GridSpec g2;
  g2.Lx = 0.0;
  REQUIRE_THROWS_AS(g2.validate(), InvalidInputError);
}
