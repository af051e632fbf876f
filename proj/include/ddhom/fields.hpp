#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "ddhom/grid.hpp"
#include "ddhom/kinematics.hpp"

namespace ddhom {

// Affine Dirichlet data on the whole boundary: u(X) = H X with an
// upper-triangular displacement-gradient H. Biaxial magnitudes u1, u2 are the
// total stretches across the domain; shear is the tangential offset of the
// top face relative to the bottom one.
struct BoundaryConditions {
  double u1 = 0.0;
  double u2 = 0.0;
  double shear = 0.0;

  Mat2 affine_gradient(const GridSpec& g) const {
    Mat2 H;
    H << u1 / g.Lx, shear / g.Ly, 0.0, u2 / g.Ly;
    return H;
  }

  void validate() const {
    require_finite(u1, "BoundaryConditions.u1");
    require_finite(u2, "BoundaryConditions.u2");
    require_finite(shear, "BoundaryConditions.shear");
  }

  // Boundary data realizing an exact Green-Lagrange strain target. The
  // upper-triangular (rotation-free) factor of I + 2E is the unique such
  // affine map in this family.
  static BoundaryConditions from_strain(const GridSpec& g, const Mat2& E_target) {
    Mat2 C = Mat2::Identity() + 2.0 * E_target;
    Eigen::LLT<Mat2> llt(C);
    if (llt.info() != Eigen::Success)
      throw InvalidInputError("BoundaryConditions::from_strain: I + 2E not positive definite");
    Mat2 R = llt.matrixU();  // C = R^T R with R upper triangular
    Mat2 H = R - Mat2::Identity();
    BoundaryConditions bc;
    bc.u1 = H(0, 0) * g.Lx;
    bc.u2 = H(1, 1) * g.Ly;
    bc.shear = H(0, 1) * g.Ly;
    return bc;
  }
};

// Composition, chemical potential and displacement on one grid.
struct FieldState {
  GridSpec grid;
  Vec c;
  Vec mu;
  Vec u1;
  Vec u2;
  int step = 0;
  double time = 0.0;

  static FieldState zero(const GridSpec& g) {
    FieldState s;
    s.grid = g;
    s.c = Vec::Zero(g.n());
    s.mu = Vec::Zero(g.n());
    s.u1 = Vec::Zero(g.n());
    s.u2 = Vec::Zero(g.n());
    return s;
  }
};

// Overwrites boundary displacement nodes with the affine Dirichlet data.
inline void apply_dirichlet(FieldState& s, const BoundaryConditions& bc) {
  const GridSpec& g = s.grid;
  Mat2 H = bc.affine_gradient(g);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (!g.on_boundary(i, j)) continue;
      int k = g.idx(i, j);
      double X = g.x(i), Y = g.y(j);
      s.u1[k] = H(0, 0) * X + H(0, 1) * Y;
      s.u2[k] = H(1, 0) * X + H(1, 1) * Y;
    }
  }
}

}  // namespace ddhom
