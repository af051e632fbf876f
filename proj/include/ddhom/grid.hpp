#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "ddhom/common.hpp"

namespace ddhom {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

// Structured node grid over [0,Lx] x [0,Ly]. Node (i,j) sits at
// (i*hx, j*hy); storage is row-major with i fastest.
struct GridSpec {
  int nx = 61;
  int ny = 61;
  double Lx = 0.01;
  double Ly = 0.01;

  void validate() const {
    if (nx < 8 || ny < 8) throw InvalidInputError("GridSpec: nx, ny must be >= 8");
    if (!(Lx > 0.0) || !(Ly > 0.0)) throw InvalidInputError("GridSpec: Lx, Ly must be > 0");
  }
  int n() const { return nx * ny; }
  double hx() const { return Lx / (nx - 1); }
  double hy() const { return Ly / (ny - 1); }
  double volume() const { return Lx * Ly; }
  int idx(int i, int j) const { return j * nx + i; }
  double x(int i) const { return i * hx(); }
  double y(int j) const { return j * hy(); }
  bool on_boundary(int i, int j) const { return i == 0 || j == 0 || i == nx - 1 || j == ny - 1; }
};

// Discrete operators on the structured grid.
//
// Two families share one grid:
//  - Nodal second-order difference operators Dx, Dy (central inside,
//    one-sided at the boundary) and trapezoidal nodal weights. These define
//    all reported point fields and averaged quantities.
//  - Bilinear-element (2x2 Gauss) interpolation and gradient maps. The
//    discrete free energy is built on these; a collocated central-difference
//    energy admits checkerboard displacement modes that the stencil cannot
//    see, which contaminate equilibria.
//
// Gauss-point rows of Gx, Gy and the nodal rows of Dx, Dy annihilate
// constants exactly in floating point, which makes the conservative
// structure of the transport operator exact.
class GridOperators {
 public:
  explicit GridOperators(const GridSpec& g) : grid_(g) {
    g.validate();
    const int n = g.n();
    Dx_ = build_diff(g, /*along_x=*/true);
    Dy_ = build_diff(g, /*along_x=*/false);
    w_ = Vec::Zero(n);
    for (int j = 0; j < g.ny; ++j) {
      double sy = (j == 0 || j == g.ny - 1) ? 0.5 : 1.0;
      for (int i = 0; i < g.nx; ++i) {
        double sx = (i == 0 || i == g.nx - 1) ? 0.5 : 1.0;
        w_[g.idx(i, j)] = g.hx() * g.hy() * sx * sy;
      }
    }
    build_fem(g);
    K_ = SpMat(Gx_.transpose() * wgp_.asDiagonal() * Gx_) +
         SpMat(Gy_.transpose() * wgp_.asDiagonal() * Gy_);
    K_.makeCompressed();
    SpMat Winv(n, n);
    {
      std::vector<Eigen::Triplet<double>> t;
      t.reserve(n);
      for (int k = 0; k < n; ++k) t.emplace_back(k, k, 1.0 / w_[k]);
      Winv.setFromTriplets(t.begin(), t.end());
    }
    KWK_ = SpMat(K_ * Winv * K_);
    KWK_.makeCompressed();
    // Lumped projection from Gauss-point values back to nodes.
    Pn_ = SpMat(Winv * SpMat(N_.transpose() * wgp_.asDiagonal()));
    Pn_.makeCompressed();
  }

  const GridSpec& grid() const { return grid_; }
  const SpMat& Dx() const { return Dx_; }
  const SpMat& Dy() const { return Dy_; }
  const Vec& weights() const { return w_; }

  int ngp() const { return static_cast<int>(wgp_.size()); }
  const Vec& gp_weights() const { return wgp_; }
  const SpMat& N() const { return N_; }    // nodal -> gp value
  const SpMat& Gx() const { return Gx_; }  // nodal -> gp x-derivative
  const SpMat& Gy() const { return Gy_; }
  const SpMat& K() const { return K_; }    // grad-grad stiffness
  const SpMat& KWK() const { return KWK_; }
  const SpMat& Pn() const { return Pn_; }  // gp -> nodal lumped projection

  // Trapezoidal volume integral of a nodal field (identical to the lumped
  // bilinear-element quadrature on this grid).
  double integrate(const Vec& f) const {
    KahanSum s;
    for (int k = 0; k < f.size(); ++k) s.add(w_[k] * f[k]);
    return s.value();
  }

 private:
  static SpMat build_diff(const GridSpec& g, bool along_x) {
    const int n = g.n();
    const double h = along_x ? g.hx() : g.hy();
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(3 * n);
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i) {
        int row = g.idx(i, j);
        int p = along_x ? i : j;
        int pmax = along_x ? g.nx - 1 : g.ny - 1;
        auto at = [&](int q) { return along_x ? g.idx(q, j) : g.idx(i, q); };
        // The corner coefficient is minus the sum of the others so rows
        // annihilate constants exactly in floating point.
        const double a = 0.5 / h;
        if (p == 0) {
          t.emplace_back(row, at(0), -(4.0 * a - a));
          t.emplace_back(row, at(1), 4.0 * a);
          t.emplace_back(row, at(2), -a);
        } else if (p == pmax) {
          t.emplace_back(row, at(pmax), 4.0 * a - a);
          t.emplace_back(row, at(pmax - 1), -4.0 * a);
          t.emplace_back(row, at(pmax - 2), a);
        } else {
          t.emplace_back(row, at(p - 1), -a);
          t.emplace_back(row, at(p + 1), a);
        }
      }
    }
    SpMat D(n, n);
    D.setFromTriplets(t.begin(), t.end());
    D.makeCompressed();
    return D;
  }

  void build_fem(const GridSpec& g) {
    const int cells = (g.nx - 1) * (g.ny - 1);
    const int ngp = 4 * cells;
    const double hx = g.hx(), hy = g.hy();
    const double wq = 0.25 * hx * hy;
    const double r = 1.0 / std::sqrt(3.0);
    const double gpos[2] = {-r, r};
    std::vector<Eigen::Triplet<double>> tn, tgx, tgy;
    tn.reserve(4 * ngp);
    tgx.reserve(4 * ngp);
    tgy.reserve(4 * ngp);
    wgp_ = Vec::Constant(ngp, wq);
    int gp = 0;
    for (int j = 0; j < g.ny - 1; ++j) {
      for (int i = 0; i < g.nx - 1; ++i) {
        int nodes[4] = {g.idx(i, j), g.idx(i + 1, j), g.idx(i, j + 1), g.idx(i + 1, j + 1)};
        for (int qy = 0; qy < 2; ++qy) {
          for (int qx = 0; qx < 2; ++qx, ++gp) {
            double xi = gpos[qx], eta = gpos[qy];
            double Nv[4] = {0.25 * (1 - xi) * (1 - eta), 0.25 * (1 + xi) * (1 - eta),
                            0.25 * (1 - xi) * (1 + eta), 0.25 * (1 + xi) * (1 + eta)};
            // dN/dx = dN/dxi * 2/hx, dN/dy = dN/deta * 2/hy
            double ax = (1 - eta) / (2 * hx), bx = (1 + eta) / (2 * hx);
            double ay = (1 - xi) / (2 * hy), by = (1 + xi) / (2 * hy);
            double Gxv[4] = {-ax, ax, -bx, bx};
            double Gyv[4] = {-ay, -by, ay, by};
            for (int a = 0; a < 4; ++a) {
              tn.emplace_back(gp, nodes[a], Nv[a]);
              tgx.emplace_back(gp, nodes[a], Gxv[a]);
              tgy.emplace_back(gp, nodes[a], Gyv[a]);
            }
          }
        }
      }
    }
    const int n = g.n();
    N_ = SpMat(ngp, n);
    N_.setFromTriplets(tn.begin(), tn.end());
    N_.makeCompressed();
    Gx_ = SpMat(ngp, n);
    Gx_.setFromTriplets(tgx.begin(), tgx.end());
    Gx_.makeCompressed();
    Gy_ = SpMat(ngp, n);
    Gy_.setFromTriplets(tgy.begin(), tgy.end());
    Gy_.makeCompressed();
  }

  GridSpec grid_;
  SpMat Dx_, Dy_;
  Vec w_;
  SpMat N_, Gx_, Gy_;
  Vec wgp_;
  SpMat K_;
  SpMat KWK_;
  SpMat Pn_;
};

}  // namespace ddhom
