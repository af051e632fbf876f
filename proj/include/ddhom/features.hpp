#pragma once

#include <array>
#include <vector>

#include "ddhom/contour.hpp"
#include "ddhom/grid.hpp"
#include "ddhom/kinematics.hpp"

namespace ddhom {

struct MicrostructureFeatures {
  double phi_r_plus = 0.0;
  double phi_r_minus = 0.0;
  double l_s_r = 0.0;
  double l_r_plus = 0.0;
  double l_r_minus = 0.0;

  double phi_square() const { return 1.0 - phi_r_plus - phi_r_minus; }
};

enum class PhaseLabel : std::uint8_t { Square = 0, RectPlus = 1, RectMinus = 2 };

struct FeatureConfig {
  double c_threshold = 0.5;
  double e2_level = 0.0;
  // Whether rect-phase interface lengths include runs along the outer
  // domain boundary. Internal interfaces only by default.
  bool include_domain_boundary = false;
};

/// Per-node phase labels: rectangular variants need both c above threshold
/// and a definite e2 sign.
inline std::vector<PhaseLabel> phase_masks(const Vec& c, const Vec& e2, const FeatureConfig& cfg = {}) {
  std::vector<PhaseLabel> labels(c.size(), PhaseLabel::Square);
  for (int m = 0; m < c.size(); ++m) {
    if (c[m] > cfg.c_threshold) {
      if (e2[m] > cfg.e2_level)
        labels[m] = PhaseLabel::RectPlus;
      else if (e2[m] < cfg.e2_level)
        labels[m] = PhaseLabel::RectMinus;
    }
  }
  return labels;
}

/// Volume fractions of the two rectangular variants, weighted by trapezoidal
/// nodal volumes.
inline std::pair<double, double> volume_fractions(const GridOperators& ops,
                                                  const std::vector<PhaseLabel>& labels) {
  const Vec& w = ops.weights();
  KahanSum plus, minus;
  for (std::size_t m = 0; m < labels.size(); ++m) {
    if (labels[m] == PhaseLabel::RectPlus) plus.add(w[static_cast<int>(m)]);
    if (labels[m] == PhaseLabel::RectMinus) minus.add(w[static_cast<int>(m)]);
  }
  const double vol = ops.grid().volume();
  return {plus.value() / vol, minus.value() / vol};
}

namespace detail {

// Runs along the outer boundary where the interpolated c exceeds the
// threshold and e2 has the requested sign; used only when rect interfaces
// are configured to include the domain boundary.
inline std::pair<double, double> boundary_share(const GridSpec& g, const Vec& c, const Vec& e2,
                                                const FeatureConfig& cfg) {
  double plus = 0.0, minus = 0.0;
  auto accumulate = [&](int ka, int kb, double h) {
    // Subdivide each boundary edge; linear fields make 8 slices plenty.
    const int slices = 8;
    for (int s = 0; s < slices; ++s) {
      double t = (s + 0.5) / slices;
      double cm = (1 - t) * c[ka] + t * c[kb];
      double em = (1 - t) * e2[ka] + t * e2[kb];
      if (cm > cfg.c_threshold) {
        if (em > cfg.e2_level) plus += h / slices;
        if (em < cfg.e2_level) minus += h / slices;
      }
    }
  };
  for (int i = 0; i < g.nx - 1; ++i) {
    accumulate(g.idx(i, 0), g.idx(i + 1, 0), g.hx());
    accumulate(g.idx(i, g.ny - 1), g.idx(i + 1, g.ny - 1), g.hx());
  }
  for (int j = 0; j < g.ny - 1; ++j) {
    accumulate(g.idx(0, j), g.idx(0, j + 1), g.hy());
    accumulate(g.idx(g.nx - 1, j), g.idx(g.nx - 1, j + 1), g.hy());
  }
  return {plus, minus};
}

}  // namespace detail

/// Interface lengths from the c-threshold and e2-level contours.
/// l_s_r: the whole square/rectangle interface (c contour).
/// l_r_plus / l_r_minus: the rect+ / rect- phase boundaries, split from the
/// c contour by the e2 sign at each segment midpoint; the part of the e2
/// contour inside the rectangular region separates the two variants and
/// belongs to both.
inline MicrostructureFeatures interface_lengths(const GridOperators& ops, const Vec& c, const Vec& e2,
                                                const FeatureConfig& cfg = {}) {
  const GridSpec& g = ops.grid();
  MicrostructureFeatures f;

  ContourSet c_contour = extract_contours(g, c, cfg.c_threshold, "c");
  ContourSet e2_contour = extract_contours(g, e2, cfg.e2_level, "e2");

  KahanSum total, plus, minus;
  for (const auto& poly : c_contour.polylines) {
    for (std::size_t k = 1; k < poly.size(); ++k) {
      double len = (poly[k] - poly[k - 1]).norm();
      if (len == 0.0) continue;
      total.add(len);
      Point2 mid = 0.5 * (poly[k] + poly[k - 1]);
      double e2_mid = bilinear_sample(g, e2, mid);
      if (e2_mid > cfg.e2_level)
        plus.add(len);
      else if (e2_mid < cfg.e2_level)
        minus.add(len);
    }
  }
  for (const auto& poly : e2_contour.polylines) {
    for (std::size_t k = 1; k < poly.size(); ++k) {
      double len = (poly[k] - poly[k - 1]).norm();
      if (len == 0.0) continue;
      Point2 mid = 0.5 * (poly[k] + poly[k - 1]);
      if (bilinear_sample(g, c, mid) > cfg.c_threshold) {
        plus.add(len);
        minus.add(len);
      }
    }
  }
  f.l_s_r = total.value();
  f.l_r_plus = plus.value();
  f.l_r_minus = minus.value();

  if (cfg.include_domain_boundary) {
    auto [bp, bm] = detail::boundary_share(g, c, e2, cfg);
    f.l_r_plus += bp;
    f.l_r_minus += bm;
  }
  return f;
}

/// All predefined descriptors of one frame.
inline MicrostructureFeatures extract_features(const GridOperators& ops, const Vec& c, const Vec& e2,
                                               const FeatureConfig& cfg = {}) {
  MicrostructureFeatures f = interface_lengths(ops, c, e2, cfg);
  auto labels = phase_masks(c, e2, cfg);
  auto [pp, pm] = volume_fractions(ops, labels);
  f.phi_r_plus = pp;
  f.phi_r_minus = pm;
  return f;
}

}  // namespace ddhom
