#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ddhom/common.hpp"
#include "ddhom/grid.hpp"

namespace ddhom {

using Point2 = Eigen::Vector2d;

struct ContourSet {
  std::vector<std::vector<Point2>> polylines;
  std::string source_tag;
  double level = 0.0;

  double total_length() const {
    KahanSum s;
    for (const auto& poly : polylines)
      for (std::size_t k = 1; k < poly.size(); ++k) s.add((poly[k] - poly[k - 1]).norm());
    return s.value();
  }
};

namespace detail {

// Crossing points live on cell edges; identifying them by the edge index
// makes stitching exact (no floating-point point matching).
struct EdgeKey {
  int i, j;
  bool horizontal;
  bool operator<(const EdgeKey& o) const {
    if (i != o.i) return i < o.i;
    if (j != o.j) return j < o.j;
    return horizontal < o.horizontal;
  }
  bool operator==(const EdgeKey& o) const { return i == o.i && j == o.j && horizontal == o.horizontal; }
};

struct Segment {
  EdgeKey a, b;
};

}  // namespace detail

/// Marching-squares iso-contour extraction with linear edge interpolation.
/// Saddle cells are disambiguated by the sign of the cell-center average.
/// Segments are stitched into polylines; cycles are emitted closed (first
/// point repeated at the end).
inline ContourSet extract_contours(const GridSpec& g, const Vec& field, double level,
                                   const std::string& tag = "") {
  for (int k = 0; k < field.size(); ++k) require_finite(field[k], "extract_contours");
  ContourSet out;
  out.source_tag = tag;
  out.level = level;

  auto inside = [&](double v) { return v > level; };
  auto interp = [&](double va, double vb) { return (level - va) / (vb - va); };

  std::map<detail::EdgeKey, Point2> points;
  std::vector<detail::Segment> segments;

  auto edge_point = [&](detail::EdgeKey key) -> void {
    if (points.count(key)) return;
    double x0 = g.x(key.i), y0 = g.y(key.j);
    if (key.horizontal) {
      double t = interp(field[g.idx(key.i, key.j)], field[g.idx(key.i + 1, key.j)]);
      points[key] = Point2(x0 + t * g.hx(), y0);
    } else {
      double t = interp(field[g.idx(key.i, key.j)], field[g.idx(key.i, key.j + 1)]);
      points[key] = Point2(x0, y0 + t * g.hy());
    }
  };

  for (int j = 0; j < g.ny - 1; ++j) {
    for (int i = 0; i < g.nx - 1; ++i) {
      double v00 = field[g.idx(i, j)], v10 = field[g.idx(i + 1, j)];
      double v01 = field[g.idx(i, j + 1)], v11 = field[g.idx(i + 1, j + 1)];
      int code = (inside(v00) ? 1 : 0) | (inside(v10) ? 2 : 0) | (inside(v11) ? 4 : 0) | (inside(v01) ? 8 : 0);
      if (code == 0 || code == 15) continue;
      detail::EdgeKey bottom{i, j, true}, top{i, j + 1, true}, left{i, j, false}, right{i + 1, j, false};
      auto emit = [&](detail::EdgeKey a, detail::EdgeKey b) {
        edge_point(a);
        edge_point(b);
        segments.push_back({a, b});
      };
      switch (code) {
        case 1: case 14: emit(left, bottom); break;
        case 2: case 13: emit(bottom, right); break;
        case 3: case 12: emit(left, right); break;
        case 4: case 11: emit(right, top); break;
        case 6: case 9: emit(bottom, top); break;
        case 7: case 8: emit(top, left); break;
        case 5: case 10: {
          bool center_inside = inside(0.25 * (v00 + v10 + v01 + v11));
          bool connect_first = (code == 5) == center_inside;
          if (connect_first) {
            emit(left, top);
            emit(bottom, right);
          } else {
            emit(left, bottom);
            emit(right, top);
          }
          break;
        }
        default: break;
      }
    }
  }

  // Stitch segments sharing an edge into polylines.
  std::map<detail::EdgeKey, std::vector<int>> at_edge;
  for (int s = 0; s < static_cast<int>(segments.size()); ++s) {
    at_edge[segments[s].a].push_back(s);
    at_edge[segments[s].b].push_back(s);
  }
  std::vector<bool> used(segments.size(), false);
  auto walk = [&](int start_seg, detail::EdgeKey start_edge) {
    std::vector<detail::EdgeKey> chain{start_edge};
    int seg = start_seg;
    detail::EdgeKey cur = start_edge;
    while (true) {
      used[seg] = true;
      cur = (segments[seg].a == cur) ? segments[seg].b : segments[seg].a;
      chain.push_back(cur);
      int next = -1;
      for (int cand : at_edge[cur])
        if (!used[cand]) {
          next = cand;
          break;
        }
      if (next < 0) break;
      seg = next;
    }
    std::vector<Point2> poly;
    poly.reserve(chain.size());
    for (const auto& e : chain) poly.push_back(points[e]);
    out.polylines.push_back(std::move(poly));
  };

  // Open chains first (start at edges touched once), then remaining cycles.
  for (const auto& [edge, segs] : at_edge) {
    if (segs.size() != 1) continue;
    int s = segs[0];
    if (!used[s]) walk(s, edge);
  }
  for (int s = 0; s < static_cast<int>(segments.size()); ++s)
    if (!used[s]) walk(s, segments[s].a);

  return out;
}

/// Bilinear sample of a nodal field at an arbitrary point (clamped to the
/// domain).
inline double bilinear_sample(const GridSpec& g, const Vec& field, const Point2& p) {
  double fx = std::clamp(p.x() / g.hx(), 0.0, static_cast<double>(g.nx - 1));
  double fy = std::clamp(p.y() / g.hy(), 0.0, static_cast<double>(g.ny - 1));
  int i = std::min(static_cast<int>(fx), g.nx - 2);
  int j = std::min(static_cast<int>(fy), g.ny - 2);
  double tx = fx - i, ty = fy - j;
  return (1 - tx) * (1 - ty) * field[g.idx(i, j)] + tx * (1 - ty) * field[g.idx(i + 1, j)] +
         (1 - tx) * ty * field[g.idx(i, j + 1)] + tx * ty * field[g.idx(i + 1, j + 1)];
}

}  // namespace ddhom
