#pragma once

// Geometry for destylization label generation and detection scoring: points,
// quads, cubic Bezier text regions, per-character slot placement, polygon IoU.
// Image coordinate convention throughout: x right, y down, so the corner order
// top-left, top-right, bottom-right, bottom-left has positive shoelace area.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "odm/errors.hpp"

namespace odm::geom {

constexpr double kDegenerateArea = 1e-9;  // px^2

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  Point2 operator+(const Point2& o) const { return {x + o.x, y + o.y}; }
  Point2 operator-(const Point2& o) const { return {x - o.x, y - o.y}; }
  Point2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Point2& o) const { return x == o.x && y == o.y; }
};

inline Point2 lerp(const Point2& a, const Point2& b, double t) {
  return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

inline double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Corners ordered top-left, top-right, bottom-right, bottom-left.
struct Quad {
  std::array<Point2, 4> p;
};

struct CubicBezier {
  std::array<Point2, 4> c;
};

// Two cubics bounding a text region, both running left to right.
struct BezierPair {
  CubicBezier top;
  CubicBezier bottom;
};

// Footprint of one character: its quad plus the glyph rotation in radians.
struct CharSlot {
  Quad box;
  double angle = 0.0;
};

struct Polygon {
  std::vector<Point2> pts;
};

// ---------------------------------------------------------------------------
// Areas and basic predicates

inline double signed_area(const std::vector<Point2>& pts) {
  double a = 0.0;
  const size_t n = pts.size();
  for (size_t i = 0; i < n; ++i) {
    const Point2& u = pts[i];
    const Point2& v = pts[(i + 1) % n];
    a += u.x * v.y - v.x * u.y;
  }
  return 0.5 * a;
}

inline double signed_area(const Quad& q) {
  return signed_area(std::vector<Point2>(q.p.begin(), q.p.end()));
}

inline double signed_area(const Polygon& p) { return signed_area(p.pts); }

struct Bounds {
  double min_x, min_y, max_x, max_y;
  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
  double short_side() const { return std::min(width(), height()); }
};

inline Bounds bounds_of(const std::vector<Point2>& pts) {
  Bounds b{pts[0].x, pts[0].y, pts[0].x, pts[0].y};
  for (const Point2& p : pts) {
    b.min_x = std::min(b.min_x, p.x);
    b.min_y = std::min(b.min_y, p.y);
    b.max_x = std::max(b.max_x, p.x);
    b.max_y = std::max(b.max_y, p.y);
  }
  return b;
}

// Point-in-polygon by crossing parity; boundary points count as inside.
inline bool point_in_polygon(const Point2& p, const std::vector<Point2>& poly) {
  bool in = false;
  const size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point2& a = poly[j];
    const Point2& b = poly[i];
    // On-segment check.
    double c = cross(a, b, p);
    if (std::abs(c) < 1e-12 && p.x >= std::min(a.x, b.x) - 1e-12 &&
        p.x <= std::max(a.x, b.x) + 1e-12 && p.y >= std::min(a.y, b.y) - 1e-12 &&
        p.y <= std::max(a.y, b.y) + 1e-12) {
      return true;
    }
    if ((b.y > p.y) != (a.y > p.y)) {
      double xint = b.x + (p.y - b.y) * (a.x - b.x) / (a.y - b.y);
      if (p.x < xint) in = !in;
    }
  }
  return in;
}

inline double dist_point_segment(const Point2& p, const Point2& a, const Point2& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double px = a.x + t * dx - p.x, py = a.y + t * dy - p.y;
  return std::sqrt(px * px + py * py);
}

// True when p lies inside poly or within `dilate` pixels of its boundary.
inline bool point_near_polygon(const Point2& p, const std::vector<Point2>& poly,
                               double dilate) {
  if (point_in_polygon(p, poly)) return true;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    if (dist_point_segment(p, poly[i], poly[(i + 1) % n]) <= dilate) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Bezier evaluation

// Cubic Bernstein evaluation. Exact at the endpoints.
inline Point2 bezier_point(const CubicBezier& curve, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw GeometryError("bezier_point: t=" + std::to_string(t) + " outside [0,1]");
  }
  const double u = 1.0 - t;
  const double b0 = u * u * u;
  const double b1 = 3.0 * u * u * t;
  const double b2 = 3.0 * u * t * t;
  const double b3 = t * t * t;
  return {b0 * curve.c[0].x + b1 * curve.c[1].x + b2 * curve.c[2].x + b3 * curve.c[3].x,
          b0 * curve.c[0].y + b1 * curve.c[1].y + b2 * curve.c[2].y + b3 * curve.c[3].y};
}

// ---------------------------------------------------------------------------
// Character slots

// Partitions a quad into n_chars slots at equal parameter intervals along the
// top and bottom edges. All slots share the top-edge direction as their angle.
inline std::vector<CharSlot> char_slots_quad(const Quad& quad, int n_chars) {
  if (n_chars < 1) throw GeometryError("char_slots_quad: n_chars must be >= 1");
  if (std::abs(signed_area(quad)) < kDegenerateArea) {
    throw GeometryError("char_slots_quad: degenerate quad");
  }
  const Point2& tl = quad.p[0];
  const Point2& tr = quad.p[1];
  const Point2& br = quad.p[2];
  const Point2& bl = quad.p[3];
  const double angle = std::atan2(tr.y - tl.y, tr.x - tl.x);

  std::vector<CharSlot> slots;
  slots.reserve(static_cast<size_t>(n_chars));
  for (int i = 0; i < n_chars; ++i) {
    const double t0 = static_cast<double>(i) / n_chars;
    const double t1 = static_cast<double>(i + 1) / n_chars;
    CharSlot s;
    s.box.p = {lerp(tl, tr, t0), lerp(tl, tr, t1), lerp(bl, br, t1), lerp(bl, br, t0)};
    s.angle = angle;
    slots.push_back(s);
  }
  return slots;
}

// Slot corners come from curve samples at i/n and (i+1)/n. The slope of slot i
// is the direction from its top-left sample to the next slot's top-left
// sample; the last slot reuses its predecessor's slope (there is no next
// sample), and a single slot falls back to the chord direction.
inline std::vector<CharSlot> char_slots_bezier(const BezierPair& pair, int n_chars) {
  if (n_chars < 1) throw GeometryError("char_slots_bezier: n_chars must be >= 1");

  {  // Degeneracy check at sampled resolution.
    constexpr int kSamples = 32;
    std::vector<Point2> band;
    band.reserve(2 * (kSamples + 1));
    for (int i = 0; i <= kSamples; ++i) {
      band.push_back(bezier_point(pair.top, static_cast<double>(i) / kSamples));
    }
    for (int i = kSamples; i >= 0; --i) {
      band.push_back(bezier_point(pair.bottom, static_cast<double>(i) / kSamples));
    }
    if (std::abs(signed_area(band)) < kDegenerateArea) {
      throw GeometryError("char_slots_bezier: degenerate curve pair");
    }
  }

  std::vector<Point2> top(static_cast<size_t>(n_chars) + 1);
  std::vector<Point2> bot(static_cast<size_t>(n_chars) + 1);
  for (int i = 0; i <= n_chars; ++i) {
    const double t = static_cast<double>(i) / n_chars;
    top[static_cast<size_t>(i)] = bezier_point(pair.top, t);
    bot[static_cast<size_t>(i)] = bezier_point(pair.bottom, t);
  }

  std::vector<CharSlot> slots(static_cast<size_t>(n_chars));
  for (int i = 0; i < n_chars; ++i) {
    CharSlot& s = slots[static_cast<size_t>(i)];
    s.box.p = {top[i], top[i + 1], bot[i + 1], bot[i]};
  }
  for (int i = 0; i + 1 < n_chars; ++i) {
    const Point2 d = top[i + 1] - top[i];
    slots[static_cast<size_t>(i)].angle = std::atan2(d.y, d.x);
  }
  if (n_chars >= 2) {
    slots[static_cast<size_t>(n_chars - 1)].angle = slots[static_cast<size_t>(n_chars - 2)].angle;
  } else {
    const Point2 d = top[1] - top[0];
    slots[0].angle = std::atan2(d.y, d.x);
  }
  return slots;
}

// ---------------------------------------------------------------------------
// Polygon intersection area via ear-clip triangulation + half-plane clipping.
// Works for arbitrary simple polygons; every triangle is normalized to
// positive orientation before clipping.

namespace detail {

inline std::vector<std::array<Point2, 3>> triangulate(const std::vector<Point2>& input) {
  std::vector<Point2> pts = input;
  if (signed_area(pts) < 0.0) std::reverse(pts.begin(), pts.end());

  std::vector<std::array<Point2, 3>> tris;
  while (pts.size() > 3) {
    const size_t n = pts.size();
    bool clipped = false;
    for (size_t i = 0; i < n; ++i) {
      const Point2& a = pts[(i + n - 1) % n];
      const Point2& b = pts[i];
      const Point2& c = pts[(i + 1) % n];
      const double turn = cross(a, b, c);
      if (turn <= 0.0) continue;  // reflex or collinear, not an ear tip
      bool blocked = false;
      for (size_t j = 0; j < n && !blocked; ++j) {
        if (j == i || j == (i + n - 1) % n || j == (i + 1) % n) continue;
        const Point2& q = pts[j];
        // Inside or on the boundary blocks the ear; a reflex vertex exactly
        // on the candidate diagonal would otherwise leak area.
        if (cross(a, b, q) >= 0.0 && cross(b, c, q) >= 0.0 && cross(c, a, q) >= 0.0) {
          blocked = true;
        }
      }
      if (blocked) continue;
      tris.push_back({a, b, c});
      pts.erase(pts.begin() + static_cast<long>(i));
      clipped = true;
      break;
    }
    if (!clipped) {
      // Only collinear runs remain; drop one and retry.
      bool dropped = false;
      for (size_t i = 0; i < pts.size(); ++i) {
        const size_t n2 = pts.size();
        if (std::abs(cross(pts[(i + n2 - 1) % n2], pts[i], pts[(i + 1) % n2])) < 1e-12) {
          pts.erase(pts.begin() + static_cast<long>(i));
          dropped = true;
          break;
        }
      }
      if (!dropped) throw GeometryError("triangulate: polygon is not simple");
    }
  }
  if (pts.size() == 3) {
    if (signed_area(pts) < 0.0) std::swap(pts[1], pts[2]);
    tris.push_back({pts[0], pts[1], pts[2]});
  }
  return tris;
}

// Clips `subject` by the half-plane left of a->b (inclusive).
inline std::vector<Point2> clip_halfplane(const std::vector<Point2>& subject,
                                          const Point2& a, const Point2& b) {
  std::vector<Point2> out;
  const size_t n = subject.size();
  for (size_t i = 0; i < n; ++i) {
    const Point2& cur = subject[i];
    const Point2& nxt = subject[(i + 1) % n];
    const double dc = cross(a, b, cur);
    const double dn = cross(a, b, nxt);
    if (dc >= 0.0) out.push_back(cur);
    if ((dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0)) {
      const double t = dc / (dc - dn);
      out.push_back(lerp(cur, nxt, t));
    }
  }
  return out;
}

inline double tri_intersection_area(const std::array<Point2, 3>& s,
                                    const std::array<Point2, 3>& clip) {
  std::vector<Point2> poly(s.begin(), s.end());
  for (int e = 0; e < 3 && poly.size() >= 3; ++e) {
    poly = clip_halfplane(poly, clip[static_cast<size_t>(e)], clip[(static_cast<size_t>(e) + 1) % 3]);
  }
  if (poly.size() < 3) return 0.0;
  return signed_area(poly);
}

}  // namespace detail

// area(a n b) / area(a u b); 0 when disjoint. Throws on degenerate inputs.
inline double polygon_iou(const Polygon& a, const Polygon& b) {
  if (a.pts.size() < 3 || b.pts.size() < 3) {
    throw GeometryError("polygon_iou: polygon needs at least 3 vertices");
  }
  const auto tris_a = detail::triangulate(a.pts);
  const auto tris_b = detail::triangulate(b.pts);

  double area_a = 0.0, area_b = 0.0;
  for (const auto& t : tris_a) area_a += signed_area(std::vector<Point2>(t.begin(), t.end()));
  for (const auto& t : tris_b) area_b += signed_area(std::vector<Point2>(t.begin(), t.end()));
  if (area_a < kDegenerateArea || area_b < kDegenerateArea) {
    throw GeometryError("polygon_iou: degenerate polygon");
  }

  double inter = 0.0;
  for (const auto& ta : tris_a) {
    for (const auto& tb : tris_b) {
      inter += detail::tri_intersection_area(ta, tb);
    }
  }
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// Convex hull (monotone chain), strict turns only. Output has positive
// shoelace area in image coordinates.
inline Polygon convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Point2& a, const Point2& b) { return a == b; }),
            pts.end());
  const size_t n = pts.size();
  if (n < 3) throw GeometryError("convex_hull: fewer than 3 distinct points");

  std::vector<Point2> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {  // lower
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const size_t lower = k + 1;
  for (size_t i = n - 1; i-- > 0;) {  // upper
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3) throw GeometryError("convex_hull: collinear points");
  if (signed_area(hull) < 0.0) std::reverse(hull.begin(), hull.end());
  return Polygon{std::move(hull)};
}

inline std::vector<Point2> quad_points(const Quad& q) {
  return {q.p[0], q.p[1], q.p[2], q.p[3]};
}

}  // namespace odm::geom
