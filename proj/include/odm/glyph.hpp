#pragma once

// Renders transcriptions into per-character slots to produce the binary
// destylized target image. Glyphs are stretched to fill each slot (aspect is
// not preserved); coverage is supersampled 3x3 and thresholded at 0.5.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "odm/annot.hpp"
#include "odm/errors.hpp"
#include "odm/geom.hpp"

namespace odm::glyph {

// Binary raster of one character cell. `mask` covers the full em box the
// char occupies, so mapping the raster onto a slot quad places the ink with
// its in-cell metrics (x-height, descenders) intact.
struct Glyph {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> mask;  // row-major, values in {0,1}
  double advance = 0.0;            // em units

  bool blank() const {
    for (auto v : mask) {
      if (v) return false;
    }
    return true;
  }
};

struct GlyphSet {
  int em = 0;  // raster rows per em box
  std::map<char32_t, Glyph> glyphs;
  Glyph fallback;

  const Glyph& lookup(char32_t c) const {
    auto it = glyphs.find(c);
    return it == glyphs.end() ? fallback : it->second;
  }
};

struct LabelCanvas {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, values in {0,1}

  LabelCanvas() = default;
  LabelCanvas(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w) * h, 0) {}

  std::uint8_t at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
  void set(int x, int y, std::uint8_t v) { pixels[static_cast<size_t>(y) * width + x] = v; }

  double foreground_fraction() const {
    if (pixels.empty()) return 0.0;
    size_t on = 0;
    for (auto v : pixels) on += v;
    return static_cast<double>(on) / pixels.size();
  }
};

// `instances_rendered` counts instances that were drawn; `instances_skipped`
// counts ignore-flagged and degenerate instances. Instances excluded by the
// keep set are counted in neither.
struct RenderReport {
  int instances_rendered = 0;
  int instances_skipped = 0;
  std::vector<std::string> warnings;
};

namespace detail {

// Piecewise-affine map from a quad to the unit square: the quad splits into
// triangles (p0,p1,p2) and (p0,p2,p3) matching the same split of the square,
// so the two pieces agree along the shared diagonal.
struct QuadSampler {
  geom::Point2 q[4];

  // Returns false when p falls outside the quad.
  bool to_unit(const geom::Point2& p, double* u, double* v) const {
    if (bary(p, q[0], q[1], q[2], u, v, false)) return true;
    return bary(p, q[0], q[2], q[3], u, v, true);
  }

 private:
  // Barycentric solve in triangle (a,b,c); maps onto the matching unit-square
  // triangle. For (p0,p1,p2): (0,0),(1,0),(1,1). For (p0,p2,p3): (0,0),(1,1),(0,1).
  static bool bary(const geom::Point2& p, const geom::Point2& a, const geom::Point2& b,
                   const geom::Point2& c, double* u, double* v, bool lower) {
    const double d = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    if (std::abs(d) < 1e-12) return false;
    const double wb = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) / d;
    const double wc = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) / d;
    const double wa = 1.0 - wb - wc;
    constexpr double kEps = 1e-9;
    if (wa < -kEps || wb < -kEps || wc < -kEps) return false;
    if (!lower) {
      *u = wb + wc;  // wa*(0,0) + wb*(1,0) + wc*(1,1)
      *v = wc;
    } else {
      *u = wb;  // wa*(0,0) + wb*(1,1) + wc*(0,1)
      *v = wb + wc;
    }
    return true;
  }
};

inline void draw_glyph(LabelCanvas& canvas, const geom::Quad& slot, const Glyph& glyph) {
  if (glyph.width <= 0 || glyph.height <= 0 || glyph.blank()) return;
  const auto pts = geom::quad_points(slot);
  auto b = geom::bounds_of(pts);
  const int x0 = std::max(0, static_cast<int>(std::floor(b.min_x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.min_y)));
  const int x1 = std::min(canvas.width - 1, static_cast<int>(std::ceil(b.max_x)));
  const int y1 = std::min(canvas.height - 1, static_cast<int>(std::ceil(b.max_y)));
  QuadSampler sampler{{slot.p[0], slot.p[1], slot.p[2], slot.p[3]}};

  static constexpr double kOffsets[3] = {1.0 / 6.0, 3.0 / 6.0, 5.0 / 6.0};
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int covered = 0;
      for (double oy : kOffsets) {
        for (double ox : kOffsets) {
          double u = 0.0, v = 0.0;
          if (!sampler.to_unit({x + ox, y + oy}, &u, &v)) continue;
          const int gx = std::clamp(static_cast<int>(u * glyph.width), 0, glyph.width - 1);
          const int gy = std::clamp(static_cast<int>(v * glyph.height), 0, glyph.height - 1);
          covered += glyph.mask[static_cast<size_t>(gy) * glyph.width + gx];
        }
      }
      if (covered >= 5) canvas.set(x, y, 1);  // 5 of 9 samples: coverage > 0.5
    }
  }
}

inline annot::Shape scale_shape(const annot::Shape& s, double sx, double sy) {
  annot::Shape out = s;
  if (auto* q = std::get_if<geom::Quad>(&out)) {
    for (auto& p : q->p) p = {p.x * sx, p.y * sy};
  } else if (auto* poly = std::get_if<geom::Polygon>(&out)) {
    for (auto& p : poly->pts) p = {p.x * sx, p.y * sy};
  } else {
    auto& bz = std::get<geom::BezierPair>(out);
    for (auto& p : bz.top.c) p = {p.x * sx, p.y * sy};
    for (auto& p : bz.bottom.c) p = {p.x * sx, p.y * sy};
  }
  return out;
}

// Polygons have no native slot decomposition, so they fall back to slots of
// their bounding box. 4-gons are treated as quads directly.
inline std::vector<geom::CharSlot> slots_for_shape(const annot::Shape& s, int n_chars) {
  if (const auto* q = std::get_if<geom::Quad>(&s)) {
    return geom::char_slots_quad(*q, n_chars);
  }
  if (const auto* bz = std::get_if<geom::BezierPair>(&s)) {
    return geom::char_slots_bezier(*bz, n_chars);
  }
  const auto& poly = std::get<geom::Polygon>(s);
  if (poly.pts.size() == 4) {
    geom::Quad q;
    std::copy(poly.pts.begin(), poly.pts.end(), q.p.begin());
    return geom::char_slots_quad(q, n_chars);
  }
  auto b = geom::bounds_of(poly.pts);
  geom::Quad box{{geom::Point2{b.min_x, b.min_y},
                  {b.max_x, b.min_y},
                  {b.max_x, b.max_y},
                  {b.min_x, b.max_y}}};
  return geom::char_slots_quad(box, n_chars);
}

}  // namespace detail

// Rasterizes the kept instances of `ann` onto a W x H canvas. `keep` holds
// indices into ann.instances; std::nullopt keeps everything. Ignore-flagged
// instances never render. Degenerate instances are skipped with a warning in
// the report rather than failing the whole canvas.
inline LabelCanvas render_label(const annot::SceneAnnotation& ann, const GlyphSet& glyphs,
                                int width, int height,
                                const std::optional<std::set<size_t>>& keep = std::nullopt,
                                RenderReport* report = nullptr) {
  if (width <= 0 || height <= 0) {
    throw ValidationError("render_label: canvas size must be positive");
  }
  if (ann.width <= 0 || ann.height <= 0) {
    throw ValidationError("render_label: annotation canvas size must be positive");
  }
  if (keep) {
    for (size_t idx : *keep) {
      if (idx >= ann.instances.size()) {
        throw ValidationError("render_label: keep index " + std::to_string(idx) +
                              " out of range for " + std::to_string(ann.instances.size()) +
                              " instances");
      }
    }
  }

  LabelCanvas canvas(width, height);
  const double sx = static_cast<double>(width) / ann.width;
  const double sy = static_cast<double>(height) / ann.height;

  for (size_t i = 0; i < ann.instances.size(); ++i) {
    const auto& inst = ann.instances[i];
    if (inst.ignore) {
      if (report) ++report->instances_skipped;
      continue;
    }
    if (keep && !keep->count(i)) continue;
    const int n = static_cast<int>(inst.transcription.size());
    if (n == 0) {
      if (report) ++report->instances_rendered;
      continue;
    }
    std::vector<geom::CharSlot> slots;
    try {
      slots = detail::slots_for_shape(detail::scale_shape(inst.shape, sx, sy), n);
    } catch (const GeometryError& e) {
      if (report) {
        ++report->instances_skipped;
        report->warnings.push_back("image '" + ann.image_id + "' instance " + std::to_string(i) +
                                   ": " + e.what());
      }
      continue;
    }
    for (int k = 0; k < n; ++k) {
      const unsigned char byte = static_cast<unsigned char>(inst.transcription[k]);
      const Glyph& glyph = glyphs.lookup(static_cast<char32_t>(byte));
      if (std::abs(geom::signed_area(slots[k].box)) < geom::kDegenerateArea) continue;
      detail::draw_glyph(canvas, slots[k].box, glyph);
    }
    if (report) ++report->instances_rendered;
  }
  return canvas;
}

}  // namespace odm::glyph
