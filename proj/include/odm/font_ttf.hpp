#pragma once

// Minimal TrueType loader: enough of head/maxp/cmap/hhea/hmtx/loca/glyf to
// rasterize printable ASCII from ordinary .ttf files (DejaVu, Noto, ...).
// Quadratic outlines are flattened and filled with the non-zero winding rule.
// CFF-flavoured OpenType ('OTTO') is rejected. Each glyph raster covers its
// full character cell: x in [0, advance], y from the ascender line down to
// the descender, so the cell maps onto a char slot like the builtin font.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "odm/errors.hpp"
#include "odm/glyph.hpp"

namespace odm::glyph {

namespace ttf {

struct Reader {
  const std::vector<std::uint8_t>& data;

  std::uint8_t u8(size_t off) const {
    if (off >= data.size()) {
      throw FontError("read past end of font at offset " + std::to_string(off));
    }
    return data[off];
  }
  std::uint16_t u16(size_t off) const { return (std::uint16_t(u8(off)) << 8) | u8(off + 1); }
  std::int16_t i16(size_t off) const { return static_cast<std::int16_t>(u16(off)); }
  std::uint32_t u32(size_t off) const {
    return (std::uint32_t(u16(off)) << 16) | u16(off + 2);
  }
};

struct Table {
  size_t offset = 0;
  size_t length = 0;
  bool present() const { return length > 0; }
};

struct ContourPoint {
  double x = 0.0;
  double y = 0.0;
  bool on_curve = true;
};

using Contour = std::vector<ContourPoint>;

struct Outline {
  std::vector<Contour> contours;
};

struct FontFile {
  Reader r;
  Table head, maxp, cmap, hhea, hmtx, loca, glyf;
  int units_per_em = 0;
  bool long_loca = false;
  int num_glyphs = 0;
  int num_hmetrics = 0;
  int ascender = 0;
  int descender = 0;
};

inline FontFile open_tables(const std::vector<std::uint8_t>& bytes) {
  FontFile f{Reader{bytes}};
  const std::uint32_t version = f.r.u32(0);
  if (version == 0x4F54544F) {  // 'OTTO'
    throw FontError("CFF (OTTO) outlines are not supported; use a TrueType-flavoured font");
  }
  if (version != 0x00010000 && version != 0x74727565) {  // 1.0 or 'true'
    throw FontError("not a TrueType font (bad sfnt version)");
  }
  const int num_tables = f.r.u16(4);
  for (int i = 0; i < num_tables; ++i) {
    const size_t rec = 12 + static_cast<size_t>(i) * 16;
    const std::uint32_t tag = f.r.u32(rec);
    Table t{f.r.u32(rec + 8), f.r.u32(rec + 12)};
    if (t.offset + t.length > bytes.size()) {
      throw FontError("table record extends past end of file");
    }
    switch (tag) {
      case 0x68656164: f.head = t; break;  // head
      case 0x6D617870: f.maxp = t; break;  // maxp
      case 0x636D6170: f.cmap = t; break;  // cmap
      case 0x68686561: f.hhea = t; break;  // hhea
      case 0x686D7478: f.hmtx = t; break;  // hmtx
      case 0x6C6F6361: f.loca = t; break;  // loca
      case 0x676C7966: f.glyf = t; break;  // glyf
      default: break;
    }
  }
  for (auto [table, name] : {std::pair{&f.head, "head"}, {&f.maxp, "maxp"}, {&f.cmap, "cmap"},
                             {&f.hhea, "hhea"}, {&f.hmtx, "hmtx"}, {&f.loca, "loca"},
                             {&f.glyf, "glyf"}}) {
    if (!table->present()) throw FontError(std::string("missing required table ") + name);
  }
  if (f.r.u32(f.head.offset + 12) != 0x5F0F3CF5) {
    throw FontError("bad magic in head table");
  }
  f.units_per_em = f.r.u16(f.head.offset + 18);
  if (f.units_per_em == 0) throw FontError("unitsPerEm is zero");
  f.long_loca = f.r.i16(f.head.offset + 50) == 1;
  f.num_glyphs = f.r.u16(f.maxp.offset + 4);
  f.ascender = f.r.i16(f.hhea.offset + 4);
  f.descender = f.r.i16(f.hhea.offset + 6);
  f.num_hmetrics = f.r.u16(f.hhea.offset + 34);
  if (f.num_hmetrics == 0) throw FontError("hhea reports zero horizontal metrics");
  return f;
}

// Unicode code point -> glyph id via a format 4 subtable. Returns 0 (.notdef)
// for unmapped characters.
inline int glyph_id(const FontFile& f, char32_t cp) {
  const size_t base = f.cmap.offset;
  const int num_sub = f.r.u16(base + 2);
  size_t sub_off = 0;
  int best_score = -1;
  for (int i = 0; i < num_sub; ++i) {
    const size_t rec = base + 4 + static_cast<size_t>(i) * 8;
    const int platform = f.r.u16(rec);
    const int encoding = f.r.u16(rec + 2);
    const size_t off = base + f.r.u32(rec + 4);
    int score = -1;
    if (platform == 3 && encoding == 1) score = 2;       // Windows BMP
    if (platform == 0) score = 1;                        // Unicode
    if (score > best_score && f.r.u16(off) == 4) {
      best_score = score;
      sub_off = off;
    }
  }
  if (best_score < 0) throw FontError("no format 4 unicode cmap subtable");

  const int seg_count = f.r.u16(sub_off + 6) / 2;
  const size_t end_codes = sub_off + 14;
  const size_t start_codes = end_codes + 2 * seg_count + 2;
  const size_t id_deltas = start_codes + 2 * seg_count;
  const size_t id_ranges = id_deltas + 2 * seg_count;
  if (cp > 0xFFFF) return 0;
  for (int seg = 0; seg < seg_count; ++seg) {
    if (f.r.u16(end_codes + 2 * seg) < cp) continue;
    const std::uint16_t start = f.r.u16(start_codes + 2 * seg);
    if (start > cp) return 0;
    const std::uint16_t delta = f.r.u16(id_deltas + 2 * seg);
    const std::uint16_t range = f.r.u16(id_ranges + 2 * seg);
    if (range == 0) {
      return (cp + delta) & 0xFFFF;
    }
    const size_t addr = id_ranges + 2 * seg + range + 2 * (cp - start);
    const std::uint16_t gid = f.r.u16(addr);
    return gid == 0 ? 0 : ((gid + delta) & 0xFFFF);
  }
  return 0;
}

inline std::pair<size_t, size_t> glyph_range(const FontFile& f, int gid) {
  if (gid < 0 || gid >= f.num_glyphs) throw FontError("glyph id out of range");
  size_t a, b;
  if (f.long_loca) {
    a = f.r.u32(f.loca.offset + 4 * static_cast<size_t>(gid));
    b = f.r.u32(f.loca.offset + 4 * static_cast<size_t>(gid) + 4);
  } else {
    a = 2 * static_cast<size_t>(f.r.u16(f.loca.offset + 2 * static_cast<size_t>(gid)));
    b = 2 * static_cast<size_t>(f.r.u16(f.loca.offset + 2 * static_cast<size_t>(gid) + 2));
  }
  if (a > b || f.glyf.offset + b > f.glyf.offset + f.glyf.length) {
    throw FontError("corrupt loca entry for glyph " + std::to_string(gid));
  }
  return {f.glyf.offset + a, b - a};
}

inline void append_outline(const FontFile& f, int gid, double dx, double dy, double xx, double xy,
                           double yx, double yy, int depth, Outline* out);

inline void parse_simple(const FontFile& f, size_t off, int n_contours, double dx, double dy,
                         double xx, double xy, double yx, double yy, Outline* out) {
  std::vector<int> ends(n_contours);
  size_t p = off + 10;
  for (int i = 0; i < n_contours; ++i) {
    ends[i] = f.r.u16(p);
    p += 2;
  }
  const int n_points = ends.empty() ? 0 : ends.back() + 1;
  p += 2 + f.r.u16(p);  // skip instructions

  std::vector<std::uint8_t> flags;
  flags.reserve(n_points);
  while (static_cast<int>(flags.size()) < n_points) {
    const std::uint8_t fl = f.r.u8(p++);
    flags.push_back(fl);
    if (fl & 0x08) {  // repeat
      int n = f.r.u8(p++);
      while (n-- > 0 && static_cast<int>(flags.size()) < n_points) flags.push_back(fl);
    }
  }

  std::vector<double> xs(n_points), ys(n_points);
  int v = 0;
  for (int i = 0; i < n_points; ++i) {
    if (flags[i] & 0x02) {
      const int d = f.r.u8(p++);
      v += (flags[i] & 0x10) ? d : -d;
    } else if (!(flags[i] & 0x10)) {
      v += f.r.i16(p);
      p += 2;
    }
    xs[i] = v;
  }
  v = 0;
  for (int i = 0; i < n_points; ++i) {
    if (flags[i] & 0x04) {
      const int d = f.r.u8(p++);
      v += (flags[i] & 0x20) ? d : -d;
    } else if (!(flags[i] & 0x20)) {
      v += f.r.i16(p);
      p += 2;
    }
    ys[i] = v;
  }

  int start = 0;
  for (int c = 0; c < n_contours; ++c) {
    Contour contour;
    for (int i = start; i <= ends[c]; ++i) {
      const double gx = xs[i], gy = ys[i];
      contour.push_back({dx + xx * gx + yx * gy, dy + xy * gx + yy * gy,
                         (flags[i] & 0x01) != 0});
    }
    if (contour.size() >= 2) out->contours.push_back(std::move(contour));
    start = ends[c] + 1;
  }
}

inline void parse_composite(const FontFile& f, size_t off, double dx, double dy, double xx,
                            double xy, double yx, double yy, int depth, Outline* out) {
  size_t p = off + 10;
  while (true) {
    const std::uint16_t flags = f.r.u16(p);
    const int sub_gid = f.r.u16(p + 2);
    p += 4;
    double adx = 0.0, ady = 0.0;
    if (flags & 0x0001) {  // words
      adx = f.r.i16(p);
      ady = f.r.i16(p + 2);
      p += 4;
    } else {
      adx = static_cast<std::int8_t>(f.r.u8(p));
      ady = static_cast<std::int8_t>(f.r.u8(p + 1));
      p += 2;
    }
    if (!(flags & 0x0002)) {
      // Point-matching composition is rare; treat offsets as zero.
      adx = ady = 0.0;
    }
    double sxx = 1.0, sxy = 0.0, syx = 0.0, syy = 1.0;
    auto f2dot14 = [&](size_t o) { return f.r.i16(o) / 16384.0; };
    if (flags & 0x0008) {
      sxx = syy = f2dot14(p);
      p += 2;
    } else if (flags & 0x0040) {
      sxx = f2dot14(p);
      syy = f2dot14(p + 2);
      p += 4;
    } else if (flags & 0x0080) {
      sxx = f2dot14(p);
      sxy = f2dot14(p + 2);
      syx = f2dot14(p + 4);
      syy = f2dot14(p + 6);
      p += 8;
    }
    // Compose child transform with the accumulated one.
    const double cxx = xx * sxx + yx * sxy;
    const double cxy = xy * sxx + yy * sxy;
    const double cyx = xx * syx + yx * syy;
    const double cyy = xy * syx + yy * syy;
    const double cdx = dx + xx * adx + yx * ady;
    const double cdy = dy + xy * adx + yy * ady;
    append_outline(f, sub_gid, cdx, cdy, cxx, cxy, cyx, cyy, depth + 1, out);
    if (!(flags & 0x0020)) break;  // MORE_COMPONENTS
  }
}

inline void append_outline(const FontFile& f, int gid, double dx, double dy, double xx, double xy,
                           double yx, double yy, int depth, Outline* out) {
  if (depth > 5) throw FontError("composite glyph nesting too deep");
  auto [off, len] = glyph_range(f, gid);
  if (len == 0) return;  // blank glyph
  const int n_contours = f.r.i16(off);
  if (n_contours >= 0) {
    parse_simple(f, off, n_contours, dx, dy, xx, xy, yx, yy, out);
  } else {
    parse_composite(f, off, dx, dy, xx, xy, yx, yy, depth, out);
  }
}

// Flattens on/off curve points into closed polylines. Consecutive off-curve
// points imply an on-curve midpoint.
inline std::vector<std::vector<geom::Point2>> flatten(const Outline& outline) {
  std::vector<std::vector<geom::Point2>> polys;
  constexpr int kSegs = 8;
  for (const auto& contour : outline.contours) {
    const size_t n = contour.size();
    // Find a starting on-curve point, synthesizing one if necessary.
    std::vector<ContourPoint> pts;
    size_t first_on = n;
    for (size_t i = 0; i < n; ++i) {
      if (contour[i].on_curve) {
        first_on = i;
        break;
      }
    }
    if (first_on == n) {
      ContourPoint mid{(contour[0].x + contour[1].x) / 2, (contour[0].y + contour[1].y) / 2, true};
      pts.push_back(mid);
      for (size_t i = 1; i < n; ++i) pts.push_back(contour[i]);
      pts.push_back(contour[0]);
    } else {
      for (size_t i = 0; i < n; ++i) pts.push_back(contour[(first_on + i) % n]);
    }

    std::vector<geom::Point2> poly;
    auto emit_quad = [&](const geom::Point2& a, const geom::Point2& c, const geom::Point2& b) {
      for (int s = 1; s <= kSegs; ++s) {
        const double t = static_cast<double>(s) / kSegs;
        const double mt = 1.0 - t;
        poly.push_back({mt * mt * a.x + 2 * mt * t * c.x + t * t * b.x,
                        mt * mt * a.y + 2 * mt * t * c.y + t * t * b.y});
      }
    };
    geom::Point2 pen{pts[0].x, pts[0].y};
    poly.push_back(pen);
    const size_t m = pts.size();
    size_t i = 1;
    while (i <= m) {
      const ContourPoint cur = pts[i % m];
      if (cur.on_curve) {
        pen = {cur.x, cur.y};
        poly.push_back(pen);
        ++i;
      } else {
        const ContourPoint next = pts[(i + 1) % m];
        geom::Point2 end;
        if (next.on_curve) {
          end = {next.x, next.y};
          i += 2;
        } else {
          end = {(cur.x + next.x) / 2, (cur.y + next.y) / 2};
          ++i;
        }
        emit_quad(pen, {cur.x, cur.y}, end);
        pen = end;
      }
    }
    if (poly.size() >= 3) polys.push_back(std::move(poly));
  }
  return polys;
}

// Non-zero winding number of the horizontal ray from p to +infinity.
inline bool covered(const std::vector<std::vector<geom::Point2>>& polys, double px, double py) {
  int winding = 0;
  for (const auto& poly : polys) {
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
      const auto& a = poly[i];
      const auto& b = poly[(i + 1) % n];
      if (a.y <= py && b.y > py) {
        const double x = a.x + (py - a.y) / (b.y - a.y) * (b.x - a.x);
        if (x > px) ++winding;
      } else if (b.y <= py && a.y > py) {
        const double x = a.x + (py - a.y) / (b.y - a.y) * (b.x - a.x);
        if (x > px) --winding;
      }
    }
  }
  return winding != 0;
}

}  // namespace ttf

// Loads a TrueType font and rasterizes printable ASCII at `em_px` pixels per
// em. Throws FontError for unreadable, truncated, or CFF fonts.
inline GlyphSet load_font(const std::string& path, int em_px = 64) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FontError("cannot open font file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw FontError("font file too small");

  auto f = ttf::open_tables(bytes);
  const double scale = static_cast<double>(em_px) / f.units_per_em;
  const double ascent_px = f.ascender * scale;
  const int cell_h = std::max(1, static_cast<int>(std::ceil((f.ascender - f.descender) * scale)));

  auto advance_units = [&](int gid) -> int {
    const int idx = std::min(gid, f.num_hmetrics - 1);
    return f.r.u16(f.hmtx.offset + 4 * static_cast<size_t>(idx));
  };

  auto rasterize = [&](int gid) {
    Glyph g;
    const int adv = advance_units(gid);
    g.advance = static_cast<double>(adv) / f.units_per_em;
    g.width = std::max(1, static_cast<int>(std::lround(adv * scale)));
    g.height = cell_h;
    g.mask.assign(static_cast<size_t>(g.width) * g.height, 0);

    ttf::Outline outline;
    ttf::append_outline(f, gid, 0, 0, 1, 0, 0, 1, 0, &outline);
    if (outline.contours.empty()) return g;
    auto polys = ttf::flatten(outline);
    // Map font units to cell pixels: x right, y down from the ascender line.
    for (auto& poly : polys) {
      for (auto& p : poly) p = {p.x * scale, ascent_px - p.y * scale};
    }
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        if (ttf::covered(polys, x + 0.5, y + 0.5)) {
          g.mask[static_cast<size_t>(y) * g.width + x] = 1;
        }
      }
    }
    return g;
  };

  GlyphSet set;
  set.em = em_px;
  for (char32_t c = 0x20; c <= 0x7E; ++c) {
    set.glyphs[c] = rasterize(ttf::glyph_id(f, c));
  }
  set.fallback = rasterize(0);
  if (set.fallback.blank()) {
    // Some fonts ship an empty .notdef; synthesize a hollow box so uncovered
    // characters stay visible.
    Glyph box;
    box.width = std::max(2, em_px / 2);
    box.height = cell_h;
    box.advance = 0.5;
    box.mask.assign(static_cast<size_t>(box.width) * box.height, 0);
    const int top = cell_h / 8, bottom = cell_h - 1 - cell_h / 4;
    for (int y = top; y <= bottom; ++y) {
      for (int x = 0; x < box.width; ++x) {
        const bool edge = (y == top || y == bottom || x == 0 || x == box.width - 1);
        box.mask[static_cast<size_t>(y) * box.width + x] = edge ? 1 : 0;
      }
    }
    set.fallback = box;
  }
  return set;
}

}  // namespace odm::glyph
