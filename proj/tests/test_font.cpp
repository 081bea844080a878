#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "odm/font_ttf.hpp"

using namespace odm;
using namespace odm::glyph;

namespace {

// Builds a tiny but structurally valid TrueType file from scratch:
//   gid 0  .notdef   square (100,0)-(500,700)
//   gid 1  'A'       square (0,0)-(600,700)
//   gid 2  'B'       square with a rectangular hole (non-zero winding)
//   gid 3  'C'       quadratic arc glyph (one off-curve point)
//   gid 4  ' '       empty
//   gid 5  'D'       composite referencing gid 3 at zero offset
// unitsPerEm 1000, ascender 800, descender -200, every advance 600.
struct Bytes {
  std::vector<std::uint8_t> v;
  void u8(unsigned x) { v.push_back(static_cast<std::uint8_t>(x)); }
  void u16(unsigned x) {
    u8(x >> 8);
    u8(x & 0xFF);
  }
  void u32(unsigned long x) {
    u16(static_cast<unsigned>(x >> 16));
    u16(static_cast<unsigned>(x & 0xFFFF));
  }
  void i16(int x) { u16(static_cast<unsigned>(x) & 0xFFFF); }
  void pad4() {
    while (v.size() % 4) u8(0);
  }
};

std::vector<std::uint8_t> build_test_font() {
  Bytes head;
  head.u32(0x00010000);  // version
  head.u32(0);           // revision
  head.u32(0);           // checkSumAdjustment
  head.u32(0x5F0F3CF5);  // magic
  head.u16(0);           // flags
  head.u16(1000);        // unitsPerEm
  for (int i = 0; i < 16; ++i) head.u8(0);  // created + modified
  head.i16(0);
  head.i16(-200);
  head.i16(600);
  head.i16(800);  // font bbox
  head.u16(0);    // macStyle
  head.u16(8);    // lowestRecPPEM
  head.i16(2);    // fontDirectionHint
  head.i16(1);    // indexToLocFormat: long
  head.i16(0);    // glyphDataFormat

  Bytes hhea;
  hhea.u32(0x00010000);
  hhea.i16(800);   // ascender
  hhea.i16(-200);  // descender
  hhea.i16(0);     // lineGap
  hhea.u16(600);   // advanceWidthMax
  hhea.i16(0);
  hhea.i16(0);
  hhea.i16(600);
  hhea.i16(1);
  hhea.i16(0);
  hhea.i16(0);
  for (int i = 0; i < 4; ++i) hhea.i16(0);
  hhea.i16(0);  // metricDataFormat
  hhea.u16(6);  // numberOfHMetrics

  Bytes maxp;
  maxp.u32(0x00010000);
  maxp.u16(6);  // numGlyphs
  for (int i = 0; i < 13; ++i) maxp.u16(0);

  Bytes hmtx;
  for (int g = 0; g < 6; ++g) {
    hmtx.u16(600);
    hmtx.i16(0);
  }

  Bytes cmap;
  cmap.u16(0);   // version
  cmap.u16(1);   // one subtable
  cmap.u16(3);   // windows
  cmap.u16(1);   // unicode bmp
  cmap.u32(12);  // offset to the subtable
  // format 4, four segments: ' ', 'A'-'C', 'D', 0xFFFF.
  cmap.u16(4);
  cmap.u16(56);  // length
  cmap.u16(0);   // language
  cmap.u16(8);   // segCountX2
  cmap.u16(8);   // searchRange
  cmap.u16(2);   // entrySelector
  cmap.u16(0);   // rangeShift
  for (unsigned end : {0x20u, 0x43u, 0x44u, 0xFFFFu}) cmap.u16(end);
  cmap.u16(0);  // reservedPad
  for (unsigned start : {0x20u, 0x41u, 0x44u, 0xFFFFu}) cmap.u16(start);
  for (int delta : {4 - 0x20, 1 - 0x41, 5 - 0x44, 1}) cmap.i16(delta);
  for (int i = 0; i < 4; ++i) cmap.u16(0);  // idRangeOffset

  Bytes glyf;
  std::vector<unsigned long> loca_entries;
  auto mark = [&] { loca_entries.push_back(glyf.v.size()); };

  auto simple_square = [&](int x0, int y0, int x1, int y1) {
    glyf.i16(1);
    glyf.i16(x0);
    glyf.i16(y0);
    glyf.i16(x1);
    glyf.i16(y1);
    glyf.u16(3);  // endPt
    glyf.u16(0);  // no instructions
    glyf.u8(0x09);  // on-curve, repeat
    glyf.u8(3);
    for (int dx : {x0, x1 - x0, 0, -(x1 - x0)}) glyf.i16(dx);
    for (int dy : {y0, 0, y1 - y0, 0}) glyf.i16(dy);
    glyf.pad4();
  };

  mark();  // gid 0
  simple_square(100, 0, 500, 700);
  mark();  // gid 1 'A'
  simple_square(0, 0, 600, 700);

  mark();  // gid 2 'B': outer square plus reverse-wound hole
  glyf.i16(2);
  glyf.i16(0);
  glyf.i16(0);
  glyf.i16(600);
  glyf.i16(700);
  glyf.u16(3);
  glyf.u16(7);
  glyf.u16(0);
  glyf.u8(0x09);
  glyf.u8(7);
  for (int dx : {0, 600, 0, -600, 155, 0, 290, 0}) glyf.i16(dx);
  for (int dy : {0, 0, 700, 0, -545, 390, 0, -390}) glyf.i16(dy);
  glyf.pad4();

  mark();  // gid 3 'C': on, off, on
  glyf.i16(1);
  glyf.i16(0);
  glyf.i16(0);
  glyf.i16(600);
  glyf.i16(800);
  glyf.u16(2);
  glyf.u16(0);
  glyf.u8(0x01);
  glyf.u8(0x00);
  glyf.u8(0x01);
  for (int dx : {0, 300, 300}) glyf.i16(dx);
  for (int dy : {0, 800, -800}) glyf.i16(dy);
  glyf.pad4();

  mark();  // gid 4 ' ': empty
  mark();  // gid 5 'D': composite of gid 3
  glyf.i16(-1);
  glyf.i16(0);
  glyf.i16(0);
  glyf.i16(600);
  glyf.i16(800);
  glyf.u16(0x0003);  // words + xy values, no more components
  glyf.u16(3);
  glyf.i16(0);
  glyf.i16(0);
  glyf.pad4();
  mark();  // end sentinel

  Bytes loca;
  for (auto off : loca_entries) loca.u32(off);

  struct Entry {
    const char* tag;
    Bytes* data;
  };
  Entry entries[] = {{"head", &head}, {"hhea", &hhea}, {"maxp", &maxp}, {"hmtx", &hmtx},
                     {"cmap", &cmap}, {"loca", &loca}, {"glyf", &glyf}};

  Bytes file;
  file.u32(0x00010000);
  file.u16(7);   // numTables
  file.u16(64);  // searchRange
  file.u16(2);   // entrySelector
  file.u16(48);  // rangeShift
  size_t offset = 12 + 7 * 16;
  for (auto& e : entries) {
    for (int i = 0; i < 4; ++i) file.u8(static_cast<unsigned char>(e.tag[i]));
    file.u32(0);  // checksum unused
    file.u32(offset);
    file.u32(e.data->v.size());
    offset += (e.data->v.size() + 3) / 4 * 4;
  }
  for (auto& e : entries) {
    file.v.insert(file.v.end(), e.data->v.begin(), e.data->v.end());
    file.pad4();
  }
  return file.v;
}

std::string write_temp(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  return path;
}

int mask_sum(const Glyph& g) { return std::accumulate(g.mask.begin(), g.mask.end(), 0); }

}  // namespace

TEST_CASE("tiny ttf rasters match closed-form pixel counts", "[font]") {
  auto path = write_temp(build_test_font(), "odm_test_font.ttf");
  auto font = load_font(path, 50);  // scale 0.05: 1 px per 20 font units

  // Cell: 30 px wide (advance 600), 50 px tall (ascender 800 to descender -200).
  const Glyph& a = font.lookup('A');
  REQUIRE(a.width == 30);
  REQUIRE(a.height == 50);
  CHECK(a.advance == 0.6);
  // Square (0,0)-(600,700) covers columns 0..29 and rows 5..39 exactly.
  CHECK(mask_sum(a) == 35 * 30);
  CHECK(a.mask[20 * 30 + 15] == 1);
  CHECK(a.mask[3 * 30 + 15] == 0);   // above the square
  CHECK(a.mask[42 * 30 + 15] == 0);  // below the baseline region

  // 'B' subtracts its 14 x 19 px hole.
  const Glyph& b = font.lookup('B');
  CHECK(mask_sum(b) == 35 * 30 - 14 * 19);
  CHECK(b.mask[22 * 30 + 15] == 0);  // inside the hole
  CHECK(b.mask[20 * 30 + 2] == 1);   // in the ring

  // 'C' arcs from (0,0) to (600,0) with apex y=400: ink up to px row 20.
  const Glyph& c = font.lookup('C');
  CHECK_FALSE(c.blank());
  CHECK(c.mask[21 * 30 + 15] == 1);  // just under the apex
  CHECK(c.mask[15 * 30 + 15] == 0);  // above the apex
  for (int x = 0; x < 30; ++x) CHECK(c.mask[39 * 30 + x] == 1);  // base row is solid
  CHECK(c.mask != a.mask);

  // Space: blank with positive advance.
  CHECK(font.lookup(' ').blank());
  CHECK(font.lookup(' ').advance == 0.6);

  // Composite 'D' reproduces gid 3 exactly.
  CHECK(font.lookup('D').mask == c.mask);

  // Unmapped characters resolve to .notdef, which is also the fallback.
  const Glyph& z = font.lookup('Z');
  CHECK(mask_sum(z) == 35 * 20);
  CHECK(z.mask == font.fallback.mask);

  std::remove(path.c_str());
}

TEST_CASE("font loader rejects broken files", "[font]") {
  auto good = build_test_font();

  SECTION("truncations") {
    for (size_t len : {size_t{4}, size_t{20}, size_t{80}, good.size() / 2}) {
      auto bad = good;
      bad.resize(len);
      auto path = write_temp(bad, "odm_trunc.ttf");
      CHECK_THROWS_AS(load_font(path), FontError);
      std::remove(path.c_str());
    }
  }
  SECTION("cff flavoured fonts are named in the error") {
    auto bad = good;
    bad[0] = 'O';
    bad[1] = 'T';
    bad[2] = 'T';
    bad[3] = 'O';
    auto path = write_temp(bad, "odm_otto.otf");
    CHECK_THROWS_WITH(load_font(path), Catch::Matchers::ContainsSubstring("CFF"));
    std::remove(path.c_str());
  }
  SECTION("bad sfnt version") {
    auto bad = good;
    bad[0] = 0x12;
    auto path = write_temp(bad, "odm_badver.ttf");
    CHECK_THROWS_AS(load_font(path), FontError);
    std::remove(path.c_str());
  }
  SECTION("corrupt head magic") {
    auto bad = good;
    bad[12 + 7 * 16 + 12] ^= 0xFF;  // head is the first table
    auto path = write_temp(bad, "odm_badmagic.ttf");
    CHECK_THROWS_AS(load_font(path), FontError);
    std::remove(path.c_str());
  }
  SECTION("missing file") { CHECK_THROWS_AS(load_font("/no/such/font.ttf"), FontError); }
}

TEST_CASE("system dejavu loads when present", "[font]") {
  const std::string path = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf";
  if (!std::filesystem::exists(path)) {
    SUCCEED("system font not installed; skipping");
    return;
  }
  auto font = load_font(path);
  CHECK(font.em == 64);
  for (char ch : std::string("AgW.19")) {
    CAPTURE(ch);
    CHECK_FALSE(font.lookup(static_cast<char32_t>(ch)).blank());
  }
  CHECK(font.lookup(' ').blank());
  CHECK(font.lookup(' ').advance > 0.0);
  CHECK(font.lookup('a').mask != font.lookup('b').mask);

  // 'W' ink is wider than 'l' ink.
  auto ink_width = [](const Glyph& g) {
    int lo = g.width, hi = -1;
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        if (g.mask[static_cast<size_t>(y) * g.width + x]) {
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
      }
    }
    return hi - lo + 1;
  };
  CHECK(ink_width(font.lookup('W')) > ink_width(font.lookup('l')));

  // Descender of 'g' reaches below the baseline row.
  const Glyph& g = font.lookup('g');
  const int baseline = 59;  // ascender 1901 / upm 2048 * 64
  bool below = false;
  for (int y = baseline + 2; y < g.height && !below; ++y) {
    for (int x = 0; x < g.width; ++x) {
      if (g.mask[static_cast<size_t>(y) * g.width + x]) below = true;
    }
  }
  CHECK(below);

  auto again = load_font(path);
  CHECK(font.lookup('Q').mask == again.lookup('Q').mask);
}
