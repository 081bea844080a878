#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "odm/annot.hpp"
#include "odm/builtin_font.hpp"
#include "odm/errors.hpp"
#include "odm/eval.hpp"
#include "odm/geom.hpp"
#include "odm/glyph.hpp"

using namespace odm;

namespace {

geom::Polygon rect_poly(double x0, double y0, double x1, double y1) {
  geom::Polygon p;
  p.pts = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
  return p;
}

void fill_rect(glyph::LabelCanvas& c, int x0, int y0, int x1, int y1) {
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) c.set(x, y, 1);
}

// Independent component oracle: union-find over 8-neighbor foreground pixels.
struct ComponentOracle {
  std::vector<int> parent;
  int find(int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); }
  void unite(int a, int b) { parent[find(a)] = find(b); }

  // Returns {count, area} bounding boxes of components above min_area.
  std::vector<std::array<int, 5>> run(const glyph::LabelCanvas& c, double min_area) {
    const int w = c.width, h = c.height;
    parent.resize(w * h);
    for (int i = 0; i < w * h; ++i) parent[i] = i;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!c.at(x, y)) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h || !c.at(nx, ny)) continue;
            unite(y * w + x, ny * w + nx);
          }
        }
      }
    }
    std::map<int, std::array<int, 5>> boxes;  // root -> {area, minx, miny, maxx, maxy}
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!c.at(x, y)) continue;
        const int r = find(y * w + x);
        auto it = boxes.find(r);
        if (it == boxes.end()) {
          boxes[r] = {1, x, y, x, y};
        } else {
          auto& b = it->second;
          b[0]++;
          b[1] = std::min(b[1], x);
          b[2] = std::min(b[2], y);
          b[3] = std::max(b[3], x);
          b[4] = std::max(b[4], y);
        }
      }
    }
    std::vector<std::array<int, 5>> out;
    for (auto& [root, b] : boxes)
      if (double(b[0]) > min_area) out.push_back(b);
    std::sort(out.begin(), out.end());
    return out;
  }
};

// Exhaustive maximum-cardinality matching over candidate pairs at the
// threshold, for validating the greedy matcher.
size_t brute_force_matching(const std::vector<geom::Polygon>& preds,
                            const std::vector<geom::Polygon>& gts, double thresh) {
  std::vector<std::vector<size_t>> adj(preds.size());
  for (size_t p = 0; p < preds.size(); ++p)
    for (size_t g = 0; g < gts.size(); ++g)
      if (geom::polygon_iou(preds[p], gts[g]) >= thresh) adj[p].push_back(g);

  size_t best = 0;
  std::vector<char> used(gts.size(), 0);
  std::function<void(size_t, size_t)> rec = [&](size_t p, size_t count) {
    best = std::max(best, count);
    if (p == preds.size()) return;
    rec(p + 1, count);
    for (size_t g : adj[p]) {
      if (used[g]) continue;
      used[g] = 1;
      rec(p + 1, count + 1);
      used[g] = 0;
    }
  };
  rec(0, 0);
  return best;
}

}  // namespace

TEST_CASE("mask_to_regions basic extraction", "[eval]") {
  SECTION("empty canvas yields no regions") {
    glyph::LabelCanvas c(32, 32);
    CHECK(eval::mask_to_regions(c).empty());
  }

  SECTION("filled rectangle yields one hull with exact bounds") {
    glyph::LabelCanvas c(40, 30);
    fill_rect(c, 3, 2, 10, 8);
    auto regions = eval::mask_to_regions(c);
    REQUIRE(regions.size() == 1);
    auto b = geom::bounds_of(regions[0].pts);
    CHECK(b.min_x == 3.0);
    CHECK(b.min_y == 2.0);
    CHECK(b.max_x == 10.0);
    CHECK(b.max_y == 8.0);
    // The hull of an axis-aligned block is the block itself.
    CHECK(geom::polygon_iou(regions[0], rect_poly(3, 2, 10, 8)) == Catch::Approx(1.0));
  }

  SECTION("two separated blobs yield two regions") {
    glyph::LabelCanvas c(64, 64);
    fill_rect(c, 2, 2, 10, 10);
    fill_rect(c, 30, 30, 45, 40);
    auto regions = eval::mask_to_regions(c);
    CHECK(regions.size() == 2);
  }

  SECTION("area filter is strict") {
    glyph::LabelCanvas c(32, 32);
    fill_rect(c, 1, 1, 5, 5);  // 16 pixels: not above the default threshold
    CHECK(eval::mask_to_regions(c).empty());
    c.set(5, 1, 1);  // 17th pixel, 8-connected to the block
    CHECK(eval::mask_to_regions(c).size() == 1);
  }

  SECTION("diagonal contact joins components") {
    glyph::LabelCanvas c(16, 16);
    c.set(3, 3, 1);
    c.set(4, 4, 1);
    CHECK(eval::mask_to_regions(c, 0.0).size() == 1);
    c.set(4, 4, 0);
    c.set(5, 5, 1);  // now two pixels apart
    CHECK(eval::mask_to_regions(c, 0.0).size() == 2);
  }

  SECTION("single pixel hulls to its unit square") {
    glyph::LabelCanvas c(8, 8);
    c.set(4, 2, 1);
    auto regions = eval::mask_to_regions(c, 0.0);
    REQUIRE(regions.size() == 1);
    CHECK(geom::polygon_iou(regions[0], rect_poly(4, 2, 5, 3)) == Catch::Approx(1.0));
  }
}

TEST_CASE("mask_to_regions matches a flood-fill oracle on random canvases", "[eval]") {
  std::mt19937_64 rng(91);
  for (int trial = 0; trial < 40; ++trial) {
    glyph::LabelCanvas c(48, 48);
    // Sparse speckle plus a few blocks produces a mix of tiny and large parts.
    std::uniform_int_distribution<int> coord(0, 47), len(1, 9);
    const int blocks = 1 + int(rng() % 5);
    for (int b = 0; b < blocks; ++b) {
      const int x0 = coord(rng), y0 = coord(rng);
      fill_rect(c, x0, y0, std::min(48, x0 + len(rng)), std::min(48, y0 + len(rng)));
    }
    for (int s = 0; s < 60; ++s) c.set(coord(rng), coord(rng), 1);

    const double min_area = double(rng() % 8);
    ComponentOracle oracle;
    auto want = oracle.run(c, min_area);
    auto regions = eval::mask_to_regions(c, min_area);
    REQUIRE(regions.size() == want.size());

    // Hull bounds must equal the pixel bounding box, corner-to-corner.
    std::vector<std::array<int, 4>> want_boxes, got;
    for (const auto& b : want) want_boxes.push_back(std::array<int, 4>{b[1], b[2], b[3], b[4]});
    for (const auto& r : regions) {
      auto b = geom::bounds_of(r.pts);
      got.push_back(std::array<int, 4>{int(b.min_x), int(b.min_y), int(b.max_x) - 1,
                                       int(b.max_y) - 1});
    }
    std::sort(want_boxes.begin(), want_boxes.end());
    std::sort(got.begin(), got.end());
    CHECK(got == want_boxes);
  }
}

TEST_CASE("score on fixed fixtures", "[eval]") {
  SECTION("exact match scores ones") {
    std::vector<geom::Polygon> gts = {rect_poly(0, 0, 10, 10), rect_poly(20, 0, 30, 10)};
    auto res = eval::score(gts, gts);
    CHECK(res.matches.size() == 2);
    CHECK(res.precision == 1.0);
    CHECK(res.recall == 1.0);
    CHECK(res.hmean == 1.0);
  }

  SECTION("no predictions scores zeros") {
    std::vector<geom::Polygon> gts = {rect_poly(0, 0, 10, 10)};
    auto res = eval::score({}, gts);
    CHECK(res.matches.empty());
    CHECK(res.precision == 0.0);
    CHECK(res.recall == 0.0);
    CHECK(res.hmean == 0.0);

    auto both_empty = eval::score({}, {});
    CHECK(both_empty.precision == 0.0);
    CHECK(both_empty.recall == 0.0);
    CHECK(both_empty.hmean == 0.0);
  }

  SECTION("three preds, two gts, two true overlaps") {
    std::vector<geom::Polygon> gts = {rect_poly(0, 0, 10, 10), rect_poly(40, 0, 50, 10)};
    std::vector<geom::Polygon> preds = {
        rect_poly(1, 0, 11, 10),    // IoU 9/11 with gt 0
        rect_poly(40, 1, 50, 11),   // IoU 9/11 with gt 1
        rect_poly(80, 80, 90, 90),  // spurious
    };
    auto res = eval::score(preds, gts);
    REQUIRE(res.matches.size() == 2);
    CHECK(res.precision == Catch::Approx(2.0 / 3.0));
    CHECK(res.recall == Catch::Approx(1.0));
    CHECK(res.hmean == Catch::Approx(0.8));
  }

  SECTION("matches carry indices and ious") {
    std::vector<geom::Polygon> gts = {rect_poly(0, 0, 10, 10)};
    std::vector<geom::Polygon> preds = {rect_poly(100, 0, 110, 10), rect_poly(0, 0, 10, 10)};
    auto res = eval::score(preds, gts);
    REQUIRE(res.matches.size() == 1);
    CHECK(res.matches[0].pred == 1);
    CHECK(res.matches[0].gt == 0);
    CHECK(res.matches[0].iou == Catch::Approx(1.0));
  }

  SECTION("threshold is inclusive and one pred cannot claim two gts") {
    // The pred is the exact union of the two gts: IoU is exactly 0.5 each.
    std::vector<geom::Polygon> gts = {rect_poly(0, 0, 1, 1), rect_poly(1, 0, 2, 1),
                                      rect_poly(5, 0, 6, 1)};
    std::vector<geom::Polygon> preds = {rect_poly(0, 0, 2, 1), rect_poly(5, 0, 6, 1)};
    auto res = eval::score(preds, gts);
    REQUIRE(res.matches.size() == 2);
    // Tie at 0.5 breaks toward the lower gt index.
    CHECK(res.matches[1].pred == 0);
    CHECK(res.matches[1].gt == 0);
    CHECK(res.precision == Catch::Approx(1.0));
    CHECK(res.recall == Catch::Approx(2.0 / 3.0));
  }

  SECTION("invalid threshold rejected") {
    CHECK_THROWS_AS(eval::score({}, {}, 0.0), ValidationError);
    CHECK_THROWS_AS(eval::score({}, {}, 1.5), ValidationError);
  }
}

TEST_CASE("degenerate polygons are skipped with a warning", "[eval]") {
  std::vector<geom::Polygon> gts = {rect_poly(0, 0, 10, 10)};
  geom::Polygon line;  // zero area
  line.pts = {{0, 0}, {5, 0}, {10, 0}};
  std::vector<geom::Polygon> preds = {line, rect_poly(0, 0, 10, 10)};

  std::vector<std::string> warnings;
  auto res = eval::score(preds, gts, 0.5, &warnings);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("pred 0") != std::string::npos);
  CHECK(res.num_preds == 1);  // the degenerate one is not in the denominator
  CHECK(res.precision == 1.0);
  CHECK(res.recall == 1.0);

  // Same on the gt side.
  warnings.clear();
  auto res2 = eval::score(gts, preds, 0.5, &warnings);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("gt 0") != std::string::npos);
  CHECK(res2.num_gts == 1);
  CHECK(res2.recall == 1.0);
}

TEST_CASE("score is invariant to input order", "[eval]") {
  std::mt19937_64 rng(7);
  std::vector<geom::Polygon> gts, preds;
  for (int cell = 0; cell < 5; ++cell) {
    const double x = 40.0 * cell;
    gts.push_back(rect_poly(x + 5, 5, x + 25, 25));
    const double jx = double(rng() % 7) - 3.0, jy = double(rng() % 7) - 3.0;
    preds.push_back(rect_poly(x + 5 + jx, 5 + jy, x + 25 + jx, 25 + jy));
  }
  preds.push_back(rect_poly(300, 5, 320, 25));  // spurious
  auto base = eval::score(preds, gts);

  auto preds2 = preds;
  auto gts2 = gts;
  std::shuffle(preds2.begin(), preds2.end(), rng);
  std::shuffle(gts2.begin(), gts2.end(), rng);
  auto shuffled = eval::score(preds2, gts2);
  CHECK(shuffled.matches.size() == base.matches.size());
  CHECK(shuffled.precision == base.precision);
  CHECK(shuffled.recall == base.recall);
  CHECK(shuffled.hmean == base.hmean);
}

TEST_CASE("greedy matching equals exhaustive matching", "[eval]") {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    // Disjoint gt rectangles on a coarse lattice, preds as jittered copies
    // with drops and spurious additions.
    std::vector<geom::Polygon> gts, preds;
    const int k = 1 + int(rng() % 6);
    std::vector<int> cells(9);
    for (int i = 0; i < 9; ++i) cells[i] = i;
    std::shuffle(cells.begin(), cells.end(), rng);
    for (int i = 0; i < k; ++i) {
      const double cx = 40.0 * (cells[i] % 3), cy = 40.0 * (cells[i] / 3);
      const double w = 10.0 + double(rng() % 11), h = 10.0 + double(rng() % 11);
      gts.push_back(rect_poly(cx + 5, cy + 5, cx + 5 + w, cy + 5 + h));
      const int fate = int(rng() % 10);
      if (fate < 2) continue;  // dropped
      const double jx = double(rng() % 9) - 4.0, jy = double(rng() % 9) - 4.0;
      preds.push_back(rect_poly(cx + 5 + jx, cy + 5 + jy, cx + 5 + w + jx, cy + 5 + h + jy));
    }
    for (int i = k; i < 9 && preds.size() < 6; ++i) {
      if (rng() % 4 != 0) continue;  // occasional spurious pred in a free cell
      const double cx = 40.0 * (cells[i] % 3), cy = 40.0 * (cells[i] / 3);
      preds.push_back(rect_poly(cx + 8, cy + 8, cx + 24, cy + 24));
    }

    auto res = eval::score(preds, gts);
    CHECK(res.matches.size() == brute_force_matching(preds, gts, 0.5));
  }

  // A star component: one pred covering two gts at IoU exactly 0.5 must not
  // inflate the match count past the true maximum.
  std::vector<geom::Polygon> gts = {rect_poly(0, 0, 4, 4), rect_poly(4, 0, 8, 4)};
  std::vector<geom::Polygon> preds = {rect_poly(0, 0, 8, 4)};
  auto res = eval::score(preds, gts);
  CHECK(res.matches.size() == 1);
  CHECK(res.matches.size() == brute_force_matching(preds, gts, 0.5));
}

TEST_CASE("render to regions to score round trip", "[eval]") {
  annot::SceneAnnotation ann;
  ann.image_id = "roundtrip";
  ann.width = 200;
  ann.height = 200;
  const double boxes[3][4] = {{10, 10, 90, 34}, {110, 10, 190, 34}, {10, 110, 90, 134}};
  const char* words[3] = {"AB", "CD", "EF"};
  for (int i = 0; i < 3; ++i) {
    annot::TextInstance inst;
    inst.shape = geom::Quad{{geom::Point2{boxes[i][0], boxes[i][1]},
                             geom::Point2{boxes[i][2], boxes[i][1]},
                             geom::Point2{boxes[i][2], boxes[i][3]},
                             geom::Point2{boxes[i][0], boxes[i][3]}}};
    inst.transcription = words[i];
    ann.instances.push_back(inst);
  }
  auto font = glyph::builtin_font();
  auto full = glyph::render_label(ann, font, 200, 200);
  auto full_regions = eval::mask_to_regions(full);
  REQUIRE(!full_regions.empty());

  auto self = eval::score(full_regions, full_regions);
  CHECK(self.precision == 1.0);
  CHECK(self.recall == 1.0);
  CHECK(self.hmean == 1.0);

  // Dropping one instance keeps precision at 1 and lowers recall.
  auto dropped = glyph::render_label(ann, font, 200, 200, std::set<size_t>{0, 1});
  auto drop_regions = eval::mask_to_regions(dropped);
  auto res = eval::score(drop_regions, full_regions);
  CHECK(res.precision == 1.0);
  CHECK(res.recall < 1.0);
  CHECK(res.recall > 0.0);
}

TEST_CASE("aggregate micro-average", "[eval]") {
  eval::AggregateScore agg;
  std::vector<geom::Polygon> gts = {rect_poly(0, 0, 10, 10), rect_poly(20, 0, 30, 10)};

  agg.add(eval::score(gts, gts));                                      // 2/2, 2/2
  agg.add(eval::score({rect_poly(50, 50, 60, 60)}, gts));              // 0/1, 0/2
  agg.add(eval::score({gts[0], rect_poly(50, 50, 60, 60)}, {gts[0]})); // 1/2, 1/1

  CHECK(agg.images == 3);
  CHECK(agg.matched == 3);
  CHECK(agg.preds == 5);
  CHECK(agg.gts == 5);
  CHECK(agg.precision() == Catch::Approx(0.6));
  CHECK(agg.recall() == Catch::Approx(0.6));
  CHECK(agg.hmean() == Catch::Approx(0.6));

  eval::AggregateScore empty;
  CHECK(empty.precision() == 0.0);
  CHECK(empty.hmean() == 0.0);
}
