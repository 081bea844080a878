#pragma once

// Detection-style scoring: extract regions from binary canvases and match
// predicted regions against ground truth one-to-one at IoU >= 0.5, reporting
// precision, recall and hmean.

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>
#include <vector>

#include "odm/errors.hpp"
#include "odm/geom.hpp"
#include "odm/glyph.hpp"

namespace odm::eval {

// 8-connected foreground components with pixel count strictly above
// min_area, each reduced to the convex hull of its pixel-square corners.
inline std::vector<geom::Polygon> mask_to_regions(const glyph::LabelCanvas& canvas,
                                                  double min_area = 16.0) {
  const long long w = canvas.width, h = canvas.height;
  std::vector<int> label(static_cast<size_t>(w * h), -1);
  std::vector<geom::Polygon> out;

  for (long long sy = 0; sy < h; ++sy) {
    for (long long sx = 0; sx < w; ++sx) {
      if (!canvas.at(sx, sy) || label[static_cast<size_t>(sy * w + sx)] >= 0) continue;
      // BFS in scan order keeps extraction deterministic.
      std::vector<std::pair<long long, long long>> pixels;
      std::queue<std::pair<long long, long long>> q;
      q.push({sx, sy});
      label[static_cast<size_t>(sy * w + sx)] = 0;
      while (!q.empty()) {
        auto [x, y] = q.front();
        q.pop();
        pixels.push_back({x, y});
        for (long long dy = -1; dy <= 1; ++dy) {
          for (long long dx = -1; dx <= 1; ++dx) {
            const long long nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            if (!canvas.at(nx, ny) || label[static_cast<size_t>(ny * w + nx)] >= 0) continue;
            label[static_cast<size_t>(ny * w + nx)] = 0;
            q.push({nx, ny});
          }
        }
      }
      if (static_cast<double>(pixels.size()) <= min_area) continue;

      // Hull input: the corner points of each row's extreme pixels.
      std::sort(pixels.begin(), pixels.end(),
                [](const auto& a, const auto& b) { return a.second < b.second ||
                                                          (a.second == b.second && a.first < b.first); });
      std::vector<geom::Point2> corners;
      size_t i = 0;
      while (i < pixels.size()) {
        const long long y = pixels[i].second;
        long long min_x = pixels[i].first, max_x = pixels[i].first;
        while (i < pixels.size() && pixels[i].second == y) {
          max_x = pixels[i].first;
          ++i;
        }
        corners.push_back({double(min_x), double(y)});
        corners.push_back({double(min_x), double(y + 1)});
        corners.push_back({double(max_x + 1), double(y)});
        corners.push_back({double(max_x + 1), double(y + 1)});
      }
      out.push_back(geom::convex_hull(corners));
    }
  }
  return out;
}

struct Match {
  size_t pred = 0;
  size_t gt = 0;
  double iou = 0.0;
};

struct DetResult {
  std::vector<Match> matches;
  long long num_preds = 0;  // valid (non-degenerate) region counts
  long long num_gts = 0;
  double precision = 0.0;
  double recall = 0.0;
  double hmean = 0.0;
};

namespace detail {

inline bool degenerate(const geom::Polygon& p) {
  return p.pts.size() < 3 || std::abs(geom::signed_area(p)) < geom::kDegenerateArea;
}

inline double hmean_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace detail

// Greedy one-to-one matching in descending IoU order over pairs at or above
// the threshold; ties break on pred index, then gt index. Degenerate
// polygons are skipped with a warning and do not count in any denominator.
inline DetResult score(const std::vector<geom::Polygon>& preds,
                       const std::vector<geom::Polygon>& gts, double iou_thresh = 0.5,
                       std::vector<std::string>* warnings = nullptr) {
  if (!(iou_thresh > 0.0) || !(iou_thresh <= 1.0)) {
    throw ValidationError("iou threshold must lie in (0,1]");
  }
  std::vector<size_t> vp, vg;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (detail::degenerate(preds[i])) {
      if (warnings) warnings->push_back("pred " + std::to_string(i) + " degenerate, skipped");
    } else {
      vp.push_back(i);
    }
  }
  for (size_t i = 0; i < gts.size(); ++i) {
    if (detail::degenerate(gts[i])) {
      if (warnings) warnings->push_back("gt " + std::to_string(i) + " degenerate, skipped");
    } else {
      vg.push_back(i);
    }
  }

  std::vector<Match> cands;
  for (size_t pi : vp) {
    for (size_t gi : vg) {
      const double iou = geom::polygon_iou(preds[pi], gts[gi]);
      if (iou >= iou_thresh) cands.push_back({pi, gi, iou});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Match& a, const Match& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.pred != b.pred) return a.pred < b.pred;
    return a.gt < b.gt;
  });

  DetResult res;
  res.num_preds = static_cast<long long>(vp.size());
  res.num_gts = static_cast<long long>(vg.size());
  std::vector<char> pred_used(preds.size(), 0), gt_used(gts.size(), 0);
  for (const auto& c : cands) {
    if (pred_used[c.pred] || gt_used[c.gt]) continue;
    pred_used[c.pred] = gt_used[c.gt] = 1;
    res.matches.push_back(c);
  }
  const double m = static_cast<double>(res.matches.size());
  res.precision = res.num_preds > 0 ? m / double(res.num_preds) : 0.0;
  res.recall = res.num_gts > 0 ? m / double(res.num_gts) : 0.0;
  res.hmean = detail::hmean_of(res.precision, res.recall);
  return res;
}

// Micro-average across images: counts are summed, then rates computed once.
struct AggregateScore {
  long long matched = 0;
  long long preds = 0;
  long long gts = 0;
  long long images = 0;

  void add(const DetResult& r) {
    matched += static_cast<long long>(r.matches.size());
    preds += r.num_preds;
    gts += r.num_gts;
    ++images;
  }
  double precision() const { return preds > 0 ? double(matched) / double(preds) : 0.0; }
  double recall() const { return gts > 0 ? double(matched) / double(gts) : 0.0; }
  double hmean() const { return detail::hmean_of(precision(), recall()); }
};

}  // namespace odm::eval
