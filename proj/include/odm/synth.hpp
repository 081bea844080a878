#pragma once

// Deterministic synthetic scenes: axis-aligned text instances rendered with
// per-instance style (plate fill, foreground color, pixel jitter) over a
// gradient background. The paired destylized label is the plain glyph
// rasterization, which is exactly what the model must recover.

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "odm/annot.hpp"
#include "odm/control.hpp"
#include "odm/errors.hpp"
#include "odm/geom.hpp"
#include "odm/glyph.hpp"
#include "odm/image_io.hpp"

namespace odm::synth {

struct SynthScene {
  annot::SceneAnnotation ann;
  io::Image image;           // stylized RGB input
  glyph::LabelCanvas label;  // destylized target over all instances
};

namespace detail {

inline std::string random_word(std::mt19937_64& rng) {
  const size_t len = 3 + control::uniform_below(rng, 4);
  std::string w;
  for (size_t i = 0; i < len; ++i) w.push_back(char('A' + control::uniform_below(rng, 26)));
  return w;
}

inline bool boxes_overlap(const geom::Bounds& a, const geom::Bounds& b, double margin) {
  return a.min_x - margin < b.max_x && b.min_x - margin < a.max_x &&
         a.min_y - margin < b.max_y && b.min_y - margin < a.max_y;
}

}  // namespace detail

// Scene layout and pixels depend only on (seed, index) and the fixed
// geometry parameters, so datasets are reproducible byte-for-byte.
inline SynthScene make_scene(const glyph::GlyphSet& font, std::uint64_t seed, std::uint64_t index,
                             int width = 128, int height = 128, int max_instances = 3) {
  if (width < 64 || height < 32) throw ValidationError("synthetic canvas too small");
  if (max_instances < 1) throw ValidationError("max_instances must be positive");
  auto rng = control::sample_stream(seed, 0x5c3e, index);

  SynthScene s;
  s.ann.image_id = "synth_" + std::to_string(seed) + "_" + std::to_string(index);
  s.ann.width = width;
  s.ann.height = height;

  // Gradient background in a dark band so glyph foregrounds can stay bright.
  const double base = 20.0 + 50.0 * control::uniform_unit(rng);
  const double tilt = 40.0 * (control::uniform_unit(rng) - 0.5);
  const bool horizontal = control::uniform_below(rng, 2) == 0;
  s.image = io::Image(width, height, 3);
  const double cw[3] = {0.8 + 0.2 * control::uniform_unit(rng),
                        0.8 + 0.2 * control::uniform_unit(rng),
                        0.8 + 0.2 * control::uniform_unit(rng)};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double t = horizontal ? double(x) / width : double(y) / height;
      const double v = base + tilt * t + 8.0 * (control::uniform_unit(rng) - 0.5);
      for (int c = 0; c < 3; ++c) {
        s.image.at(x, y, c) = std::uint8_t(std::clamp(v * cw[c], 0.0, 255.0));
      }
    }
  }

  // Non-overlapping axis-aligned boxes by rejection.
  const int target = 1 + int(control::uniform_below(rng, std::uint64_t(max_instances)));
  std::vector<geom::Bounds> placed;
  for (int i = 0; i < target; ++i) {
    for (int attempt = 0; attempt < 60; ++attempt) {
      const double bw = 40.0 + double(control::uniform_below(rng, 25));
      const double bh = 16.0 + double(control::uniform_below(rng, 13));
      if (bw > width - 8 || bh > height - 8) continue;
      const double x0 = 4.0 + double(control::uniform_below(rng, std::uint64_t(width - 8 - int(bw)) + 1));
      const double y0 = 4.0 + double(control::uniform_below(rng, std::uint64_t(height - 8 - int(bh)) + 1));
      geom::Bounds b{x0, y0, x0 + bw, y0 + bh};
      bool clash = false;
      for (const auto& p : placed) clash = clash || detail::boxes_overlap(p, b, 4.0);
      if (clash) continue;

      annot::TextInstance inst;
      inst.shape = geom::Quad{{geom::Point2{b.min_x, b.min_y}, geom::Point2{b.max_x, b.min_y},
                               geom::Point2{b.max_x, b.max_y}, geom::Point2{b.min_x, b.max_y}}};
      inst.transcription = detail::random_word(rng);
      s.ann.instances.push_back(inst);
      placed.push_back(b);
      break;
    }
  }
  if (s.ann.instances.empty()) throw ValidationError("synthetic placement failed");

  // Style pass: optional plate fill, bright per-instance glyph color, jitter.
  for (size_t i = 0; i < s.ann.instances.size(); ++i) {
    const auto& b = placed[i];
    if (control::uniform_below(rng, 2) == 0) {
      const double plate = 70.0 + 50.0 * control::uniform_unit(rng);
      for (int y = int(b.min_y); y < int(b.max_y); ++y) {
        for (int x = int(b.min_x); x < int(b.max_x); ++x) {
          for (int c = 0; c < 3; ++c) s.image.at(x, y, c) = std::uint8_t(plate);
        }
      }
    }
    double fg[3];
    for (double& c : fg) c = 180.0 + 75.0 * control::uniform_unit(rng);
    auto solo = glyph::render_label(s.ann, font, width, height, std::set<size_t>{i});
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (!solo.at(x, y)) continue;
        const double j = 20.0 * (control::uniform_unit(rng) - 0.5);
        for (int c = 0; c < 3; ++c) {
          s.image.at(x, y, c) = std::uint8_t(std::clamp(fg[c] + j, 0.0, 255.0));
        }
      }
    }
  }

  s.label = glyph::render_label(s.ann, font, width, height);
  return s;
}

// Pseudo-label scene for exercising the weak filter: confidences and box
// sizes straddle both thresholds.
inline annot::SceneAnnotation make_weak_scene(std::uint64_t seed, int instances,
                                              int canvas = 2048) {
  auto rng = control::sample_stream(seed, 0xfee1, 0);
  annot::SceneAnnotation ann;
  ann.image_id = "weak_" + std::to_string(seed);
  ann.width = canvas;
  ann.height = canvas;
  for (int i = 0; i < instances; ++i) {
    const double w = 8.0 + 56.0 * control::uniform_unit(rng);
    const double h = 8.0 + 56.0 * control::uniform_unit(rng);
    const double x0 = control::uniform_unit(rng) * (canvas - 80);
    const double y0 = control::uniform_unit(rng) * (canvas - 80);
    annot::TextInstance inst;
    inst.shape = geom::Quad{{geom::Point2{x0, y0}, geom::Point2{x0 + w, y0},
                             geom::Point2{x0 + w, y0 + h}, geom::Point2{x0, y0 + h}}};
    inst.transcription = detail::random_word(rng);
    // Cluster confidences near the 0.9 threshold to stress the comparison.
    inst.confidence = 0.8 + 0.2 * control::uniform_unit(rng);
    ann.instances.push_back(inst);
  }
  return ann;
}

}  // namespace odm::synth
