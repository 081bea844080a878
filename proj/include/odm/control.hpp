#pragma once

// Text-Controller augmentations: Drop-Text keeps a uniformly chosen subset
// of instances, Noise-Text injects synthetic instances that have no pixels
// in the target, and the target is rebuilt from the kept set only.
//
// All randomness flows through explicit mt19937_64 streams with our own
// uniform samplers, so results are identical across platforms and standard
// library implementations.

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "odm/annot.hpp"
#include "odm/errors.hpp"
#include "odm/glyph.hpp"

namespace odm::control {

struct ControllerConfig {
  double keep_ratio_min = 0.0;
  double keep_ratio_max = 1.0;
  long long noise_min = 0;
  long long noise_max = 0;
  uint64_t seed = 0;

  void validate() const {
    if (!(keep_ratio_min >= 0.0) || !(keep_ratio_max <= 1.0) ||
        keep_ratio_min > keep_ratio_max) {
      throw ValidationError("controller keep ratio range must satisfy 0 <= lo <= hi <= 1");
    }
    if (noise_min < 0 || noise_min > noise_max) {
      throw ValidationError("controller noise count range must satisfy 0 <= lo <= hi");
    }
  }
};

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Independent, reproducible rng stream for one (epoch, sample) pair.
inline std::mt19937_64 sample_stream(uint64_t seed, uint64_t epoch, uint64_t index) {
  uint64_t s = detail::splitmix64(seed);
  s = detail::splitmix64(s ^ detail::splitmix64(epoch + 0x9E3779B97F4A7C15ULL));
  s = detail::splitmix64(s ^ detail::splitmix64(index + 0xD1B54A32D192ED03ULL));
  return std::mt19937_64(s);
}

// Unbiased uniform draw from [0, n); avoids std::uniform_int_distribution,
// whose output sequence is implementation-defined.
inline uint64_t uniform_below(std::mt19937_64& rng, uint64_t n) {
  if (n == 0) throw ValidationError("uniform_below: empty range");
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

inline double uniform_unit(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;
}

// Keeps exactly round(ratio*n) indices (half rounds up), uniformly without
// replacement, returned in ascending order.
inline std::vector<size_t> apply_drop(size_t n, double ratio, std::mt19937_64& rng) {
  if (!(ratio >= 0.0) || !(ratio <= 1.0)) {
    throw ValidationError("drop ratio must lie in [0,1]");
  }
  const size_t k = static_cast<size_t>(std::floor(ratio * double(n) + 0.5));
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  for (size_t i = 0; i < k; ++i) {
    const size_t j = i + static_cast<size_t>(uniform_below(rng, n - i));
    std::swap(idx[i], idx[j]);
  }
  std::vector<size_t> kept(idx.begin(), idx.begin() + k);
  std::sort(kept.begin(), kept.end());
  return kept;
}

// Synthetic transcriptions: uniform length 3..8 over the 95 printable ASCII
// characters, resampled while they collide with a real transcription.
inline std::vector<std::string> apply_noise(long long count, size_t existing,
                                            const std::vector<std::string>& real_texts,
                                            std::mt19937_64& rng,
                                            std::vector<std::string>* warnings = nullptr,
                                            size_t capacity = 32) {
  if (count < 0) throw ValidationError("noise count must be non-negative");
  if (existing + static_cast<size_t>(count) > capacity) {
    const long long clipped =
        static_cast<long long>(capacity > existing ? capacity - existing : 0);
    if (warnings) {
      warnings->push_back("noise count " + std::to_string(count) + " clipped to " +
                          std::to_string(clipped) + " by the instance capacity of " +
                          std::to_string(capacity));
    }
    count = clipped;
  }
  std::set<std::string> reals(real_texts.begin(), real_texts.end());
  std::vector<std::string> rows;
  rows.reserve(static_cast<size_t>(count));
  for (long long i = 0; i < count; ++i) {
    std::string s;
    do {
      const size_t len = 3 + static_cast<size_t>(uniform_below(rng, 6));
      s.clear();
      for (size_t c = 0; c < len; ++c) {
        s.push_back(static_cast<char>(0x20 + uniform_below(rng, 95)));
      }
    } while (reals.count(s) > 0);
    rows.push_back(std::move(s));
  }
  return rows;
}

inline glyph::LabelCanvas rebuild_target(const annot::SceneAnnotation& ann,
                                         const std::vector<size_t>& kept,
                                         const glyph::GlyphSet& glyphs, long long width,
                                         long long height,
                                         glyph::RenderReport* report = nullptr) {
  std::set<size_t> keep(kept.begin(), kept.end());
  return glyph::render_label(ann, glyphs, width, height, keep, report);
}

struct ControlledSample {
  std::vector<size_t> kept;          // indices into ann.instances
  std::vector<std::string> noise;    // synthetic transcriptions
  std::vector<std::string> texts;    // prompt rows: kept texts then noise
  glyph::LabelCanvas target;
};

// One full controller application: draw a keep ratio and noise count from
// the configured ranges on this sample's own stream, drop, noise, and
// rebuild the target from the kept instances only.
inline ControlledSample make_controlled_sample(const annot::SceneAnnotation& ann,
                                               const glyph::GlyphSet& glyphs, long long width,
                                               long long height, const ControllerConfig& cc,
                                               uint64_t epoch, uint64_t index,
                                               std::vector<std::string>* warnings = nullptr) {
  cc.validate();
  auto rng = sample_stream(cc.seed, epoch, index);

  std::vector<size_t> universe;
  std::vector<std::string> reals;
  for (size_t i = 0; i < ann.instances.size(); ++i) {
    reals.push_back(ann.instances[i].transcription);
    if (!ann.instances[i].ignore) universe.push_back(i);
  }

  const double ratio =
      cc.keep_ratio_min +
      (cc.keep_ratio_max - cc.keep_ratio_min) * (cc.keep_ratio_min == cc.keep_ratio_max
                                                     ? 0.0
                                                     : uniform_unit(rng));
  auto kept_local = apply_drop(universe.size(), ratio, rng);

  ControlledSample out;
  for (size_t k : kept_local) out.kept.push_back(universe[k]);

  const long long span = cc.noise_max - cc.noise_min;
  const long long count =
      cc.noise_min + (span > 0 ? static_cast<long long>(uniform_below(rng, uint64_t(span) + 1))
                               : 0);
  out.noise = apply_noise(count, out.kept.size(), reals, rng, warnings);

  for (size_t i : out.kept) out.texts.push_back(ann.instances[i].transcription);
  for (const auto& s : out.noise) out.texts.push_back(s);
  // An empty prompt would leave the text encoder with nothing to attend to;
  // a single empty string stands in as the null prompt.
  if (out.texts.empty()) out.texts.push_back("");

  out.target = rebuild_target(ann, out.kept, glyphs, width, height);
  return out;
}

}  // namespace odm::control
