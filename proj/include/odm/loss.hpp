#pragma once

// Training losses: pixel BCE on the predicted label, an L1 feature-space
// distance through a frozen conv pyramid, and a two-direction batch
// contrastive term over image/text embeddings, combined by fixed weights.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odm/errors.hpp"
#include "odm/nd.hpp"

namespace odm::loss {

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.5;

  void validate() const {
    for (double v : {alpha, beta, gamma}) {
      if (!std::isfinite(v) || v < 0.0) {
        throw ValidationError("loss weights must be finite and non-negative");
      }
    }
  }
};

// Frozen conv pyramid standing in for a pretrained OCR feature detector.
// Weights are fixed at construction (seeded or loaded) and never updated.
template <typename T>
struct FeatureExtractor {
  struct Layer {
    nd::Tensor<T> w;  // OIHW
    long long stride = 1;
    long long pad = 0;
    bool relu = true;
  };

  long long in_channels = 3;
  std::vector<Layer> layers;

  static FeatureExtractor seeded(uint64_t seed) {
    FeatureExtractor fx;
    fx.in_channels = 3;
    std::mt19937_64 rng(seed);
    const long long chans[4] = {3, 8, 16, 16};
    for (int l = 0; l < 3; ++l) {
      const long long ci = chans[l], co = chans[l + 1];
      std::normal_distribution<double> d(0.0, std::sqrt(2.0 / double(ci * 9)));
      auto w = nd::Tensor<T>::zeros({co, ci, 3, 3});
      for (auto& v : w.data) v = static_cast<T>(d(rng));
      fx.layers.push_back({std::move(w), 2, 1, true});
    }
    return fx;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["in_channels"] = in_channels;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) {
      nlohmann::json jl;
      jl["shape"] = l.w.shape;
      jl["data"] = l.w.data;
      jl["stride"] = l.stride;
      jl["pad"] = l.pad;
      jl["relu"] = l.relu;
      j["layers"].push_back(jl);
    }
    return j;
  }

  static FeatureExtractor from_json(const nlohmann::json& j) {
    FeatureExtractor fx;
    try {
      fx.in_channels = j.at("in_channels").get<long long>();
      for (const auto& jl : j.at("layers")) {
        Layer l;
        l.w = nd::Tensor<T>(jl.at("shape").get<nd::Shape>(), jl.at("data").get<std::vector<T>>());
        l.stride = jl.at("stride").get<long long>();
        l.pad = jl.at("pad").get<long long>();
        l.relu = jl.at("relu").get<bool>();
        fx.layers.push_back(std::move(l));
      }
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("extractor", e.what());
    }
    return fx;
  }

  static FeatureExtractor load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open extractor weights: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("extractor weights: ") + e.what());
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write extractor weights: " + path);
    out << to_json().dump();
  }
};

namespace detail {

// B x 1 x H x W -> B x C x H x W by a constant all-ones 1x1 conv, so the
// replication stays differentiable.
template <typename T>
nd::Var<T> replicate_channels(nd::Tape<T>& t, nd::Var<T> x, long long channels) {
  const auto& s = t.value(x).shape;
  if (s.size() != 4) throw ShapeError("extractor input must be NCHW, got " + nd::shape_str(s));
  if (s[1] == channels) return x;
  if (s[1] != 1) {
    throw ShapeError("extractor expects 1 or " + std::to_string(channels) +
                     " input channels, got " + nd::shape_str(s));
  }
  return nd::conv2d(x, t.leaf(nd::Tensor<T>::full({channels, 1, 1, 1}, T(1))), 1, 0);
}

}  // namespace detail

// Feature maps of every extractor layer for one NCHW batch.
template <typename T>
std::vector<nd::Var<T>> extract_features(nd::Tape<T>& t, nd::Var<T> x,
                                         const FeatureExtractor<T>& fx) {
  nd::Var<T> h = detail::replicate_channels(t, x, fx.in_channels);
  std::vector<nd::Var<T>> feats;
  feats.reserve(fx.layers.size());
  for (const auto& l : fx.layers) {
    h = nd::conv2d(h, t.leaf(l.w), l.stride, l.pad);
    if (l.relu) h = nd::relu(h);
    feats.push_back(h);
  }
  return feats;
}

// Mean binary cross-entropy over all pixels of a B x 1 x H x W logit map.
template <typename T>
nd::Var<T> seg_loss(nd::Var<T> logits, const nd::Tensor<T>& target) {
  return nd::bce_with_logits_mean(logits, target, T(1e-7));
}

// Per-layer L1 distance between extractor features of prediction and target,
// each layer scaled by 1/(H_l*W_l), summed over layers, averaged over batch.
template <typename T>
nd::Var<T> ocr_lpips(nd::Tape<T>& t, nd::Var<T> pred_probs, nd::Var<T> target,
                     const FeatureExtractor<T>& fx) {
  const auto& sp = t.value(pred_probs).shape;
  const auto& st = t.value(target).shape;
  if (sp != st) {
    throw ShapeError("ocr_lpips operands disagree: " + nd::shape_str(sp) + " vs " +
                     nd::shape_str(st));
  }
  const long long batch = sp.empty() ? 1 : sp[0];
  auto fp = extract_features(t, pred_probs, fx);
  auto ft = extract_features(t, target, fx);
  nd::Var<T> acc;
  for (size_t l = 0; l < fp.size(); ++l) {
    const auto& fs = t.value(fp[l]).shape;
    const T norm = T(1) / static_cast<T>(fs[2] * fs[3]);
    auto term = nd::scale(nd::sum_all(nd::abs(nd::sub(fp[l], ft[l]))), norm);
    acc = l == 0 ? term : nd::add(acc, term);
  }
  return nd::scale(acc, T(1) / static_cast<T>(batch));
}

// Two-direction InfoNCE over an aligned batch of image and text embeddings.
// Rows are L2-normalized; similarity is their dot product over temperature.
template <typename T>
nd::Var<T> batch_contrastive(nd::Tape<T>& t, nd::Var<T> img, nd::Var<T> txt,
                             T temperature = T(1)) {
  const auto& si = t.value(img).shape;
  const auto& st = t.value(txt).shape;
  if (si.size() != 2 || si != st) {
    throw ShapeError("contrastive embeddings disagree: " + nd::shape_str(si) + " vs " +
                     nd::shape_str(st));
  }
  if (!(temperature > T(0))) throw ValidationError("temperature must be positive");
  auto in = nd::l2_normalize_rows(img);
  auto tn = nd::l2_normalize_rows(txt);
  auto sim = nd::scale(nd::matmul(in, nd::transpose_last2(tn)), T(1) / temperature);
  auto dir_ce = [&](nd::Var<T> s) {
    return nd::mean_all(nd::sub(nd::logsumexp_last(s), nd::take_diag(s)));
  };
  return nd::add(dir_ce(sim), dir_ce(nd::transpose_last2(sim)));
}

inline double total_loss(double seg, double ocr, double bc, const LossWeights& w = {}) {
  w.validate();
  if (std::isnan(seg)) throw NumericError("seg loss is NaN");
  if (std::isnan(ocr)) throw NumericError("ocr loss is NaN");
  if (std::isnan(bc)) throw NumericError("bc loss is NaN");
  return w.alpha * seg + w.beta * ocr + w.gamma * bc;
}

template <typename T>
nd::Var<T> total_loss(nd::Var<T> seg, nd::Var<T> ocr, nd::Var<T> bc,
                      const LossWeights& w = {}) {
  w.validate();
  nd::Tape<T>& t = *seg.tape;
  if (std::isnan(static_cast<double>(t.value(seg).data[0]))) {
    throw NumericError("seg loss is NaN");
  }
  if (std::isnan(static_cast<double>(t.value(ocr).data[0]))) {
    throw NumericError("ocr loss is NaN");
  }
  if (std::isnan(static_cast<double>(t.value(bc).data[0]))) {
    throw NumericError("bc loss is NaN");
  }
  return nd::add(nd::add(nd::scale(seg, static_cast<T>(w.alpha)),
                         nd::scale(ocr, static_cast<T>(w.beta))),
                 nd::scale(bc, static_cast<T>(w.gamma)));
}

}  // namespace odm::loss
