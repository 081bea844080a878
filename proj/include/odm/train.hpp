#pragma once

// Pre-training loop: controller-augmented batches through the model and the
// three-part objective, Adam updates, CSV metrics, binary checkpoints.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odm/builtin_font.hpp"
#include "odm/control.hpp"
#include "odm/errors.hpp"
#include "odm/glyph.hpp"
#include "odm/loss.hpp"
#include "odm/model.hpp"
#include "odm/nd.hpp"

namespace odm::train {

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t_step = 0;
  std::map<std::string, nd::Tensor<T>> m, v;

  void step(std::map<std::string, nd::Tensor<T>>& params,
            const std::map<std::string, nd::Tensor<T>>& grads) {
    ++t_step;
    const double c1 = 1.0 - std::pow(beta1, double(t_step));
    const double c2 = 1.0 - std::pow(beta2, double(t_step));
    for (auto& [name, p] : params) {
      auto git = grads.find(name);
      if (git == grads.end()) throw ValidationError("missing gradient for " + name);
      const auto& g = git->second;
      if (g.shape != p.shape) throw ShapeError("gradient shape mismatch for " + name);
      auto& mm = m.try_emplace(name, nd::Tensor<T>::zeros(p.shape)).first->second;
      auto& vv = v.try_emplace(name, nd::Tensor<T>::zeros(p.shape)).first->second;
      for (size_t i = 0; i < p.data.size(); ++i) {
        const double gi = double(g.data[i]);
        mm.data[i] = T(beta1 * double(mm.data[i]) + (1.0 - beta1) * gi);
        vv.data[i] = T(beta2 * double(vv.data[i]) + (1.0 - beta2) * gi * gi);
        const double mh = double(mm.data[i]) / c1;
        const double vh = double(vv.data[i]) / c2;
        p.data[i] = T(double(p.data[i]) - lr * mh / (std::sqrt(vh) + eps));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Config

struct TrainConfig {
  double learning_rate = 1e-4;
  long long batch_size = 4;
  long long steps = 500;
  long long checkpoint_every = 0;  // 0 = final checkpoint only
  std::uint64_t seed = 0;
  model::OdmConfig model = model::OdmConfig::desk();
  control::ControllerConfig controller;
  loss::LossWeights weights;
  double temperature = 1.0;
  std::uint64_t extractor_seed = 0;
  std::string extractor_weights;  // overrides extractor_seed when non-empty

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (batch_size < 1) throw ValidationError("batch size must be at least 1");
    if (steps < 0 || checkpoint_every < 0) throw ValidationError("step counts must be >= 0");
    if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
    model.validate();
    controller.validate();
    weights.validate();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["steps"] = steps;
    j["checkpoint_every"] = checkpoint_every;
    j["seed"] = seed;
    j["image_size"] = model.image_size;
    j["model"] = {{"embed_dim", model.embed_dim},
                  {"enc_channels", model.enc_channels},
                  {"text_depth", model.text_depth},
                  {"text_heads", model.text_heads},
                  {"max_instances", model.max_instances},
                  {"max_len", model.max_len}};
    j["controller"] = {{"drop_keep_ratio",
                        nlohmann::json::array({controller.keep_ratio_min,
                                               controller.keep_ratio_max})},
                       {"noise_count",
                        nlohmann::json::array({controller.noise_min, controller.noise_max})},
                       {"seed", controller.seed}};
    j["loss"] = {{"alpha", weights.alpha},
                 {"beta", weights.beta},
                 {"gamma", weights.gamma},
                 {"temperature", temperature}};
    if (!extractor_weights.empty()) {
      j["loss"]["extractor_weights"] = extractor_weights;
    } else {
      j["loss"]["extractor_seed"] = extractor_seed;
    }
    return j;
  }

  static TrainConfig from_json(const nlohmann::json& j);

  static TrainConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open config: " + path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("config json: ") + e.what());
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write config: " + path);
    f << to_json().dump(2) << "\n";
  }

  // FNV-1a over the canonical serialization; stored in checkpoints so a
  // reload against a different config is rejected early.
  std::uint64_t hash() const {
    const std::string s = to_json().dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                           const std::string& scope) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw SchemaError(scope.empty() ? key : scope + "." + key, "unknown config key");
  }
}

// Accepts a bare number (fixed value) or a [lo, hi] pair.
template <typename V>
std::pair<V, V> range_of(const nlohmann::json& j, const std::string& name) {
  if (j.is_array()) {
    if (j.size() != 2) throw SchemaError(name, "range needs exactly [lo, hi]");
    return {j[0].get<V>(), j[1].get<V>()};
  }
  if (!j.is_number()) throw SchemaError(name, "expected number or [lo, hi]");
  const V v = j.get<V>();
  return {v, v};
}

}  // namespace detail

inline TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  detail::reject_unknown(j,
                         {"learning_rate", "batch_size", "steps", "checkpoint_every", "seed",
                          "image_size", "model", "controller", "loss"},
                         "");
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<long long>();
  if (j.contains("steps")) c.steps = j["steps"].get<long long>();
  if (j.contains("checkpoint_every")) c.checkpoint_every = j["checkpoint_every"].get<long long>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("image_size")) c.model.image_size = j["image_size"].get<long long>();

  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::reject_unknown(
        m, {"embed_dim", "enc_channels", "text_depth", "text_heads", "max_instances", "max_len"},
        "model");
    if (m.contains("embed_dim")) c.model.embed_dim = m["embed_dim"].get<long long>();
    if (m.contains("enc_channels")) {
      c.model.enc_channels = m["enc_channels"].get<std::vector<long long>>();
    }
    if (m.contains("text_depth")) c.model.text_depth = m["text_depth"].get<long long>();
    if (m.contains("text_heads")) c.model.text_heads = m["text_heads"].get<long long>();
    if (m.contains("max_instances")) c.model.max_instances = m["max_instances"].get<long long>();
    if (m.contains("max_len")) c.model.max_len = m["max_len"].get<long long>();
  }
  if (j.contains("controller")) {
    const auto& cc = j["controller"];
    detail::reject_unknown(cc, {"drop_keep_ratio", "noise_count", "seed"}, "controller");
    if (cc.contains("drop_keep_ratio")) {
      auto [lo, hi] = detail::range_of<double>(cc["drop_keep_ratio"], "controller.drop_keep_ratio");
      c.controller.keep_ratio_min = lo;
      c.controller.keep_ratio_max = hi;
    }
    if (cc.contains("noise_count")) {
      auto [lo, hi] = detail::range_of<long long>(cc["noise_count"], "controller.noise_count");
      c.controller.noise_min = lo;
      c.controller.noise_max = hi;
    }
    if (cc.contains("seed")) c.controller.seed = cc["seed"].get<std::uint64_t>();
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    detail::reject_unknown(
        l, {"alpha", "beta", "gamma", "temperature", "extractor_seed", "extractor_weights"},
        "loss");
    if (l.contains("alpha")) c.weights.alpha = l["alpha"].get<double>();
    if (l.contains("beta")) c.weights.beta = l["beta"].get<double>();
    if (l.contains("gamma")) c.weights.gamma = l["gamma"].get<double>();
    if (l.contains("temperature")) c.temperature = l["temperature"].get<double>();
    if (l.contains("extractor_seed")) c.extractor_seed = l["extractor_seed"].get<std::uint64_t>();
    if (l.contains("extractor_weights")) {
      c.extractor_weights = l["extractor_weights"].get<std::string>();
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Samples and state

template <typename T>
struct Sample {
  annot::SceneAnnotation ann;
  nd::Tensor<T> image;  // 1 x 3 x H x W in [0,1]
  std::uint64_t index = 0;  // stable identity for the controller stream
};

template <typename T>
struct TrainState {
  TrainConfig cfg;
  model::OdmModel<T> net;
  Adam<T> opt;
  loss::FeatureExtractor<T> fx;
  glyph::GlyphSet font;
  model::Charset charset;
  long long step = 0;
};

template <typename T>
TrainState<T> init_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState<T> s;
  s.cfg = cfg;
  s.net = model::OdmModel<T>::init(cfg.model, cfg.seed);
  s.opt.lr = cfg.learning_rate;
  s.fx = cfg.extractor_weights.empty()
             ? loss::FeatureExtractor<T>::seeded(cfg.extractor_seed)
             : loss::FeatureExtractor<T>::load(cfg.extractor_weights);
  s.font = glyph::builtin_font();
  return s;
}

struct StepStats {
  double seg = 0.0;
  double ocr = 0.0;
  double bc = 0.0;
  double total = 0.0;
};

namespace detail {

template <typename T>
nd::Tensor<T> stack_images(const std::vector<const Sample<T>*>& batch) {
  const auto& s0 = batch[0]->image.shape;
  nd::Tensor<T> out = nd::Tensor<T>::zeros({(long long)batch.size(), s0[1], s0[2], s0[3]});
  const size_t per = batch[0]->image.data.size();
  for (size_t b = 0; b < batch.size(); ++b) {
    if (batch[b]->image.shape != s0) throw ShapeError("batch images disagree in shape");
    std::copy(batch[b]->image.data.begin(), batch[b]->image.data.end(),
              out.data.begin() + b * per);
  }
  return out;
}

template <typename T>
nd::Tensor<T> labels_to_tensor(const std::vector<glyph::LabelCanvas>& labels) {
  const long long h = labels[0].height, w = labels[0].width;
  nd::Tensor<T> out = nd::Tensor<T>::zeros({(long long)labels.size(), 1, h, w});
  for (size_t b = 0; b < labels.size(); ++b) {
    for (size_t i = 0; i < labels[b].pixels.size(); ++i) {
      out.data[b * size_t(h * w) + i] = T(labels[b].pixels[i]);
    }
  }
  return out;
}

}  // namespace detail

// One optimizer update over a batch: controller, target render, forward,
// weighted objective, backward, Adam.
template <typename T>
StepStats train_step(TrainState<T>& st, const std::vector<const Sample<T>*>& batch,
                     std::uint64_t epoch, std::vector<std::string>* warnings = nullptr) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  const auto& cfg = st.cfg;

  std::vector<std::vector<std::string>> texts;
  std::vector<glyph::LabelCanvas> labels;
  std::string ids;
  for (const Sample<T>* s : batch) {
    auto cs = control::make_controlled_sample(s->ann, st.font, cfg.model.image_size,
                                              cfg.model.image_size, cfg.controller, epoch,
                                              s->index, warnings);
    texts.push_back(std::move(cs.texts));
    labels.push_back(std::move(cs.target));
    ids += (ids.empty() ? "" : ", ") + s->ann.image_id;
  }

  nd::Tape<T> t;
  StepStats stats;
  try {
    auto tokens = model::tokenize(texts, st.charset, cfg.model.max_instances, cfg.model.max_len,
                                  warnings);
    auto imgs = detail::stack_images(batch);
    auto targets = detail::labels_to_tensor<T>(labels);

    auto out = model::forward(t, st.net, imgs, tokens);
    auto seg = loss::seg_loss(out.logits, targets);
    auto ocr = loss::ocr_lpips(t, nd::sigmoid(out.logits), t.leaf(targets), st.fx);
    auto bc = loss::batch_contrastive(t, out.img_embed, out.txt_embed, T(cfg.temperature));
    auto total = loss::total_loss(seg, ocr, bc, cfg.weights);

    stats.seg = double(t.value(seg).data[0]);
    stats.ocr = double(t.value(ocr).data[0]);
    stats.bc = double(t.value(bc).data[0]);
    stats.total = double(t.value(total).data[0]);
    if (!std::isfinite(stats.total)) throw NumericError("total loss is not finite");

    t.backward(total);
    std::map<std::string, nd::Tensor<T>> grads;
    for (const auto& [name, var] : out.params.vars) grads[name] = t.grad(var);
    st.opt.step(st.net.params, grads);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + "; batch samples: " + ids);
  }
  ++st.step;
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoints. Binary little-endian layout (see docs/checkpoint_format.md):
//   magic "ODMCKPT1" | u32 version=1 | u64 config_hash | u64 step |
//   param table | u64 adam_t | adam m table | adam v table
// where a table is u32 count then per entry: u32 name_len, name bytes,
// u32 rank, u64 dim..., f64 value... (values always stored as float64).

namespace detail {

inline void put_bytes(std::ostream& f, const void* p, size_t n) {
  f.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}
template <typename V>
void put_pod(std::ostream& f, V v) {
  put_bytes(f, &v, sizeof v);
}

template <typename T>
void put_table(std::ostream& f, const std::map<std::string, nd::Tensor<T>>& table) {
  put_pod<std::uint32_t>(f, std::uint32_t(table.size()));
  for (const auto& [name, t] : table) {
    put_pod<std::uint32_t>(f, std::uint32_t(name.size()));
    put_bytes(f, name.data(), name.size());
    put_pod<std::uint32_t>(f, std::uint32_t(t.shape.size()));
    for (long long d : t.shape) put_pod<std::uint64_t>(f, std::uint64_t(d));
    for (const T& v : t.data) put_pod<double>(f, double(v));
  }
}

struct Reader {
  std::ifstream f;
  long long pos = 0;
  std::string path;

  void read_bytes(void* p, size_t n) {
    f.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (std::size_t(f.gcount()) != n) {
      throw FormatError(path + ": truncated checkpoint", pos);
    }
    pos += (long long)n;
  }
  template <typename V>
  V pod() {
    V v;
    read_bytes(&v, sizeof v);
    return v;
  }
  template <typename T>
  std::map<std::string, nd::Tensor<T>> table() {
    std::map<std::string, nd::Tensor<T>> out;
    const auto count = pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto name_len = pod<std::uint32_t>();
      if (name_len > 4096) throw FormatError(path + ": implausible name length", pos);
      std::string name(name_len, '\0');
      read_bytes(name.data(), name_len);
      const auto rank = pod<std::uint32_t>();
      if (rank > 8) throw FormatError(path + ": implausible tensor rank", pos);
      nd::Shape shape;
      long long total = 1;
      for (std::uint32_t r = 0; r < rank; ++r) {
        shape.push_back((long long)pod<std::uint64_t>());
        if (shape.back() <= 0 || total > (1LL << 40) / std::max(shape.back(), 1LL)) {
          throw FormatError(path + ": implausible tensor shape", pos);
        }
        total *= shape.back();
      }
      auto t = nd::Tensor<T>::zeros(shape);
      for (auto& v : t.data) v = T(pod<double>());
      out.emplace(std::move(name), std::move(t));
    }
    return out;
  }
};

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'O', 'D', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const TrainState<T>& st) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write checkpoint: " + path);
  detail::put_bytes(f, kCheckpointMagic, 8);
  detail::put_pod<std::uint32_t>(f, kCheckpointVersion);
  detail::put_pod<std::uint64_t>(f, st.cfg.hash());
  detail::put_pod<std::uint64_t>(f, std::uint64_t(st.step));
  detail::put_table(f, st.net.params);
  detail::put_pod<std::uint64_t>(f, std::uint64_t(st.opt.t_step));
  detail::put_table(f, st.opt.m);
  detail::put_table(f, st.opt.v);
  if (!f) throw FormatError("short write: " + path);
}

template <typename T>
TrainState<T> load_checkpoint(const std::string& path, const TrainConfig& cfg) {
  detail::Reader r;
  r.path = path;
  r.f.open(path, std::ios::binary);
  if (!r.f) throw FormatError("cannot open checkpoint: " + path);

  char magic[8];
  r.read_bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw FormatError(path + ": not a checkpoint file", 0);
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version), 8);
  }
  const auto hash = r.pod<std::uint64_t>();
  if (hash != cfg.hash()) {
    throw FormatError(path + ": checkpoint was written with a different config", 12);
  }

  TrainState<T> st = init_state<T>(cfg);
  st.step = (long long)r.pod<std::uint64_t>();
  auto params = r.table<T>();
  if (params.size() != st.net.params.size()) {
    throw FormatError(path + ": parameter table size mismatch", r.pos);
  }
  for (auto& [name, t] : st.net.params) {
    auto it = params.find(name);
    if (it == params.end() || it->second.shape != t.shape) {
      throw FormatError(path + ": parameter " + name + " missing or reshaped", r.pos);
    }
    t = std::move(it->second);
  }
  st.opt.t_step = (long long)r.pod<std::uint64_t>();
  st.opt.m = r.table<T>();
  st.opt.v = r.table<T>();
  return st;
}

// ---------------------------------------------------------------------------
// Full loop

inline constexpr const char* kMetricsHeader = "step,seg,ocr,bc,total";

// Deterministic shuffled order per epoch; rejection-sampled swaps keep the
// permutation identical across platforms.
inline std::vector<size_t> epoch_order(size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = control::sample_stream(seed, epoch, 0x0d7a);
  for (size_t i = n; i > 1; --i) {
    const size_t j = size_t(control::uniform_below(rng, i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

template <typename T>
TrainState<T> fit(const std::vector<Sample<T>>& dataset, const TrainConfig& cfg,
                  std::ostream* metrics = nullptr, const std::string& checkpoint_path = "",
                  std::vector<StepStats>* history = nullptr,
                  std::vector<std::string>* warnings = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw ValidationError("fit: empty dataset");

  TrainState<T> st = init_state<T>(cfg);
  if (metrics) *metrics << kMetricsHeader << "\n";

  std::uint64_t epoch = 0;
  auto order = epoch_order(dataset.size(), cfg.seed, epoch);
  size_t cursor = 0;
  for (long long step = 0; step < cfg.steps; ++step) {
    std::vector<const Sample<T>*> batch;
    for (long long b = 0; b < cfg.batch_size && cursor < order.size(); ++b) {
      batch.push_back(&dataset[order[cursor++]]);
    }
    auto stats = train_step(st, batch, epoch, warnings);
    if (cursor >= order.size()) {
      ++epoch;
      order = epoch_order(dataset.size(), cfg.seed, epoch);
      cursor = 0;
    }
    if (history) history->push_back(stats);
    if (metrics) {
      (*metrics) << st.step << "," << stats.seg << "," << stats.ocr << "," << stats.bc << ","
                 << stats.total << "\n";
    }
    if (cfg.checkpoint_every > 0 && !checkpoint_path.empty() &&
        st.step % cfg.checkpoint_every == 0 && st.step < cfg.steps) {
      save_checkpoint(checkpoint_path + ".step" + std::to_string(st.step), st);
    }
  }
  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, st);
  return st;
}

}  // namespace odm::train
