#pragma once

// The destylization network: byte tokenizer, residual conv image encoder
// (stride 8), small transformer text encoder with PAD masking, single-head
// cross-attention fusing text instances into image positions, and an
// upsampling decoder back to a one-channel logit map.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "odm/errors.hpp"
#include "odm/nd.hpp"

namespace odm::model {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 96;
inline constexpr int kCharsetSize = 97;

// id 0 = PAD, ids 1..95 = printable ASCII 0x20..0x7E in code order, 96 = UNK.
struct Charset {
  int size() const { return kCharsetSize; }

  int encode(unsigned char c) const {
    if (c >= 0x20 && c <= 0x7E) return int(c) - 0x20 + 1;
    return kUnkId;
  }

  // PAD decodes to NUL, UNK to SUB; covered ids round-trip.
  char decode(int id) const {
    if (id <= kPadId || id >= kUnkId) return id == kUnkId ? '\x1a' : '\0';
    return static_cast<char>(id - 1 + 0x20);
  }
};

struct TokenBatch {
  long long batch = 0;
  long long max_instances = 0;
  long long max_len = 0;
  nd::Tensor<long long> ids;       // B x M x L
  std::vector<uint8_t> mask;       // B x M, 1 = instance present

  bool present(long long b, long long m) const {
    return mask[static_cast<size_t>(b * max_instances + m)] != 0;
  }
  long long id_at(long long b, long long m, long long l) const {
    return ids.data[static_cast<size_t>((b * max_instances + m) * max_len + l)];
  }
};

// Encodes one list of instance strings per batch element. Excess instances
// beyond max_instances are dropped with a warning; over-long strings are
// silently truncated to max_len ids.
inline TokenBatch tokenize(const std::vector<std::vector<std::string>>& batch_texts,
                           const Charset& cs, long long max_instances = 32,
                           long long max_len = 25,
                           std::vector<std::string>* warnings = nullptr) {
  TokenBatch tb;
  tb.batch = static_cast<long long>(batch_texts.size());
  tb.max_instances = max_instances;
  tb.max_len = max_len;
  tb.ids = nd::Tensor<long long>::zeros({tb.batch, max_instances, max_len});
  tb.mask.assign(static_cast<size_t>(tb.batch * max_instances), 0);
  for (long long b = 0; b < tb.batch; ++b) {
    const auto& texts = batch_texts[static_cast<size_t>(b)];
    if (static_cast<long long>(texts.size()) > max_instances && warnings) {
      warnings->push_back("batch element " + std::to_string(b) + ": " +
                          std::to_string(texts.size()) + " instances, keeping first " +
                          std::to_string(max_instances));
    }
    const long long n = std::min<long long>(static_cast<long long>(texts.size()), max_instances);
    for (long long m = 0; m < n; ++m) {
      tb.mask[static_cast<size_t>(b * max_instances + m)] = 1;
      const std::string& s = texts[static_cast<size_t>(m)];
      const long long len = std::min<long long>(static_cast<long long>(s.size()), max_len);
      for (long long l = 0; l < len; ++l) {
        tb.ids.data[static_cast<size_t>((b * max_instances + m) * max_len + l)] =
            cs.encode(static_cast<unsigned char>(s[static_cast<size_t>(l)]));
      }
    }
  }
  return tb;
}

inline TokenBatch tokenize(const std::vector<std::string>& texts, const Charset& cs,
                           long long max_instances = 32, long long max_len = 25,
                           std::vector<std::string>* warnings = nullptr) {
  return tokenize(std::vector<std::vector<std::string>>{texts}, cs, max_instances, max_len,
                  warnings);
}

struct OdmConfig {
  long long image_size = 512;
  long long embed_dim = 256;
  std::vector<long long> enc_channels = {64, 128, 256};  // one stride-2 stage each
  long long text_depth = 6;
  long long text_heads = 8;
  long long max_instances = 32;
  long long max_len = 25;

  long long stride() const { return 1LL << enc_channels.size(); }

  static OdmConfig desk() {
    OdmConfig c;
    c.image_size = 128;
    c.embed_dim = 64;
    c.enc_channels = {16, 32, 64};
    c.text_depth = 2;
    c.text_heads = 4;
    return c;
  }

  void validate() const {
    if (enc_channels.empty()) throw ValidationError("config: encoder needs at least one stage");
    if (image_size <= 0 || image_size % stride() != 0) {
      throw ValidationError("config: image size " + std::to_string(image_size) +
                            " must be a positive multiple of the encoder stride " +
                            std::to_string(stride()));
    }
    if (embed_dim <= 0 || text_heads <= 0 || embed_dim % text_heads != 0) {
      throw ValidationError("config: embed dim must be a positive multiple of head count");
    }
    if (text_depth < 1 || max_instances < 1 || max_len < 1) {
      throw ValidationError("config: depth, instance and length caps must be positive");
    }
  }
};

template <typename T>
struct OdmModel {
  OdmConfig cfg;
  std::map<std::string, nd::Tensor<T>> params;

  static OdmModel init(const OdmConfig& cfg, uint64_t seed);
};

namespace detail {

template <typename T>
struct Init {
  std::mt19937_64 rng;
  std::map<std::string, nd::Tensor<T>>* out;

  void normal(const std::string& name, nd::Shape shape, double sd) {
    std::normal_distribution<double> d(0.0, sd);
    auto t = nd::Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(d(rng));
    (*out)[name] = std::move(t);
  }
  void conv(const std::string& name, long long o, long long i, long long k) {
    normal(name, {o, i, k, k}, std::sqrt(2.0 / double(i * k * k)));
  }
  void linear(const std::string& name, long long i, long long o) {
    normal(name, {i, o}, std::sqrt(1.0 / double(i)));
  }
  void zeros(const std::string& name, nd::Shape shape) {
    (*out)[name] = nd::Tensor<T>::zeros(std::move(shape));
  }
  void ones(const std::string& name, nd::Shape shape) {
    (*out)[name] = nd::Tensor<T>::full(std::move(shape), T(1));
  }
};

}  // namespace detail

template <typename T>
OdmModel<T> OdmModel<T>::init(const OdmConfig& cfg, uint64_t seed) {
  cfg.validate();
  OdmModel<T> m;
  m.cfg = cfg;
  detail::Init<T> ini{std::mt19937_64(seed), &m.params};
  const long long d = cfg.embed_dim;

  long long cin = 3;
  for (size_t s = 0; s < cfg.enc_channels.size(); ++s) {
    const long long cout = cfg.enc_channels[s];
    const std::string p = "img.s" + std::to_string(s) + ".";
    ini.conv(p + "down.w", cout, cin, 3);
    ini.zeros(p + "down.b", {cout, 1, 1});
    ini.conv(p + "refine.w", cout, cout, 3);
    ini.zeros(p + "refine.b", {cout, 1, 1});
    ini.conv(p + "skip.w", cout, cin, 1);
    cin = cout;
  }

  ini.normal("txt.embed", {kCharsetSize, d}, 0.02);
  ini.normal("txt.pos", {cfg.max_len, d}, 0.02);
  for (long long l = 0; l < cfg.text_depth; ++l) {
    const std::string p = "txt.l" + std::to_string(l) + ".";
    ini.ones(p + "ln1.g", {d});
    ini.zeros(p + "ln1.b", {d});
    for (const char* w : {"wq", "wk", "wv", "wo"}) ini.linear(p + "attn." + std::string(w), d, d);
    for (const char* b : {"bq", "bk", "bv", "bo"}) ini.zeros(p + "attn." + std::string(b), {d});
    ini.ones(p + "ln2.g", {d});
    ini.zeros(p + "ln2.b", {d});
    ini.linear(p + "mlp.w1", d, 2 * d);
    ini.zeros(p + "mlp.b1", {2 * d});
    ini.linear(p + "mlp.w2", 2 * d, d);
    ini.zeros(p + "mlp.b2", {d});
  }
  ini.ones("txt.lnf.g", {d});
  ini.zeros("txt.lnf.b", {d});

  const long long ctop = cfg.enc_channels.back();
  ini.conv("cross.proj.w", d, ctop, 1);
  ini.zeros("cross.proj.b", {d, 1, 1});
  for (const char* w : {"wq", "wk", "wv", "wo"}) ini.linear(std::string("cross.") + w, d, d);
  for (const char* b : {"bq", "bk", "bv", "bo"}) ini.zeros(std::string("cross.") + b, {d});

  ini.linear("emb.img.w", d, d);
  ini.zeros("emb.img.b", {d});

  const auto& ch = cfg.enc_channels;
  long long dec_in = d;
  const long long levels = static_cast<long long>(ch.size());
  for (long long l = 0; l < levels; ++l) {
    const long long idx = static_cast<long long>(ch.size()) - 2 - l;
    const long long dec_out = idx >= 0 ? ch[static_cast<size_t>(idx)] : ch[0];
    const std::string p = "dec.l" + std::to_string(l) + ".";
    const long long tap = levels - 1 - l;
    const long long lat_in = tap == 0 ? 3 : ch[static_cast<size_t>(tap - 1)];
    ini.conv(p + "lat.w", dec_in, lat_in, 1);
    ini.zeros(p + "lat.b", {dec_in, 1, 1});
    ini.conv(p + "w", dec_out, dec_in, 1);
    ini.zeros(p + "b", {dec_out, 1, 1});
    dec_in = dec_out;
  }
  ini.conv("dec.head.w", 1, dec_in, 1);
  ini.zeros("dec.head.b", {1, 1, 1});
  return m;
}

// Model parameters lifted onto a tape as leaf variables, so their gradients
// can be read back after a backward pass.
template <typename T>
struct Lifted {
  std::map<std::string, nd::Var<T>> vars;

  nd::Var<T> at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
  }
};

template <typename T>
Lifted<T> lift(nd::Tape<T>& t, const OdmModel<T>& m) {
  Lifted<T> lp;
  for (const auto& [name, tensor] : m.params) lp.vars[name] = t.leaf(tensor);
  return lp;
}

// ---------------------------------------------------------------------------
// Image encoder: per stage, a stride-2 3x3 conv plus refine conv with a
// stride-2 1x1 skip projection. When `taps` is given it receives the input
// leaf and every stage output, finest first, for the decoder's laterals.

template <typename T>
nd::Var<T> encode_image(nd::Tape<T>& t, const Lifted<T>& P, const OdmConfig& cfg,
                        const nd::Tensor<T>& img, std::vector<nd::Var<T>>* taps = nullptr) {
  if (img.rank() != 4 || img.shape[1] != 3 || img.shape[2] != cfg.image_size ||
      img.shape[3] != cfg.image_size) {
    throw ShapeError("encode_image expects [Bx3x" + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + "], got " + nd::shape_str(img.shape));
  }
  nd::Var<T> x = t.leaf(img);
  if (taps) {
    taps->clear();
    taps->push_back(x);
  }
  for (size_t s = 0; s < cfg.enc_channels.size(); ++s) {
    const std::string p = "img.s" + std::to_string(s) + ".";
    auto main = nd::relu(nd::add(nd::conv2d(x, P.at(p + "down.w"), 2, 1), P.at(p + "down.b")));
    main = nd::add(nd::conv2d(main, P.at(p + "refine.w"), 1, 1), P.at(p + "refine.b"));
    auto skip = nd::conv2d(x, P.at(p + "skip.w"), 2, 0);
    x = nd::relu(nd::add(main, skip));
    if (taps) taps->push_back(x);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Text encoder: token + position embeddings, pre-LN transformer blocks with
// PAD keys masked out of self-attention, masked mean pooling per instance.

template <typename T>
struct TextEncoding {
  nd::Var<T> inst;    // B x M x d
  nd::Var<T> pooled;  // B x d
};

namespace detail {

template <typename T>
nd::Var<T> affine_ln(nd::Tape<T>&, nd::Var<T> x, nd::Var<T> g, nd::Var<T> b) {
  return nd::add(nd::mul(nd::layer_norm_last(x), g), b);
}

template <typename T>
nd::Var<T> linear(nd::Var<T> x, nd::Var<T> w, nd::Var<T> b) {
  return nd::add(nd::matmul(x, w), b);
}

}  // namespace detail

template <typename T>
TextEncoding<T> encode_text(nd::Tape<T>& t, const Lifted<T>& P, const OdmConfig& cfg,
                            const TokenBatch& tokens) {
  const long long B = tokens.batch, M = tokens.max_instances, L = tokens.max_len;
  const long long d = cfg.embed_dim, H = cfg.text_heads, dh = d / H;
  if (L != cfg.max_len) {
    throw ShapeError("token length " + std::to_string(L) + " does not match config " +
                     std::to_string(cfg.max_len));
  }
  for (long long b = 0; b < B; ++b) {
    bool any = false;
    for (long long m = 0; m < M; ++m) any = any || tokens.present(b, m);
    if (!any) {
      throw ValidationError("encode_text: batch element " + std::to_string(b) +
                            " has no present instances");
    }
  }

  nd::Tensor<long long> flat_ids({B * M, L}, tokens.ids.data);
  auto x = nd::add(nd::embedding(P.at("txt.embed"), flat_ids), P.at("txt.pos"));

  // -1e9 on PAD keys keeps them out of every softmax row.
  auto key_bias = nd::Tensor<T>::zeros({B * M, 1, 1, L});
  for (long long r = 0; r < B * M; ++r) {
    for (long long l = 0; l < L; ++l) {
      if (tokens.ids.data[static_cast<size_t>(r * L + l)] == kPadId) {
        key_bias.data[static_cast<size_t>(r * L + l)] = T(-1e9);
      }
    }
  }
  auto bias = t.leaf(key_bias);

  for (long long layer = 0; layer < cfg.text_depth; ++layer) {
    const std::string p = "txt.l" + std::to_string(layer) + ".";
    auto h = detail::affine_ln(t, x, P.at(p + "ln1.g"), P.at(p + "ln1.b"));
    auto split_heads = [&](nd::Var<T> v) {
      return nd::permute(nd::reshape(v, {B * M, L, H, dh}), {0, 2, 1, 3});
    };
    auto q = split_heads(detail::linear(h, P.at(p + "attn.wq"), P.at(p + "attn.bq")));
    auto k = split_heads(detail::linear(h, P.at(p + "attn.wk"), P.at(p + "attn.bk")));
    auto v = split_heads(detail::linear(h, P.at(p + "attn.wv"), P.at(p + "attn.bv")));
    auto scores = nd::scale(nd::matmul(q, nd::transpose_last2(k)),
                            T(1) / static_cast<T>(std::sqrt(double(dh))));
    auto attnw = nd::softmax_last(nd::add(scores, bias));
    auto ctx = nd::reshape(nd::permute(nd::matmul(attnw, v), {0, 2, 1, 3}), {B * M, L, d});
    x = nd::add(x, detail::linear(ctx, P.at(p + "attn.wo"), P.at(p + "attn.bo")));

    auto h2 = detail::affine_ln(t, x, P.at(p + "ln2.g"), P.at(p + "ln2.b"));
    auto mid = nd::relu(detail::linear(h2, P.at(p + "mlp.w1"), P.at(p + "mlp.b1")));
    x = nd::add(x, detail::linear(mid, P.at(p + "mlp.w2"), P.at(p + "mlp.b2")));
  }
  x = detail::affine_ln(t, x, P.at("txt.lnf.g"), P.at("txt.lnf.b"));

  // Mean over non-PAD positions; an all-PAD (empty string) instance falls
  // back to a uniform mean so it still yields a finite vector.
  auto pool_w = nd::Tensor<T>::zeros({B * M, L, 1});
  for (long long r = 0; r < B * M; ++r) {
    long long count = 0;
    for (long long l = 0; l < L; ++l) {
      if (tokens.ids.data[static_cast<size_t>(r * L + l)] != kPadId) ++count;
    }
    const T w = count > 0 ? T(1) / static_cast<T>(count) : T(1) / static_cast<T>(L);
    for (long long l = 0; l < L; ++l) {
      if (count == 0 || tokens.ids.data[static_cast<size_t>(r * L + l)] != kPadId) {
        pool_w.data[static_cast<size_t>(r * L + l)] = w;
      }
    }
  }
  auto weighted = nd::mul(x, t.leaf(pool_w));
  auto inst = nd::reshape(nd::sum_last(nd::transpose_last2(weighted)), {B, M, d});

  auto inst_w = nd::Tensor<T>::zeros({B, M, 1});
  for (long long b = 0; b < B; ++b) {
    long long count = 0;
    for (long long m = 0; m < M; ++m) count += tokens.present(b, m) ? 1 : 0;
    for (long long m = 0; m < M; ++m) {
      if (tokens.present(b, m)) {
        inst_w.data[static_cast<size_t>(b * M + m)] = T(1) / static_cast<T>(count);
      }
    }
  }
  auto pooled = nd::sum_last(nd::transpose_last2(nd::mul(inst, t.leaf(inst_w))));
  return {inst, pooled};
}

// ---------------------------------------------------------------------------
// Cross-attention: image positions query text instances.

template <typename T>
struct CrossAttendResult {
  nd::Var<T> fused;      // B x d x H' x W'
  nd::Var<T> attn;       // B x M x (H'*W'), rows sum to 1 for present instances
  nd::Var<T> projected;  // B x P x d image tokens before fusion
};

template <typename T>
CrossAttendResult<T> cross_attend(nd::Tape<T>& t, const Lifted<T>& P, const OdmConfig& cfg,
                                  nd::Var<T> feats, nd::Var<T> inst,
                                  const std::vector<uint8_t>& mask) {
  const auto& fs = t.value(feats).shape;
  const auto& is = t.value(inst).shape;
  const long long d = cfg.embed_dim;
  if (fs.size() != 4 || fs[1] != cfg.enc_channels.back()) {
    throw ShapeError("cross_attend feats must be [Bx" + std::to_string(cfg.enc_channels.back()) +
                     "xH'xW'], got " + nd::shape_str(fs));
  }
  if (is.size() != 3 || is[2] != d || is[0] != fs[0]) {
    throw ShapeError("cross_attend instance embeddings disagree with feats: " +
                     nd::shape_str(is) + " vs " + nd::shape_str(fs));
  }
  const long long B = fs[0], Hp = fs[2], Wp = fs[3], Pn = Hp * Wp, M = is[1];
  if (static_cast<long long>(mask.size()) != B * M) {
    throw ShapeError("cross_attend mask length " + std::to_string(mask.size()) +
                     " does not match BxM = " + std::to_string(B * M));
  }
  for (long long b = 0; b < B; ++b) {
    bool any = false;
    for (long long m = 0; m < M; ++m) any = any || mask[static_cast<size_t>(b * M + m)] != 0;
    if (!any) {
      throw ValidationError("cross_attend: batch element " + std::to_string(b) +
                            " has no present instances");
    }
  }

  auto proj4 = nd::add(nd::conv2d(feats, P.at("cross.proj.w"), 1, 0), P.at("cross.proj.b"));
  auto p = nd::transpose_last2(nd::reshape(proj4, {B, d, Pn}));  // B x P x d

  auto q = detail::linear(p, P.at("cross.wq"), P.at("cross.bq"));
  auto k = detail::linear(inst, P.at("cross.wk"), P.at("cross.bk"));
  auto v = detail::linear(inst, P.at("cross.wv"), P.at("cross.bv"));

  auto key_bias = nd::Tensor<T>::zeros({B, 1, M});
  for (long long i = 0; i < B * M; ++i) {
    if (mask[static_cast<size_t>(i)] == 0) key_bias.data[static_cast<size_t>(i)] = T(-1e9);
  }
  const double sharp = [] {
    const char* e = std::getenv("ODM_ATTN_SCALE");
    return e ? std::atof(e) : 1.0;
  }();
  auto scores = nd::add(nd::scale(nd::matmul(q, nd::transpose_last2(k)),
                                  static_cast<T>(sharp / std::sqrt(double(d)))),
                        t.leaf(key_bias));
  auto attn_pm = nd::softmax_last(scores);  // B x P x M
  auto ctx = detail::linear(nd::matmul(attn_pm, v), P.at("cross.wo"), P.at("cross.bo"));
  auto fused = nd::reshape(nd::transpose_last2(nd::add(p, ctx)), {B, d, Hp, Wp});

  // Per-instance heatmaps: the attention mass each instance receives from
  // every image position, renormalized to sum to 1; absent rows forced to 0.
  auto attn_mp = nd::transpose_last2(attn_pm);  // B x M x P
  auto mask_col = nd::Tensor<T>::zeros({B, M, 1});
  auto denom_fix = nd::Tensor<T>::zeros({B, M, 1});
  for (long long i = 0; i < B * M; ++i) {
    mask_col.data[static_cast<size_t>(i)] = mask[static_cast<size_t>(i)] ? T(1) : T(0);
    denom_fix.data[static_cast<size_t>(i)] = mask[static_cast<size_t>(i)] ? T(0) : T(1);
  }
  auto masked = nd::mul(attn_mp, t.leaf(mask_col));
  auto row_sum = nd::reshape(nd::sum_last(masked), {B, M, 1});
  auto attn = nd::div(masked, nd::add(row_sum, t.leaf(denom_fix)));
  return {fused, attn, p};
}

// ---------------------------------------------------------------------------
// Decoder: FPN-style top-down path. Each level doubles resolution with
// nearest upsampling and adds a 1x1 lateral from the matching encoder tap
// (the raw input at full resolution); a final 1x1 conv yields one logit
// channel. Without the laterals the logits would be constant on
// stride-sized blocks, far too coarse for glyph strokes.

template <typename T>
nd::Var<T> decode(nd::Tape<T>& t, const Lifted<T>& P, const OdmConfig& cfg, nd::Var<T> fused,
                  const std::vector<nd::Var<T>>& taps) {
  const auto& fs = t.value(fused).shape;
  if (fs.size() != 4 || fs[1] != cfg.embed_dim) {
    throw ShapeError("decode expects [Bx" + std::to_string(cfg.embed_dim) + "xH'xW'], got " +
                     nd::shape_str(fs));
  }
  const long long levels = static_cast<long long>(cfg.enc_channels.size());
  if (static_cast<long long>(taps.size()) < levels) {
    throw ShapeError("decode needs " + std::to_string(levels) + " lateral taps, got " +
                     std::to_string(taps.size()));
  }
  nd::Var<T> x = fused;
  for (long long l = 0; l < levels; ++l) {
    const std::string p = "dec.l" + std::to_string(l) + ".";
    x = nd::upsample_nearest(x, 2);
    auto lat = nd::add(
        nd::conv2d(taps[static_cast<size_t>(levels - 1 - l)], P.at(p + "lat.w"), 1, 0),
        P.at(p + "lat.b"));
    x = nd::add(x, lat);
    x = nd::relu(nd::add(nd::conv2d(x, P.at(p + "w"), 1, 0), P.at(p + "b")));
  }
  return nd::add(nd::conv2d(x, P.at("dec.head.w"), 1, 0), P.at("dec.head.b"));
}

// ---------------------------------------------------------------------------
// Full forward pass

template <typename T>
struct ModelOutput {
  nd::Var<T> logits;     // B x 1 x H x W
  nd::Var<T> img_embed;  // B x d
  nd::Var<T> txt_embed;  // B x d
  nd::Var<T> attn;       // B x M x (H'*W')
  nd::Var<T> inst;       // B x M x d
  Lifted<T> params;      // leaves for gradient readback
};

template <typename T>
ModelOutput<T> forward(nd::Tape<T>& t, const OdmModel<T>& m, const nd::Tensor<T>& img,
                       const TokenBatch& tokens) {
  m.cfg.validate();
  if (img.rank() != 4 || img.shape[0] != tokens.batch) {
    throw ShapeError("image batch " + nd::shape_str(img.shape) + " does not match token batch " +
                     std::to_string(tokens.batch));
  }
  auto P = lift(t, m);
  std::vector<nd::Var<T>> taps;
  auto feats = encode_image(t, P, m.cfg, img, &taps);
  auto text = encode_text(t, P, m.cfg, tokens);
  auto ca = cross_attend(t, P, m.cfg, feats, text.inst, tokens.mask);
  auto logits = decode(t, P, m.cfg, ca.fused, taps);

  auto gap = nd::global_avg_pool2d(
      nd::reshape(nd::transpose_last2(ca.projected),
                  {img.shape[0], m.cfg.embed_dim, t.value(feats).shape[2],
                   t.value(feats).shape[3]}));
  auto img_embed = detail::linear(gap, P.at("emb.img.w"), P.at("emb.img.b"));

  return {logits, img_embed, text.pooled, ca.attn, text.inst, std::move(P)};
}

}  // namespace odm::model
