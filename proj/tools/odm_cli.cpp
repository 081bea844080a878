// Command-line surface: import/gen-labels/filter-weak for the data path,
// pretrain/eval/render for the model path, gradcheck for CI.
// Exit codes: 0 ok, 1 check or numeric failure, 2 input error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odm/annot.hpp"
#include "odm/builtin_font.hpp"
#include "odm/control.hpp"
#include "odm/errors.hpp"
#include "odm/eval.hpp"
#include "odm/font_ttf.hpp"
#include "odm/geom.hpp"
#include "odm/glyph.hpp"
#include "odm/image_io.hpp"
#include "odm/loss.hpp"
#include "odm/model.hpp"
#include "odm/nd.hpp"
#include "odm/synth.hpp"
#include "odm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shared helpers

std::string stem_of(const fs::path& p) { return p.stem().string(); }

void log_resolved(const std::string& cmd, const json& cfg) {
  std::cerr << "[" << cmd << "] resolved config: " << cfg.dump() << "\n";
}

std::vector<fs::path> source_files(const std::string& src) {
  fs::path p(src);
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw odm::ValidationError("no files in directory " + src);
    return files;
  }
  if (!fs::exists(p)) throw odm::FormatError("no such file: " + src);
  return {p};
}

// Canvas size from explicit flags or the instance bounding box.
void infer_canvas(odm::annot::SceneAnnotation& ann, double width, double height) {
  if (width > 0 && height > 0) {
    ann.width = width;
    ann.height = height;
    return;
  }
  double mx = 1, my = 1;
  for (const auto& inst : ann.instances) {
    for (const auto& pt : odm::annot::shape_control_points(inst.shape)) {
      mx = std::max(mx, pt.x);
      my = std::max(my, pt.y);
    }
  }
  ann.width = std::ceil(mx);
  ann.height = std::ceil(my);
}

odm::train::TrainConfig resolve_config(const std::string& path,
                                       const std::vector<std::string>& overrides) {
  json j = path.empty() ? odm::train::TrainConfig{}.to_json() : [&] {
    std::ifstream f(path);
    if (!f) throw odm::FormatError("cannot open config: " + path);
    json parsed;
    try {
      f >> parsed;
    } catch (const json::exception& e) {
      throw odm::ParseError(std::string("config json: ") + e.what());
    }
    return parsed;
  }();
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) {
      throw odm::ValidationError("override must look like key=value, got '" + ov + "'");
    }
    std::string key = "/" + ov.substr(0, eq);
    for (auto& c : key) {
      if (c == '.') c = '/';
    }
    const std::string raw = ov.substr(eq + 1);
    json val;
    try {
      val = json::parse(raw);
    } catch (const json::exception&) {
      val = raw;  // unquoted strings pass through verbatim
    }
    j[json::json_pointer(key)] = val;
  }
  return odm::train::TrainConfig::from_json(j);
}

odm::glyph::GlyphSet resolve_font(bool builtin, const std::string& font_path) {
  if (!font_path.empty()) return odm::glyph::load_font(font_path);
  if (!builtin) {
    throw odm::ValidationError("choose a font: --builtin-font or --font <file.ttf>");
  }
  return odm::glyph::builtin_font();
}

odm::io::Image find_image(const std::string& dir, const std::string& image_id) {
  for (const char* ext : {".png", ".ppm", ".pgm"}) {
    const fs::path p = fs::path(dir) / (image_id + ext);
    if (fs::exists(p)) return odm::io::read_image(p.string());
  }
  throw odm::FormatError("no image for id '" + image_id + "' under " + dir);
}

odm::glyph::LabelCanvas image_to_mask(const odm::io::Image& img) {
  odm::glyph::LabelCanvas c(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) c.set(x, y, img.at(x, y, 0) > 127 ? 1 : 0);
  }
  return c;
}

// Forward one image with the given prompt texts; empty prompts fall back to
// the null prompt the trainer uses.
struct Prediction {
  odm::glyph::LabelCanvas mask;
  odm::nd::Tensor<double> probs;  // 1 x 1 x H x W
  odm::nd::Tensor<double> attn;   // 1 x M x P
  long long present = 0;
};

Prediction predict(odm::train::TrainState<double>& st, const odm::nd::Tensor<double>& img,
                   std::vector<std::string> texts) {
  if (texts.empty()) texts.push_back("");
  odm::nd::Tape<double> t;
  auto tokens = odm::model::tokenize(texts, st.charset, st.cfg.model.max_instances,
                                     st.cfg.model.max_len);
  auto out = odm::model::forward(t, st.net, img, tokens);
  auto probs = odm::nd::sigmoid(out.logits);

  Prediction p;
  p.probs = t.value(probs);
  p.attn = t.value(out.attn);
  p.present = std::min<long long>((long long)texts.size(), st.cfg.model.max_instances);
  const long long h = p.probs.shape[2], w = p.probs.shape[3];
  p.mask = odm::glyph::LabelCanvas(int(w), int(h));
  for (size_t i = 0; i < p.probs.data.size(); ++i) {
    p.mask.pixels[i] = p.probs.data[i] > 0.5 ? 1 : 0;
  }
  return p;
}

// ---------------------------------------------------------------------------
// import

int cmd_import(const std::string& format, const std::string& src, const std::string& out,
               bool lenient, double width, double height) {
  log_resolved("import", {{"format", format},
                          {"src", src},
                          {"out", out},
                          {"lenient", lenient},
                          {"width", width},
                          {"height", height}});
  std::vector<odm::annot::SceneAnnotation> anns;
  long long instances = 0, skipped = 0;

  if (format == "canonical") {
    anns = odm::annot::read_canonical(src);
    for (const auto& a : anns) instances += (long long)a.instances.size();
  } else {
    for (const auto& file : source_files(src)) {
      std::ifstream f(file);
      if (!f) throw odm::FormatError("cannot open: " + file.string());
      odm::annot::SceneAnnotation ann;
      ann.image_id = stem_of(file);
      std::string line;
      int line_no = 0;
      while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        try {
          ann.instances.push_back(format == "weak"
                                      ? odm::annot::parse_weak_line(line, line_no)
                                      : odm::annot::parse_quad_line(line, line_no));
          ++instances;
        } catch (const std::runtime_error& e) {
          if (!lenient) {
            std::cerr << file.string() << ": " << e.what() << "\n";
            return 2;
          }
          ++skipped;
          std::cerr << "skipping " << file.string() << ": " << e.what() << "\n";
        }
      }
      infer_canvas(ann, width, height);
      odm::annot::clamp_to_canvas(ann);
      anns.push_back(std::move(ann));
    }
  }
  odm::annot::write_canonical(anns, out);
  std::cout << "imported " << anns.size() << " images, " << instances << " instances";
  if (lenient) std::cout << " (skipped " << skipped << " bad lines)";
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gen-labels

int cmd_gen_labels(const std::string& annotations, const std::string& out_dir, int size,
                   bool builtin, const std::string& font_path,
                   const std::vector<long long>& keep_indices) {
  log_resolved("gen-labels", {{"annotations", annotations},
                              {"out_dir", out_dir},
                              {"size", size},
                              {"builtin_font", builtin},
                              {"font", font_path},
                              {"keep_indices", keep_indices}});
  auto font = resolve_font(builtin, font_path);
  auto anns = odm::annot::read_canonical(annotations);
  std::optional<std::set<size_t>> keep;
  if (!keep_indices.empty()) {
    keep.emplace();
    for (long long i : keep_indices) {
      if (i < 0) throw odm::ValidationError("--keep-indices must be non-negative");
      keep->insert(size_t(i));
    }
  }

  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "manifest.csv");
  if (!manifest) throw odm::FormatError("cannot write manifest in " + out_dir);
  manifest << "image_id,instances_rendered,instances_skipped\n";

  for (const auto& ann : anns) {
    odm::glyph::RenderReport report;
    auto label = odm::glyph::render_label(ann, font, size, size, keep, &report);
    for (const auto& w : report.warnings) std::cerr << ann.image_id << ": " << w << "\n";
    odm::io::write_png((fs::path(out_dir) / (ann.image_id + ".png")).string(),
                       odm::io::label_to_image(label));
    manifest << ann.image_id << "," << report.instances_rendered << ","
             << report.instances_skipped << "\n";
  }
  std::cout << "rendered " << anns.size() << " label images to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// filter-weak

int cmd_filter_weak(const std::string& in, const std::string& out, double min_conf,
                    double min_size) {
  log_resolved("filter-weak",
               {{"in", in}, {"out", out}, {"min_conf", min_conf}, {"min_size", min_size}});
  auto anns = odm::annot::read_canonical(in);
  long long total = 0, kept = 0;
  for (auto& ann : anns) {
    total += (long long)ann.instances.size();
    ann = odm::annot::filter_weak(ann, min_conf, min_size);
    kept += (long long)ann.instances.size();
  }
  odm::annot::write_canonical(anns, out);
  std::cout << "kept " << kept << " of " << total << " instances\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

std::vector<odm::train::Sample<double>> load_dataset(const odm::train::TrainConfig& cfg,
                                                     long long synthetic,
                                                     const std::string& annotations,
                                                     const std::string& images) {
  std::vector<odm::train::Sample<double>> data;
  const long long sz = cfg.model.image_size;
  if (synthetic > 0) {
    auto font = odm::glyph::builtin_font();
    for (long long i = 0; i < synthetic; ++i) {
      auto scene = odm::synth::make_scene(font, cfg.seed, std::uint64_t(i), int(sz), int(sz));
      data.push_back({std::move(scene.ann), odm::io::image_to_tensor<double>(scene.image),
                      std::uint64_t(i)});
    }
    return data;
  }
  auto anns = odm::annot::read_canonical(annotations);
  for (size_t i = 0; i < anns.size(); ++i) {
    auto img = find_image(images, anns[i].image_id);
    if (img.width != sz || img.height != sz) {
      throw odm::ValidationError("image " + anns[i].image_id + " is " +
                                 std::to_string(img.width) + "x" + std::to_string(img.height) +
                                 ", config wants " + std::to_string(sz));
    }
    data.push_back({std::move(anns[i]), odm::io::image_to_tensor<double>(img),
                    std::uint64_t(i)});
  }
  return data;
}

int cmd_pretrain(const std::string& config, const std::vector<std::string>& overrides,
                 long long synthetic, const std::string& annotations, const std::string& images,
                 const std::string& out, const std::string& metrics_path) {
  auto cfg = resolve_config(config, overrides);
  log_resolved("pretrain", cfg.to_json());
  if (synthetic <= 0 && annotations.empty()) {
    throw odm::ValidationError("provide --synthetic N or --annotations + --images");
  }
  auto data = load_dataset(cfg, synthetic, annotations, images);

  std::ofstream metrics(metrics_path);
  if (!metrics) throw odm::FormatError("cannot write metrics: " + metrics_path);
  std::vector<std::string> warnings;
  std::vector<odm::train::StepStats> hist;
  auto st = odm::train::fit(data, cfg, &metrics, out, &hist, &warnings);
  for (const auto& w : warnings) std::cerr << w << "\n";

  std::cout << "trained " << st.step << " steps on " << data.size() << " samples";
  if (!hist.empty()) std::cout << "; final total " << hist.back().total;
  std::cout << "; checkpoint " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& checkpoint, const std::string& pred_labels,
             const std::string& config, const std::vector<std::string>& overrides,
             const std::string& annotations, const std::string& images, const std::string& out,
             double iou, double min_area) {
  auto cfg = resolve_config(config, overrides);
  log_resolved("eval", cfg.to_json());
  if (checkpoint.empty() == pred_labels.empty()) {
    throw odm::ValidationError("provide exactly one of --checkpoint or --pred-labels");
  }
  auto anns = odm::annot::read_canonical(annotations);
  if (anns.empty()) throw odm::ValidationError("no annotations in " + annotations);

  std::optional<odm::train::TrainState<double>> st;
  if (!checkpoint.empty()) st = odm::train::load_checkpoint<double>(checkpoint, cfg);
  auto font = odm::glyph::builtin_font();
  const long long sz = cfg.model.image_size;

  odm::eval::AggregateScore agg;
  for (const auto& ann : anns) {
    odm::glyph::LabelCanvas pred_mask;
    if (st) {
      auto img = find_image(images, ann.image_id);
      if (img.width != sz || img.height != sz) {
        throw odm::ValidationError("image " + ann.image_id + " does not match config size " +
                                   std::to_string(sz));
      }
      std::vector<std::string> texts;
      for (const auto& inst : ann.instances) {
        if (!inst.ignore) texts.push_back(inst.transcription);
      }
      pred_mask = predict(*st, odm::io::image_to_tensor<double>(img), texts).mask;
    } else {
      pred_mask = image_to_mask(find_image(pred_labels, ann.image_id));
    }

    auto gt_mask = odm::glyph::render_label(ann, font, int(pred_mask.width),
                                            int(pred_mask.height));
    std::vector<std::string> warnings;
    auto result = odm::eval::score(odm::eval::mask_to_regions(pred_mask, min_area),
                                   odm::eval::mask_to_regions(gt_mask, min_area), iou, &warnings);
    for (const auto& w : warnings) std::cerr << ann.image_id << ": " << w << "\n";
    agg.add(result);
  }

  json report = {{"precision", agg.precision()},
                 {"recall", agg.recall()},
                 {"hmean", agg.hmean()},
                 {"num_images", agg.images}};
  std::ofstream f(out);
  if (!f) throw odm::FormatError("cannot write report: " + out);
  f << report.dump(2) << "\n";
  std::cout << "precision " << agg.precision() << " recall " << agg.recall() << " hmean "
            << agg.hmean() << " over " << agg.images << " images\n";
  return 0;
}

// ---------------------------------------------------------------------------
// render

int cmd_render(const std::string& checkpoint, const std::string& config,
               const std::vector<std::string>& overrides, const std::string& image_path,
               const std::vector<std::string>& texts, const std::string& out_dir) {
  auto cfg = resolve_config(config, overrides);
  log_resolved("render", cfg.to_json());
  auto st = odm::train::load_checkpoint<double>(checkpoint, cfg);

  auto img = odm::io::read_image(image_path);
  const long long sz = cfg.model.image_size;
  if (img.width != sz || img.height != sz) {
    throw odm::ValidationError("image is " + std::to_string(img.width) + "x" +
                               std::to_string(img.height) + ", config wants " +
                               std::to_string(sz));
  }
  auto pred = predict(st, odm::io::image_to_tensor<double>(img), texts);

  fs::create_directories(out_dir);
  const std::string stem = stem_of(image_path);
  odm::io::write_png((fs::path(out_dir) / (stem + "_pred.png")).string(),
                     odm::io::label_to_image(pred.mask));

  odm::io::Image prob_img{int(sz), int(sz), 1};
  for (size_t i = 0; i < pred.probs.data.size(); ++i) {
    prob_img.pixels[i] = std::uint8_t(std::clamp(pred.probs.data[i] * 255.0, 0.0, 255.0));
  }
  odm::io::write_png((fs::path(out_dir) / (stem + "_prob.png")).string(), prob_img);

  // One overlay per provided instance: dimmed input plus attention in red.
  const long long stride = cfg.model.stride();
  const long long fw = sz / stride;
  for (long long m = 0; m < pred.present; ++m) {
    const double* row = pred.attn.data.data() + size_t(m) * size_t(fw * fw);
    double peak = 0;
    for (long long i = 0; i < fw * fw; ++i) peak = std::max(peak, row[i]);
    odm::io::Image heat{int(sz), int(sz), 3};
    for (long long y = 0; y < sz; ++y) {
      for (long long x = 0; x < sz; ++x) {
        const double a = peak > 0 ? row[(y / stride) * fw + x / stride] / peak : 0.0;
        const double base = 0.4 * img.at(int(x), int(y), 0);
        heat.at(int(x), int(y), 0) = std::uint8_t(std::clamp(base + 255.0 * a, 0.0, 255.0));
        heat.at(int(x), int(y), 1) = std::uint8_t(base);
        heat.at(int(x), int(y), 2) = std::uint8_t(base);
      }
    }
    odm::io::write_png((fs::path(out_dir) / (stem + "_heat_" + std::to_string(m) + ".png"))
                           .string(),
                       heat);
  }
  std::cout << "wrote prediction and " << pred.present << " heatmaps to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(std::uint64_t seed) {
  log_resolved("gradcheck", {{"seed", seed}});
  std::mt19937_64 rng(seed);
  auto randn = [&](odm::nd::Shape shape, double sd) {
    std::normal_distribution<double> d(0.0, sd);
    auto t = odm::nd::Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.data) v = d(rng);
    return t;
  };
  bool ok = true;
  auto run = [&](const std::string& name, auto build, const odm::nd::Tensor<double>& x0,
                 double tol, double h = 1e-5) {
    auto rep = odm::nd::grad_check<double>(build, x0, h, tol, 64);
    std::cout << (rep.pass ? "[ok]  " : "[fail] ") << name << " max_rel_err " << rep.max_rel_err
              << "\n";
    ok = ok && rep.pass;
  };

  const auto target = [&] {
    auto t = odm::nd::Tensor<double>::zeros({2, 1, 8, 8});
    for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = (i * 7 % 3 == 0) ? 1.0 : 0.0;
    return t;
  }();
  run("seg_bce",
      [&](odm::nd::Tape<double>& t, odm::nd::Var<double> x) {
        return odm::loss::seg_loss(x, target);
      },
      randn({2, 1, 8, 8}, 1.0), 1e-5);

  auto fx = odm::loss::FeatureExtractor<double>::seeded(seed);
  run("ocr_lpips",
      [&](odm::nd::Tape<double>& t, odm::nd::Var<double> x) {
        return odm::loss::ocr_lpips(t, odm::nd::sigmoid(x), t.leaf(target), fx);
      },
      randn({2, 1, 8, 8}, 1.0), 1e-5);

  const auto txt = randn({3, 6}, 1.0);
  run("batch_contrastive",
      [&](odm::nd::Tape<double>& t, odm::nd::Var<double> x) {
        return odm::loss::batch_contrastive(t, x, t.leaf(txt), 0.7);
      },
      randn({3, 6}, 1.0), 1e-5);

  // End-to-end: perturb one conv weight of a micro model under the full
  // objective on a tiny batch.
  odm::model::OdmConfig mc;
  mc.image_size = 16;
  mc.embed_dim = 8;
  mc.enc_channels = {4, 6};
  mc.text_depth = 1;
  mc.text_heads = 2;
  mc.max_instances = 2;
  mc.max_len = 4;
  auto net = odm::model::OdmModel<double>::init(mc, seed);
  for (auto& [name, t] : net.params) {
    for (auto& v : t.data) v += 0.02 * double(randn({1}, 1.0).data[0]);
  }
  odm::model::Charset cs;
  auto tokens = odm::model::tokenize(std::vector<std::vector<std::string>>{{"AB"}, {"Z"}}, cs,
                                     mc.max_instances, mc.max_len);
  const auto img = randn({2, 3, 16, 16}, 0.5);
  const auto tgt = [&] {
    auto t = odm::nd::Tensor<double>::zeros({2, 1, 16, 16});
    for (size_t i = 0; i < t.data.size(); i += 3) t.data[i] = 1.0;
    return t;
  }();
  run("end_to_end(img.s0.down.w)",
      [&](odm::nd::Tape<double>& t, odm::nd::Var<double> x) {
        auto m = net;
        m.params["img.s0.down.w"] = t.value(x);
        auto P = odm::model::lift(t, m);
        P.vars["img.s0.down.w"] = x;
        std::vector<odm::nd::Var<double>> taps;
        auto feats = odm::model::encode_image(t, P, mc, img, &taps);
        auto text = odm::model::encode_text(t, P, mc, tokens);
        auto ca = odm::model::cross_attend(t, P, mc, feats, text.inst, tokens.mask);
        auto logits = odm::model::decode(t, P, mc, ca.fused, taps);
        auto gap = odm::nd::global_avg_pool2d(odm::nd::reshape(
            odm::nd::transpose_last2(ca.projected),
            {2, mc.embed_dim, t.value(feats).shape[2], t.value(feats).shape[3]}));
        auto img_embed = odm::nd::add(odm::nd::matmul(gap, P.at("emb.img.w")),
                                      P.at("emb.img.b"));
        auto seg = odm::loss::seg_loss(logits, tgt);
        auto ocr = odm::loss::ocr_lpips(t, odm::nd::sigmoid(logits), t.leaf(tgt), fx);
        auto bc = odm::loss::batch_contrastive(t, img_embed, text.pooled, 1.0);
        return odm::loss::total_loss(seg, ocr, bc);
      },
      // Smaller step: the deep relu stack puts kinks within 1e-5 of some
      // weights, which central differences would otherwise straddle.
      net.params["img.s0.down.w"], 1e-3, 1e-6);

  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"odm: destylized text-label generation, pre-training and scoring"};
  app.require_subcommand(1);

  // import
  std::string im_format, im_src, im_out;
  bool im_lenient = false;
  double im_width = 0, im_height = 0;
  auto* im = app.add_subcommand("import", "Convert annotations to canonical JSONL");
  im->add_option("format", im_format, "icdar-quad | canonical | weak")
      ->required()
      ->check(CLI::IsMember({"icdar-quad", "canonical", "weak"}));
  im->add_option("src", im_src, "input file or directory")->required();
  im->add_option("--out", im_out, "output JSONL path")->required();
  im->add_flag("--lenient", im_lenient, "skip bad lines instead of failing");
  im->add_option("--width", im_width, "canvas width (default: inferred)");
  im->add_option("--height", im_height, "canvas height (default: inferred)");

  // gen-labels
  std::string gl_ann, gl_out, gl_font;
  int gl_size = 512;
  bool gl_builtin = false;
  std::vector<long long> gl_keep;
  auto* gl = app.add_subcommand("gen-labels", "Render destylized glyph labels");
  gl->add_option("--annotations", gl_ann)->required();
  gl->add_option("--out-dir", gl_out)->required();
  gl->add_option("--size", gl_size, "square label size");
  gl->add_flag("--builtin-font", gl_builtin);
  gl->add_option("--font", gl_font, "TrueType font file");
  gl->add_option("--keep-indices", gl_keep, "render only these instance indices");

  // filter-weak
  std::string fw_in, fw_out;
  double fw_conf = 0.9, fw_size = 32.0;
  auto* fw = app.add_subcommand("filter-weak", "Drop low-confidence or small pseudo labels");
  fw->add_option("--in", fw_in)->required();
  fw->add_option("--out", fw_out)->required();
  fw->add_option("--min-conf", fw_conf, "confidence must exceed this");
  fw->add_option("--min-size", fw_size, "short side must exceed this many pixels");

  // pretrain
  std::string pt_config, pt_ann, pt_images, pt_out = "odm_ckpt.bin", pt_metrics = "metrics.csv";
  std::vector<std::string> pt_set;
  long long pt_synth = 0;
  auto* pt = app.add_subcommand("pretrain", "Run the pre-training loop");
  pt->add_option("--config", pt_config, "TrainConfig JSON");
  pt->add_option("--set", pt_set, "config override key=value (repeatable)");
  pt->add_option("--synthetic", pt_synth, "train on N generated scenes");
  pt->add_option("--annotations", pt_ann, "canonical JSONL dataset");
  pt->add_option("--images", pt_images, "image directory for --annotations");
  pt->add_option("--out", pt_out, "checkpoint path");
  pt->add_option("--metrics", pt_metrics, "metrics CSV path");

  // eval
  std::string ev_ckpt, ev_preds, ev_config, ev_ann, ev_images, ev_out = "score.json";
  std::vector<std::string> ev_set;
  double ev_iou = 0.5, ev_min_area = 16.0;
  auto* ev = app.add_subcommand("eval", "Score predictions against rendered ground truth");
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint to run");
  ev->add_option("--pred-labels", ev_preds, "directory of precomputed 0/255 prediction masks");
  ev->add_option("--config", ev_config, "TrainConfig JSON");
  ev->add_option("--set", ev_set, "config override key=value");
  ev->add_option("--annotations", ev_ann)->required();
  ev->add_option("--images", ev_images, "image directory (checkpoint mode)");
  ev->add_option("--out", ev_out, "score report JSON path");
  ev->add_option("--iou", ev_iou, "match threshold");
  ev->add_option("--min-area", ev_min_area, "region area cutoff in pixels");

  // render
  std::string rd_ckpt, rd_config, rd_image, rd_out = "render_out";
  std::vector<std::string> rd_set, rd_texts;
  auto* rd = app.add_subcommand("render", "Write prediction and attention heatmaps");
  rd->add_option("--checkpoint", rd_ckpt)->required();
  rd->add_option("--config", rd_config, "TrainConfig JSON");
  rd->add_option("--set", rd_set, "config override key=value");
  rd->add_option("--image", rd_image)->required();
  rd->add_option("--text", rd_texts, "instance transcription (repeatable)");
  rd->add_option("--out-dir", rd_out);

  // gradcheck
  std::uint64_t gc_seed = 17;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gc->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (im->parsed()) return cmd_import(im_format, im_src, im_out, im_lenient, im_width,
                                        im_height);
    if (gl->parsed()) return cmd_gen_labels(gl_ann, gl_out, gl_size, gl_builtin, gl_font,
                                            gl_keep);
    if (fw->parsed()) return cmd_filter_weak(fw_in, fw_out, fw_conf, fw_size);
    if (pt->parsed()) return cmd_pretrain(pt_config, pt_set, pt_synth, pt_ann, pt_images, pt_out,
                                          pt_metrics);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_preds, ev_config, ev_set, ev_ann, ev_images,
                                      ev_out, ev_iou, ev_min_area);
    if (rd->parsed()) return cmd_render(rd_ckpt, rd_config, rd_set, rd_image, rd_texts, rd_out);
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const odm::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
