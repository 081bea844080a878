#pragma once

// Annotation ingestion: ICDAR-style quad lines, pseudo-label lines with
// confidences, the canonical JSONL interchange format, and the weak-label
// confidence/size filter.
//
// Canonical format, one JSON object per line:
//   {"image_id": str, "width": int, "height": int,
//    "instances": [{"kind": "quad"|"polygon"|"bezier", "points": [[x,y],...],
//                   "text": str, "conf": float?, "ignore": bool}]}
// "bezier" carries exactly 8 points: top curve control points left to right,
// then bottom curve control points left to right.

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "odm/errors.hpp"
#include "odm/geom.hpp"

namespace odm::annot {

using Shape = std::variant<geom::Quad, geom::Polygon, geom::BezierPair>;

struct TextInstance {
  Shape shape;
  std::string transcription;
  std::optional<double> confidence;
  bool ignore = false;
};

struct SceneAnnotation {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<TextInstance> instances;
};

// ---------------------------------------------------------------------------
// Shape helpers

inline std::vector<geom::Point2> shape_control_points(const Shape& s) {
  if (const auto* q = std::get_if<geom::Quad>(&s)) {
    return {q->p.begin(), q->p.end()};
  }
  if (const auto* p = std::get_if<geom::Polygon>(&s)) {
    return p->pts;
  }
  const auto& bz = std::get<geom::BezierPair>(s);
  std::vector<geom::Point2> pts(bz.top.c.begin(), bz.top.c.end());
  pts.insert(pts.end(), bz.bottom.c.begin(), bz.bottom.c.end());
  return pts;
}

// Axis-aligned bounds of the drawn shape. Bezier regions are bounded by curve
// samples rather than control points, which can lie far outside the ink.
inline geom::Bounds shape_bounds(const Shape& s) {
  if (const auto* bz = std::get_if<geom::BezierPair>(&s)) {
    constexpr int kSamples = 32;
    std::vector<geom::Point2> pts;
    pts.reserve(2 * (kSamples + 1));
    for (int i = 0; i <= kSamples; ++i) {
      double t = static_cast<double>(i) / kSamples;
      pts.push_back(geom::bezier_point(bz->top, t));
      pts.push_back(geom::bezier_point(bz->bottom, t));
    }
    return geom::bounds_of(pts);
  }
  return geom::bounds_of(shape_control_points(s));
}

// Outline polygon of the shape for rendering regions and IoU scoring.
inline geom::Polygon shape_outline(const Shape& s, int bezier_samples = 8) {
  if (const auto* q = std::get_if<geom::Quad>(&s)) {
    return geom::Polygon{geom::quad_points(*q)};
  }
  if (const auto* p = std::get_if<geom::Polygon>(&s)) {
    return *p;
  }
  const auto& bz = std::get<geom::BezierPair>(s);
  geom::Polygon out;
  for (int i = 0; i <= bezier_samples; ++i) {
    out.pts.push_back(geom::bezier_point(bz.top, static_cast<double>(i) / bezier_samples));
  }
  for (int i = bezier_samples; i >= 0; --i) {
    out.pts.push_back(geom::bezier_point(bz.bottom, static_cast<double>(i) / bezier_samples));
  }
  return out;
}

namespace detail {

inline void clamp_points(std::vector<geom::Point2>& pts, double w, double h) {
  for (auto& p : pts) {
    p.x = std::clamp(p.x, 0.0, w);
    p.y = std::clamp(p.y, 0.0, h);
  }
}

}  // namespace detail

// Real datasets overshoot the canvas slightly; clamp instead of rejecting.
inline void clamp_to_canvas(SceneAnnotation& ann) {
  const double w = ann.width, h = ann.height;
  for (auto& inst : ann.instances) {
    if (auto* q = std::get_if<geom::Quad>(&inst.shape)) {
      for (auto& p : q->p) {
        p.x = std::clamp(p.x, 0.0, w);
        p.y = std::clamp(p.y, 0.0, h);
      }
    } else if (auto* poly = std::get_if<geom::Polygon>(&inst.shape)) {
      detail::clamp_points(poly->pts, w, h);
    } else {
      auto& bz = std::get<geom::BezierPair>(inst.shape);
      for (auto& p : bz.top.c) {
        p.x = std::clamp(p.x, 0.0, w);
        p.y = std::clamp(p.y, 0.0, h);
      }
      for (auto& p : bz.bottom.c) {
        p.x = std::clamp(p.x, 0.0, w);
        p.y = std::clamp(p.y, 0.0, h);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Line parsers

namespace detail {

inline double parse_coord(const std::string& field, int field_idx, int line_no) {
  size_t begin = field.find_first_not_of(" \t\r");
  if (begin == std::string::npos) {
    throw ParseError("empty coordinate field " + std::to_string(field_idx + 1), line_no);
  }
  size_t end = field.find_last_not_of(" \t\r");
  const std::string trimmed = field.substr(begin, end - begin + 1);
  size_t consumed = 0;
  double v = 0.0;
  try {
    v = std::stod(trimmed, &consumed);
  } catch (const std::exception&) {
    throw ParseError("non-numeric coordinate '" + field + "' (field " +
                         std::to_string(field_idx + 1) + ")",
                     line_no);
  }
  if (consumed != trimmed.size() || !std::isfinite(v)) {
    throw ParseError("non-numeric coordinate '" + field + "' (field " +
                         std::to_string(field_idx + 1) + ")",
                     line_no);
  }
  return v;
}

// Splits the first `n` comma fields; the remainder (commas preserved) is the
// transcription tail.
inline std::vector<std::string> split_head(const std::string& line, int n,
                                           std::string* tail, int line_no) {
  std::vector<std::string> fields;
  size_t pos = 0;
  for (int i = 0; i < n; ++i) {
    size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      throw ParseError("expected at least " + std::to_string(n + 1) +
                           " comma-separated fields, got " + std::to_string(i + 1),
                       line_no);
    }
    fields.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  *tail = line.substr(pos);
  return fields;
}

inline std::string strip_eol(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace detail

// "x1,y1,x2,y2,x3,y3,x4,y4,transcription". Transcription "###" marks an
// ignore region. Commas inside the transcription are preserved.
inline TextInstance parse_quad_line(const std::string& raw_line, int line_no = 0) {
  const std::string line = detail::strip_eol(raw_line);
  std::string text;
  auto fields = detail::split_head(line, 8, &text, line_no);
  geom::Quad q;
  for (int i = 0; i < 4; ++i) {
    q.p[i].x = detail::parse_coord(fields[2 * i], 2 * i, line_no);
    q.p[i].y = detail::parse_coord(fields[2 * i + 1], 2 * i + 1, line_no);
  }
  TextInstance inst;
  inst.shape = q;
  inst.transcription = text;
  inst.ignore = (text == "###");
  return inst;
}

// Pseudo-label line: "x1,y1,...,x4,y4,confidence,transcription".
inline TextInstance parse_weak_line(const std::string& raw_line, int line_no = 0) {
  const std::string line = detail::strip_eol(raw_line);
  std::string text;
  auto fields = detail::split_head(line, 9, &text, line_no);
  geom::Quad q;
  for (int i = 0; i < 4; ++i) {
    q.p[i].x = detail::parse_coord(fields[2 * i], 2 * i, line_no);
    q.p[i].y = detail::parse_coord(fields[2 * i + 1], 2 * i + 1, line_no);
  }
  const double conf = detail::parse_coord(fields[8], 8, line_no);
  if (conf < 0.0 || conf > 1.0) {
    throw ParseError("confidence " + std::to_string(conf) + " outside [0,1]", line_no);
  }
  TextInstance inst;
  inst.shape = q;
  inst.transcription = text;
  inst.confidence = conf;
  inst.ignore = (text == "###");
  return inst;
}

// ---------------------------------------------------------------------------
// Canonical JSONL

namespace detail {

inline nlohmann::json shape_to_json(const Shape& s, std::string* kind) {
  std::vector<geom::Point2> pts = shape_control_points(s);
  if (std::holds_alternative<geom::Quad>(s)) {
    *kind = "quad";
  } else if (std::holds_alternative<geom::Polygon>(s)) {
    *kind = "polygon";
  } else {
    *kind = "bezier";
  }
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : pts) arr.push_back({p.x, p.y});
  return arr;
}

inline std::vector<geom::Point2> points_from_json(const nlohmann::json& arr, int line_no) {
  if (!arr.is_array()) throw SchemaError("points", "must be an array", line_no);
  std::vector<geom::Point2> pts;
  for (const auto& el : arr) {
    if (!el.is_array() || el.size() != 2 || !el[0].is_number() || !el[1].is_number()) {
      throw SchemaError("points", "each point must be [x,y]", line_no);
    }
    pts.push_back({el[0].get<double>(), el[1].get<double>()});
  }
  return pts;
}

template <typename T>
T require_field(const nlohmann::json& obj, const char* name, int line_no) {
  auto it = obj.find(name);
  if (it == obj.end()) throw SchemaError(name, "missing", line_no);
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(name, "wrong type", line_no);
  }
}

}  // namespace detail

inline nlohmann::json to_json(const SceneAnnotation& ann) {
  nlohmann::json j;
  j["image_id"] = ann.image_id;
  j["width"] = ann.width;
  j["height"] = ann.height;
  nlohmann::json insts = nlohmann::json::array();
  for (const auto& inst : ann.instances) {
    nlohmann::json ji;
    std::string kind;
    ji["points"] = detail::shape_to_json(inst.shape, &kind);
    ji["kind"] = kind;
    ji["text"] = inst.transcription;
    if (inst.confidence) ji["conf"] = *inst.confidence;
    ji["ignore"] = inst.ignore;
    insts.push_back(std::move(ji));
  }
  j["instances"] = std::move(insts);
  return j;
}

inline SceneAnnotation annotation_from_json(const nlohmann::json& j, int line_no = 0) {
  if (!j.is_object()) throw SchemaError("record", "not a JSON object", line_no);
  SceneAnnotation ann;
  ann.image_id = detail::require_field<std::string>(j, "image_id", line_no);
  ann.width = detail::require_field<int>(j, "width", line_no);
  ann.height = detail::require_field<int>(j, "height", line_no);
  if (ann.width <= 0) throw SchemaError("width", "must be positive", line_no);
  if (ann.height <= 0) throw SchemaError("height", "must be positive", line_no);
  auto it = j.find("instances");
  if (it == j.end()) throw SchemaError("instances", "missing", line_no);
  if (!it->is_array()) throw SchemaError("instances", "must be an array", line_no);

  for (const auto& ji : *it) {
    TextInstance inst;
    const std::string kind = detail::require_field<std::string>(ji, "kind", line_no);
    auto pts = detail::points_from_json(
        ji.contains("points") ? ji["points"] : nlohmann::json(), line_no);
    if (kind == "quad") {
      if (pts.size() != 4) throw SchemaError("points", "quad requires exactly 4 points", line_no);
      geom::Quad q;
      std::copy(pts.begin(), pts.end(), q.p.begin());
      inst.shape = q;
    } else if (kind == "polygon") {
      if (pts.size() < 3) throw SchemaError("points", "polygon requires >= 3 points", line_no);
      inst.shape = geom::Polygon{pts};
    } else if (kind == "bezier") {
      if (pts.size() != 8) throw SchemaError("points", "bezier requires exactly 8 points", line_no);
      geom::BezierPair bz;
      std::copy(pts.begin(), pts.begin() + 4, bz.top.c.begin());
      std::copy(pts.begin() + 4, pts.end(), bz.bottom.c.begin());
      inst.shape = bz;
    } else {
      throw SchemaError("kind", "unknown shape kind '" + kind + "'", line_no);
    }
    inst.transcription = detail::require_field<std::string>(ji, "text", line_no);
    if (ji.contains("conf")) {
      if (!ji["conf"].is_number()) throw SchemaError("conf", "wrong type", line_no);
      inst.confidence = ji["conf"].get<double>();
    }
    if (ji.contains("ignore")) {
      if (!ji["ignore"].is_boolean()) throw SchemaError("ignore", "wrong type", line_no);
      inst.ignore = ji["ignore"].get<bool>();
    }
    if (inst.transcription.empty() && !inst.ignore) {
      throw SchemaError("text", "empty transcription on a non-ignore instance", line_no);
    }
    ann.instances.push_back(std::move(inst));
  }
  clamp_to_canvas(ann);
  return ann;
}

inline std::vector<SceneAnnotation> read_canonical(std::istream& in) {
  std::vector<SceneAnnotation> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = detail::strip_eol(line);
    if (stripped.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(stripped);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    out.push_back(annotation_from_json(j, line_no));
  }
  return out;
}

inline std::vector<SceneAnnotation> read_canonical(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return read_canonical(in);
}

inline void write_canonical(const std::vector<SceneAnnotation>& anns, std::ostream& out) {
  for (const auto& ann : anns) {
    out << to_json(ann).dump() << '\n';
  }
}

inline void write_canonical(const std::vector<SceneAnnotation>& anns, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  write_canonical(anns, out);
}

// ---------------------------------------------------------------------------
// Weak-label filter

// Keeps instances with confidence strictly above `min_conf` and a bounding
// box short side strictly above `min_size_px`. Order is preserved.
inline SceneAnnotation filter_weak(const SceneAnnotation& ann, double min_conf = 0.9,
                                   double min_size_px = 32.0) {
  SceneAnnotation out;
  out.image_id = ann.image_id;
  out.width = ann.width;
  out.height = ann.height;
  for (const auto& inst : ann.instances) {
    if (!inst.confidence) {
      throw ValidationError("filter_weak: instance '" + inst.transcription +
                            "' in image '" + ann.image_id + "' has no confidence");
    }
    if (*inst.confidence > min_conf && shape_bounds(inst.shape).short_side() > min_size_px) {
      out.instances.push_back(inst);
    }
  }
  return out;
}

}  // namespace odm::annot
