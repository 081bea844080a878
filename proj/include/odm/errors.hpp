#pragma once

#include <stdexcept>
#include <string>

namespace odm {

// Geometry that cannot be processed (degenerate area, bad parameter range).
class GeometryError : public std::runtime_error {
 public:
  explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input text or bytes. Carries a 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// A structurally valid record that violates the documented schema.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& field, const std::string& msg, int line = 0)
      : std::runtime_error((line > 0 ? "line " + std::to_string(line) + ": " : "") +
                           "field '" + field + "': " + msg),
        field_(field),
        line_(line) {}
  const std::string& field() const { return field_; }
  int line() const { return line_; }

 private:
  std::string field_;
  int line_;
};

// Tensor shape disagreement; message names both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable or unsupported font file.
class FontError : public std::runtime_error {
 public:
  explicit FontError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or incompatible serialized file. Carries the byte offset when known.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg, long long offset = -1)
      : std::runtime_error(offset >= 0 ? msg + " (offset " + std::to_string(offset) + ")" : msg),
        offset_(offset) {}
  long long offset() const { return offset_; }

 private:
  long long offset_;
};

// Contract violation on otherwise well-formed data.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss or other numeric breakdown; names the offending component.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace odm
