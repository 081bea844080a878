#pragma once

// Minimal raster I/O: 8-bit PNG (read: gray/RGB/RGBA non-interlaced,
// write: gray/RGB) and binary PPM/PGM. Compression goes through zlib.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "odm/errors.hpp"
#include "odm/glyph.hpp"
#include "odm/nd.hpp"

namespace odm::io {

// Interleaved row-major pixels, channels in {1, 3, 4}.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c)
      : width(w), height(h), channels(c), pixels(static_cast<size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[5],
                         const std::vector<std::uint8_t>& payload) {
  put_u32(out, std::uint32_t(payload.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = ::crc32(0, out.data() + start, uInt(out.size() - start));
  put_u32(out, std::uint32_t(crc));
}

inline std::vector<std::uint8_t> zlib_pack(const std::vector<std::uint8_t>& raw) {
  uLongf cap = compressBound(uLong(raw.size()));
  std::vector<std::uint8_t> out(cap);
  if (compress2(out.data(), &cap, raw.data(), uLong(raw.size()), Z_BEST_SPEED) != Z_OK) {
    throw FormatError("zlib compression failed");
  }
  out.resize(cap);
  return out;
}

inline std::vector<std::uint8_t> zlib_unpack(const std::vector<std::uint8_t>& packed,
                                             size_t expect) {
  std::vector<std::uint8_t> out(expect);
  uLongf got = uLongf(expect);
  const int rc = uncompress(out.data(), &got, packed.data(), uLong(packed.size()));
  if (rc != Z_OK || got != expect) {
    throw FormatError("zlib inflate failed or size mismatch");
  }
  return out;
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

}  // namespace detail

inline void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ValidationError("png writer supports 1 or 3 channels, got " +
                          std::to_string(img.channels));
  }
  if (img.width <= 0 || img.height <= 0) throw ValidationError("png writer: empty image");

  std::vector<std::uint8_t> ihdr;
  detail::put_u32(ihdr, std::uint32_t(img.width));
  detail::put_u32(ihdr, std::uint32_t(img.height));
  ihdr.push_back(8);                                 // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);         // color type
  ihdr.push_back(0);                                 // compression
  ihdr.push_back(0);                                 // filter method
  ihdr.push_back(0);                                 // no interlace

  // Filter type 0 on every scanline keeps the writer simple; zlib still
  // shrinks the flat synthetic images well enough.
  const size_t stride = size_t(img.width) * img.channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const auto* row = img.pixels.data() + size_t(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  detail::append_chunk(out, "IHDR", ihdr);
  detail::append_chunk(out, "IDAT", detail::zlib_pack(raw));
  detail::append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  if (!f) throw FormatError("short write: " + path);
}

inline Image read_png_bytes(const std::vector<std::uint8_t>& buf, const std::string& name) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0) {
    throw FormatError(name + ": not a png", 0);
  }

  int width = 0, height = 0, channels = 0;
  bool saw_ihdr = false, saw_iend = false;
  std::vector<std::uint8_t> idat;

  size_t pos = 8;
  while (pos < buf.size()) {
    if (pos + 8 > buf.size()) throw FormatError(name + ": truncated chunk header", (long long)pos);
    const std::uint32_t len = detail::get_u32(buf.data() + pos);
    const std::string type(buf.begin() + pos + 4, buf.begin() + pos + 8);
    if (pos + 12 + size_t(len) > buf.size()) {
      throw FormatError(name + ": truncated chunk " + type, (long long)pos);
    }
    const std::uint8_t* payload = buf.data() + pos + 8;
    const auto crc_want = detail::get_u32(payload + len);
    const auto crc_got = ::crc32(0, buf.data() + pos + 4, uInt(len + 4));
    if (std::uint32_t(crc_got) != crc_want) {
      throw FormatError(name + ": bad crc in " + type, (long long)pos);
    }

    if (type == "IHDR") {
      if (len != 13) throw FormatError(name + ": bad IHDR length", (long long)pos);
      width = int(detail::get_u32(payload));
      height = int(detail::get_u32(payload + 4));
      const int depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8) throw FormatError(name + ": only 8-bit depth supported", (long long)pos);
      if (interlace != 0) throw FormatError(name + ": interlacing unsupported", (long long)pos);
      if (color == 0) channels = 1;
      else if (color == 2) channels = 3;
      else if (color == 6) channels = 4;
      else throw FormatError(name + ": unsupported color type " + std::to_string(color),
                             (long long)pos);
      if (width <= 0 || height <= 0) throw FormatError(name + ": bad dimensions", (long long)pos);
      saw_ihdr = true;
    } else if (type == "IDAT") {
      if (!saw_ihdr) throw FormatError(name + ": IDAT before IHDR", (long long)pos);
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      saw_iend = true;
      break;
    }
    // Ancillary chunks are skipped.
    pos += 12 + size_t(len);
  }
  if (!saw_ihdr || !saw_iend || idat.empty()) {
    throw FormatError(name + ": missing required chunks", (long long)buf.size());
  }

  const size_t stride = size_t(width) * channels;
  auto raw = detail::zlib_unpack(idat, (stride + 1) * size_t(height));

  Image img(width, height, channels);
  std::vector<std::uint8_t> prev(stride, 0);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[size_t(y) * (stride + 1)];
    const std::uint8_t* src = raw.data() + size_t(y) * (stride + 1) + 1;
    std::uint8_t* dst = img.pixels.data() + size_t(y) * stride;
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= size_t(channels) ? dst[i - channels] : 0;  // left
      const int b = prev[i];                                       // up
      const int c = i >= size_t(channels) ? prev[i - channels] : 0;  // up-left
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default:
          throw FormatError(name + ": bad filter type " + std::to_string(filter) + " in row " +
                            std::to_string(y));
      }
      dst[i] = std::uint8_t(v & 0xff);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>());
}

inline Image read_png(const std::string& path) {
  return read_png_bytes(read_file_bytes(path), path);
}

// Binary PGM (P5) and PPM (P6) with maxval up to 255.
inline Image read_pnm(const std::string& path) {
  auto buf = read_file_bytes(path);
  size_t pos = 0;
  auto skip_space = [&] {
    while (pos < buf.size()) {
      if (std::isspace(buf[pos])) {
        ++pos;
      } else if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> int {
    skip_space();
    if (pos >= buf.size() || !std::isdigit(buf[pos])) {
      throw FormatError(path + ": expected integer", (long long)pos);
    }
    long long v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
      v = v * 10 + (buf[pos++] - '0');
      if (v > 1 << 30) throw FormatError(path + ": integer overflow", (long long)pos);
    }
    return int(v);
  };

  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6')) {
    throw FormatError(path + ": not a binary pgm/ppm", 0);
  }
  const int channels = buf[1] == '5' ? 1 : 3;
  pos = 2;
  const int w = read_int(), h = read_int(), maxval = read_int();
  if (w <= 0 || h <= 0) throw FormatError(path + ": bad dimensions", (long long)pos);
  if (maxval <= 0 || maxval > 255) {
    throw FormatError(path + ": maxval must be in [1,255]", (long long)pos);
  }
  ++pos;  // single whitespace byte after maxval
  const size_t need = size_t(w) * h * channels;
  if (pos + need > buf.size()) throw FormatError(path + ": truncated pixel data", (long long)pos);

  Image img(w, h, channels);
  std::memcpy(img.pixels.data(), buf.data() + pos, need);
  if (maxval != 255) {
    for (auto& p : img.pixels) p = std::uint8_t((int(p) * 255 + maxval / 2) / maxval);
  }
  return img;
}

// Dispatch on file magic rather than extension.
inline Image read_image(const std::string& path) {
  auto buf = read_file_bytes(path);
  if (buf.size() >= 2 && buf[0] == 'P' && (buf[1] == '5' || buf[1] == '6')) return read_pnm(path);
  return read_png_bytes(buf, path);
}

inline Image label_to_image(const glyph::LabelCanvas& canvas) {
  Image img(canvas.width, canvas.height, 1);
  for (size_t i = 0; i < canvas.pixels.size(); ++i) img.pixels[i] = canvas.pixels[i] ? 255 : 0;
  return img;
}

// Image -> 1x3xHxW float-like tensor in [0,1]; gray replicates channels.
template <typename T>
nd::Tensor<T> image_to_tensor(const Image& img) {
  nd::Tensor<T> t = nd::Tensor<T>::zeros({1, 3, img.height, img.width});
  const size_t plane = size_t(img.height) * img.width;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const size_t p = size_t(y) * img.width + x;
      for (int c = 0; c < 3; ++c) {
        const int src = img.channels == 1 ? 0 : c;  // RGBA alpha is dropped
        t.data[size_t(c) * plane + p] = T(img.at(x, y, std::min(src, img.channels - 1))) / T(255);
      }
    }
  }
  return t;
}

}  // namespace odm::io
