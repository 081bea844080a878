#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "odm/errors.hpp"
#include "odm/glyph.hpp"
#include "odm/image_io.hpp"

using namespace odm;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string(std::getenv("TMPDIR") ? std::getenv("TMPDIR") : "/tmp") + "/" + name;
}

// Assemble a PNG from already-filtered scanlines, for exercising the reader
// against hand-computed filter fixtures.
std::vector<std::uint8_t> make_png(int w, int h, int color_type,
                                   const std::vector<std::uint8_t>& raw_scanlines,
                                   int idat_split = 0) {
  std::vector<std::uint8_t> ihdr;
  io::detail::put_u32(ihdr, std::uint32_t(w));
  io::detail::put_u32(ihdr, std::uint32_t(h));
  ihdr.push_back(8);
  ihdr.push_back(std::uint8_t(color_type));
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  io::detail::append_chunk(out, "IHDR", ihdr);
  auto packed = io::detail::zlib_pack(raw_scanlines);
  if (idat_split > 0 && idat_split < int(packed.size())) {
    std::vector<std::uint8_t> a(packed.begin(), packed.begin() + idat_split);
    std::vector<std::uint8_t> b(packed.begin() + idat_split, packed.end());
    io::detail::append_chunk(out, "IDAT", a);
    io::detail::append_chunk(out, "IDAT", b);
  } else {
    io::detail::append_chunk(out, "IDAT", packed);
  }
  io::detail::append_chunk(out, "IEND", {});
  return out;
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("png gray and rgb round trips", "[image_io]") {
  std::mt19937_64 rng(11);
  for (int channels : {1, 3}) {
    io::Image img(23, 17, channels);
    for (auto& p : img.pixels) p = std::uint8_t(rng());
    const auto path = tmp_path("rt" + std::to_string(channels) + ".png");
    io::write_png(path, img);
    auto back = io::read_png(path);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.channels == channels);
    CHECK(back.pixels == img.pixels);
  }
}

TEST_CASE("png writer output is byte-stable across runs", "[image_io]") {
  io::Image img(9, 5, 1);
  for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::uint8_t(i * 7);
  const auto p1 = tmp_path("stable1.png"), p2 = tmp_path("stable2.png");
  io::write_png(p1, img);
  io::write_png(p2, img);
  CHECK(io::read_file_bytes(p1) == io::read_file_bytes(p2));
}

TEST_CASE("png reader handles every filter type", "[image_io]") {
  // 3x2 grayscale, original pixels:
  //   10 20 30
  //   40 50 60
  const std::vector<std::uint8_t> want = {10, 20, 30, 40, 50, 60};

  SECTION("none + sub") {
    // Row 1 filter 1 (sub): raw[i] = x[i] - x[i-1]
    std::vector<std::uint8_t> raw = {0, 10, 20, 30, 1, 40, 10, 10};
    auto img = io::read_png_bytes(make_png(3, 2, 0, raw), "fixture");
    CHECK(img.pixels == want);
  }
  SECTION("up") {
    // Row 1 filter 2 (up): raw[i] = x[i] - up[i]
    std::vector<std::uint8_t> raw = {0, 10, 20, 30, 2, 30, 30, 30};
    auto img = io::read_png_bytes(make_png(3, 2, 0, raw), "fixture");
    CHECK(img.pixels == want);
  }
  SECTION("average") {
    // Row 0 filter 3 with no previous row: x[i] = raw[i] + floor(left/2).
    // 10, 20-5=15, 30-10=20 ... compute: raw = {10, 15, 20} gives 10, 20, 30.
    // Row 1: pred = floor((left + up)/2): 40-(0+10)/2=35, 50-(40+20)/2=20, 60-(50+30)/2=20.
    std::vector<std::uint8_t> raw = {3, 10, 15, 20, 3, 35, 20, 20};
    auto img = io::read_png_bytes(make_png(3, 2, 0, raw), "fixture");
    CHECK(img.pixels == want);
  }
  SECTION("paeth") {
    // Row 0 (no up row): paeth(a,0,0) = a, so raw[i] = x[i] - left.
    // Row 1: predictors are paeth(left, up, upleft):
    //   x=40: paeth(0,10,0)=10 -> 30; x=50: paeth(40,20,10) p=50 pa=10 pb=30 pc=40 -> a=40 -> 10;
    //   x=60: paeth(50,30,20) p=60 pa=10 pb=30 pc=40 -> a=50 -> 10.
    std::vector<std::uint8_t> raw = {4, 10, 10, 10, 4, 30, 10, 10};
    auto img = io::read_png_bytes(make_png(3, 2, 0, raw), "fixture");
    CHECK(img.pixels == want);
  }
  SECTION("filters apply per channel on rgb") {
    // 2x1 RGB, filter 1: left neighbor is the same channel 3 bytes back.
    // Pixels: (10,20,30) (15,25,35) -> raw deltas (5,5,5).
    std::vector<std::uint8_t> raw = {1, 10, 20, 30, 5, 5, 5};
    auto img = io::read_png_bytes(make_png(2, 1, 2, raw), "fixture");
    CHECK(img.pixels == std::vector<std::uint8_t>{10, 20, 30, 15, 25, 35});
  }
}

TEST_CASE("png reader accepts split idat and rgba", "[image_io]") {
  std::vector<std::uint8_t> raw = {0, 10, 20, 30, 0, 40, 50, 60};
  auto whole = io::read_png_bytes(make_png(3, 2, 0, raw), "fixture");
  auto split = io::read_png_bytes(make_png(3, 2, 0, raw, 5), "fixture");
  CHECK(whole.pixels == split.pixels);

  // RGBA: 1x1 pixel with alpha.
  std::vector<std::uint8_t> rgba_raw = {0, 1, 2, 3, 200};
  auto img = io::read_png_bytes(make_png(1, 1, 6, rgba_raw), "fixture");
  CHECK(img.channels == 4);
  CHECK(img.pixels == std::vector<std::uint8_t>{1, 2, 3, 200});
}

TEST_CASE("png reader rejects malformed input", "[image_io]") {
  std::vector<std::uint8_t> raw = {0, 10, 20, 30, 0, 40, 50, 60};
  auto good = make_png(3, 2, 0, raw);

  SECTION("bad signature") {
    auto bad = good;
    bad[0] = 0x88;
    CHECK_THROWS_AS(io::read_png_bytes(bad, "x"), FormatError);
  }
  SECTION("crc corruption") {
    auto bad = good;
    bad[20] ^= 0x01;  // inside IHDR payload
    CHECK_THROWS_AS(io::read_png_bytes(bad, "x"), FormatError);
  }
  SECTION("truncation reports an offset") {
    auto bad = good;
    bad.resize(bad.size() - 7);
    try {
      io::read_png_bytes(bad, "x");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() >= 0);
    }
  }
  SECTION("unsupported shapes") {
    auto depth16 = good;
    depth16[24] = 16;  // IHDR bit depth byte
    CHECK_THROWS_AS(io::read_png_bytes(depth16, "x"), FormatError);

    auto palette = make_png(3, 2, 3, raw);
    CHECK_THROWS_AS(io::read_png_bytes(palette, "x"), FormatError);
  }
  SECTION("bad filter byte") {
    std::vector<std::uint8_t> bad_raw = {9, 10, 20, 30, 0, 40, 50, 60};
    CHECK_THROWS_AS(io::read_png_bytes(make_png(3, 2, 0, bad_raw), "x"), FormatError);
  }
}

TEST_CASE("pnm reader", "[image_io]") {
  SECTION("p5 with comment and p6") {
    const auto p5 = tmp_path("a.pgm");
    write_bytes(p5, {'P', '5', '\n', '#', ' ', 'c', '\n', '2', ' ', '2', '\n', '2', '5', '5',
                     '\n', 1, 2, 3, 4});
    auto g = io::read_pnm(p5);
    CHECK(g.channels == 1);
    CHECK(g.pixels == std::vector<std::uint8_t>{1, 2, 3, 4});

    const auto p6 = tmp_path("a.ppm");
    write_bytes(p6, {'P', '6', ' ', '1', ' ', '1', ' ', '2', '5', '5', '\n', 7, 8, 9});
    auto c = io::read_pnm(p6);
    CHECK(c.channels == 3);
    CHECK(c.pixels == std::vector<std::uint8_t>{7, 8, 9});
  }
  SECTION("maxval rescales to 255") {
    const auto p = tmp_path("b.pgm");
    write_bytes(p, {'P', '5', ' ', '2', ' ', '1', ' ', '3', '\n', 0, 3});
    auto g = io::read_pnm(p);
    CHECK(g.pixels == std::vector<std::uint8_t>{0, 255});
  }
  SECTION("truncated data rejected") {
    const auto p = tmp_path("c.pgm");
    write_bytes(p, {'P', '5', ' ', '4', ' ', '4', ' ', '2', '5', '5', '\n', 1, 2});
    CHECK_THROWS_AS(io::read_pnm(p), FormatError);
  }
}

TEST_CASE("read_image dispatches on magic", "[image_io]") {
  io::Image img(4, 3, 1);
  for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::uint8_t(i);
  const auto png = tmp_path("magic.bin");  // deliberately extension-free
  io::write_png(png, img);
  CHECK(io::read_image(png).pixels == img.pixels);

  const auto pgm = tmp_path("magic2.bin");
  write_bytes(pgm, {'P', '5', ' ', '1', ' ', '1', ' ', '2', '5', '5', '\n', 42});
  CHECK(io::read_image(pgm).pixels == std::vector<std::uint8_t>{42});
}

TEST_CASE("canvas and tensor conversions", "[image_io]") {
  SECTION("label_to_image maps to 0/255") {
    glyph::LabelCanvas c(3, 1);
    c.set(1, 0, 1);
    auto img = io::label_to_image(c);
    CHECK(img.pixels == std::vector<std::uint8_t>{0, 255, 0});
  }
  SECTION("gray replicates across rgb planes, scaled to unit range") {
    io::Image img(2, 1, 1);
    img.pixels = {0, 255};
    auto t = io::image_to_tensor<double>(img);
    REQUIRE(t.shape == nd::Shape{1, 3, 1, 2});
    for (int c = 0; c < 3; ++c) {
      CHECK(t.data[c * 2 + 0] == 0.0);
      CHECK(t.data[c * 2 + 1] == 1.0);
    }
  }
  SECTION("rgba drops alpha") {
    io::Image img(1, 1, 4);
    img.pixels = {255, 0, 51, 9};
    auto t = io::image_to_tensor<double>(img);
    CHECK(t.data[0] == 1.0);
    CHECK(t.data[1] == 0.0);
    CHECK(t.data[2] == Catch::Approx(0.2));
  }
}
