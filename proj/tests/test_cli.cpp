#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <nlohmann/json.hpp>

#include "odm/annot.hpp"
#include "odm/builtin_font.hpp"
#include "odm/glyph.hpp"
#include "odm/image_io.hpp"

using namespace odm;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int rc = -1;
  std::string out;
  std::string err;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "odm_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

RunResult run(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  const std::string cmd = std::string(ODM_CLI_PATH) + " " + args + " >" + out.string() + " 2>" +
                          err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  f << content;
}

fs::path tiny_config() {
  const fs::path p = work_dir() / "tiny.json";
  write_file(p, R"({"image_size": 64, "batch_size": 2, "steps": 2, "seed": 5,
    "model": {"embed_dim": 16, "enc_channels": [4,6,8], "text_depth": 1,
              "text_heads": 2, "max_instances": 4, "max_len": 8},
    "controller": {"drop_keep_ratio": 1.0, "noise_count": 0, "seed": 2}})");
  return p;
}

}  // namespace

TEST_CASE("import converts quad files and honors strictness", "[cli]") {
  const auto dir = work_dir();
  write_file(dir / "img_7.txt", "10,10,90,10,90,30,10,30,HELLO\n20,40,80,40,80,60,20,60,WORLD\n");

  auto r = run("import icdar-quad " + (dir / "img_7.txt").string() + " --out " +
               (dir / "a.jsonl").string() + " --width 100 --height 80");
  REQUIRE(r.rc == 0);
  CHECK(r.out.find("1 images, 2 instances") != std::string::npos);
  CHECK(r.err.find("resolved config") != std::string::npos);

  auto anns = annot::read_canonical((dir / "a.jsonl").string());
  REQUIRE(anns.size() == 1);
  CHECK(anns[0].image_id == "img_7");
  CHECK(anns[0].instances.size() == 2);
  CHECK(anns[0].width == 100);

  SECTION("canvas inferred from coordinates when flags absent") {
    auto r2 = run("import icdar-quad " + (dir / "img_7.txt").string() + " --out " +
                  (dir / "b.jsonl").string());
    REQUIRE(r2.rc == 0);
    auto b = annot::read_canonical((dir / "b.jsonl").string());
    CHECK(b[0].width == 90);
    CHECK(b[0].height == 60);
  }
  SECTION("bad lines fail hard without --lenient") {
    write_file(dir / "img_bad.txt", "garbage\n1,1,9,1,9,9,1,9,OK\n");
    CHECK(run("import icdar-quad " + (dir / "img_bad.txt").string() + " --out " +
              (dir / "c.jsonl").string())
              .rc == 2);
    auto r3 = run("import icdar-quad " + (dir / "img_bad.txt").string() + " --out " +
                  (dir / "c.jsonl").string() + " --lenient");
    REQUIRE(r3.rc == 0);
    CHECK(r3.out.find("skipped 1 bad lines") != std::string::npos);
    CHECK(annot::read_canonical((dir / "c.jsonl").string())[0].instances.size() == 1);
  }
  SECTION("canonical input round trips") {
    auto r4 = run("import canonical " + (dir / "a.jsonl").string() + " --out " +
                  (dir / "d.jsonl").string());
    REQUIRE(r4.rc == 0);
    CHECK(slurp(dir / "d.jsonl") == slurp(dir / "a.jsonl"));
  }
}

TEST_CASE("filter-weak summary and thresholds", "[cli]") {
  const auto dir = work_dir();
  write_file(dir / "weak_1.txt",
             "10,10,50,10,50,50,10,50,0.95,GOOD\n"
             "10,10,20,10,20,20,10,20,0.95,SMALL\n"
             "10,10,80,10,80,80,10,80,0.5,LOWCONF\n");
  REQUIRE(run("import weak " + (dir / "weak_1.txt").string() + " --out " +
              (dir / "w.jsonl").string() + " --width 100 --height 100")
              .rc == 0);

  auto r = run("filter-weak --in " + (dir / "w.jsonl").string() + " --out " +
               (dir / "wk.jsonl").string());
  REQUIRE(r.rc == 0);
  CHECK(r.out == "kept 1 of 3 instances\n");
  auto kept = annot::read_canonical((dir / "wk.jsonl").string());
  REQUIRE(kept[0].instances.size() == 1);
  CHECK(kept[0].instances[0].transcription == "GOOD");

  SECTION("vacuous thresholds keep everything") {
    auto r2 = run("filter-weak --in " + (dir / "w.jsonl").string() + " --out " +
                  (dir / "wa.jsonl").string() + " --min-conf 0 --min-size 0");
    CHECK(r2.out == "kept 3 of 3 instances\n");
  }
  SECTION("empty input is a clean no-op") {
    write_file(dir / "empty.jsonl", "");
    auto r3 = run("filter-weak --in " + (dir / "empty.jsonl").string() + " --out " +
                  (dir / "eo.jsonl").string());
    REQUIRE(r3.rc == 0);
    CHECK(r3.out == "kept 0 of 0 instances\n");
    CHECK(fs::exists(dir / "eo.jsonl"));
  }
}

TEST_CASE("gen-labels writes binary pngs and a manifest", "[cli]") {
  const auto dir = work_dir();
  write_file(dir / "img_9.txt", "6,6,58,6,58,20,6,20,AB\n8,40,60,40,60,56,8,56,CD\n");
  REQUIRE(run("import icdar-quad " + (dir / "img_9.txt").string() + " --out " +
              (dir / "g.jsonl").string() + " --width 64 --height 64")
              .rc == 0);

  auto r = run("gen-labels --annotations " + (dir / "g.jsonl").string() + " --out-dir " +
               (dir / "labels").string() + " --size 64 --builtin-font");
  REQUIRE(r.rc == 0);

  auto img = io::read_png((dir / "labels" / "img_9.png").string());
  CHECK(img.width == 64);
  CHECK(img.channels == 1);
  std::set<int> values;
  for (auto v : img.pixels) values.insert(v);
  CHECK(values == std::set<int>{0, 255});  // binary and non-empty

  CHECK(slurp(dir / "labels" / "manifest.csv") ==
        "image_id,instances_rendered,instances_skipped\nimg_9,2,0\n");

  SECTION("rerun is byte-identical") {
    auto before = slurp(dir / "labels" / "img_9.png");
    REQUIRE(run("gen-labels --annotations " + (dir / "g.jsonl").string() + " --out-dir " +
                (dir / "labels").string() + " --size 64 --builtin-font")
                .rc == 0);
    CHECK(slurp(dir / "labels" / "img_9.png") == before);
  }
  SECTION("--keep-indices restricts rendering") {
    REQUIRE(run("gen-labels --annotations " + (dir / "g.jsonl").string() + " --out-dir " +
                (dir / "keep0").string() + " --size 64 --builtin-font --keep-indices 0")
                .rc == 0);
    auto got = io::read_png((dir / "keep0" / "img_9.png").string());
    auto anns = annot::read_canonical((dir / "g.jsonl").string());
    auto want = glyph::render_label(anns[0], glyph::builtin_font(), 64, 64,
                                    std::set<size_t>{0});
    bool equal = true;
    for (size_t i = 0; i < want.pixels.size(); ++i) {
      equal = equal && (got.pixels[i] == (want.pixels[i] ? 255 : 0));
    }
    CHECK(equal);
    CHECK(slurp(dir / "keep0" / "manifest.csv").find("img_9,1,") != std::string::npos);
  }
  SECTION("missing font file exits 2") {
    CHECK(run("gen-labels --annotations " + (dir / "g.jsonl").string() + " --out-dir " +
              (dir / "x").string() + " --font /nonexistent.ttf")
              .rc == 2);
  }
}

TEST_CASE("pretrain, eval and render pipeline", "[cli]") {
  const auto dir = work_dir();
  const auto cfg = tiny_config();

  auto r = run("pretrain --config " + cfg.string() + " --synthetic 2 --out " +
               (dir / "t.ckpt").string() + " --metrics " + (dir / "m.csv").string());
  REQUIRE(r.rc == 0);
  CHECK(fs::exists(dir / "t.ckpt"));
  std::istringstream metrics(slurp(dir / "m.csv"));
  std::string line;
  std::getline(metrics, line);
  CHECK(line == "step,seg,ocr,bc,total");
  int rows = 0;
  while (std::getline(metrics, line)) ++rows;
  CHECK(rows == 2);

  SECTION("pretrain rerun reproduces metrics byte for byte") {
    auto before = slurp(dir / "m.csv");
    REQUIRE(run("pretrain --config " + cfg.string() + " --synthetic 2 --out " +
                (dir / "t2.ckpt").string() + " --metrics " + (dir / "m.csv").string())
                .rc == 0);
    CHECK(slurp(dir / "m.csv") == before);
    CHECK(slurp(dir / "t2.ckpt") == slurp(dir / "t.ckpt"));
  }

  // A 64x64 fixture serving as both annotation source and model input.
  write_file(dir / "img_e.txt", "6,6,58,6,58,20,6,20,AB\n8,40,60,40,60,56,8,56,CD\n");
  REQUIRE(run("import icdar-quad " + (dir / "img_e.txt").string() + " --out " +
              (dir / "e.jsonl").string() + " --width 64 --height 64")
              .rc == 0);
  REQUIRE(run("gen-labels --annotations " + (dir / "e.jsonl").string() + " --out-dir " +
              (dir / "gt").string() + " --size 64 --builtin-font")
              .rc == 0);

  SECTION("eval of perfect precomputed predictions scores ones") {
    auto r2 = run("eval --pred-labels " + (dir / "gt").string() + " --config " + cfg.string() +
                  " --annotations " + (dir / "e.jsonl").string() + " --out " +
                  (dir / "perfect.json").string());
    REQUIRE(r2.rc == 0);
    auto report = nlohmann::json::parse(slurp(dir / "perfect.json"));
    CHECK(report["precision"].get<double>() == 1.0);
    CHECK(report["recall"].get<double>() == 1.0);
    CHECK(report["hmean"].get<double>() == 1.0);
    CHECK(report["num_images"].get<int>() == 1);
  }
  SECTION("eval through the checkpoint emits a full report") {
    fs::create_directories(dir / "imgs");
    fs::copy_file(dir / "gt" / "img_e.png", dir / "imgs" / "img_e.png",
                  fs::copy_options::overwrite_existing);
    auto r3 = run("eval --checkpoint " + (dir / "t.ckpt").string() + " --config " + cfg.string() +
                  " --annotations " + (dir / "e.jsonl").string() + " --images " +
                  (dir / "imgs").string() + " --out " + (dir / "model.json").string());
    REQUIRE(r3.rc == 0);
    auto report = nlohmann::json::parse(slurp(dir / "model.json"));
    CHECK(report.contains("precision"));
    CHECK(report.contains("recall"));
    CHECK(report.contains("hmean"));
    CHECK(report["num_images"].get<int>() == 1);

    auto before = slurp(dir / "model.json");
    REQUIRE(run("eval --checkpoint " + (dir / "t.ckpt").string() + " --config " + cfg.string() +
                " --annotations " + (dir / "e.jsonl").string() + " --images " +
                (dir / "imgs").string() + " --out " + (dir / "model.json").string())
                .rc == 0);
    CHECK(slurp(dir / "model.json") == before);
  }
  SECTION("render emits one heatmap per text plus prediction maps") {
    fs::create_directories(dir / "imgs");
    fs::copy_file(dir / "gt" / "img_e.png", dir / "imgs" / "img_e.png",
                  fs::copy_options::overwrite_existing);
    auto r4 = run("render --checkpoint " + (dir / "t.ckpt").string() + " --config " +
                  cfg.string() + " --image " + (dir / "imgs" / "img_e.png").string() +
                  " --text AB --text CD --out-dir " + (dir / "viz").string());
    REQUIRE(r4.rc == 0);
    CHECK(fs::exists(dir / "viz" / "img_e_pred.png"));
    CHECK(fs::exists(dir / "viz" / "img_e_prob.png"));
    CHECK(fs::exists(dir / "viz" / "img_e_heat_0.png"));
    CHECK(fs::exists(dir / "viz" / "img_e_heat_1.png"));
    CHECK(!fs::exists(dir / "viz" / "img_e_heat_2.png"));
    CHECK(io::read_png((dir / "viz" / "img_e_heat_0.png").string()).channels == 3);

    auto before = slurp(dir / "viz" / "img_e_heat_0.png");
    REQUIRE(run("render --checkpoint " + (dir / "t.ckpt").string() + " --config " +
                cfg.string() + " --image " + (dir / "imgs" / "img_e.png").string() +
                " --text AB --text CD --out-dir " + (dir / "viz").string())
                .rc == 0);
    CHECK(slurp(dir / "viz" / "img_e_heat_0.png") == before);
  }
  SECTION("checkpoint and config must agree") {
    write_file(dir / "other.json", R"({"image_size": 64, "seed": 6,
      "model": {"embed_dim": 16, "enc_channels": [4,6,8], "text_depth": 1,
                "text_heads": 2, "max_instances": 4, "max_len": 8}})");
    CHECK(run("render --checkpoint " + (dir / "t.ckpt").string() + " --config " +
              (dir / "other.json").string() + " --image " + (dir / "gt" / "img_e.png").string() +
              " --text AB --out-dir " + (dir / "viz2").string())
              .rc == 2);
  }
  SECTION("config overrides reject unknown keys") {
    CHECK(run("pretrain --config " + cfg.string() + " --set bogus=1 --synthetic 1 --out " +
              (dir / "x.ckpt").string() + " --metrics " + (dir / "x.csv").string())
              .rc == 2);
    auto r5 = run("pretrain --config " + cfg.string() + " --set steps=1 --synthetic 1 --out " +
                  (dir / "y.ckpt").string() + " --metrics " + (dir / "y.csv").string());
    REQUIRE(r5.rc == 0);
    CHECK(r5.out.find("trained 1 steps") != std::string::npos);
  }
}

TEST_CASE("gradcheck subcommand passes on a fresh build", "[cli]") {
  auto r = run("gradcheck");
  CHECK(r.rc == 0);
  CHECK(r.out.find("gradcheck passed") != std::string::npos);
  CHECK(r.out.find("[fail]") == std::string::npos);
}

TEST_CASE("cli rejects malformed invocations", "[cli]") {
  CHECK(run("no-such-command").rc == 2);
  CHECK(run("import bogus-format x --out y").rc == 2);
  CHECK(run("filter-weak --in missing.jsonl --out o.jsonl").rc == 2);
  CHECK(run("render --checkpoint nope.bin --image nope.png").rc == 2);
  auto help = run("--help");
  CHECK(help.rc == 0);
  CHECK(help.out.find("pretrain") != std::string::npos);
}
