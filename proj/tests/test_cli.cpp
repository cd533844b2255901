// End-to-end checks of the segtool binary through std::system.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "segens/ensemble.hpp"
#include "segens/losses.hpp"
#include "segens/raster.hpp"
#include "test_util.hpp"

using namespace segens;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = 0;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  return std::string(std::istreambuf_iterator<char>(f),
                     std::istreambuf_iterator<char>());
}

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "segens_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

RunResult run(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = std::string(SEGTOOL_PATH) + " " + args + " > " +
                          out.string() + " 2> " + err.string();
  const int rc = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = rc == 0 ? 0 : 1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

}  // namespace

TEST_CASE("loss subcommand on a perfect prediction prints zero") {
  std::mt19937_64 rng(81);
  const fs::path d = work_dir() / "perfect";
  fs::create_directories(d);
  const LabelMask mask = testutil::random_mask(8, 8, 2, rng);
  save_mask_pgm(d / "t.pgm", mask);
  save_raster(d / "p.segf", one_hot(mask));

  for (const std::string kind : {"gd", "ssim", "comb3"}) {
    const RunResult r = run("loss --kind " + kind + " --pred " +
                            (d / "p.segf").string() + " --target " +
                            (d / "t.pgm").string());
    CHECK(r.exit_code == 0);
    const double v = std::stod(r.out);
    CHECK(v >= 0.0);
    CHECK(v <= 1e-3);
  }
}

TEST_CASE("loss values compose: comb3 = ssim + gd") {
  std::mt19937_64 rng(82);
  const fs::path d = work_dir() / "compose";
  fs::create_directories(d);
  const LabelMask mask = testutil::random_mask(12, 12, 2, rng);
  save_mask_pgm(d / "t.pgm", mask);
  save_raster(d / "p.segf", testutil::random_simplex(12, 12, 2, rng));

  const auto value = [&](const std::string& kind) {
    const RunResult r = run("loss --kind " + kind + " --pred " +
                            (d / "p.segf").string() + " --target " +
                            (d / "t.pgm").string());
    REQUIRE(r.exit_code == 0);
    return std::stod(r.out);
  };
  // outputs carry 9 decimals, so the sum agrees to ~1e-8
  CHECK(std::abs(value("comb3") - (value("ssim") + value("gd"))) <= 2e-8);
  CHECK(std::abs(value("comb1") - (value("fgd") + value("ft"))) <= 2e-8);
}

TEST_CASE("loss gradient raster round trips through --grad-out") {
  std::mt19937_64 rng(83);
  const fs::path d = work_dir() / "grad";
  fs::create_directories(d);
  const LabelMask mask = testutil::random_mask(6, 6, 2, rng);
  const ProbMap pred = testutil::random_simplex(6, 6, 2, rng);
  save_mask_pgm(d / "t.pgm", mask);
  save_raster(d / "p.segf", pred);

  const RunResult r = run("loss --kind tversky --pred " +
                          (d / "p.segf").string() + " --target " +
                          (d / "t.pgm").string() + " --grad-out " +
                          (d / "g.segf").string());
  REQUIRE(r.exit_code == 0);
  const ProbMap g = load_raster(d / "g.segf");
  CHECK(g.height == 6);
  CHECK(g.channels == 2);
  // matches the library gradient through the f32 container
  LossParams lp;
  SsimParams sp;
  ProbMap fpred = pred;
  for (auto& v : fpred.data) v = static_cast<double>(static_cast<float>(v));
  const LossResult want =
      evaluate_loss(LossKind::tversky, fpred, one_hot(mask), lp, sp);
  for (std::size_t i = 0; i < g.data.size(); ++i)
    CHECK(g.data[i] ==
          doctest::Approx(static_cast<double>(static_cast<float>(want.grad[i])))
              .epsilon(1e-6));
}

TEST_CASE("unknown loss kind fails and lists the valid kinds") {
  std::mt19937_64 rng(84);
  const fs::path d = work_dir() / "badkind";
  fs::create_directories(d);
  const LabelMask mask = testutil::random_mask(4, 4, 2, rng);
  save_mask_pgm(d / "t.pgm", mask);
  save_raster(d / "p.segf", one_hot(mask));

  const RunResult r = run("loss --kind nope --pred " + (d / "p.segf").string() +
                          " --target " + (d / "t.pgm").string());
  CHECK(r.exit_code != 0);
  CHECK(r.err.find("valid kinds") != std::string::npos);
  CHECK(r.err.find("comb3") != std::string::npos);
}

TEST_CASE("eval scores a directory and reports missing ids") {
  std::mt19937_64 rng(85);
  const fs::path d = work_dir() / "eval";
  fs::create_directories(d / "gt");
  fs::create_directories(d / "pred");
  for (int i = 0; i < 3; ++i) {
    const LabelMask m = testutil::random_mask(5, 5, 2, rng);
    save_mask_pgm(d / "gt" / ("im" + std::to_string(i) + ".pgm"), m);
    save_mask_pgm(d / "pred" / ("im" + std::to_string(i) + ".pgm"), m);
  }
  const RunResult ok = run("eval --pred-dir " + (d / "pred").string() +
                           " --gt-dir " + (d / "gt").string());
  CHECK(ok.exit_code == 0);
  CHECK(ok.out.find("image,dice,iou") == 0);
  CHECK(ok.out.find("AGGREGATE,1.000000,1.000000") != std::string::npos);

  const RunResult csv = run("eval --pred-dir " + (d / "pred").string() +
                            " --gt-dir " + (d / "gt").string() + " --out " +
                            (d / "m.csv").string());
  CHECK(csv.exit_code == 0);
  CHECK(slurp(d / "m.csv") == ok.out);

  fs::remove(d / "pred" / "im1.pgm");
  fs::remove(d / "pred" / "im2.pgm");
  const RunResult bad = run("eval --pred-dir " + (d / "pred").string() +
                            " --gt-dir " + (d / "gt").string());
  CHECK(bad.exit_code != 0);
  CHECK(bad.err.find("im1") != std::string::npos);
  CHECK(bad.err.find("im2") != std::string::npos);
}

TEST_CASE("fuse with one member is byte identical to the input") {
  std::mt19937_64 rng(86);
  const fs::path d = work_dir() / "fuse";
  fs::create_directories(d / "m0");
  const ProbMap pm = testutil::random_simplex(7, 7, 2, rng);
  save_raster(d / "m0" / "x.segf", pm);
  std::ofstream(d / "spec.json")
      << R"({"members": [{"dir": ")" << (d / "m0").string() << R"("}]})";

  const RunResult r = run("fuse --spec " + (d / "spec.json").string() +
                          " --out-dir " + (d / "out").string() + " --masks");
  CHECK(r.exit_code == 0);
  std::ifstream a(d / "m0" / "x.segf", std::ios::binary);
  std::ifstream b(d / "out" / "x.segf", std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(a)),
                       std::istreambuf_iterator<char>());
  const std::string bb((std::istreambuf_iterator<char>(b)),
                       std::istreambuf_iterator<char>());
  CHECK(ba == bb);
  CHECK(fs::exists(d / "out" / "x.pgm"));
}

TEST_CASE("fuse rejects an all-zero weight spec") {
  const fs::path d = work_dir() / "fusebad";
  fs::create_directories(d / "m0");
  std::ofstream(d / "spec.json") << R"({"members": [{"dir": ")"
                                 << (d / "m0").string()
                                 << R"(", "weight": 0.0}]})";
  const RunResult r = run("fuse --spec " + (d / "spec.json").string() +
                          " --out-dir " + (d / "out").string());
  CHECK(r.exit_code != 0);
  CHECK(r.err.find("weight") != std::string::npos);
}

TEST_CASE("synth is deterministic in the seed") {
  const fs::path d = work_dir() / "synth";
  const RunResult a =
      run("synth --n 3 --height 16 --width 16 --seed 9 --out " +
          (d / "a").string());
  const RunResult b =
      run("synth --n 3 --height 16 --width 16 --seed 9 --out " +
          (d / "b").string());
  const RunResult c =
      run("synth --n 3 --height 16 --width 16 --seed 10 --out " +
          (d / "c").string());
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  REQUIRE(c.exit_code == 0);
  for (int i = 0; i < 3; ++i) {
    const std::string nm = "000" + std::to_string(i);
    CHECK(load_raster(d / "a" / "images" / (nm + ".segf")).data ==
          load_raster(d / "b" / "images" / (nm + ".segf")).data);
    CHECK(load_mask_pgm(d / "a" / "masks" / (nm + ".pgm"), 2).data ==
          load_mask_pgm(d / "b" / "masks" / (nm + ".pgm"), 2).data);
  }
  CHECK(load_raster(d / "a" / "images" / "0000.segf").data !=
        load_raster(d / "c" / "images" / "0000.segf").data);
}

TEST_CASE("train writes weights, manifest and history") {
  const fs::path d = work_dir() / "train";
  REQUIRE(run("synth --n 4 --height 12 --width 12 --seed 11 --out " +
              (d / "data").string())
              .exit_code == 0);
  const RunResult r = run("train --images " + (d / "data" / "images").string() +
                          " --masks " + (d / "data" / "masks").string() +
                          " --out " + (d / "model").string() +
                          " --loss comb1 --act stochastic --epochs 2 --seed 4");
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(d / "model" / "model.segw"));
  CHECK(fs::exists(d / "model" / "manifest.json"));
  const std::string hist = slurp(d / "model" / "history.csv");
  CHECK(hist.find("epoch,lr,mean_train_loss,val_dice") == 0);
  const std::string manifest = slurp(d / "model" / "manifest.json");
  CHECK(manifest.find("comb1") != std::string::npos);
}
