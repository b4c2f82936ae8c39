#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "dehaze/archive.hpp"
#include "dehaze/dataset.hpp"
#include "dehaze/generator.hpp"
#include "dehaze/cli.hpp"
#include "dehaze/image.hpp"
#include "dehaze/metrics.hpp"
#include "dehaze/trainer.hpp"
#include "support/fixtures.hpp"

namespace dehaze {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream in(line);
  for (std::string c; std::getline(in, c, '\t');) cells.push_back(c);
  return cells;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

std::string tiny_config_text(std::int64_t max_iterations, std::int64_t interval) {
  TrainConfig c;
  c.batch_size = 2;
  c.patch_size = 16;
  c.max_iterations = max_iterations;
  c.checkpoint_interval = interval;
  c.seed = 11;
  return c.to_text();
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value, 1);
  }
  ~ScopedEnv() {
    if (old_.empty()) ::unsetenv(name_.c_str());
    else ::setenv(name_.c_str(), old_.c_str(), 1);
  }

 private:
  std::string name_, old_;
};

// ------------------------------------------------------------------ general

TEST(Cli, NoSubcommandIsAConfigError) {
  EXPECT_EQ(run_cli({}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kConfigError);
}

TEST(Cli, HelpSucceeds) {
  const Outcome r = run_cli({"--help"});
  EXPECT_EQ(r.code, cli::kSuccess);
  for (const char* sub : {"synthesize", "train", "dehaze", "evaluate", "det-eval"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

TEST(Cli, MissingRequiredOptionIsAConfigError) {
  const Outcome r = run_cli({"synthesize", "--count", "3"});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("--clean-dir"), std::string::npos);
}

TEST(Cli, UnsupportedDeviceIsRejected) {
  testing::TempDir dir("cli");
  testing::write_clean_images(dir / "src", 1, 16, 16, 1);
  ScopedEnv env(cli::kDeviceEnv, "cuda");
  const Outcome r = run_cli({"synthesize", "--count", "1", "--clean-dir", (dir / "src").string(), "--out",
                             (dir / "out").string()});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find(cli::kDeviceEnv), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "out" / "manifest.tsv"));
}

TEST(Cli, CpuDeviceIsAccepted) {
  testing::TempDir dir("cli");
  testing::write_clean_images(dir / "src", 1, 16, 16, 1);
  ScopedEnv env(cli::kDeviceEnv, "cpu");
  EXPECT_EQ(run_cli({"synthesize", "--count", "1", "--clean-dir", (dir / "src").string(), "--out",
                     (dir / "out").string()})
                .code,
            cli::kSuccess);
}

TEST(Cli, TileOriginsCoverTheExtentWithOverlap) {
  EXPECT_EQ(cli::tile_origins(100, 128, 32), std::vector<int>{0});
  EXPECT_EQ(cli::tile_origins(128, 128, 32), std::vector<int>{0});
  for (int extent : {129, 200, 256, 257, 500, 1000}) {
    const auto o = cli::tile_origins(extent, 128, 32);
    ASSERT_GE(o.size(), 2u);
    EXPECT_EQ(o.front(), 0);
    EXPECT_EQ(o.back() + 128, extent);
    for (std::size_t i = 1; i < o.size(); ++i) {
      EXPECT_GT(o[i], o[i - 1]);
      EXPECT_GE(o[i - 1] + 128 - o[i], 32) << "overlap at extent " << extent;
    }
  }
  EXPECT_THROW(cli::tile_origins(200, 32, 32), InvalidArgument);
}

// ------------------------------------------------------------------ synthesize

class SynthesizeCli : public ::testing::Test {
 protected:
  void SetUp() override { testing::write_clean_images(dir_ / "src", 4, 24, 24, 3); }
  std::vector<std::string> args(const fs::path& out, const std::string& seed) const {
    return {"synthesize", "--count", "4", "--seed", seed, "--clean-dir", (dir_ / "src").string(), "--out",
            out.string()};
  }
  testing::TempDir dir_{"cli_syn"};
};

TEST_F(SynthesizeCli, WritesPairsAndManifest) {
  const fs::path out = dir_ / "a";
  const Outcome r = run_cli(args(out, "7"));
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  EXPECT_EQ(r.out, (out / "manifest.tsv").string() + "\n");
  EXPECT_EQ(list_images(out / "hazy").size(), 4u);
  EXPECT_EQ(list_images(out / "clean").size(), 4u);

  const json m = read_json(out / "run_manifest.json");
  EXPECT_EQ(m["subcommand"], "synthesize");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["exit_code"], 0);
  EXPECT_EQ(m["artifacts"]["dataset"], cli::directory_fingerprint(out));
  EXPECT_FALSE(fs::exists(out / ".dehaze.lock"));
}

TEST_F(SynthesizeCli, DefaultsAreTheRemoteSensingRanges) {
  const fs::path out = dir_ / "a";
  ASSERT_EQ(run_cli(args(out, "1")).code, cli::kSuccess);
  const auto rows = dataset::read_manifest(out / "manifest.tsv");
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& row : rows) {
    EXPECT_EQ(row.params.mode, dataset::HazeMode::ConstantT);
    EXPECT_GE(row.params.beta_or_t, 0.2);
    EXPECT_LE(row.params.beta_or_t, 0.6);
    for (double a : row.params.light.a) {
      EXPECT_GE(a, 0.7);
      EXPECT_LE(a, 1.0);
    }
  }
}

TEST_F(SynthesizeCli, SameSeedSameFingerprint) {
  ASSERT_EQ(run_cli(args(dir_ / "a", "5")).code, cli::kSuccess);
  ASSERT_EQ(run_cli(args(dir_ / "b", "5")).code, cli::kSuccess);
  ASSERT_EQ(run_cli(args(dir_ / "c", "6")).code, cli::kSuccess);
  const json a = read_json(dir_ / "a" / "run_manifest.json");
  const json b = read_json(dir_ / "b" / "run_manifest.json");
  const json c = read_json(dir_ / "c" / "run_manifest.json");
  EXPECT_EQ(a["artifacts"], b["artifacts"]);
  EXPECT_NE(a["artifacts"]["dataset"], c["artifacts"]["dataset"]);
}

TEST_F(SynthesizeCli, ZeroCountIsAConfigError) {
  const Outcome r = run_cli({"synthesize", "--count", "0", "--clean-dir", (dir_ / "src").string(), "--out",
                             (dir_ / "z").string()});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("--count"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "z" / "manifest.tsv"));
}

TEST_F(SynthesizeCli, BadRangesAreConfigErrors) {
  auto a = args(dir_ / "r", "1");
  for (const std::vector<std::string> extra :
       {std::vector<std::string>{"--t-range", "0.6"}, {"--t-range", "0.6,0.2"}, {"--beta-range", "x,1"},
        {"--light-range", "0.5,1.5"}, {"--mode", "fog"}}) {
    auto with = a;
    with.insert(with.end(), extra.begin(), extra.end());
    EXPECT_EQ(run_cli(with).code, cli::kConfigError) << extra[0] << " " << extra[1];
  }
}

TEST_F(SynthesizeCli, MissingCleanDirIsAConfigError) {
  EXPECT_EQ(run_cli({"synthesize", "--count", "1", "--clean-dir", (dir_ / "nope").string(), "--out",
                     (dir_ / "o").string()})
                .code,
            cli::kConfigError);
}

TEST_F(SynthesizeCli, LockedOutputIsRefused) {
  const fs::path out = dir_ / "locked";
  fs::create_directories(out);
  write_text(out / ".dehaze.lock", "");
  const Outcome r = run_cli(args(out, "1"));
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("in use"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / ".dehaze.lock"));
  EXPECT_FALSE(fs::exists(out / "manifest.tsv"));
}

// ------------------------------------------------------------------ train + dehaze

class TrainedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("cli_train");
    pairs_ = testing::make_paired_set(dir_->path(), 3, 24, 21);
    config_ = dir_->path() / "train.cfg";
    write_text(config_, tiny_config_text(2, 1));
    const Outcome r = run_cli({"train", "--config", config_.string(), "--data", pairs_.string(), "--out",
                               (dir_->path() / "run").string()});
    ASSERT_EQ(r.code, cli::kSuccess) << r.err;
    checkpoint_ = dir_->path() / "run" / "checkpoints" / "iter_00000002.dhz";
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path path(const std::string& sub) { return dir_->path() / sub; }

  static testing::TempDir* dir_;
  static fs::path pairs_, config_, checkpoint_;
};

testing::TempDir* TrainedRun::dir_ = nullptr;
fs::path TrainedRun::pairs_, TrainedRun::config_, TrainedRun::checkpoint_;

TEST_F(TrainedRun, TrainWritesCheckpointsLogAndManifest) {
  EXPECT_TRUE(fs::is_regular_file(checkpoint_));
  EXPECT_TRUE(fs::is_regular_file(path("run/checkpoints/iter_00000001.dhz")));
  const auto log = lines_of([&] {
    std::ifstream f(path("run/metrics.tsv"));
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
  }());
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[0], kMetricsHeader);

  const json m = read_json(path("run/run_manifest.json"));
  EXPECT_EQ(m["subcommand"], "train");
  EXPECT_EQ(m["seed"], 11);
  EXPECT_EQ(m["config_path"], config_.string());
  EXPECT_EQ(m["artifacts"]["dataset"], cli::directory_fingerprint(pairs_));
  EXPECT_EQ(m["artifacts"]["checkpoint"], to_hex(file_fingerprint(checkpoint_)));
}

TEST_F(TrainedRun, PresetZeroesStyleAndFeatureRegularization) {
  const fs::path out = path("preset");
  const Outcome r = run_cli({"train", "--config", config_.string(), "--data", pairs_.string(), "--out",
                             out.string(), "--preset", "A+P", "--max-iterations", "1"});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  std::ifstream f(out / "metrics.tsv");
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  const auto cells = split_tabs(row);
  ASSERT_EQ(cells.size(), 9u);
  EXPECT_EQ(cells[0], "1");
  EXPECT_NE(std::stod(cells[1]), 0.0);  // adversarial
  EXPECT_NE(std::stod(cells[2]), 0.0);  // perceptual
  EXPECT_EQ(std::stod(cells[3]), 0.0);  // style
  EXPECT_EQ(std::stod(cells[4]), 0.0);  // feature regularization
}

TEST_F(TrainedRun, SeedOverrideIsRecorded) {
  const fs::path out = path("seeded");
  ASSERT_EQ(run_cli({"train", "--config", config_.string(), "--data", pairs_.string(), "--out", out.string(),
                     "--max-iterations", "1", "--seed", "99"})
                .code,
            cli::kSuccess);
  EXPECT_EQ(read_json(out / "run_manifest.json")["seed"], 99);
}

TEST_F(TrainedRun, ResumeMatchesUninterruptedRun) {
  const fs::path partial = path("partial");
  write_text(path("one.cfg"), tiny_config_text(1, 1));
  ASSERT_EQ(run_cli({"train", "--config", path("one.cfg").string(), "--data", pairs_.string(), "--out",
                     partial.string()})
                .code,
            cli::kSuccess);
  const Outcome r = run_cli({"train", "--config", config_.string(), "--data", pairs_.string(), "--out",
                             partial.string(), "--resume", (partial / "checkpoints" / "iter_00000001.dhz").string()});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;

  Generator<float> a, b;
  a.load(Archive::load(checkpoint_));
  b.load(Archive::load(partial / "checkpoints" / "iter_00000002.dhz"));
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i].var.value() == pb[i].var.value()) << "parameter " << i;
}

TEST_F(TrainedRun, MissingConfigAndDataAreConfigErrors) {
  EXPECT_EQ(run_cli({"train", "--config", path("none.cfg").string(), "--data", pairs_.string(), "--out",
                     path("x").string()})
                .code,
            cli::kConfigError);
  EXPECT_EQ(run_cli({"train", "--config", config_.string(), "--data", path("none").string(), "--out",
                     path("x").string()})
                .code,
            cli::kConfigError);
  EXPECT_EQ(run_cli({"train", "--config", config_.string(), "--data", pairs_.string(), "--out",
                     path("x").string(), "--preset", "A+S"})
                .code,
            cli::kConfigError);
}

TEST_F(TrainedRun, DivergenceExitsWithNumericalFailure) {
  TrainConfig c = TrainConfig::parse(tiny_config_text(4, 10));
  c.learning_rate = 1e30;
  write_text(path("diverge.cfg"), c.to_text());
  const fs::path out = path("diverge");
  const Outcome r =
      run_cli({"train", "--config", path("diverge.cfg").string(), "--data", pairs_.string(), "--out", out.string()});
  ASSERT_EQ(r.code, cli::kNumericalFailure) << r.err;
  const auto at = r.err.find("diagnostics: ");
  ASSERT_NE(at, std::string::npos) << r.err;
  std::string dump = r.err.substr(at + 13);
  dump = dump.substr(0, dump.find('\n'));
  EXPECT_TRUE(fs::is_regular_file(dump));
  EXPECT_EQ(fs::path(dump).parent_path(), out);
  EXPECT_EQ(read_json(out / "run_manifest.json")["exit_code"], 3);
}

TEST_F(TrainedRun, DehazeKeepsSizeAndMirrorsNames) {
  fs::create_directories(path("in"));
  write_png(path("in/square.png"), testing::procedural_image(256, 256, 1));
  write_png(path("in/odd.png"), testing::procedural_image(250, 250, 2));
  write_png(path("in/wide.png"), testing::procedural_image(37, 90, 3));
  const Outcome r = run_cli({"dehaze", "--checkpoint", checkpoint_.string(), "--input", path("in").string(),
                             "--out", path("dehazed").string()});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  EXPECT_EQ(lines_of(r.out).size(), 3u);
  const ImageTensor square = read_image(path("dehazed/square.png"));
  const ImageTensor odd = read_image(path("dehazed/odd.png"));
  const ImageTensor wide = read_image(path("dehazed/wide.png"));
  EXPECT_EQ(square.height(), 256);
  EXPECT_EQ(square.width(), 256);
  EXPECT_EQ(odd.height(), 250);
  EXPECT_EQ(odd.width(), 250);
  EXPECT_EQ(wide.height(), 37);
  EXPECT_EQ(wide.width(), 90);

  const json m = read_json(path("dehazed/run_manifest.json"));
  EXPECT_EQ(m["subcommand"], "dehaze");
  EXPECT_EQ(m["artifacts"]["checkpoint"], to_hex(file_fingerprint(checkpoint_)));
  EXPECT_EQ(m["artifacts"]["outputs"], cli::directory_fingerprint(path("dehazed")));
}

TEST_F(TrainedRun, OddSizeIsPaddedThenCroppedBack) {
  Generator<float> net;
  net.load(Archive::load(checkpoint_));
  const ImageTensor hazy = testing::procedural_image(250, 250, 2);
  const ImageTensor padded = reflect_pad(hazy, 2, 2);
  ASSERT_EQ(padded.height(), 252);
  const ImageTensor direct = crop(dehaze::dehaze(net, padded), 0, 0, 250, 250);
  const ImageTensor via = cli::dehaze_any_size(net, hazy, 0);
  EXPECT_TRUE(direct.values().size() == via.values().size());
  EXPECT_TRUE(std::equal(direct.values().begin(), direct.values().end(), via.values().begin()));
}

TEST_F(TrainedRun, TilingBlendsTileOutputsConvexly) {
  Generator<float> net;
  net.load(Archive::load(checkpoint_));
  const int H = 150, W = 202, tile = 128;
  const ImageTensor hazy = testing::procedural_image(H, W, 4);
  const ImageTensor tiled = cli::dehaze_any_size(net, hazy, tile);
  ASSERT_EQ(tiled.height(), H);
  ASSERT_EQ(tiled.width(), W);

  // Independent reconstruction: run every tile separately, then require each output
  // pixel to equal the single covering tile where only one covers it, and to lie
  // within the range of the covering tiles' values in the overlaps.
  const ImageTensor padded = reflect_pad(hazy, (4 - H % 4) % 4, (4 - W % 4) % 4);
  const auto ys = cli::tile_origins(padded.height(), tile, cli::kTileOverlap);
  const auto xs = cli::tile_origins(padded.width(), tile, cli::kTileOverlap);
  ASSERT_GE(ys.size(), 2u);
  ASSERT_GE(xs.size(), 2u);
  struct Piece {
    int y0, x0;
    ImageTensor out;
  };
  std::vector<Piece> pieces;
  for (int y0 : ys) {
    for (int x0 : xs) pieces.push_back({y0, x0, dehaze::dehaze(net, crop(padded, y0, x0, tile, tile))});
  }
  int single = 0, shared = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        float lo = 2.0f, hi = -1.0f;
        int covering = 0;
        for (const auto& p : pieces) {
          if (y < p.y0 || y >= p.y0 + tile || x < p.x0 || x >= p.x0 + tile) continue;
          const float v = p.out.at(y - p.y0, x - p.x0, c);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
          ++covering;
        }
        ASSERT_GE(covering, 1);
        const float v = tiled.at(y, x, c);
        if (covering == 1) {
          ASSERT_EQ(v, lo) << y << "," << x;
          ++single;
        } else {
          ASSERT_GE(v, lo - 1e-6f) << y << "," << x;
          ASSERT_LE(v, hi + 1e-6f) << y << "," << x;
          ++shared;
        }
      }
    }
  }
  EXPECT_GT(single, 0);
  EXPECT_GT(shared, 0);

  // A tile at least as large as the padded image is the untiled path.
  const ImageTensor whole = cli::dehaze_any_size(net, hazy, 0);
  const ImageTensor big_tile = cli::dehaze_any_size(net, hazy, 256);
  EXPECT_TRUE(std::equal(whole.values().begin(), whole.values().end(), big_tile.values().begin()));
}

TEST_F(TrainedRun, TileFlagRunsThroughCli) {
  fs::create_directories(path("tile_in"));
  write_png(path("tile_in/big.png"), testing::procedural_image(140, 300, 9));
  const Outcome r = run_cli({"dehaze", "--checkpoint", checkpoint_.string(), "--input",
                             path("tile_in/big.png").string(), "--out", path("tile_out").string(), "--tile", "128"});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  const ImageTensor big = read_image(path("tile_out/big.png"));
  EXPECT_EQ(big.height(), 140);
  EXPECT_EQ(big.width(), 300);
  EXPECT_EQ(run_cli({"dehaze", "--checkpoint", checkpoint_.string(), "--input", path("tile_in").string(), "--out",
                     path("tile_bad").string(), "--tile", "100"})
                .code,
            cli::kConfigError);
}

TEST_F(TrainedRun, DehazeErrors) {
  fs::create_directories(path("empty"));
  const Outcome empty = run_cli({"dehaze", "--checkpoint", checkpoint_.string(), "--input",
                                 path("empty").string(), "--out", path("e_out").string()});
  EXPECT_EQ(empty.code, cli::kConfigError);
  EXPECT_NE(empty.err.find("no input images"), std::string::npos);

  // Same tensors, but stamped by a different architecture.
  Archive foreign = Archive::load(checkpoint_);
  foreign.set_meta("generator.fingerprint", "0000000000000000");
  foreign.save(path("foreign.dhz"));
  fs::create_directories(path("one"));
  write_png(path("one/a.png"), testing::procedural_image(16, 16, 1));
  EXPECT_EQ(run_cli({"dehaze", "--checkpoint", path("foreign.dhz").string(), "--input", path("one").string(),
                     "--out", path("f_out").string()})
                .code,
            cli::kConfigError);
  EXPECT_EQ(run_cli({"dehaze", "--checkpoint", path("nope.dhz").string(), "--input", path("one").string(),
                     "--out", path("f_out").string()})
                .code,
            cli::kConfigError);
}

// ------------------------------------------------------------------ evaluate

class EvaluateCli : public ::testing::Test {
 protected:
  void SetUp() override {
    testing::write_clean_images(dir_ / "truth", 3, 32, 32, 4);
    testing::write_clean_images(dir_ / "same", 3, 32, 32, 4);
  }
  testing::TempDir dir_{"cli_eval"};
};

TEST_F(EvaluateCli, IdenticalImagesGiveInfAndOne) {
  const Outcome r = run_cli({"evaluate", "--results", (dir_ / "same").string(), "--truth",
                             (dir_ / "truth").string(), "--out", (dir_ / "report.tsv").string()});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  const auto lines = lines_of(r.out);
  ASSERT_GE(lines.size(), 6u);
  EXPECT_EQ(lines[0], "PSNR_AVG\tSSIM_AVG\tPSNR_SD\tSSIM_SD");
  const auto summary = split_tabs(lines[1]);
  EXPECT_EQ(summary[0], "inf");
  EXPECT_EQ(summary[1], "1.000000");
  EXPECT_EQ(lines[3], "name\tPSNR\tSSIM");
  EXPECT_EQ(split_tabs(lines[4])[0], "img_000.png");

  std::ifstream f(dir_ / "report.tsv");
  std::stringstream s;
  s << f.rdbuf();
  EXPECT_EQ(s.str(), r.out);
  const json m = read_json(dir_ / "report.tsv.manifest.json");
  EXPECT_EQ(m["subcommand"], "evaluate");
  EXPECT_EQ(m["artifacts"]["report"], to_hex(file_fingerprint(dir_ / "report.tsv")));
}

TEST_F(EvaluateCli, HazyBaselineMatchesMetricsModule) {
  const fs::path pairs = testing::make_paired_set(dir_.path() / "set", 3, 32, 8);
  const Outcome r = run_cli({"evaluate", "--results", (pairs / "hazy").string(), "--truth",
                             (pairs / "clean").string(), "--manifest", (dir_ / "m.json").string()});
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;

  std::vector<metrics::ImageScore> rows;
  for (const auto& p : list_images(pairs / "clean")) {
    const ImageTensor t = read_image(p), h = read_image(pairs / "hazy" / p.filename());
    rows.push_back({p.filename().string(), metrics::psnr(t, h), metrics::ssim(t, h)});
  }
  const auto expected = metrics::summarize(rows);
  EXPECT_EQ(r.out, metrics::format_report(expected));
  EXPECT_TRUE(std::isfinite(expected.psnr_avg));
  EXPECT_LT(expected.ssim_avg, 1.0);
  EXPECT_TRUE(fs::is_regular_file(dir_ / "m.json"));
}

TEST_F(EvaluateCli, UnmatchedNamesAreListed) {
  fs::rename(dir_ / "same" / "img_001.png", dir_ / "same" / "other.png");
  const Outcome r =
      run_cli({"evaluate", "--results", (dir_ / "same").string(), "--truth", (dir_ / "truth").string(),
               "--manifest", (dir_ / "m.json").string()});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("other.png"), std::string::npos);
  EXPECT_NE(r.err.find("img_001.png"), std::string::npos);
  EXPECT_EQ(read_json(dir_ / "m.json")["exit_code"], 2);
}

TEST_F(EvaluateCli, OptionErrors) {
  EXPECT_EQ(run_cli({"evaluate", "--results", (dir_ / "same").string(), "--truth", (dir_ / "truth").string(),
                     "--ssim-mode", "local", "--manifest", (dir_ / "m.json").string()})
                .code,
            cli::kConfigError);
  EXPECT_EQ(run_cli({"evaluate", "--results", (dir_ / "none").string(), "--truth", (dir_ / "truth").string(),
                     "--manifest", (dir_ / "m.json").string()})
                .code,
            cli::kConfigError);
}

TEST_F(EvaluateCli, WindowedAndPerChannelModesRun) {
  for (const std::vector<std::string> extra :
       {std::vector<std::string>{"--ssim-mode", "windowed"}, {"--per-channel"}, {"--peak", "255"}}) {
    std::vector<std::string> a{"evaluate", "--results", (dir_ / "same").string(), "--truth",
                               (dir_ / "truth").string(), "--manifest", (dir_ / "m.json").string()};
    a.insert(a.end(), extra.begin(), extra.end());
    const Outcome r = run_cli(a);
    ASSERT_EQ(r.code, cli::kSuccess) << r.err;
    EXPECT_EQ(split_tabs(lines_of(r.out)[1])[1], "1.000000");
  }
}

// ------------------------------------------------------------------ det-eval

class DetEvalCli : public ::testing::Test {
 protected:
  Outcome eval(const std::string& preds, const std::string& truths) {
    write_text(dir_ / "p.tsv", preds);
    write_text(dir_ / "t.tsv", truths);
    return run_cli({"det-eval", "--predictions", (dir_ / "p.tsv").string(), "--truths", (dir_ / "t.tsv").string(),
                    "--out", (dir_ / "ap.tsv").string()});
  }
  static std::string map_line(const std::string& out) {
    const auto lines = lines_of(out);
    return lines.empty() ? "" : lines.back();
  }
  testing::TempDir dir_{"cli_det"};
};

constexpr const char* kTwoTruths =
    "im1\tcar\t-\t0\t0\t10\t10\n"
    "im1\tcar\t-\t20\t20\t30\t30\n";

TEST_F(DetEvalCli, PerfectPredictionsGiveOne) {
  const Outcome r = eval(
      "im1\tcar\t0.9\t0\t0\t10\t10\n"
      "im1\tcar\t0.8\t20\t20\t30\t30\n",
      kTwoTruths);
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  EXPECT_EQ(map_line(r.out), "mAP\t1.000000");
  EXPECT_EQ(lines_of(r.out)[0], "category\tAP\ttruths\tpredictions");
  const json m = read_json(dir_ / "ap.tsv.manifest.json");
  EXPECT_EQ(m["subcommand"], "det-eval");
  EXPECT_EQ(m["artifacts"]["table"], to_hex(file_fingerprint(dir_ / "ap.tsv")));
}

TEST_F(DetEvalCli, EmptyPredictionsGiveZero) {
  const Outcome r = eval("", kTwoTruths);
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  EXPECT_EQ(map_line(r.out), "mAP\t0.000000");
}

TEST_F(DetEvalCli, ThreePredictionFixture) {
  // Scores 0.9 (hit), 0.8 (miss), 0.7 (hit) against two truths: precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1.
  // The interpolated envelope is 1 on (0, 1/2] and 2/3 on (1/2, 1], so AP = 1/2 + 1/3.
  const Outcome r = eval(
      "im1\tcar\t0.9\t0\t0\t10\t10\n"
      "im1\tcar\t0.8\t50\t50\t60\t60\n"
      "im1\tcar\t0.7\t20\t20\t30\t30\n",
      kTwoTruths);
  ASSERT_EQ(r.code, cli::kSuccess) << r.err;
  EXPECT_EQ(map_line(r.out), "mAP\t0.833333");
  EXPECT_EQ(lines_of(r.out)[1], "car\t0.833333\t2\t3");
}

TEST_F(DetEvalCli, MalformedLineReportsItsNumber) {
  const Outcome r = eval(
      "im1\tcar\t0.9\t0\t0\t10\t10\n"
      "im1\tcar\tzero\t0\t0\t10\t10\n",
      kTwoTruths);
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("p.tsv:2:"), std::string::npos) << r.err;
}

TEST_F(DetEvalCli, ScoreColumnRolesAreChecked) {
  EXPECT_EQ(eval("im1\tcar\t-\t0\t0\t10\t10\n", kTwoTruths).code, cli::kConfigError);
  EXPECT_EQ(eval("im1\tcar\t0.9\t0\t0\t10\t10\n", "im1\tcar\t0.5\t0\t0\t10\t10\n").code, cli::kConfigError);
  write_text(dir_ / "p.tsv", "");
  EXPECT_EQ(run_cli({"det-eval", "--predictions", (dir_ / "p.tsv").string(), "--truths",
                     (dir_ / "t.tsv").string(), "--iou", "0", "--manifest", (dir_ / "m.json").string()})
                .code,
            cli::kConfigError);
}

TEST_F(DetEvalCli, RerunsProduceIdenticalArtifacts) {
  const std::string preds = "im1\tcar\t0.9\t0\t0\t10\t10\n";
  ASSERT_EQ(eval(preds, kTwoTruths).code, cli::kSuccess);
  const json first = read_json(dir_ / "ap.tsv.manifest.json");
  ASSERT_EQ(eval(preds, kTwoTruths).code, cli::kSuccess);
  const json second = read_json(dir_ / "ap.tsv.manifest.json");
  EXPECT_EQ(first["artifacts"], second["artifacts"]);
}

}  // namespace
}  // namespace dehaze
