#include "dehaze/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "dehaze/archive.hpp"
#include "dehaze/dataset.hpp"
#include "dehaze/metrics.hpp"
#include "dehaze/trainer.hpp"

namespace dehaze::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kLockName = ".dehaze.lock";
constexpr const char* kManifestName = "run_manifest.json";

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Exclusive ownership of an output directory for the lifetime of a run.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / kLockName) {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
      throw ConfigError("output directory " + dir.string() + " is in use by another run (remove " + path_.string() +
                        " if that run no longer exists)");
    }
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

/// Collects what a run did and writes it as JSON when the run ends.
struct RunManifest {
  std::string subcommand;
  std::vector<std::string> arguments;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string started_at = utc_now();
  std::map<std::string, std::string> artifacts;
  fs::path destination;

  void write(int exit_code) const {
    if (destination.empty()) return;
    json j;
    j["subcommand"] = subcommand;
    j["arguments"] = arguments;
    j["config_path"] = config_path;
    j["seed"] = seed;
    j["started_at"] = started_at;
    j["finished_at"] = utc_now();
    j["exit_code"] = exit_code;
    j["artifacts"] = artifacts;
    std::error_code ec;
    if (destination.has_parent_path()) fs::create_directories(destination.parent_path(), ec);
    std::ofstream f(destination);
    f << j.dump(2) << '\n';
  }
};

dataset::Range parse_range(const std::string& text, const char* flag) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ConfigError(std::string(flag) + " expects lo,hi");
  try {
    std::size_t a = 0, b = 0;
    const std::string lo = text.substr(0, comma), hi = text.substr(comma + 1);
    dataset::Range r{std::stod(lo, &a), std::stod(hi, &b)};
    if (a == lo.size() && b == hi.size()) return r;
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string(flag) + " expects lo,hi, got '" + text + "'");
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw ConfigError(std::string(what) + " is not a directory: " + p.string());
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw ConfigError(std::string(what) + " does not exist: " + p.string());
}

std::vector<std::string> names_in(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& p : list_images(dir)) out.push_back(p.filename().string());
  return out;
}

std::vector<std::string> check_matching(const fs::path& a_dir, const fs::path& b_dir, const char* a_label,
                                        const char* b_label) {
  const auto a = names_in(a_dir), b = names_in(b_dir);
  std::vector<std::string> only_a, only_b;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(only_a));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(only_b));
  if (!only_a.empty() || !only_b.empty()) {
    std::string msg = "filenames differ;";
    if (!only_a.empty()) {
      msg += std::string(" only in ") + a_label + ":";
      for (const auto& n : only_a) msg += " " + n;
      msg += ";";
    }
    if (!only_b.empty()) {
      msg += std::string(" only in ") + b_label + ":";
      for (const auto& n : only_b) msg += " " + n;
    }
    throw DatasetIntegrityError(msg);
  }
  if (a.empty()) throw ConfigError(std::string("no images in ") + a_dir.string());
  return a;
}

// ---------------------------------------------------------------- synthesize

struct SynthesizeArgs {
  std::string mode = "constant-t";
  std::string beta_range = "0.6,1.8";
  std::string t_range = "0.2,0.6";
  std::string light_range = "0.7,1.0";
  std::uint64_t seed = 0;
  int count = 0;
  fs::path clean_dir, depth_dir, out;
};

int cmd_synthesize(const SynthesizeArgs& a, RunManifest& m, std::ostream& out, std::ostream& err) {
  m.seed = a.seed;
  m.destination = a.out / kManifestName;
  if (a.count < 1) throw ConfigError("--count must be at least 1");
  dataset::SynthesisRecipe recipe;
  recipe.mode = dataset::parse_mode(a.mode);
  recipe.beta = parse_range(a.beta_range, "--beta-range");
  recipe.t = parse_range(a.t_range, "--t-range");
  recipe.light = parse_range(a.light_range, "--light-range");
  recipe.seed = a.seed;
  recipe.validate();
  require_dir(a.clean_dir, "--clean-dir");
  std::optional<fs::path> depth;
  if (!a.depth_dir.empty()) depth = a.depth_dir;

  OutputLock lock(a.out);
  dataset::generate_pairs(a.clean_dir, depth, recipe, a.out, a.count,
                          [&](const std::string& w) { err << "warning: " << w << '\n'; });
  m.artifacts["dataset"] = directory_fingerprint(a.out);
  m.artifacts["manifest.tsv"] = to_hex(file_fingerprint(a.out / "manifest.tsv"));
  out << (a.out / "manifest.tsv").string() << '\n';
  return kSuccess;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path config, data, out, resume;
  std::string preset;
  std::int64_t max_iterations = 0;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, RunManifest& m, std::ostream& out, std::ostream& err) {
  m.destination = a.out / kManifestName;
  m.config_path = a.config.string();
  require_file(a.config, "--config");
  TrainConfig cfg = TrainConfig::load(a.config);
  if (!a.preset.empty()) cfg.preset = parse_preset(a.preset);
  if (a.max_iterations > 0) cfg.max_iterations = a.max_iterations;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  m.seed = cfg.seed;
  require_dir(a.data, "--data");
  TrainOptions opts;
  if (!a.resume.empty()) {
    require_file(a.resume, "--resume");
    opts.resume = a.resume;
  }

  OutputLock lock(a.out);
  try {
    const TrainResult r = train(cfg, a.data, a.out, opts);
    m.artifacts["dataset"] = directory_fingerprint(a.data);
    m.artifacts["checkpoint"] = to_hex(file_fingerprint(r.final_checkpoint));
    out << r.final_checkpoint.string() << '\n';
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    if (!e.dump_path().empty()) err << "diagnostics: " << e.dump_path() << '\n';
    return kNumericalFailure;
  }
  return kSuccess;
}

// ---------------------------------------------------------------- dehaze

struct DehazeArgs {
  fs::path checkpoint, input, out;
  int tile = 0;
  std::uint64_t seed = 0;
};

int cmd_dehaze(const DehazeArgs& a, RunManifest& m, std::ostream& out, std::ostream&) {
  m.seed = a.seed;
  m.destination = a.out / kManifestName;
  require_file(a.checkpoint, "--checkpoint");
  if (a.tile != 0 && (a.tile < 4 * kTileOverlap || a.tile % 4 != 0)) {
    throw ConfigError("--tile must be a multiple of 4 and at least " + std::to_string(4 * kTileOverlap));
  }
  std::vector<fs::path> inputs;
  if (fs::is_regular_file(a.input)) {
    inputs.push_back(a.input);
  } else if (fs::is_directory(a.input)) {
    inputs = list_images(a.input);
  } else {
    throw ConfigError("--input does not exist: " + a.input.string());
  }
  if (inputs.empty()) throw ConfigError("no input images in " + a.input.string());

  Generator<float> net;
  net.load(Archive::load(a.checkpoint));
  m.artifacts["checkpoint"] = to_hex(file_fingerprint(a.checkpoint));

  OutputLock lock(a.out);
  for (const auto& p : inputs) {
    const ImageTensor hazy = read_image(p);
    const fs::path dst = a.out / (p.stem().string() + ".png");
    write_png(dst, dehaze_any_size(net, hazy, a.tile));
    out << dst.string() << '\n';
  }
  m.artifacts["outputs"] = directory_fingerprint(a.out);
  return kSuccess;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  fs::path results, truth, out, manifest;
  double peak = 1.0;
  std::string ssim_mode = "global";
  bool per_channel = false;
  std::uint64_t seed = 0;
};

int cmd_evaluate(const EvaluateArgs& a, RunManifest& m, std::ostream& out, std::ostream&) {
  m.seed = a.seed;
  require_dir(a.results, "--results");
  require_dir(a.truth, "--truth");
  metrics::SsimConfig cfg = metrics::SsimConfig::for_range(a.peak);
  if (a.ssim_mode == "windowed") cfg.mode = metrics::SsimMode::Windowed;
  else if (a.ssim_mode != "global") throw ConfigError("--ssim-mode must be global or windowed");
  if (a.per_channel) cfg.color = metrics::SsimColor::PerChannel;

  const auto names = check_matching(a.results, a.truth, "results", "truth");
  std::vector<metrics::ImageScore> rows;
  for (const auto& n : names) {
    ImageTensor r = read_image(a.results / n), t = read_image(a.truth / n);
    if (a.peak != 1.0) {
      for (auto* im : {&r, &t}) {
        for (float& v : im->values()) v = static_cast<float>(v * a.peak);
      }
    }
    if (!r.same_shape(t)) throw InvalidArgument(n + ": result " + r.shape_str() + " vs truth " + t.shape_str());
    rows.push_back({n, metrics::psnr(t, r, a.peak), metrics::ssim(t, r, cfg)});
  }
  const std::string report = metrics::format_report(metrics::summarize(std::move(rows)));
  out << report;
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw IoError("cannot write " + a.out.string());
    f << report;
    f.close();
    m.artifacts["report"] = to_hex(file_fingerprint(a.out));
  }
  return kSuccess;
}

// ---------------------------------------------------------------- det-eval

struct DetEvalArgs {
  fs::path predictions, truths, out, manifest;
  double iou = 0.5;
  std::uint64_t seed = 0;
};

int cmd_det_eval(const DetEvalArgs& a, RunManifest& m, std::ostream& out, std::ostream& err) {
  m.seed = a.seed;
  require_file(a.predictions, "--predictions");
  require_file(a.truths, "--truths");
  if (!(a.iou > 0.0 && a.iou <= 1.0)) throw ConfigError("--iou must lie in (0, 1]");
  const auto preds = metrics::read_detections(a.predictions);
  const auto truths = metrics::read_detections(a.truths);
  for (const auto& p : preds) {
    if (!p.score) throw InvalidArgument(a.predictions.string() + ": prediction for " + p.image_id + " has no score");
  }
  for (const auto& t : truths) {
    if (t.score) throw InvalidArgument(a.truths.string() + ": ground truth for " + t.image_id + " has a score");
  }
  const auto result =
      metrics::mean_average_precision(preds, truths, metrics::categories_of(truths, preds), a.iou);
  for (const auto& w : result.warnings) err << "warning: " << w << '\n';
  const std::string table = metrics::format_ap_table(result);
  out << table;
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw IoError("cannot write " + a.out.string());
    f << table;
    f.close();
    m.artifacts["table"] = to_hex(file_fingerprint(a.out));
  }
  m.artifacts["predictions"] = to_hex(file_fingerprint(a.predictions));
  m.artifacts["truths"] = to_hex(file_fingerprint(a.truths));
  return kSuccess;
}

fs::path side_manifest(const fs::path& explicit_path, const fs::path& out) {
  if (!explicit_path.empty()) return explicit_path;
  if (!out.empty()) return fs::path(out.string() + ".manifest.json");
  return kManifestName;
}

}  // namespace

std::vector<int> tile_origins(int extent, int tile, int overlap) {
  if (tile >= extent) return {0};
  const int stride = tile - overlap;
  if (stride < 1) throw InvalidArgument("tile must be larger than the overlap");
  std::vector<int> o;
  for (int p = 0; p + tile < extent; p += stride) o.push_back(p);
  o.push_back(extent - tile);
  return o;
}

ImageTensor dehaze_any_size(const Generator<float>& net, const ImageTensor& hazy, int tile) {
  const int H = hazy.height(), W = hazy.width();
  const ImageTensor padded = reflect_pad(hazy, (4 - H % 4) % 4, (4 - W % 4) % 4);
  const int Hp = padded.height(), Wp = padded.width();
  ImageTensor result;
  if (tile <= 0 || (Hp <= tile && Wp <= tile)) {
    result = dehaze::dehaze(net, padded);
  } else {
    const int th = std::min(tile, Hp), tw = std::min(tile, Wp);
    const auto ys = tile_origins(Hp, th, kTileOverlap);
    const auto xs = tile_origins(Wp, tw, kTileOverlap);
    std::vector<double> acc(static_cast<std::size_t>(Hp) * Wp * 3, 0.0), wsum(static_cast<std::size_t>(Hp) * Wp, 0.0);
    // Linear ramp over the overlap on every edge shared with another tile.
    const auto ramp = [](int i, int n, bool before, bool after) {
      double w = 1.0;
      if (before) w = std::min(w, (i + 1.0) / (kTileOverlap + 1.0));
      if (after) w = std::min(w, (n - i) / (kTileOverlap + 1.0));
      return w;
    };
    for (int y0 : ys) {
      for (int x0 : xs) {
        const ImageTensor piece = dehaze::dehaze(net, crop(padded, y0, x0, th, tw));
        for (int y = 0; y < th; ++y) {
          const double wy = ramp(y, th, y0 > 0, y0 + th < Hp);
          for (int x = 0; x < tw; ++x) {
            const double w = wy * ramp(x, tw, x0 > 0, x0 + tw < Wp);
            const std::size_t p = static_cast<std::size_t>(y0 + y) * Wp + (x0 + x);
            wsum[p] += w;
            for (int c = 0; c < 3; ++c) acc[p * 3 + c] += w * piece.at(y, x, c);
          }
        }
      }
    }
    result = ImageTensor(Hp, Wp, 3);
    for (int y = 0; y < Hp; ++y) {
      for (int x = 0; x < Wp; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * Wp + x;
        for (int c = 0; c < 3; ++c) result.at(y, x, c) = static_cast<float>(acc[p * 3 + c] / wsum[p]);
      }
    }
  }
  return crop(result, 0, 0, H, W);
}

std::string directory_fingerprint(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename();
    if (name == kManifestName || name == kLockName) continue;
    files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  std::string digest;
  for (const auto& f : files) {
    digest += f.generic_string();
    digest += '\0';
    digest += to_hex(file_fingerprint(dir / f));
  }
  return to_hex(fnv1a64(digest));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature-supervised GAN dehazing: data synthesis, training, inference and evaluation", "dehaze"};
  app.require_subcommand(1);

  SynthesizeArgs syn;
  auto* s = app.add_subcommand("synthesize", "Generate paired hazy/clean images with the scattering model");
  s->add_option("--mode", syn.mode, "depth-based or constant-t")->capture_default_str();
  s->add_option("--beta-range", syn.beta_range, "Scattering coefficient range lo,hi")->capture_default_str();
  s->add_option("--t-range", syn.t_range, "Transmission range lo,hi (constant-t mode)")->capture_default_str();
  s->add_option("--light-range", syn.light_range, "Airlight component range lo,hi")->capture_default_str();
  s->add_option("--seed", syn.seed, "Random seed")->capture_default_str();
  s->add_option("--count", syn.count, "Number of pairs to write")->required();
  s->add_option("--clean-dir", syn.clean_dir, "Directory of clean source images")->required();
  s->add_option("--depth-dir", syn.depth_dir, "Depth maps matched by filename stem (depth-based mode)");
  s->add_option("--out", syn.out, "Output dataset directory")->required();

  TrainArgs tr;
  std::uint64_t train_seed = 0;
  auto* t = app.add_subcommand("train", "Train the generator and discriminator");
  t->add_option("--config", tr.config, "key = value training config file")->required();
  t->add_option("--data", tr.data, "Dataset root with hazy/ and clean/")->required();
  t->add_option("--out", tr.out, "Run directory for checkpoints and metrics.tsv")->required();
  t->add_option("--resume", tr.resume, "Checkpoint to continue from");
  t->add_option("--preset", tr.preset, "Loss preset A+P, A+P+FR or A+P+FR+S (overrides config)");
  t->add_option("--max-iterations", tr.max_iterations, "Override max_iterations");
  auto* train_seed_opt = t->add_option("--seed", train_seed, "Override the config seed");

  DehazeArgs dh;
  auto* d = app.add_subcommand("dehaze", "Dehaze images with a trained checkpoint");
  d->add_option("--checkpoint", dh.checkpoint, "Checkpoint written by train")->required();
  d->add_option("--input", dh.input, "Image file or directory")->required();
  d->add_option("--out", dh.out, "Output directory")->required();
  d->add_option("--tile", dh.tile, "Process in tiles of this size with 32 px feathered overlap (0 = whole image)")
      ->capture_default_str();
  d->add_option("--seed", dh.seed, "Recorded in the run manifest; inference is deterministic");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "PSNR/SSIM report for result images against ground truth");
  e->add_option("--results", ev.results, "Directory of result images")->required();
  e->add_option("--truth", ev.truth, "Directory of ground-truth images")->required();
  e->add_option("--out", ev.out, "Also write the report TSV here");
  e->add_option("--peak", ev.peak, "Peak signal value (1 for normalized, 255 for 8-bit scale)")->capture_default_str();
  e->add_option("--ssim-mode", ev.ssim_mode, "global or windowed")->capture_default_str();
  e->add_flag("--per-channel", ev.per_channel, "SSIM per RGB channel instead of on luma");
  e->add_option("--manifest", ev.manifest, "Run manifest path");
  e->add_option("--seed", ev.seed, "Recorded in the run manifest");

  DetEvalArgs de;
  auto* q = app.add_subcommand("det-eval", "Per-category AP and mAP from detection TSV files");
  q->add_option("--predictions", de.predictions, "Prediction TSV")->required();
  q->add_option("--truths", de.truths, "Ground-truth TSV")->required();
  q->add_option("--iou", de.iou, "IoU threshold for a match")->capture_default_str();
  q->add_option("--out", de.out, "Also write the AP table here");
  q->add_option("--manifest", de.manifest, "Run manifest path");
  q->add_option("--seed", de.seed, "Recorded in the run manifest");

  std::vector<const char*> argv{"dehaze"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    }
    return kConfigError;
  }

  RunManifest m;
  m.arguments = args;
  int code = kRuntimeFailure;
  try {
    if (const char* dev = std::getenv(kDeviceEnv); dev != nullptr && std::string(dev) != "cpu") {
      throw ConfigError(std::string(kDeviceEnv) + "='" + dev + "' is not supported; only 'cpu' is available");
    }
    if (s->parsed()) {
      m.subcommand = "synthesize";
      code = cmd_synthesize(syn, m, out, err);
    } else if (t->parsed()) {
      m.subcommand = "train";
      if (train_seed_opt->count() > 0) tr.seed = train_seed;
      code = cmd_train(tr, m, out, err);
    } else if (d->parsed()) {
      m.subcommand = "dehaze";
      code = cmd_dehaze(dh, m, out, err);
    } else if (e->parsed()) {
      m.subcommand = "evaluate";
      m.destination = side_manifest(ev.manifest, ev.out);
      code = cmd_evaluate(ev, m, out, err);
    } else if (q->parsed()) {
      m.subcommand = "det-eval";
      m.destination = side_manifest(de.manifest, de.out);
      code = cmd_det_eval(de, m, out, err);
    }
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << '\n';
    code = kConfigError;
  } catch (const InvalidArgument& ex) {
    err << "error: " << ex.what() << '\n';
    code = kConfigError;
  } catch (const DatasetIntegrityError& ex) {
    err << "error: " << ex.what() << '\n';
    code = kConfigError;
  } catch (const FingerprintMismatch& ex) {
    err << "error: " << ex.what() << '\n';
    code = kConfigError;
  } catch (const NumericalError& ex) {
    err << "numerical failure: " << ex.what() << '\n';
    if (!ex.dump_path().empty()) err << "diagnostics: " << ex.dump_path() << '\n';
    code = kNumericalFailure;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    code = kRuntimeFailure;
  }
  // Failed runs still get a manifest if their output location already exists.
  if (!m.destination.empty()) {
    const fs::path parent = m.destination.has_parent_path() ? m.destination.parent_path() : fs::path(".");
    if (code == kSuccess || fs::is_directory(parent)) {
      try {
        m.write(code);
      } catch (const std::exception& ex) {
        err << "warning: could not write run manifest: " << ex.what() << '\n';
      }
    }
  }
  return code;
}

}  // namespace dehaze::cli
