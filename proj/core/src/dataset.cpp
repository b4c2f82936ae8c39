#include "dehaze/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace dehaze::dataset {

namespace fs = std::filesystem;

namespace {

// Portable draws so parameters do not depend on the standard library's distributions.
double unit_interval(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return static_cast<std::size_t>(v % bound);
}

double draw(std::mt19937_64& rng, const Range& r) { return r.lo + unit_interval(rng) * (r.hi - r.lo); }

std::uint64_t substream_seed(std::uint64_t seed, std::string_view name) {
  std::string key(reinterpret_cast<const char*>(&seed), sizeof seed);
  key.append(name);
  return fnv1a64(key);
}

void check_range(const Range& r, const char* what) {
  if (!(r.lo > 0.0) || !(r.lo <= r.hi) || !std::isfinite(r.hi)) {
    throw ConfigError(std::string(what) + " range must satisfy 0 < lo <= hi");
  }
}

std::string format_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::string> filenames(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& p : list_images(dir)) out.push_back(p.filename().string());
  return out;
}

}  // namespace

std::string to_string(HazeMode mode) { return mode == HazeMode::DepthBased ? "depth-based" : "constant-t"; }

HazeMode parse_mode(std::string_view text) {
  if (text == "depth-based") return HazeMode::DepthBased;
  if (text == "constant-t") return HazeMode::ConstantT;
  throw ConfigError("unknown haze mode '" + std::string(text) + "' (expected depth-based or constant-t)");
}

void SynthesisRecipe::validate() const {
  check_range(beta, "beta");
  check_range(t, "t");
  check_range(light, "light");
  if (light.hi > 1.0) throw ConfigError("light range must lie within [0, 1]");
  if (t.hi > 1.0) throw ConfigError("t range must lie within (0, 1]");
}

SynthesisRecipe SynthesisRecipe::indoor(std::uint64_t seed) {
  SynthesisRecipe r;
  r.mode = HazeMode::DepthBased;
  r.seed = seed;
  return r;
}

SynthesisRecipe SynthesisRecipe::remote_sensing(std::uint64_t seed) {
  SynthesisRecipe r;
  r.mode = HazeMode::ConstantT;
  r.seed = seed;
  return r;
}

HazeParameters sample_parameters(const SynthesisRecipe& recipe, std::string_view name) {
  recipe.validate();
  std::mt19937_64 rng(substream_seed(recipe.seed, name));
  HazeParameters p;
  p.mode = recipe.mode;
  for (float& a : p.light.a) a = static_cast<float>(draw(rng, recipe.light));
  p.beta_or_t = draw(rng, recipe.mode == HazeMode::DepthBased ? recipe.beta : recipe.t);
  // Stored values are what the manifest round-trips, so use the float value for t.
  if (p.mode == HazeMode::ConstantT) p.beta_or_t = static_cast<float>(p.beta_or_t);
  return p;
}

haze::DepthMap read_depth(const fs::path& path) {
  const ImageTensor raw = read_image(path, /*force_color=*/false);
  haze::DepthMap d;
  d.height = raw.height();
  d.width = raw.width();
  d.data.resize(static_cast<std::size_t>(d.height) * d.width);
  float peak = 0.0f;
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const float v = raw.at(y, x, 0);
      d.data[static_cast<std::size_t>(y) * d.width + x] = v;
      peak = std::max(peak, v);
    }
  }
  if (peak > 0.0f) {
    for (float& v : d.data) v /= peak;
  }
  return d;
}

ImageTensor apply_parameters(const ImageTensor& clean, const HazeParameters& params, const haze::DepthMap* depth) {
  if (params.mode == HazeMode::ConstantT) {
    return haze::synthesize_haze(clean, haze::TransmissionMap(clean.height(), clean.width(),
                                                              static_cast<float>(params.beta_or_t)),
                                 params.light);
  }
  if (depth == nullptr) throw ConfigError("depth-based synthesis needs a depth map");
  if (depth->height != clean.height() || depth->width != clean.width()) {
    throw InvalidArgument("depth map " + std::to_string(depth->height) + "x" + std::to_string(depth->width) +
                          " does not match image " + clean.shape_str());
  }
  return haze::synthesize_haze(clean, haze::transmission_from_depth(*depth, params.beta_or_t), params.light);
}

namespace {

std::optional<fs::path> find_depth(const fs::path& dir, const fs::path& image) {
  const auto stem = image.stem();
  for (const auto& p : list_images(dir)) {
    if (p.stem() == stem) return p;
  }
  return std::nullopt;
}

}  // namespace

std::vector<ManifestRecord> generate_pairs(const fs::path& clean_dir, const std::optional<fs::path>& depth_dir,
                                           const SynthesisRecipe& recipe, const fs::path& out, int count,
                                           const WarningSink& warn) {
  recipe.validate();
  if (count < 1) throw ConfigError("count must be at least 1");
  if (recipe.mode == HazeMode::DepthBased && (!depth_dir || !fs::is_directory(*depth_dir))) {
    throw ConfigError("depth-based mode requires an existing depth directory");
  }
  if (!fs::is_directory(clean_dir)) throw ConfigError("clean source is not a directory: " + clean_dir.string());
  const auto sources = list_images(clean_dir);
  if (sources.empty()) throw ConfigError("no images in " + clean_dir.string());

  const auto log = [&](const std::string& msg) {
    if (warn) warn(msg);
  };

  std::vector<ManifestRecord> records;
  fs::create_directories(out / "hazy");
  fs::create_directories(out / "clean");
  for (const auto& src : sources) {
    if (static_cast<int>(records.size()) == count) break;
    const std::string name = src.stem().string() + ".png";
    ImageTensor clean;
    haze::DepthMap depth;
    try {
      clean = quantize8(read_image(src));
      if (recipe.mode == HazeMode::DepthBased) {
        const auto depth_path = find_depth(*depth_dir, src);
        if (!depth_path) {
          log("skipping " + src.filename().string() + ": no depth map");
          continue;
        }
        depth = read_depth(*depth_path);
        if (depth.height != clean.height() || depth.width != clean.width()) {
          log("skipping " + src.filename().string() + ": depth map size differs");
          continue;
        }
      }
    } catch (const IoError& e) {
      log("skipping " + src.filename().string() + ": " + e.what());
      continue;
    }
    if (std::any_of(records.begin(), records.end(), [&](const ManifestRecord& r) { return r.name == name; })) {
      log("skipping " + src.filename().string() + ": duplicate output name " + name);
      continue;
    }

    ManifestRecord rec{name, sample_parameters(recipe, name), recipe.seed};
    const ImageTensor hazy = apply_parameters(clean, rec.params, &depth);
    write_png(out / "clean" / name, clean);
    write_png(out / "hazy" / name, hazy);
    records.push_back(std::move(rec));
  }
  if (static_cast<int>(records.size()) < count) {
    throw ConfigError("only " + std::to_string(records.size()) + " usable images, " + std::to_string(count) +
                      " requested");
  }
  write_manifest(out / "manifest.tsv", records);
  return records;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  std::ostringstream os;
  os << "name\tm1\tm2\tm3\tmode\tbeta_or_t\tseed\n";
  for (const auto& r : records) {
    os << r.name;
    for (float a : r.params.light.a) os << '\t' << format_g(a);
    os << '\t' << to_string(r.params.mode) << '\t' << format_g(r.params.beta_or_t) << '\t' << r.seed << '\n';
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << os.str();
    if (!f) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(f, line);  // header
  std::vector<ManifestRecord> out;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    ManifestRecord r;
    std::string mode;
    if (!std::getline(is, r.name, '\t') || !(is >> r.params.light.a[0] >> r.params.light.a[1] >> r.params.light.a[2] >>
                                             mode >> r.params.beta_or_t >> r.seed)) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed manifest record");
    }
    r.params.mode = parse_mode(mode);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> matched_names(const fs::path& root) {
  if (!fs::is_directory(root / "hazy") || !fs::is_directory(root / "clean")) {
    throw DatasetIntegrityError(root.string() + " must contain hazy/ and clean/ directories");
  }
  const auto hazy = filenames(root / "hazy");
  const auto clean = filenames(root / "clean");
  std::vector<std::string> only_hazy, only_clean;
  std::set_difference(hazy.begin(), hazy.end(), clean.begin(), clean.end(), std::back_inserter(only_hazy));
  std::set_difference(clean.begin(), clean.end(), hazy.begin(), hazy.end(), std::back_inserter(only_clean));
  if (!only_hazy.empty() || !only_clean.empty()) {
    std::string msg = "hazy/ and clean/ filenames differ;";
    if (!only_hazy.empty()) {
      msg += " only in hazy:";
      for (const auto& n : only_hazy) msg += " " + n;
      msg += ";";
    }
    if (!only_clean.empty()) {
      msg += " only in clean:";
      for (const auto& n : only_clean) msg += " " + n;
    }
    throw DatasetIntegrityError(msg);
  }
  if (hazy.empty()) throw DatasetIntegrityError("no image pairs under " + root.string());
  return hazy;
}

PairLoader::PairLoader(const fs::path& root, int patch, int batch, std::uint64_t seed)
    : patch_(patch), batch_(batch), rng_(seed) {
  if (patch < 0) throw ConfigError("patch size must be non-negative");
  if (batch < 1) throw ConfigError("batch size must be at least 1");
  std::string digest;
  for (const auto& name : matched_names(root)) {
    PairedSample s;
    s.name = name;
    s.hazy = read_image(root / "hazy" / name);
    s.clean = read_image(root / "clean" / name);
    if (!s.hazy.same_shape(s.clean)) {
      throw DatasetIntegrityError(name + ": hazy " + s.hazy.shape_str() + " vs clean " + s.clean.shape_str());
    }
    if (patch > 0 && (s.hazy.height() < patch || s.hazy.width() < patch)) {
      throw DatasetIntegrityError(name + " (" + s.hazy.shape_str() + ") is smaller than the " +
                                  std::to_string(patch) + " pixel patch");
    }
    if (patch == 0 && !pairs_.empty() && !s.hazy.same_shape(pairs_.front().hazy)) {
      throw DatasetIntegrityError("whole-image batches need equally sized images; " + name + " is " +
                                  s.hazy.shape_str());
    }
    digest += name;
    for (const ImageTensor* im : {&s.hazy, &s.clean}) {
      digest.append(reinterpret_cast<const char*>(im->values().data()), im->values().size_bytes());
    }
    pairs_.push_back(std::move(s));
  }
  fingerprint_ = fnv1a64(digest);
}

std::size_t PairLoader::batches_per_epoch() const noexcept {
  return (pairs_.size() + static_cast<std::size_t>(batch_) - 1) / static_cast<std::size_t>(batch_);
}

void PairLoader::start_epoch() {
  ++epoch_;
  cursor_ = 0;
  order_.resize(pairs_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);
}

Batch PairLoader::next() {
  if (epoch_ < 0 || cursor_ >= order_.size()) start_epoch();
  const std::size_t take = std::min(static_cast<std::size_t>(batch_), order_.size() - cursor_);

  Batch b;
  b.epoch = epoch_;
  b.index = cursor_ / static_cast<std::size_t>(batch_);
  std::vector<ImageTensor> hazy, clean;
  for (std::size_t k = 0; k < take; ++k) {
    const PairedSample& s = pairs_[order_[cursor_ + k]];
    b.names.push_back(s.name);
    if (patch_ == 0) {
      hazy.push_back(s.hazy);
      clean.push_back(s.clean);
      continue;
    }
    const int y0 = static_cast<int>(uniform_index(rng_, static_cast<std::size_t>(s.hazy.height() - patch_ + 1)));
    const int x0 = static_cast<int>(uniform_index(rng_, static_cast<std::size_t>(s.hazy.width() - patch_ + 1)));
    hazy.push_back(crop(s.hazy, y0, x0, patch_, patch_));
    clean.push_back(crop(s.clean, y0, x0, patch_, patch_));
  }
  cursor_ += take;
  b.hazy = to_batch<float>(hazy);
  b.clean = to_batch<float>(clean);
  return b;
}

void PairLoader::save_state(Archive& archive) const {
  std::ostringstream rng;
  rng << rng_;
  archive.set_meta("loader.rng", rng.str());
  archive.set_meta("loader.epoch", std::to_string(epoch_));
  archive.set_meta("loader.cursor", std::to_string(cursor_));
  std::string order;
  for (std::size_t i = 0; i < order_.size(); ++i) order += (i ? "," : "") + std::to_string(order_[i]);
  archive.set_meta("loader.order", order);
}

void PairLoader::load_state(const Archive& archive) {
  std::istringstream rng(archive.require_meta("loader.rng"));
  rng >> rng_;
  if (!rng) throw IoError("corrupt loader RNG state");
  epoch_ = std::stoll(archive.require_meta("loader.epoch"));
  cursor_ = std::stoull(archive.require_meta("loader.cursor"));
  order_.clear();
  std::istringstream is(archive.require_meta("loader.order"));
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) order_.push_back(std::stoull(tok));
  }
  if (epoch_ >= 0 && order_.size() != pairs_.size()) throw IoError("loader state was saved for a different dataset");
  for (std::size_t i : order_) {
    if (i >= pairs_.size()) throw IoError("loader state was saved for a different dataset");
  }
}

}  // namespace dehaze::dataset
