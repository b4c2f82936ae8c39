#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dehaze/archive.hpp"
#include "dehaze/haze_model.hpp"
#include "dehaze/image.hpp"

namespace dehaze::dataset {

enum class HazeMode { DepthBased, ConstantT };

std::string to_string(HazeMode mode);
/// Accepts "depth-based" and "constant-t"; anything else is a ConfigError.
HazeMode parse_mode(std::string_view text);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SynthesisRecipe {
  HazeMode mode = HazeMode::ConstantT;
  Range beta{0.6, 1.8};
  Range t{0.2, 0.6};
  Range light{0.7, 1.0};
  std::uint64_t seed = 0;

  /// Throws ConfigError unless 0 < lo <= hi, light within [0, 1] and t within (0, 1].
  void validate() const;

  static SynthesisRecipe indoor(std::uint64_t seed = 0);
  static SynthesisRecipe remote_sensing(std::uint64_t seed = 0);
};

struct HazeParameters {
  haze::AtmosphericLight light;
  HazeMode mode = HazeMode::ConstantT;
  double beta_or_t = 1.0;
};

struct ManifestRecord {
  std::string name;
  HazeParameters params;
  std::uint64_t seed = 0;
};

struct PairedSample {
  std::string name;
  ImageTensor hazy;
  ImageTensor clean;
  HazeParameters params;
};

/// Draws the parameters for one image from the recipe. The random stream
/// depends only on (recipe.seed, name), so results do not depend on which
/// other images are processed or in what order.
HazeParameters sample_parameters(const SynthesisRecipe& recipe, std::string_view name);

/// Reads a depth image as a single channel and divides by its maximum.
haze::DepthMap read_depth(const std::filesystem::path& path);

/// Applies the haze model with the given parameters. `depth` is required in depth-based mode.
ImageTensor apply_parameters(const ImageTensor& clean, const HazeParameters& params,
                             const haze::DepthMap* depth = nullptr);

using WarningSink = std::function<void(const std::string&)>;

/// Writes out/hazy/<stem>.png, out/clean/<stem>.png and out/manifest.tsv for the first
/// `count` readable images of clean_dir (sorted by filename). Depth maps are matched by stem.
std::vector<ManifestRecord> generate_pairs(const std::filesystem::path& clean_dir,
                                           const std::optional<std::filesystem::path>& depth_dir,
                                           const SynthesisRecipe& recipe, const std::filesystem::path& out,
                                           int count, const WarningSink& warn = {});

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

/// Sorted filenames common to root/hazy and root/clean. Throws DatasetIntegrityError
/// listing the names present on only one side.
std::vector<std::string> matched_names(const std::filesystem::path& root);

struct Batch {
  Tensor<float> hazy;   // N x 3 x patch x patch
  Tensor<float> clean;  // same shape
  std::vector<std::string> names;
  std::int64_t epoch = 0;
  std::size_t index = 0;  // batch index within the epoch
};

/// Seeded stream of aligned random crops. Each epoch visits every pair once in a
/// shuffled order; the last batch of an epoch may be smaller than `batch`.
class PairLoader {
 public:
  /// patch == 0 uses whole images, which then must all share one size.
  PairLoader(const std::filesystem::path& root, int patch, int batch, std::uint64_t seed);

  std::size_t pair_count() const noexcept { return pairs_.size(); }
  std::size_t batches_per_epoch() const noexcept;
  int patch() const noexcept { return patch_; }
  const std::vector<PairedSample>& pairs() const noexcept { return pairs_; }

  Batch next();

  /// Loader position (RNG, epoch, cursor, order) as archive metadata under "loader.".
  void save_state(Archive& archive) const;
  void load_state(const Archive& archive);

  /// Hash of the pair names and pixel contents, used to tie checkpoints to a dataset.
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }

 private:
  void start_epoch();

  std::vector<PairedSample> pairs_;
  int patch_ = 0;
  int batch_ = 1;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::int64_t epoch_ = -1;
  std::uint64_t fingerprint_ = 0;
};

}  // namespace dehaze::dataset
