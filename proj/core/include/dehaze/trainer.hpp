#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "dehaze/dataset.hpp"
#include "dehaze/discriminator.hpp"
#include "dehaze/extractor.hpp"
#include "dehaze/generator.hpp"
#include "dehaze/losses.hpp"
#include "dehaze/optim.hpp"

namespace dehaze {

/// Which generator loss terms are active. Inactive terms get weight 0.
enum class Preset { AP, APFR, APFRS };

std::string to_string(Preset preset);
/// Accepts "A+P", "A+P+FR", "A+P+FR+S".
Preset parse_preset(const std::string& text);

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-3;
  double lr_gamma = 0.5;
  std::int64_t lr_step = 5000;
  std::int64_t max_iterations = 300000;
  int batch_size = 4;
  std::uint64_t seed = 0;
  losses::LossWeights weights;
  Preset preset = Preset::APFRS;
  int patch_size = 256;
  std::int64_t checkpoint_interval = 1000;
  int feature_reg_layer = kEncoderLayers;  // 1-based encoder layer
  losses::L1Reduction feature_reg_reduction = losses::L1Reduction::SumPerSample;
  losses::AdversarialVariant adversarial_variant = losses::AdversarialVariant::Saturating;
  bool symmetric_feature_grad = false;
  bool discriminator_updates = true;
  std::string extractor = "random";  // "random" or an archive path
  std::string extractor_tap = "pool3";
  std::uint64_t extractor_seed = 0;

  /// Throws ConfigError for out-of-range values.
  void validate() const;

  /// Loss weights after the preset has zeroed the inactive terms.
  losses::LossWeights effective_weights() const;

  /// learning_rate * lr_gamma^floor(iteration / lr_step).
  double lr_at(std::int64_t iteration) const;

  /// One "key = value" line per field, in a fixed order.
  std::string to_text() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);

  /// Applies one "key = value" assignment; unknown keys raise ConfigError.
  void set(const std::string& key, const std::string& value);
};

struct StepResult {
  std::int64_t iteration = 0;  // 1-based number of this update
  losses::LossBreakdown generator;
  double discriminator = 0.0;
  double lr = 0.0;
};

/// Generator, discriminator, their optimizers, and the step counter.
class Trainer {
 public:
  Trainer(TrainConfig config, FeatureExtractor<float> extractor);

  /// One generator update followed by one discriminator update.
  /// Throws NumericalError (after writing a dump if a dump directory is set)
  /// when a loss or parameter becomes non-finite; parameters are then left as
  /// they were after the last finite update of that network.
  StepResult step(const dataset::Batch& batch);

  std::int64_t iteration() const noexcept { return iteration_; }
  const TrainConfig& config() const noexcept { return config_; }
  const Generator<float>& generator() const noexcept { return generator_; }
  const MultiScaleDiscriminator<float>& discriminator() const noexcept { return discriminator_; }
  const FeatureExtractor<float>& extractor() const noexcept { return extractor_; }

  void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

  /// Networks, optimizer moments and the iteration counter.
  void save(Archive& archive) const;
  /// Refuses archives whose architecture, extractor or training-config fingerprint differs.
  void load(const Archive& archive);

  /// Hash of the config fields that shape the optimization trajectory
  /// (everything except max_iterations and checkpoint_interval).
  static std::uint64_t config_fingerprint(const TrainConfig& config);

 private:
  [[noreturn]] void numerical_failure(const std::string& what, const dataset::Batch& batch,
                                      const losses::LossBreakdown& partial) const;

  TrainConfig config_;
  losses::LossWeights weights_;
  FeatureExtractor<float> extractor_;
  Generator<float> generator_;
  MultiScaleDiscriminator<float> discriminator_;
  Adam<float> g_opt_;
  Adam<float> d_opt_;
  std::int64_t iteration_ = 0;
  std::optional<std::filesystem::path> dump_dir_;
};

/// Builds the extractor named by config.extractor / extractor_tap / extractor_seed.
FeatureExtractor<float> make_extractor(const TrainConfig& config);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  /// Called after every step; returning false stops training early (used for interruption tests).
  std::function<bool(const StepResult&)> on_step;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_log;
  std::int64_t iterations = 0;
  StepResult last;
};

/// Runs steps until config.max_iterations. Writes out_dir/metrics.tsv and
/// out_dir/checkpoints/iter_<k>.dhz every checkpoint_interval steps and at the end.
TrainResult train(const TrainConfig& config, const std::filesystem::path& dataset_root,
                  const std::filesystem::path& out_dir, const TrainOptions& options = {});

inline constexpr const char* kMetricsHeader =
    "iteration\tadversarial\tperceptual\tstyle\tfeature_reg\ttotal\tdiscriminator\tlr\twall_time";

}  // namespace dehaze
