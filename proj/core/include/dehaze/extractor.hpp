#pragma once

// Frozen convolutional feature network used by the perceptual and style
// losses. Two sources:
//   * random(seed): a small VGG-style stack with He-normal weights, fully
//     determined by the seed. Needs no downloads.
//   * load(path): an archive holding a layer list and pretrained weights,
//     e.g. VGG-16 converted from another framework.
//
// Archive contract for load():
//   meta "extractor.layers"     comma list of conv3x3:<out>, relu, maxpool, avgpool
//   meta "extractor.input_mean" three floats (optional, default 0 0 0)
//   meta "extractor.input_std"  three floats (optional, default 1 1 1)
//   tensors "extractor.<tap>.weight" / ".bias" for every conv tap
// Tap names follow VGG conventions: conv<b>_<i>, relu<b>_<i>, pool<b>, where
// <b> counts pooling stages from 1.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dehaze/layers.hpp"

namespace dehaze {

template <typename T>
class FeatureExtractor {
 public:
  enum class Kind { Conv, Relu, MaxPool, AvgPool };

  struct Layer {
    Kind kind;
    std::string name;
    Conv2d<T> conv;  // Conv only
  };

  /// conv3x3:32 relu conv3x3:32 relu avgpool conv3x3:64 relu avgpool conv3x3:64 relu avgpool
  static FeatureExtractor random(std::uint64_t seed, const std::string& tap = "pool3");
  static FeatureExtractor load(const std::filesystem::path& path, const std::string& tap);

  /// Runs the stack up to and including the selected tap.
  Var<T> features(const Var<T>& image) const;

  const std::string& tap() const noexcept { return tap_; }
  void set_tap(const std::string& tap);
  std::vector<std::string> taps() const;

  /// Covers the layer list, the tap and every weight.
  std::uint64_t fingerprint() const;

  /// Layer list in the archive's "extractor.layers" syntax.
  std::string layer_spec() const;

  /// Writes this extractor in the format load() reads.
  void save(const std::filesystem::path& path) const;

  template <typename U>
  FeatureExtractor<U> cast() const;

 private:
  template <typename>
  friend class FeatureExtractor;

  FeatureExtractor() = default;
  static FeatureExtractor from_spec(const std::string& spec);

  std::vector<Layer> layers_;
  std::string tap_;
  std::array<T, 3> input_scale_{T(1), T(1), T(1)};
  std::array<T, 3> input_shift_{T(0), T(0), T(0)};
  bool normalize_input_ = false;
};

extern template class FeatureExtractor<float>;
extern template class FeatureExtractor<double>;

}  // namespace dehaze
