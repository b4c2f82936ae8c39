#pragma once

// Three-scale conditional patch discriminator. Scale m sees the m-th level of
// a 2x average-pooled pyramid of the hazy input and the candidate, stacked as
// 6 channels. Each scale is
//   d1 conv 4x4/2  6 -> 64    LeakyReLU(0.2)
//   d2 conv 4x4/2  64 -> 128  IN, LeakyReLU(0.2)
//   d3 conv 4x4/2  128 -> 256 IN, LeakyReLU(0.2)
//   d4 conv 4x4/2  256 -> 512 IN, LeakyReLU(0.2)
//   d5 conv 1x1/1  512 -> 1   sigmoid
// so a 256x256 input gives 16x16, 8x8 and 4x4 score maps.

#include <array>
#include <cstdint>
#include <vector>

#include "dehaze/image.hpp"
#include "dehaze/layers.hpp"

namespace dehaze {

inline constexpr int kScales = 3;

template <typename T>
using ScoreMaps = std::array<Var<T>, kScales>;

template <typename T>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(std::mt19937_64& rng, const std::string& prefix);

  /// x is N x 6 x H x W; returns N x 1 x H/16 x W/16 probabilities.
  Var<T> operator()(const Var<T>& x) const;

  const std::vector<Conv2d<T>>& layers() const noexcept { return layers_; }
  void append_params(std::vector<NamedParam<T>>& out) const;

  static std::vector<ConvSpec> layer_table();

 private:
  std::string prefix_;
  std::vector<Conv2d<T>> layers_;
};

template <typename T>
class MultiScaleDiscriminator {
 public:
  explicit MultiScaleDiscriminator(std::uint64_t seed = 1);

  /// [image, avgpool2(image), avgpool2(avgpool2(image))]; H, W divisible by 4.
  static ScoreMaps<T> pyramid(const Var<T>& image);

  ScoreMaps<T> score(const Var<T>& hazy, const Var<T>& candidate) const;

  const PatchDiscriminator<T>& scale(int m) const { return nets_[static_cast<std::size_t>(m)]; }
  std::vector<NamedParam<T>> parameters() const;

  static std::uint64_t fingerprint();

  void save(Archive& archive) const;
  void load(const Archive& archive);

  template <typename U>
  MultiScaleDiscriminator<U> cast() const {
    MultiScaleDiscriminator<U> out;
    copy_params(out.parameters(), parameters());
    return out;
  }

 private:
  std::array<PatchDiscriminator<T>, kScales> nets_;
};

extern template class PatchDiscriminator<float>;
extern template class PatchDiscriminator<double>;
extern template class MultiScaleDiscriminator<float>;
extern template class MultiScaleDiscriminator<double>;

std::array<ImageTensor, kScales> pyramid(const ImageTensor& image);

/// Score maps (1 x 1 x h x w each) for one hazy/candidate pair.
std::array<Tensor<float>, kScales> score(const MultiScaleDiscriminator<float>& d, const ImageTensor& hazy,
                                         const ImageTensor& candidate);

}  // namespace dehaze
