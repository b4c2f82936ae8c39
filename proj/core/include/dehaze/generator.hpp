#pragma once

// Encoder-decoder dehazing generator.
//
//   encoder  enc1  conv 7x7/1  3 -> 64     IN, ReLU          (H   x W)
//            enc2  conv 4x4/2  64 -> 128   IN, ReLU          (H/2 x W/2)
//            enc3  conv 4x4/2  128 -> 256  IN, ReLU          (H/4 x W/4)
//            enc4..enc11  four residual blocks of two 3x3 convs, 256 channels
//   decoder  dec1..dec8   four residual blocks of two 3x3 convs, 256 channels
//            upsample x2, concat enc2 output, skip2 1x1 conv 384 -> 256
//            dec9  conv 5x5/1  256 -> 128  IN, ReLU
//            upsample x2, concat enc1 output, skip1 1x1 conv 192 -> 128
//            dec10 conv 5x5/1  128 -> 64   IN, ReLU
//            dec11 conv 7x7/1  64 -> 3     sigmoid
//
// A residual block is x + IN(conv_b(ReLU(IN(conv_a(x))))).

#include <array>
#include <cstdint>
#include <vector>

#include "dehaze/image.hpp"
#include "dehaze/layers.hpp"

namespace dehaze {

inline constexpr int kEncoderLayers = 11;
inline constexpr int kFeatureChannels = 256;

/// Activations of one network layer for a single image, C x H x W.
struct FeatureMap {
  Tensor<float> data;  // 1 x C x H x W
  int layer_id = 0;    // 1-based encoder layer index

  int channels() const { return data.shape().c; }
  int height() const { return data.shape().h; }
  int width() const { return data.shape().w; }
};

template <typename T>
class Generator {
 public:
  /// Per-layer outputs of the encoder; layers[k - 1] is encoder layer k.
  struct Encoding {
    std::array<Var<T>, kEncoderLayers> layers;
    const Var<T>& features() const { return layers[kEncoderLayers - 1]; }
  };

  explicit Generator(std::uint64_t seed = 0);

  /// Input N x 3 x H x W with H, W divisible by 4.
  Encoding encode(const Var<T>& image) const;

  /// skip_full is the encoder layer-1 output, skip_half the layer-2 output.
  Var<T> decode(const Var<T>& features, const Var<T>& skip_half, const Var<T>& skip_full) const;
  Var<T> decode(const Encoding& enc) const { return decode(enc.features(), enc.layers[1], enc.layers[0]); }

  Var<T> forward(const Var<T>& image) const { return decode(encode(image)); }

  std::vector<NamedParam<T>> parameters() const;

  /// Every convolution in execution order, including the two skip projections.
  static std::vector<ConvSpec> layer_table();
  static std::uint64_t fingerprint() { return table_fingerprint(layer_table()); }

  void save(Archive& archive) const;
  /// Verifies the stored architecture fingerprint before loading.
  void load(const Archive& archive);

  template <typename U>
  Generator<U> cast() const {
    Generator<U> out;
    copy_params(out.parameters(), parameters());
    return out;
  }

 private:
  std::vector<Conv2d<T>> encoder_;  // enc1..enc11
  std::vector<Conv2d<T>> decoder_;  // dec1..dec11
  Conv2d<T> skip_half_;
  Conv2d<T> skip_full_;
};

extern template class Generator<float>;
extern template class Generator<double>;

/// Final encoder feature map (layer 11) of one image.
FeatureMap encode(const Generator<float>& net, const ImageTensor& image);

/// Encoder outputs needed by the decoder.
struct EncodedImage {
  FeatureMap features;   // layer 11, 256 x H/4 x W/4
  FeatureMap skip_half;  // layer 2, 128 x H/2 x W/2
  FeatureMap skip_full;  // layer 1, 64 x H x W
};

EncodedImage encode_with_skips(const Generator<float>& net, const ImageTensor& image);

ImageTensor decode(const Generator<float>& net, const EncodedImage& encoded);

/// G(I). H and W must be divisible by 4.
ImageTensor dehaze(const Generator<float>& net, const ImageTensor& hazy);

}  // namespace dehaze
