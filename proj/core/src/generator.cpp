#include "dehaze/generator.hpp"

#include <cmath>

namespace dehaze {

namespace {

constexpr double kInitStd = 0.02;
constexpr char kFingerprintKey[] = "generator.fingerprint";

void require_divisible(const Shape& s, const char* op) {
  if (s.h % 4 != 0 || s.w % 4 != 0 || s.h < 4 || s.w < 4) {
    throw InvalidArgument(std::string(op) + ": height and width must be positive multiples of 4, got " + s.str());
  }
  if (s.c != 3) throw InvalidArgument(std::string(op) + ": expected 3 input channels, got " + s.str());
}

template <typename T>
Var<T> conv_in_relu(const Conv2d<T>& conv, const Var<T>& x) {
  return ops::relu(ops::instance_norm(conv(x)));
}

}  // namespace

template <typename T>
std::vector<ConvSpec> Generator<T>::layer_table() {
  std::vector<ConvSpec> t;
  // Convolutions followed by instance norm carry no bias: the norm would
  // cancel it and its gradient would be identically zero.
  t.push_back({"enc1", 3, 64, 7, 1, 3, false});
  t.push_back({"enc2", 64, 128, 4, 2, 1, false});
  t.push_back({"enc3", 128, 256, 4, 2, 1, false});
  for (int i = 4; i <= 11; ++i) t.push_back({"enc" + std::to_string(i), 256, 256, 3, 1, 1, false});
  for (int i = 1; i <= 8; ++i) t.push_back({"dec" + std::to_string(i), 256, 256, 3, 1, 1, false});
  t.push_back({"skip2", 256 + 128, 256, 1, 1, 0, true});
  t.push_back({"dec9", 256, 128, 5, 1, 2, false});
  t.push_back({"skip1", 128 + 64, 128, 1, 1, 0, true});
  t.push_back({"dec10", 128, 64, 5, 1, 2, false});
  t.push_back({"dec11", 64, 3, 7, 1, 3, true});
  return t;
}

template <typename T>
Generator<T>::Generator(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const ConvSpec& spec : layer_table()) {
    Conv2d<T> conv(spec, rng, kInitStd);
    if (spec.name.rfind("enc", 0) == 0) {
      encoder_.push_back(std::move(conv));
    } else if (spec.name == "skip2") {
      skip_half_ = std::move(conv);
    } else if (spec.name == "skip1") {
      skip_full_ = std::move(conv);
    } else {
      decoder_.push_back(std::move(conv));
    }
  }
}

template <typename T>
typename Generator<T>::Encoding Generator<T>::encode(const Var<T>& image) const {
  require_divisible(image.shape(), "encode");
  Encoding enc;
  enc.layers[0] = conv_in_relu(encoder_[0], image);
  enc.layers[1] = conv_in_relu(encoder_[1], enc.layers[0]);
  enc.layers[2] = conv_in_relu(encoder_[2], enc.layers[1]);
  Var<T> x = enc.layers[2];
  for (int block = 0; block < 4; ++block) {
    const int a = 3 + 2 * block;
    Var<T> h = conv_in_relu(encoder_[a], x);
    enc.layers[a] = h;
    x = ops::add(x, ops::instance_norm(encoder_[a + 1](h)));
    enc.layers[a + 1] = x;
  }
  return enc;
}

template <typename T>
Var<T> Generator<T>::decode(const Var<T>& features, const Var<T>& skip_half, const Var<T>& skip_full) const {
  const Shape f = features.shape();
  const Shape h = skip_half.shape();
  const Shape s = skip_full.shape();
  if (f.c != kFeatureChannels || h.c != 128 || s.c != 64 || h.n != f.n || s.n != f.n || h.h != 2 * f.h ||
      h.w != 2 * f.w || s.h != 4 * f.h || s.w != 4 * f.w) {
    throw InvalidArgument("decode: features " + f.str() + ", skips " + h.str() + " and " + s.str() +
                          " do not come from one encoder pass");
  }
  Var<T> x = features;
  for (int block = 0; block < 4; ++block) {
    Var<T> hdn = conv_in_relu(decoder_[2 * block], x);
    x = ops::add(x, ops::instance_norm(decoder_[2 * block + 1](hdn)));
  }
  x = ops::upsample_nearest2(x);
  x = skip_half_(ops::concat_channels(x, skip_half));
  x = conv_in_relu(decoder_[8], x);
  x = ops::upsample_nearest2(x);
  x = skip_full_(ops::concat_channels(x, skip_full));
  x = conv_in_relu(decoder_[9], x);
  return ops::sigmoid(decoder_[10](x));
}

template <typename T>
std::vector<NamedParam<T>> Generator<T>::parameters() const {
  std::vector<NamedParam<T>> out;
  const std::string prefix = "generator.";
  for (const auto& c : encoder_) c.append_params(out, prefix);
  for (std::size_t i = 0; i < 8; ++i) decoder_[i].append_params(out, prefix);
  skip_half_.append_params(out, prefix);
  decoder_[8].append_params(out, prefix);
  skip_full_.append_params(out, prefix);
  decoder_[9].append_params(out, prefix);
  decoder_[10].append_params(out, prefix);
  return out;
}

template <typename T>
void Generator<T>::save(Archive& archive) const {
  archive.set_meta(kFingerprintKey, to_hex(fingerprint()));
  store_params(parameters(), archive);
}

template <typename T>
void Generator<T>::load(const Archive& archive) {
  const std::string& stored = archive.require_meta(kFingerprintKey);
  if (stored != to_hex(fingerprint())) {
    throw FingerprintMismatch("generator fingerprint " + stored + " does not match this build (" +
                              to_hex(fingerprint()) + ")");
  }
  load_params(parameters(), archive);
}

template class Generator<float>;
template class Generator<double>;

namespace {

FeatureMap to_feature_map(const Var<float>& v, int layer_id) {
  FeatureMap m{v.value(), layer_id};
  for (float x : m.data.span()) {
    if (!std::isfinite(x)) throw NumericalError("non-finite value in encoder layer " + std::to_string(layer_id));
  }
  return m;
}

Var<float> image_var(const ImageTensor& image) {
  if (image.channels() != 3) throw InvalidArgument("generator input must have 3 channels, got " + image.shape_str());
  std::span<const ImageTensor> one(&image, 1);
  return Var<float>(to_batch<float>(one));
}

}  // namespace

FeatureMap encode(const Generator<float>& net, const ImageTensor& image) {
  NoGradGuard guard;
  auto enc = net.encode(image_var(image));
  return to_feature_map(enc.features(), kEncoderLayers);
}

EncodedImage encode_with_skips(const Generator<float>& net, const ImageTensor& image) {
  NoGradGuard guard;
  auto enc = net.encode(image_var(image));
  return {to_feature_map(enc.features(), kEncoderLayers), to_feature_map(enc.layers[1], 2),
          to_feature_map(enc.layers[0], 1)};
}

ImageTensor decode(const Generator<float>& net, const EncodedImage& encoded) {
  NoGradGuard guard;
  Var<float> out = net.decode(Var<float>(encoded.features.data), Var<float>(encoded.skip_half.data),
                              Var<float>(encoded.skip_full.data));
  return from_batch(out.value(), 0);
}

ImageTensor dehaze(const Generator<float>& net, const ImageTensor& hazy) {
  NoGradGuard guard;
  Var<float> out = net.forward(image_var(hazy));
  return from_batch(out.value(), 0);
}

}  // namespace dehaze
