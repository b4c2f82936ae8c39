#include "dehaze/discriminator.hpp"

namespace dehaze {

namespace {
constexpr double kInitStd = 0.02;
constexpr float kSlope = 0.2f;
constexpr char kFingerprintKey[] = "discriminator.fingerprint";
}  // namespace

template <typename T>
std::vector<ConvSpec> PatchDiscriminator<T>::layer_table() {
  return {{"d1", 6, 64, 4, 2, 1, true},
          {"d2", 64, 128, 4, 2, 1, false},
          {"d3", 128, 256, 4, 2, 1, false},
          {"d4", 256, 512, 4, 2, 1, false},
          {"d5", 512, 1, 1, 1, 0, true}};
}

template <typename T>
PatchDiscriminator<T>::PatchDiscriminator(std::mt19937_64& rng, const std::string& prefix) : prefix_(prefix) {
  for (const ConvSpec& spec : layer_table()) layers_.emplace_back(spec, rng, kInitStd);
}

template <typename T>
Var<T> PatchDiscriminator<T>::operator()(const Var<T>& x) const {
  const T slope = static_cast<T>(kSlope);
  Var<T> h = ops::leaky_relu(layers_[0](x), slope);
  for (std::size_t i = 1; i < 4; ++i) h = ops::leaky_relu(ops::instance_norm(layers_[i](h)), slope);
  return ops::sigmoid(layers_[4](h));
}

template <typename T>
void PatchDiscriminator<T>::append_params(std::vector<NamedParam<T>>& out) const {
  for (const auto& l : layers_) l.append_params(out, prefix_);
}

template <typename T>
MultiScaleDiscriminator<T>::MultiScaleDiscriminator(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int m = 0; m < kScales; ++m) {
    nets_[static_cast<std::size_t>(m)] =
        PatchDiscriminator<T>(rng, "discriminator.scale" + std::to_string(m + 1) + ".");
  }
}

template <typename T>
ScoreMaps<T> MultiScaleDiscriminator<T>::pyramid(const Var<T>& image) {
  const Shape s = image.shape();
  if (s.h % 4 != 0 || s.w % 4 != 0 || s.h < 4 || s.w < 4) {
    throw InvalidArgument("pyramid: height and width must be positive multiples of 4, got " + s.str());
  }
  ScoreMaps<T> levels;
  levels[0] = image;
  levels[1] = ops::avg_pool2(levels[0]);
  levels[2] = ops::avg_pool2(levels[1]);
  return levels;
}

template <typename T>
ScoreMaps<T> MultiScaleDiscriminator<T>::score(const Var<T>& hazy, const Var<T>& candidate) const {
  if (!(hazy.shape() == candidate.shape())) {
    throw InvalidArgument("score: hazy " + hazy.shape().str() + " and candidate " + candidate.shape().str() +
                          " differ in shape");
  }
  const ScoreMaps<T> hp = pyramid(hazy);
  const ScoreMaps<T> cp = pyramid(candidate);
  ScoreMaps<T> out;
  for (std::size_t m = 0; m < kScales; ++m) out[m] = nets_[m](ops::concat_channels(hp[m], cp[m]));
  return out;
}

template <typename T>
std::vector<NamedParam<T>> MultiScaleDiscriminator<T>::parameters() const {
  std::vector<NamedParam<T>> out;
  for (const auto& n : nets_) n.append_params(out);
  return out;
}

template <typename T>
std::uint64_t MultiScaleDiscriminator<T>::fingerprint() {
  std::vector<ConvSpec> all;
  for (int m = 1; m <= kScales; ++m) {
    for (ConvSpec spec : PatchDiscriminator<T>::layer_table()) {
      spec.name = "scale" + std::to_string(m) + "." + spec.name;
      all.push_back(spec);
    }
  }
  return table_fingerprint(all);
}

template <typename T>
void MultiScaleDiscriminator<T>::save(Archive& archive) const {
  archive.set_meta(kFingerprintKey, to_hex(fingerprint()));
  store_params(parameters(), archive);
}

template <typename T>
void MultiScaleDiscriminator<T>::load(const Archive& archive) {
  const std::string& stored = archive.require_meta(kFingerprintKey);
  if (stored != to_hex(fingerprint())) {
    throw FingerprintMismatch("discriminator fingerprint " + stored + " does not match this build (" +
                              to_hex(fingerprint()) + ")");
  }
  load_params(parameters(), archive);
}

template class PatchDiscriminator<float>;
template class PatchDiscriminator<double>;
template class MultiScaleDiscriminator<float>;
template class MultiScaleDiscriminator<double>;

std::array<ImageTensor, kScales> pyramid(const ImageTensor& image) {
  NoGradGuard guard;
  std::span<const ImageTensor> one(&image, 1);
  auto levels = MultiScaleDiscriminator<float>::pyramid(Var<float>(to_batch<float>(one)));
  std::array<ImageTensor, kScales> out;
  for (std::size_t m = 0; m < kScales; ++m) out[m] = from_batch(levels[m].value(), 0);
  return out;
}

std::array<Tensor<float>, kScales> score(const MultiScaleDiscriminator<float>& d, const ImageTensor& hazy,
                                         const ImageTensor& candidate) {
  if (!hazy.same_shape(candidate)) {
    throw InvalidArgument("score: hazy " + hazy.shape_str() + " and candidate " + candidate.shape_str() +
                          " differ in shape");
  }
  NoGradGuard guard;
  std::span<const ImageTensor> h(&hazy, 1);
  std::span<const ImageTensor> c(&candidate, 1);
  auto maps = d.score(Var<float>(to_batch<float>(h)), Var<float>(to_batch<float>(c)));
  std::array<Tensor<float>, kScales> out;
  for (std::size_t m = 0; m < kScales; ++m) out[m] = maps[m].value();
  return out;
}

}  // namespace dehaze
