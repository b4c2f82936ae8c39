#include "dehaze/extractor.hpp"

#include <cmath>
#include <sstream>

namespace dehaze {

namespace {

constexpr char kRandomSpec[] =
    "conv3x3:32,relu,conv3x3:32,relu,avgpool,conv3x3:64,relu,avgpool,conv3x3:64,relu,avgpool";

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::array<float, 3> parse_triple(const std::string& s, const char* key) {
  std::istringstream is(s);
  std::array<float, 3> v{};
  if (!(is >> v[0] >> v[1] >> v[2])) throw IoError(std::string("extractor: malformed ") + key);
  return v;
}

}  // namespace

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::from_spec(const std::string& spec) {
  FeatureExtractor ex;
  int block = 1;
  int conv_in_block = 0;
  int relu_in_block = 0;
  int channels = 3;
  for (const std::string& tok : split(spec, ',')) {
    Layer layer{};
    if (tok.rfind("conv3x3:", 0) == 0) {
      const int out = std::stoi(tok.substr(8));
      if (out < 1) throw ConfigError("extractor: bad conv width in '" + tok + "'");
      layer.kind = Kind::Conv;
      layer.name = "conv" + std::to_string(block) + "_" + std::to_string(++conv_in_block);
      // zero weights; random() and load() fill them in
      std::mt19937_64 unused(0);
      layer.conv = Conv2d<T>(ConvSpec{layer.name, channels, out, 3, 1, 1}, unused, 0.0, false);
      channels = out;
    } else if (tok == "relu") {
      layer.kind = Kind::Relu;
      layer.name = "relu" + std::to_string(block) + "_" + std::to_string(++relu_in_block);
    } else if (tok == "maxpool" || tok == "avgpool") {
      layer.kind = tok == "maxpool" ? Kind::MaxPool : Kind::AvgPool;
      layer.name = "pool" + std::to_string(block);
      ++block;
      conv_in_block = 0;
      relu_in_block = 0;
    } else {
      throw ConfigError("extractor: unknown layer '" + tok + "'");
    }
    ex.layers_.push_back(std::move(layer));
  }
  if (ex.layers_.empty()) throw ConfigError("extractor: empty layer list");
  return ex;
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::random(std::uint64_t seed, const std::string& tap) {
  FeatureExtractor ex = from_spec(kRandomSpec);
  std::mt19937_64 rng(seed);
  for (Layer& layer : ex.layers_) {
    if (layer.kind != Kind::Conv) continue;
    const ConvSpec spec = layer.conv.spec();
    const double he = std::sqrt(2.0 / (spec.in_channels * spec.kernel * spec.kernel));
    layer.conv = Conv2d<T>(spec, rng, he, false);
  }
  ex.set_tap(tap);
  return ex;
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::load(const std::filesystem::path& path, const std::string& tap) {
  const Archive archive = Archive::load(path);
  FeatureExtractor ex = from_spec(archive.require_meta("extractor.layers"));
  std::vector<NamedParam<T>> params;
  for (const Layer& layer : ex.layers_) {
    if (layer.kind == Kind::Conv) layer.conv.append_params(params, "extractor.");
  }
  load_params(params, archive);
  auto mean = archive.meta("extractor.input_mean");
  auto stdv = archive.meta("extractor.input_std");
  if (mean || stdv) {
    const auto m = mean ? parse_triple(*mean, "input_mean") : std::array<float, 3>{0, 0, 0};
    const auto s = stdv ? parse_triple(*stdv, "input_std") : std::array<float, 3>{1, 1, 1};
    for (std::size_t c = 0; c < 3; ++c) {
      if (!(s[c] > 0.0f)) throw IoError("extractor: input_std must be positive");
      ex.input_scale_[c] = static_cast<T>(1.0 / s[c]);
      ex.input_shift_[c] = static_cast<T>(-m[c] / s[c]);
    }
    ex.normalize_input_ = true;
  }
  ex.set_tap(tap);
  return ex;
}

template <typename T>
void FeatureExtractor<T>::set_tap(const std::string& tap) {
  for (const Layer& layer : layers_) {
    if (layer.name == tap) {
      tap_ = tap;
      return;
    }
  }
  std::string known;
  for (const auto& t : taps()) known += " " + t;
  throw ConfigError("extractor: unknown tap '" + tap + "'; available:" + known);
}

template <typename T>
std::vector<std::string> FeatureExtractor<T>::taps() const {
  std::vector<std::string> out;
  for (const Layer& layer : layers_) out.push_back(layer.name);
  return out;
}

template <typename T>
Var<T> FeatureExtractor<T>::features(const Var<T>& image) const {
  if (image.shape().c != 3) throw InvalidArgument("extractor expects 3-channel input, got " + image.shape().str());
  Var<T> x = image;
  if (normalize_input_) x = ops::channel_affine<T>(x, input_scale_, input_shift_);
  for (const Layer& layer : layers_) {
    switch (layer.kind) {
      case Kind::Conv: x = layer.conv(x); break;
      case Kind::Relu: x = ops::relu(x); break;
      case Kind::MaxPool: x = ops::max_pool2(x); break;
      case Kind::AvgPool: x = ops::avg_pool2(x); break;
    }
    if (layer.name == tap_) return x;
  }
  return x;
}

template <typename T>
std::string FeatureExtractor<T>::layer_spec() const {
  std::string out;
  for (const Layer& layer : layers_) {
    if (!out.empty()) out += ",";
    switch (layer.kind) {
      case Kind::Conv: out += "conv3x3:" + std::to_string(layer.conv.spec().out_channels); break;
      case Kind::Relu: out += "relu"; break;
      case Kind::MaxPool: out += "maxpool"; break;
      case Kind::AvgPool: out += "avgpool"; break;
    }
  }
  return out;
}

template <typename T>
std::uint64_t FeatureExtractor<T>::fingerprint() const {
  std::uint64_t h = fnv1a64(layer_spec() + "|" + tap_);
  for (std::size_t c = 0; c < 3; ++c) {
    const float v[2] = {static_cast<float>(input_scale_[c]), static_cast<float>(input_shift_[c])};
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(v), sizeof(v)), h);
  }
  for (const Layer& layer : layers_) {
    if (layer.kind != Kind::Conv) continue;
    for (const Var<T>* p : {&layer.conv.weight(), &layer.conv.bias()}) {
      const Tensor<float> f = p->value().template cast<float>();
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(f.data()), f.size() * sizeof(float)), h);
    }
  }
  return h;
}

template <typename T>
void FeatureExtractor<T>::save(const std::filesystem::path& path) const {
  Archive archive;
  archive.set_meta("extractor.layers", layer_spec());
  if (normalize_input_) {
    std::ostringstream mean;
    std::ostringstream stdv;
    mean.precision(9);
    stdv.precision(9);
    for (std::size_t c = 0; c < 3; ++c) {
      const double s = 1.0 / static_cast<double>(input_scale_[c]);
      mean << (c ? " " : "") << -static_cast<double>(input_shift_[c]) * s;
      stdv << (c ? " " : "") << s;
    }
    archive.set_meta("extractor.input_mean", mean.str());
    archive.set_meta("extractor.input_std", stdv.str());
  }
  std::vector<NamedParam<T>> params;
  for (const Layer& layer : layers_) {
    if (layer.kind == Kind::Conv) layer.conv.append_params(params, "extractor.");
  }
  store_params(params, archive);
  archive.save(path);
}

template <typename T>
template <typename U>
FeatureExtractor<U> FeatureExtractor<T>::cast() const {
  FeatureExtractor<U> out = FeatureExtractor<U>::from_spec(layer_spec());
  std::vector<NamedParam<T>> src;
  std::vector<NamedParam<U>> dst;
  for (const Layer& layer : layers_) {
    if (layer.kind == Kind::Conv) layer.conv.append_params(src, "");
  }
  for (const auto& layer : out.layers_) {
    if (layer.kind == FeatureExtractor<U>::Kind::Conv) layer.conv.append_params(dst, "");
  }
  copy_params(dst, src);
  for (std::size_t c = 0; c < 3; ++c) {
    out.input_scale_[c] = static_cast<U>(input_scale_[c]);
    out.input_shift_[c] = static_cast<U>(input_shift_[c]);
  }
  out.normalize_input_ = normalize_input_;
  out.tap_ = tap_;
  return out;
}

template class FeatureExtractor<float>;
template class FeatureExtractor<double>;
template FeatureExtractor<double> FeatureExtractor<float>::cast<double>() const;
template FeatureExtractor<float> FeatureExtractor<double>::cast<float>() const;

}  // namespace dehaze
