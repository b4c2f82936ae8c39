#include "dehaze/layers.hpp"

#include <sstream>

namespace dehaze {

std::string ConvSpec::str() const {
  std::ostringstream os;
  os << name << ":conv " << in_channels << "->" << out_channels << " k" << kernel << " s" << stride << " p" << pad;
  if (!bias) os << " nobias";
  return os.str();
}

std::uint64_t table_fingerprint(const std::vector<ConvSpec>& table) {
  std::string text;
  for (const auto& spec : table) text += spec.str() + ";";
  return fnv1a64(text);
}

template <typename T>
Conv2d<T>::Conv2d(ConvSpec spec, std::mt19937_64& rng, double stddev, bool trainable) : spec_(std::move(spec)) {
  Tensor<T> w(Shape{spec_.out_channels, spec_.in_channels, spec_.kernel, spec_.kernel});
  if (stddev > 0.0) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(normal(rng));
  }
  weight_ = Var<T>(std::move(w), trainable);
  if (spec_.bias) bias_ = Var<T>(Tensor<T>(Shape{1, spec_.out_channels, 1, 1}), trainable);
}

template <typename T>
void store_params(const std::vector<NamedParam<T>>& params, Archive& archive) {
  for (const auto& p : params) archive.put(p.name, p.var.value().template cast<float>());
}

template <typename T>
void load_params(const std::vector<NamedParam<T>>& params, const Archive& archive) {
  for (const auto& p : params) {
    const Tensor<float>& src = archive.get(p.name);
    auto& dst = p.var.mutable_value();
    if (!(src.shape() == dst.shape())) {
      throw IoError("parameter '" + p.name + "' has shape " + src.shape().str() + " in archive, expected " +
                    dst.shape().str());
    }
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

template class Conv2d<float>;
template class Conv2d<double>;
template void store_params<float>(const std::vector<NamedParam<float>>&, Archive&);
template void store_params<double>(const std::vector<NamedParam<double>>&, Archive&);
template void load_params<float>(const std::vector<NamedParam<float>>&, const Archive&);
template void load_params<double>(const std::vector<NamedParam<double>>&, const Archive&);

}  // namespace dehaze
