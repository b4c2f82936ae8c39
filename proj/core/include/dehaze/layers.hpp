#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dehaze/archive.hpp"
#include "dehaze/ops.hpp"

namespace dehaze {

/// One row of an architecture table.
struct ConvSpec {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  bool bias = true;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
  std::string str() const;
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel + (bias ? out_channels : 0);
  }
};

/// FNV-1a over the canonical text form of a layer table.
std::uint64_t table_fingerprint(const std::vector<ConvSpec>& table);

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  /// Weights ~ N(0, stddev^2) (all zero when stddev is 0), zero bias if the layer has one.
  Conv2d(ConvSpec spec, std::mt19937_64& rng, double stddev, bool trainable = true);

  Var<T> operator()(const Var<T>& x) const {
    return ops::conv2d(x, weight_, bias_, {spec_.stride, spec_.pad});
  }

  const ConvSpec& spec() const noexcept { return spec_; }
  const Var<T>& weight() const noexcept { return weight_; }
  const Var<T>& bias() const noexcept { return bias_; }

  void append_params(std::vector<NamedParam<T>>& out, const std::string& prefix) const {
    out.push_back({prefix + spec_.name + ".weight", weight_});
    if (bias_.defined()) out.push_back({prefix + spec_.name + ".bias", bias_});
  }

 private:
  ConvSpec spec_;
  Var<T> weight_;
  Var<T> bias_;
};

/// Copies parameter values into an archive as float32 under their names.
template <typename T>
void store_params(const std::vector<NamedParam<T>>& params, Archive& archive);

/// Overwrites parameter values from an archive; shapes must match exactly.
template <typename T>
void load_params(const std::vector<NamedParam<T>>& params, const Archive& archive);

/// Copies values between two parameter lists of identical layout.
template <typename Dst, typename Src>
void copy_params(const std::vector<NamedParam<Dst>>& dst, const std::vector<NamedParam<Src>>& src) {
  if (dst.size() != src.size()) throw InvalidArgument("copy_params: parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const auto& s = src[i].var.value();
    auto& d = dst[i].var.mutable_value();
    if (!(d.shape() == s.shape())) throw InvalidArgument("copy_params: shape mismatch for " + dst[i].name);
    for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<Dst>(s[k]);
  }
}

template <typename T>
std::size_t count_params(const std::vector<NamedParam<T>>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

}  // namespace dehaze
