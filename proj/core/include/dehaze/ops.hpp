#pragma once

// Differentiable tensor operations used by the generator, discriminator and
// feature extractor. All take and return NCHW Vars.

#include <span>
#include <vector>

#include "dehaze/autograd.hpp"

namespace dehaze::ops {

struct ConvParams {
  int stride = 1;
  int pad = 0;
};

/// Zero-padded 2-D convolution. weight is Cout x Cin x k x k, bias is 1 x Cout x 1 x 1
/// or an undefined Var for no bias.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvParams p);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

/// Per-sample, per-channel normalization over H x W (no affine terms).
/// A 1x1 plane has no spatial statistics and passes through unchanged.
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5));

/// 2x2 mean pooling, stride 2. H and W must be even.
template <typename T>
Var<T> avg_pool2(const Var<T>& x);

/// 2x2 max pooling, stride 2. H and W must be even.
template <typename T>
Var<T> max_pool2(const Var<T>& x);

/// Nearest-neighbour 2x upsampling.
template <typename T>
Var<T> upsample_nearest2(const Var<T>& x);

/// Channel concatenation of two tensors with equal N, H, W.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

/// y[n,c] = x[n,c] * scale[c] + shift[c] with constant scale/shift.
template <typename T>
Var<T> channel_affine(const Var<T>& x, std::span<const T> scale, std::span<const T> shift);

/// sum_i weights[i] * terms[i] over scalar terms.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, std::span<const double> weights);

/// Output spatial extent of a convolution.
inline int conv_out_extent(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace dehaze::ops
