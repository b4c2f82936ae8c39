#pragma once

// Atmospheric scattering model: I = J * t + A * (1 - t), t = exp(-beta * d).
// One transmission value per pixel is shared by all channels; the airlight
// has one component per channel.

#include <array>
#include <vector>

#include "dehaze/image.hpp"

namespace dehaze::haze {

/// Transmission values below this are raised to it before dividing.
inline constexpr float kTransmissionFloor = 0.05f;

/// Per-pixel transmission, values in (0, 1].
struct TransmissionMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  TransmissionMap() = default;
  TransmissionMap(int h, int w, float fill);

  float& at(int y, int x) noexcept { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const noexcept { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// Global airlight, one component per RGB channel, each in [0, 1].
struct AtmosphericLight {
  std::array<float, 3> a{1.0f, 1.0f, 1.0f};

  static AtmosphericLight gray(float v) { return {{v, v, v}}; }
};

/// Non-negative scene depth.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  float at(int y, int x) const noexcept { return data[static_cast<std::size_t>(y) * width + x]; }
};

ImageTensor synthesize_haze(const ImageTensor& clean, const TransmissionMap& t, const AtmosphericLight& light);

TransmissionMap transmission_from_depth(const DepthMap& depth, double beta);

ImageTensor recover_clear(const ImageTensor& hazy, const TransmissionMap& t, const AtmosphericLight& light);

}  // namespace dehaze::haze
