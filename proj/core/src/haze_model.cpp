#include "dehaze/haze_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dehaze::haze {

TransmissionMap::TransmissionMap(int h, int w, float fill)
    : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

namespace {

void check_shapes(const ImageTensor& image, const TransmissionMap& t, const char* op) {
  if (image.height() != t.height || image.width() != t.width ||
      t.data.size() != static_cast<std::size_t>(t.height) * t.width) {
    throw InvalidArgument(std::string(op) + ": image " + image.shape_str() + " vs transmission " +
                          std::to_string(t.height) + "x" + std::to_string(t.width));
  }
}

void check_light(const AtmosphericLight& light) {
  for (float v : light.a) {
    if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("atmospheric light components must lie in [0, 1]");
  }
}

}  // namespace

ImageTensor synthesize_haze(const ImageTensor& clean, const TransmissionMap& t, const AtmosphericLight& light) {
  check_shapes(clean, t, "synthesize_haze");
  check_light(light);
  ImageTensor out(clean.height(), clean.width(), clean.channels());
  for (int y = 0; y < clean.height(); ++y) {
    for (int x = 0; x < clean.width(); ++x) {
      const float tv = t.at(y, x);
      for (int c = 0; c < clean.channels(); ++c) {
        const float a = light.a[static_cast<std::size_t>(c)];
        out.at(y, x, c) = std::clamp(clean.at(y, x, c) * tv + a * (1.0f - tv), 0.0f, 1.0f);
      }
    }
  }
  return out;
}

TransmissionMap transmission_from_depth(const DepthMap& depth, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("transmission_from_depth: beta must be > 0");
  TransmissionMap t(depth.height, depth.width, 1.0f);
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    const double d = depth.data[i];
    if (d < 0.0) throw InvalidArgument("transmission_from_depth: negative depth");
    // exp underflows to 0 only for absurd beta*d; keep the (0, 1] contract
    t.data[i] = std::max(static_cast<float>(std::exp(-beta * d)), std::numeric_limits<float>::min());
  }
  return t;
}

ImageTensor recover_clear(const ImageTensor& hazy, const TransmissionMap& t, const AtmosphericLight& light) {
  check_shapes(hazy, t, "recover_clear");
  check_light(light);
  ImageTensor out(hazy.height(), hazy.width(), hazy.channels());
  for (int y = 0; y < hazy.height(); ++y) {
    for (int x = 0; x < hazy.width(); ++x) {
      const float tv = std::max(t.at(y, x), kTransmissionFloor);
      for (int c = 0; c < hazy.channels(); ++c) {
        const float a = light.a[static_cast<std::size_t>(c)];
        out.at(y, x, c) = std::clamp((hazy.at(y, x, c) - a) / tv + a, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

}  // namespace dehaze::haze
