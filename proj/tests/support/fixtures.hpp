#pragma once

// Deterministic synthetic inputs shared by the unit, integration and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "dehaze/dataset.hpp"
#include "dehaze/image.hpp"

namespace dehaze::testing {

/// Smooth two-color background with a few flat-colored rectangles and discs.
inline ImageTensor procedural_image(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageTensor im(height, width, 3);
  float c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = 0.05f + 0.6f * u(rng);
    c1[c] = 0.05f + 0.6f * u(rng);
  }
  const float angle = 6.2831853f * u(rng);
  const float dx = std::cos(angle), dy = std::sin(angle);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const float s = 0.5f + 0.5f * ((x / float(width) - 0.5f) * dx + (y / float(height) - 0.5f) * dy) * 1.4f;
      for (int c = 0; c < 3; ++c) im.at(y, x, c) = c0[c] * (1 - s) + c1[c] * s;
    }
  }
  const int shapes = 3 + static_cast<int>(u(rng) * 4);
  for (int k = 0; k < shapes; ++k) {
    float col[3];
    for (float& v : col) v = u(rng);
    const float cx = u(rng) * width, cy = u(rng) * height;
    const float r = (0.08f + 0.2f * u(rng)) * std::min(height, width);
    const bool disc = u(rng) < 0.5f;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const float ax = std::abs(x - cx), ay = std::abs(y - cy);
        const bool inside = disc ? ax * ax + ay * ay <= r * r : (ax <= r && ay <= 0.6f * r);
        if (inside) {
          for (int c = 0; c < 3; ++c) im.at(y, x, c) = col[c];
        }
      }
    }
  }
  std::normal_distribution<float> noise(0.0f, 0.01f);
  for (float& v : im.values()) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
  return quantize8(im);
}

/// Writes `count` procedural PNGs named img_000.png, img_001.png, ... into dir.
inline void write_clean_images(const std::filesystem::path& dir, int count, int height, int width,
                               std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03d.png", i);
    write_png(dir / name, procedural_image(height, width, seed * 1000003u + static_cast<std::uint64_t>(i)));
  }
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dehaze_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& sub) const { return path_ / sub; }

 private:
  std::filesystem::path path_;
};

/// Procedural clean images under root/src and a constant-t paired set under root/pairs.
/// Returns the pairs directory.
inline std::filesystem::path make_paired_set(const std::filesystem::path& root, int count, int size,
                                             std::uint64_t seed) {
  write_clean_images(root / "src", count, size, size, seed);
  dataset::SynthesisRecipe recipe;
  recipe.seed = seed;
  dataset::generate_pairs(root / "src", std::nullopt, recipe, root / "pairs", count);
  return root / "pairs";
}

}  // namespace dehaze::testing
