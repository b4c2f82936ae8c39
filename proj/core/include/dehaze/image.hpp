#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dehaze/tensor.hpp"

namespace dehaze {

/// Interleaved H x W x C image with intensities in [0, 1]. Channel order is RGB.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, float fill = 0.0f);
  ImageTensor(int height, int width, int channels, std::vector<float> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& at(int y, int x, int c) noexcept { return data_[index(y, x, c)]; }
  float at(int y, int x, int c) const noexcept { return data_[index(y, x, c)]; }

  /// Start of row y (width * channels interleaved values).
  float* row(int y) noexcept { return data_.data() + index(y, 0, 0); }
  const float* row(int y) const noexcept { return data_.data() + index(y, 0, 0); }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  bool same_shape(const ImageTensor& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  std::string shape_str() const;

  /// Clamps every element into [0, 1] in place.
  void clamp01();

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Reads an 8- or 16-bit image. Color images come back as 3-channel RGB
/// (alpha dropped); single-channel files stay single-channel unless
/// `force_color` is set.
ImageTensor read_image(const std::filesystem::path& path, bool force_color = true);

/// Writes an 8-bit PNG, rounding x * 255 after clamping to [0, 1].
void write_png(const std::filesystem::path& path, const ImageTensor& image);

/// Rounds to the 8-bit grid, i.e. what write_png followed by read_image yields.
ImageTensor quantize8(const ImageTensor& image);

/// Mirror padding on the bottom and right edges (edge pixel not repeated).
ImageTensor reflect_pad(const ImageTensor& image, int pad_bottom, int pad_right);

ImageTensor crop(const ImageTensor& image, int y0, int x0, int height, int width);

/// Packs equally shaped images into an N x C x H x W tensor.
template <typename T>
Tensor<T> to_batch(std::span<const ImageTensor> images);

/// Unpacks sample n of an N x C x H x W tensor, clamping to [0, 1].
template <typename T>
ImageTensor from_batch(const Tensor<T>& batch, int n = 0);

/// Sorted list of image files (png, jpg, jpeg, bmp, tif, tiff) directly under dir.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace dehaze
