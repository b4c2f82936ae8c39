#include "dehaze/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace dehaze {

namespace fs = std::filesystem;

ImageTensor::ImageTensor(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 1 || width < 1) throw InvalidArgument("image extents must be >= 1");
  if (channels != 1 && channels != 3) throw InvalidArgument("image must have 1 or 3 channels");
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<float> data)
    : ImageTensor(height, width, channels) {
  if (data.size() != data_.size()) throw InvalidArgument("image data size does not match " + shape_str());
  data_ = std::move(data);
}

std::string ImageTensor::shape_str() const {
  return std::to_string(height_) + "x" + std::to_string(width_) + "x" + std::to_string(channels_);
}

void ImageTensor::clamp01() {
  for (float& v : data_) v = std::clamp(v, 0.0f, 1.0f);
}

ImageTensor read_image(const fs::path& path, bool force_color) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("cannot read image " + path.string());

  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F:
    case CV_64F: scale = 1.0; break;
    default: throw IoError("unsupported pixel depth in " + path.string());
  }

  cv::Mat converted;
  const int ch = raw.channels();
  if (ch == 4) {
    cv::cvtColor(raw, converted, cv::COLOR_BGRA2RGB);
  } else if (ch == 3) {
    cv::cvtColor(raw, converted, cv::COLOR_BGR2RGB);
  } else if (ch == 1 && force_color) {
    cv::cvtColor(raw, converted, cv::COLOR_GRAY2RGB);
  } else if (ch == 1) {
    converted = raw;
  } else {
    throw IoError("unsupported channel count in " + path.string());
  }

  ImageTensor out(converted.rows, converted.cols, converted.channels());
  const std::size_t row_len = static_cast<std::size_t>(converted.cols) * converted.channels();
  if (converted.depth() == CV_8U) {
    // Same arithmetic as quantize8, so decoded values sit exactly on its grid.
    for (int y = 0; y < converted.rows; ++y) {
      const std::uint8_t* src = converted.ptr<std::uint8_t>(y);
      float* dst = out.row(y);
      for (std::size_t i = 0; i < row_len; ++i) dst[i] = static_cast<float>(src[i]) / 255.0f;
    }
    return out;
  }
  cv::Mat f;
  converted.convertTo(f, CV_MAKETYPE(CV_32F, converted.channels()), scale);
  for (int y = 0; y < f.rows; ++y) {
    const float* row = f.ptr<float>(y);
    std::copy_n(row, row_len, out.row(y));
  }
  out.clamp01();
  return out;
}

void write_png(const fs::path& path, const ImageTensor& image) {
  const int type = image.channels() == 3 ? CV_8UC3 : CV_8UC1;
  cv::Mat m(image.height(), image.width(), type);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        // RGB -> BGR for OpenCV
        const int dst_c = image.channels() == 3 ? 2 - c : c;
        const float v = std::clamp(image.at(y, x, c), 0.0f, 1.0f);
        row[x * image.channels() + dst_c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write " + path.string());
}

ImageTensor quantize8(const ImageTensor& image) {
  ImageTensor out = image;
  for (float& v : out.values()) {
    v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  }
  return out;
}

namespace {
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}
}  // namespace

ImageTensor reflect_pad(const ImageTensor& image, int pad_bottom, int pad_right) {
  if (pad_bottom < 0 || pad_right < 0) throw InvalidArgument("negative padding");
  ImageTensor out(image.height() + pad_bottom, image.width() + pad_right, image.channels());
  for (int y = 0; y < out.height(); ++y) {
    const int sy = reflect_index(y, image.height());
    for (int x = 0; x < out.width(); ++x) {
      const int sx = reflect_index(x, image.width());
      for (int c = 0; c < image.channels(); ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

ImageTensor crop(const ImageTensor& image, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || height < 1 || width < 1 || y0 + height > image.height() ||
      x0 + width > image.width()) {
    throw InvalidArgument("crop window out of bounds for image " + image.shape_str());
  }
  ImageTensor out(height, width, image.channels());
  const std::size_t row = static_cast<std::size_t>(width) * image.channels();
  for (int y = 0; y < height; ++y) std::copy_n(image.row(y0 + y) + static_cast<std::size_t>(x0) * image.channels(), row, out.row(y));
  return out;
}

template <typename T>
Tensor<T> to_batch(std::span<const ImageTensor> images) {
  if (images.empty()) throw InvalidArgument("to_batch: no images");
  const ImageTensor& first = images.front();
  Tensor<T> out(Shape{static_cast<int>(images.size()), first.channels(), first.height(), first.width()});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const ImageTensor& im = images[n];
    if (!im.same_shape(first)) {
      throw InvalidArgument("to_batch: shape " + im.shape_str() + " differs from " + first.shape_str());
    }
    for (int c = 0; c < im.channels(); ++c) {
      T* plane = out.plane(static_cast<int>(n), c);
      for (int y = 0; y < im.height(); ++y) {
        for (int x = 0; x < im.width(); ++x) plane[y * im.width() + x] = static_cast<T>(im.at(y, x, c));
      }
    }
  }
  return out;
}

template <typename T>
ImageTensor from_batch(const Tensor<T>& batch, int n) {
  const Shape s = batch.shape();
  if (n < 0 || n >= s.n) throw InvalidArgument("from_batch: sample index out of range");
  ImageTensor out(s.h, s.w, s.c);
  for (int c = 0; c < s.c; ++c) {
    const T* plane = batch.plane(n, c);
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        out.at(y, x, c) = std::clamp(static_cast<float>(plane[y * s.w + x]), 0.0f, 1.0f);
      }
    }
  }
  return out;
}

template Tensor<float> to_batch<float>(std::span<const ImageTensor>);
template Tensor<double> to_batch<double>(std::span<const ImageTensor>);
template ImageTensor from_batch<float>(const Tensor<float>&, int);
template ImageTensor from_batch<double>(const Tensor<double>&, int);

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff") {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace dehaze
