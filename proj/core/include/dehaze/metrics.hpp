#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dehaze/image.hpp"

namespace dehaze::metrics {

/// 10 log10(peak^2 / MSE), MSE averaged over pixels and channels.
/// Identical images give +infinity.
double psnr(const ImageTensor& reference, const ImageTensor& test, double peak = 1.0);

enum class SsimMode { Global, Windowed };
enum class SsimColor { Luma, PerChannel };

struct SsimConfig {
  double c1 = 1e-4;    // (0.01 P)^2 with P = 1
  double c2 = 9e-4;    // (0.03 P)^2
  double c3 = 4.5e-4;  // c2 / 2
  SsimMode mode = SsimMode::Global;
  int window = 11;  // Gaussian window side, windowed mode only
  double sigma = 1.5;
  SsimColor color = SsimColor::Luma;

  /// Constants for a given dynamic range P (1 for normalized data, 255 for 8-bit).
  static SsimConfig for_range(double dynamic_range);
  void validate() const;
};

/// Product of the luminance, contrast and structure terms. Statistics use 1/N
/// normalization. Windowed mode averages over every fully contained window; the
/// window shrinks to the largest odd size that fits smaller images.
double ssim(const ImageTensor& reference, const ImageTensor& test, const SsimConfig& config = {});

/// 0.299 R + 0.587 G + 0.114 B; single-channel images are returned unchanged.
ImageTensor to_luma(const ImageTensor& image);

// ---- detection ----

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double area() const noexcept { return (x2 - x1) * (y2 - y1); }
};

double iou(const Box& a, const Box& b) noexcept;

struct DetectionRecord {
  std::string image_id;
  std::string category;
  std::optional<double> score;  // set for predictions, empty for ground truth
  Box box;

  /// Throws InvalidArgument for a degenerate box or a score outside [0, 1].
  void validate() const;
};

/// Area under the all-point interpolated precision/recall curve for one category.
/// Predictions are ranked by descending score (input order breaks ties) and each is
/// matched to the unmatched truth of the same image with the highest IoU, if that
/// IoU reaches the threshold. Returns nullopt when there are neither predictions
/// nor truths, and 0 when only predictions exist.
std::optional<double> average_precision(const std::vector<DetectionRecord>& predictions,
                                        const std::vector<DetectionRecord>& truths, double iou_threshold = 0.5);

struct CategoryAp {
  std::string category;
  std::optional<double> ap;
  std::size_t truths = 0;
  std::size_t predictions = 0;
};

struct MapResult {
  double map = 0.0;
  std::vector<CategoryAp> table;
  std::vector<std::string> warnings;
};

/// Mean AP over the categories that have ground truth. Throws InvalidArgument if none do.
MapResult mean_average_precision(const std::vector<DetectionRecord>& predictions,
                                 const std::vector<DetectionRecord>& truths, const std::vector<std::string>& categories,
                                 double iou_threshold = 0.5);

/// Distinct categories in first-seen order over truths, then predictions.
std::vector<std::string> categories_of(const std::vector<DetectionRecord>& truths,
                                       const std::vector<DetectionRecord>& predictions);

/// Tab-separated: image_id, category, score or "-", x1, y1, x2, y2. No header.
/// Malformed lines raise InvalidArgument whose message starts with "<path>:<line>:".
std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, const std::vector<DetectionRecord>& records);

std::string format_ap_table(const MapResult& result);

// ---- image-set report ----

struct ImageScore {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct Report {
  double psnr_avg = 0.0;
  double ssim_avg = 0.0;
  double psnr_sd = 0.0;
  double ssim_sd = 0.0;
  std::vector<ImageScore> rows;
};

/// Means and population standard deviations. An infinite PSNR makes the PSNR mean
/// infinite and its standard deviation NaN.
Report summarize(std::vector<ImageScore> rows);

/// "inf", "-inf", "nan" or a fixed six-decimal number.
std::string format_value(double v);

/// Summary header and row, a blank line, then one "name PSNR SSIM" row per image.
std::string format_report(const Report& report);

}  // namespace dehaze::metrics
