#include "dehaze/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace dehaze::metrics {

namespace {

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* op) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  if (a.empty()) throw InvalidArgument(std::string(op) + ": empty image");
}

struct Moments {
  double mu_x, mu_y, var_x, var_y, cov;
};

double ssim_from(const Moments& m, const SsimConfig& cfg) {
  const double sx = std::sqrt(std::max(m.var_x, 0.0));
  const double sy = std::sqrt(std::max(m.var_y, 0.0));
  const double l = (2.0 * m.mu_x * m.mu_y + cfg.c1) / (m.mu_x * m.mu_x + m.mu_y * m.mu_y + cfg.c1);
  const double c = (2.0 * sx * sy + cfg.c2) / (m.var_x + m.var_y + cfg.c2);
  const double s = (m.cov + cfg.c3) / (sx * sy + cfg.c3);
  return l * c * s;
}

// Channel `ch` of an image as a row-major double plane.
std::vector<double> channel(const ImageTensor& im, int ch) {
  std::vector<double> out(static_cast<std::size_t>(im.height()) * im.width());
  for (int y = 0; y < im.height(); ++y) {
    for (int x = 0; x < im.width(); ++x) out[static_cast<std::size_t>(y) * im.width() + x] = im.at(y, x, ch);
  }
  return out;
}

double ssim_global(const std::vector<double>& a, const std::vector<double>& b, const SsimConfig& cfg) {
  const double n = static_cast<double>(a.size());
  Moments m{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    m.mu_x += a[i];
    m.mu_y += b[i];
  }
  m.mu_x /= n;
  m.mu_y /= n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dx = a[i] - m.mu_x;
    const double dy = b[i] - m.mu_y;
    m.var_x += dx * dx;
    m.var_y += dy * dy;
    m.cov += dx * dy;
  }
  m.var_x /= n;
  m.var_y /= n;
  m.cov /= n;
  return ssim_from(m, cfg);
}

double ssim_windowed(const std::vector<double>& a, const std::vector<double>& b, int height, int width,
                     const SsimConfig& cfg) {
  int win = std::min({cfg.window, height, width});
  if (win % 2 == 0) --win;
  std::vector<double> w(static_cast<std::size_t>(win) * win);
  const double r = (win - 1) / 2.0;
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) {
      const double dy = i - r, dx = j - r;
      w[static_cast<std::size_t>(i) * win + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * cfg.sigma * cfg.sigma));
    }
  }
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= wsum;

  double total = 0.0;
  std::size_t count = 0;
  for (int y0 = 0; y0 + win <= height; ++y0) {
    for (int x0 = 0; x0 + win <= width; ++x0) {
      Moments m{};
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const std::size_t p = static_cast<std::size_t>(y0 + i) * width + x0 + j;
          const double k = w[static_cast<std::size_t>(i) * win + j];
          m.mu_x += k * a[p];
          m.mu_y += k * b[p];
        }
      }
      for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
          const std::size_t p = static_cast<std::size_t>(y0 + i) * width + x0 + j;
          const double k = w[static_cast<std::size_t>(i) * win + j];
          const double dx = a[p] - m.mu_x, dy = b[p] - m.mu_y;
          m.var_x += k * dx * dx;
          m.var_y += k * dy * dy;
          m.cov += k * dx * dy;
        }
      }
      total += ssim_from(m, cfg);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

}  // namespace

double psnr(const ImageTensor& reference, const ImageTensor& test, double peak) {
  require_same_shape(reference, test, "psnr");
  if (!(peak > 0.0)) throw InvalidArgument("psnr: peak must be > 0");
  const auto a = reference.values();
  const auto b = test.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

SsimConfig SsimConfig::for_range(double dynamic_range) {
  if (!(dynamic_range > 0.0)) throw InvalidArgument("ssim: dynamic range must be > 0");
  SsimConfig c;
  c.c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  c.c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  c.c3 = c.c2 / 2.0;
  return c;
}

void SsimConfig::validate() const {
  if (!(c1 > 0.0 && c2 > 0.0 && c3 > 0.0)) throw InvalidArgument("ssim: constants must be positive");
  if (mode == SsimMode::Windowed && (window < 1 || !(sigma > 0.0))) {
    throw InvalidArgument("ssim: window must be >= 1 and sigma > 0");
  }
}

ImageTensor to_luma(const ImageTensor& image) {
  if (image.channels() == 1) return image;
  ImageTensor out(image.height(), image.width(), 1);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      out.at(y, x, 0) = static_cast<float>(0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) +
                                           0.114 * image.at(y, x, 2));
    }
  }
  return out;
}

double ssim(const ImageTensor& reference, const ImageTensor& test, const SsimConfig& config) {
  require_same_shape(reference, test, "ssim");
  config.validate();
  const bool luma = config.color == SsimColor::Luma;
  const ImageTensor ra = luma ? to_luma(reference) : reference;
  const ImageTensor tb = luma ? to_luma(test) : test;
  double total = 0.0;
  for (int c = 0; c < ra.channels(); ++c) {
    const auto a = channel(ra, c);
    const auto b = channel(tb, c);
    total += config.mode == SsimMode::Global ? ssim_global(a, b, config)
                                             : ssim_windowed(a, b, ra.height(), ra.width(), config);
  }
  return total / ra.channels();
}

double iou(const Box& a, const Box& b) noexcept {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

void DetectionRecord::validate() const {
  if (!(box.x1 < box.x2) || !(box.y1 < box.y2)) throw InvalidArgument("box must satisfy x1 < x2 and y1 < y2");
  if (score && !(*score >= 0.0 && *score <= 1.0)) throw InvalidArgument("score must lie in [0, 1]");
}

std::optional<double> average_precision(const std::vector<DetectionRecord>& predictions,
                                        const std::vector<DetectionRecord>& truths, double iou_threshold) {
  const std::string* category = nullptr;
  for (const auto* set : {&predictions, &truths}) {
    for (const auto& r : *set) {
      if (category && r.category != *category) throw InvalidArgument("average_precision: mixed categories");
      category = &r.category;
    }
  }
  for (const auto& p : predictions) {
    if (!p.score) throw InvalidArgument("average_precision: prediction without a score");
  }
  if (predictions.empty() && truths.empty()) return std::nullopt;
  if (predictions.empty() || truths.empty()) return 0.0;

  std::map<std::string, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < truths.size(); ++i) by_image[truths[i].image_id].push_back(i);

  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return *predictions[a].score > *predictions[b].score; });

  std::vector<bool> matched(truths.size(), false);
  std::vector<double> recall, precision;
  const double total = static_cast<double>(truths.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const DetectionRecord& p = predictions[order[k]];
    if (auto it = by_image.find(p.image_id); it != by_image.end()) {
      double best = -1.0;
      std::size_t best_idx = 0;
      for (std::size_t t : it->second) {
        if (matched[t]) continue;
        const double v = iou(p.box, truths[t].box);
        if (v > best) {
          best = v;
          best_idx = t;
        }
      }
      if (best >= iou_threshold) {
        matched[best_idx] = true;
        ++tp;
      }
    }
    // Only the end of a group of equal scores is a reachable operating point.
    const bool group_end = k + 1 == order.size() || *predictions[order[k + 1]].score != *p.score;
    if (group_end) {
      recall.push_back(static_cast<double>(tp) / total);
      precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    }
  }

  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

std::vector<std::string> categories_of(const std::vector<DetectionRecord>& truths,
                                       const std::vector<DetectionRecord>& predictions) {
  std::vector<std::string> out;
  for (const auto* set : {&truths, &predictions}) {
    for (const auto& r : *set) {
      if (std::find(out.begin(), out.end(), r.category) == out.end()) out.push_back(r.category);
    }
  }
  return out;
}

MapResult mean_average_precision(const std::vector<DetectionRecord>& predictions,
                                 const std::vector<DetectionRecord>& truths, const std::vector<std::string>& categories,
                                 double iou_threshold) {
  if (categories.empty()) throw InvalidArgument("mean_average_precision: no categories");
  MapResult result;
  double sum = 0.0;
  int counted = 0;
  for (const auto& cat : categories) {
    std::vector<DetectionRecord> p, t;
    std::copy_if(predictions.begin(), predictions.end(), std::back_inserter(p),
                 [&](const DetectionRecord& r) { return r.category == cat; });
    std::copy_if(truths.begin(), truths.end(), std::back_inserter(t),
                 [&](const DetectionRecord& r) { return r.category == cat; });
    CategoryAp row{cat, average_precision(p, t, iou_threshold), t.size(), p.size()};
    if (t.empty()) {
      result.warnings.push_back("category '" + cat + "' has no ground truth and is excluded from mAP");
      row.ap.reset();
    } else {
      sum += *row.ap;
      ++counted;
    }
    result.table.push_back(std::move(row));
  }
  if (counted == 0) throw InvalidArgument("mean_average_precision: no category has ground truth");
  result.map = sum / counted;
  return result;
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<DetectionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    std::vector<std::string> fields;
    std::istringstream is(line);
    for (std::string tok; std::getline(is, tok, '\t');) fields.push_back(tok);
    if (fields.size() != 7) {
      throw InvalidArgument(where + "expected 7 tab-separated fields, got " + std::to_string(fields.size()));
    }
    DetectionRecord r;
    r.image_id = fields[0];
    r.category = fields[1];
    if (r.image_id.empty() || r.category.empty()) throw InvalidArgument(where + "empty image_id or category");
    if (fields[2] != "-") {
      double s = 0.0;
      if (!parse_double(fields[2], s)) throw InvalidArgument(where + "bad score '" + fields[2] + "'");
      r.score = s;
    }
    double* coords[] = {&r.box.x1, &r.box.y1, &r.box.x2, &r.box.y2};
    for (int i = 0; i < 4; ++i) {
      if (!parse_double(fields[3 + i], *coords[i])) {
        throw InvalidArgument(where + "bad coordinate '" + fields[3 + i] + "'");
      }
    }
    try {
      r.validate();
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(where + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_detections(const std::filesystem::path& path, const std::vector<DetectionRecord>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (const auto& r : records) {
    f << r.image_id << '\t' << r.category << '\t' << (r.score ? fmt9(*r.score) : "-") << '\t' << fmt9(r.box.x1)
      << '\t' << fmt9(r.box.y1) << '\t' << fmt9(r.box.x2) << '\t' << fmt9(r.box.y2) << '\n';
  }
}

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_ap_table(const MapResult& result) {
  std::string out = "category\tAP\ttruths\tpredictions\n";
  for (const auto& row : result.table) {
    out += row.category + "\t" + (row.ap ? format_value(*row.ap) : std::string("-")) + "\t" +
           std::to_string(row.truths) + "\t" + std::to_string(row.predictions) + "\n";
  }
  out += "mAP\t" + format_value(result.map) + "\n";
  return out;
}

Report summarize(std::vector<ImageScore> rows) {
  if (rows.empty()) throw InvalidArgument("summarize: no images");
  Report r;
  const double n = static_cast<double>(rows.size());
  for (const auto& s : rows) {
    r.psnr_avg += s.psnr;
    r.ssim_avg += s.ssim;
  }
  r.psnr_avg /= n;
  r.ssim_avg /= n;
  for (const auto& s : rows) {
    r.psnr_sd += (s.psnr - r.psnr_avg) * (s.psnr - r.psnr_avg);
    r.ssim_sd += (s.ssim - r.ssim_avg) * (s.ssim - r.ssim_avg);
  }
  r.psnr_sd = std::sqrt(r.psnr_sd / n);
  r.ssim_sd = std::sqrt(r.ssim_sd / n);
  r.rows = std::move(rows);
  return r;
}

std::string format_report(const Report& report) {
  std::string out = "PSNR_AVG\tSSIM_AVG\tPSNR_SD\tSSIM_SD\n";
  out += format_value(report.psnr_avg) + "\t" + format_value(report.ssim_avg) + "\t" + format_value(report.psnr_sd) +
         "\t" + format_value(report.ssim_sd) + "\n\nname\tPSNR\tSSIM\n";
  for (const auto& row : report.rows) {
    out += row.name + "\t" + format_value(row.psnr) + "\t" + format_value(row.ssim) + "\n";
  }
  return out;
}

}  // namespace dehaze::metrics
