#pragma once

// Deterministic preprocessing: polar warping of aerial images, bilinear sampling,
// field-of-view cropping and per-channel normalization.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "xview/error.hpp"
#include "xview/tensor.hpp"

namespace xview {

struct PolarConfig {
  std::size_t aerial_size = 512;    // D_s, square aerial input
  std::size_t target_height = 128;  // H_v
  std::size_t target_width = 512;   // W_v

  void validate() const {
    if (aerial_size == 0 || target_height == 0 || target_width == 0) {
      throw ConfigError("polar config dimensions must be positive (aerial_size=" + std::to_string(aerial_size) +
                        ", target_height=" + std::to_string(target_height) +
                        ", target_width=" + std::to_string(target_width) + ")");
    }
  }

  friend bool operator==(const PolarConfig&, const PolarConfig&) = default;
};

/// Real-valued source position; row indexes height, col indexes width.
struct SourceCoord {
  double row = 0.0;
  double col = 0.0;
};

/// Source coordinate of target pixel (target_row, target_col). target_row may equal
/// target_height, which is the virtual row collapsing onto the aerial center.
inline SourceCoord polar_source(const PolarConfig& config, double target_row, double target_col) {
  const double half = static_cast<double>(config.aerial_size) / 2.0;
  const double hv = static_cast<double>(config.target_height);
  const double radius = half * (hv - target_row) / hv;
  const double angle = 2.0 * std::numbers::pi * target_col / static_cast<double>(config.target_width);
  return {half - radius * std::cos(angle), half + radius * std::sin(angle)};
}

/// Precomputed source coordinates for every target pixel of the polar warp.
class PolarGrid {
 public:
  explicit PolarGrid(const PolarConfig& config) : config_(config) {
    config_.validate();
    coords_.reserve(config_.target_height * config_.target_width);
    for (std::size_t r = 0; r < config_.target_height; ++r) {
      for (std::size_t c = 0; c < config_.target_width; ++c) {
        coords_.push_back(polar_source(config_, static_cast<double>(r), static_cast<double>(c)));
      }
    }
  }

  const PolarConfig& config() const noexcept { return config_; }
  std::size_t height() const noexcept { return config_.target_height; }
  std::size_t width() const noexcept { return config_.target_width; }
  const SourceCoord& at(std::size_t target_row, std::size_t target_col) const {
    return coords_.at(target_row * config_.target_width + target_col);
  }
  std::span<const SourceCoord> coords() const noexcept { return coords_; }

 private:
  PolarConfig config_;
  std::vector<SourceCoord> coords_;
};

inline PolarGrid build_polar_grid(const PolarConfig& config) { return PolarGrid(config); }

/// Four-neighbour bilinear interpolation with coordinates clamped to the pixel rectangle.
template <class T>
void bilinear_sample(const Image<T>& img, double row, double col, std::span<T> out) {
  if (img.empty()) throw ShapeError("cannot sample an empty image");
  if (out.size() != img.channels()) throw ShapeError("sample buffer does not match channel count");
  const double max_r = static_cast<double>(img.height() - 1);
  const double max_c = static_cast<double>(img.width() - 1);
  row = std::clamp(row, 0.0, max_r);
  col = std::clamp(col, 0.0, max_c);
  const auto r0 = static_cast<std::size_t>(std::floor(row));
  const auto c0 = static_cast<std::size_t>(std::floor(col));
  const std::size_t r1 = std::min(r0 + 1, img.height() - 1);
  const std::size_t c1 = std::min(c0 + 1, img.width() - 1);
  const double fr = row - static_cast<double>(r0);
  const double fc = col - static_cast<double>(c0);
  for (std::size_t ch = 0; ch < img.channels(); ++ch) {
    // Nested lerps keep constant neighbourhoods exact.
    const double a = static_cast<double>(img(r0, c0, ch)), b = static_cast<double>(img(r0, c1, ch));
    const double c = static_cast<double>(img(r1, c0, ch)), d = static_cast<double>(img(r1, c1, ch));
    const double top = a + fc * (b - a);
    const double bottom = c + fc * (d - c);
    const double v = top + fr * (bottom - top);
    out[ch] = static_cast<T>(v);
  }
}

template <class T>
std::vector<T> bilinear_sample(const Image<T>& img, double row, double col) {
  std::vector<T> out(img.channels());
  bilinear_sample(img, row, col, std::span<T>(out));
  return out;
}

template <class T>
Image<T> polar_transform(const Image<T>& aerial, const PolarGrid& grid) {
  const auto& cfg = grid.config();
  if (aerial.height() != aerial.width()) {
    throw ShapeError("polar transform needs a square aerial image, got " + aerial.shape());
  }
  if (aerial.height() != cfg.aerial_size) {
    throw ShapeError("aerial image is " + aerial.shape() + " but polar config expects side " +
                     std::to_string(cfg.aerial_size));
  }
  Image<T> out(grid.height(), grid.width(), aerial.channels());
  for (std::size_t r = 0; r < grid.height(); ++r) {
    for (std::size_t c = 0; c < grid.width(); ++c) {
      const auto& src = grid.at(r, c);
      bilinear_sample(aerial, src.row, src.col, out.pixel(r, c));
    }
  }
  return out;
}

template <class T>
Image<T> polar_transform(const Image<T>& aerial, const PolarConfig& config) {
  return polar_transform(aerial, PolarGrid(config));
}

/// Bilinear resize; output pixel centres are mapped onto input pixel centres.
template <class T>
Image<T> resize_bilinear(const Image<T>& img, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ShapeError("resize target must be non-empty");
  if (img.height() == height && img.width() == width) return img;
  Image<T> out(height, width, img.channels());
  const double sr = static_cast<double>(img.height()) / static_cast<double>(height);
  const double sc = static_cast<double>(img.width()) / static_cast<double>(width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      bilinear_sample(img, (static_cast<double>(r) + 0.5) * sr - 0.5, (static_cast<double>(c) + 0.5) * sc - 0.5,
                      out.pixel(r, c));
    }
  }
  return out;
}

/// Column count kept by a field-of-view crop: floor(width * fov / 360).
inline std::size_t fov_width(std::size_t panorama_width, double fov_deg) {
  if (!(fov_deg > 0.0 && fov_deg <= 360.0)) {
    throw ConfigError("field of view must lie in (0, 360], got " + std::to_string(fov_deg));
  }
  const auto w = static_cast<std::size_t>(std::floor(static_cast<double>(panorama_width) * fov_deg / 360.0));
  if (w == 0) throw ConfigError("field of view " + std::to_string(fov_deg) + " keeps no columns");
  return w;
}

template <class T>
Image<T> fov_crop(const Image<T>& panorama, double fov_deg, std::size_t offset_col) {
  const std::size_t width = fov_width(panorama.width(), fov_deg);
  if (offset_col >= panorama.width()) {
    throw ConfigError("crop offset " + std::to_string(offset_col) + " outside panorama width " +
                      std::to_string(panorama.width()));
  }
  return circular_column_crop(panorama, offset_col, width);
}

/// Per-channel mean and standard deviation of pixel/255.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t channels() const noexcept { return mean.size(); }

  void validate() const {
    if (mean.size() != stddev.size() || mean.empty()) throw ConfigError("normalization stats are incomplete");
    for (double s : stddev) {
      if (!(s > 0.0)) throw ConfigError("normalization stddev must be positive");
    }
  }

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

template <class T>
Image<T> normalize_image(const Image<T>& raw, const NormalizationStats& stats) {
  stats.validate();
  if (stats.channels() != raw.channels()) {
    throw ShapeError("stats have " + std::to_string(stats.channels()) + " channels, image has " +
                     std::to_string(raw.channels()));
  }
  Image<T> out(raw.height(), raw.width(), raw.channels());
  const std::size_t c = raw.channels();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::size_t ch = i % c;
    out.storage()[i] =
        static_cast<T>((static_cast<double>(raw.storage()[i]) / 255.0 - stats.mean[ch]) / stats.stddev[ch]);
  }
  return out;
}

template <class T>
Image<T> denormalize_image(const Image<T>& normalized, const NormalizationStats& stats) {
  stats.validate();
  if (stats.channels() != normalized.channels()) throw ShapeError("stats channel count mismatch");
  Image<T> out(normalized.height(), normalized.width(), normalized.channels());
  const std::size_t c = normalized.channels();
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    const std::size_t ch = i % c;
    out.storage()[i] =
        static_cast<T>((static_cast<double>(normalized.storage()[i]) * stats.stddev[ch] + stats.mean[ch]) * 255.0);
  }
  return out;
}

struct DatasetStats {
  NormalizationStats stats;
  /// Channels whose variance was zero; their stddev was set to the floor.
  std::vector<std::size_t> zero_variance_channels;
};

/// Population mean/stddev of pixel/255 over all pixels of all images (Welford update).
template <class T>
DatasetStats compute_dataset_stats(std::span<const Image<T>> images, double stddev_floor = 1e-6) {
  if (images.empty()) throw ConfigError("cannot compute statistics of an empty image set");
  const std::size_t c = images.front().channels();
  std::vector<double> mean(c, 0.0), m2(c, 0.0);
  std::vector<std::size_t> count(c, 0);
  for (const auto& img : images) {
    if (img.channels() != c) throw ShapeError("images have inconsistent channel counts");
    for (std::size_t i = 0; i < img.size(); ++i) {
      const std::size_t ch = i % c;
      const double x = static_cast<double>(img.storage()[i]) / 255.0;
      ++count[ch];
      const double delta = x - mean[ch];
      mean[ch] += delta / static_cast<double>(count[ch]);
      m2[ch] += delta * (x - mean[ch]);
    }
  }
  DatasetStats out;
  out.stats.mean = mean;
  out.stats.stddev.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (count[ch] == 0) throw ConfigError("images contain no pixels");
    const double sd = std::sqrt(m2[ch] / static_cast<double>(count[ch]));
    if (sd <= stddev_floor) {
      out.stats.stddev[ch] = stddev_floor;
      out.zero_variance_channels.push_back(ch);
    } else {
      out.stats.stddev[ch] = sd;
    }
  }
  return out;
}

}  // namespace xview
