#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xview/error.hpp"

namespace xview {

/// Dense height x width x channels tensor stored row-major by (row, column, channel).
///
/// Used both for images (raw 0..255 or normalized values) and for backbone feature maps.
template <class T>
class Tensor3 {
 public:
  using value_type = T;

  Tensor3() = default;

  Tensor3(std::size_t height, std::size_t width, std::size_t channels, T fill = T{})
      : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill) {}

  Tensor3(std::size_t height, std::size_t width, std::size_t channels, std::vector<T> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (data_.size() != height_ * width_ * channels_) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match " +
                       shape_string(height_, width_, channels_));
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(std::size_t row, std::size_t col, std::size_t ch) const noexcept {
    return (row * width_ + col) * channels_ + ch;
  }

  T& operator()(std::size_t row, std::size_t col, std::size_t ch) noexcept { return data_[index(row, col, ch)]; }
  const T& operator()(std::size_t row, std::size_t col, std::size_t ch) const noexcept {
    return data_[index(row, col, ch)];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  /// Channel vector of one pixel.
  std::span<T> pixel(std::size_t row, std::size_t col) noexcept {
    return std::span<T>(data_).subspan(index(row, col, 0), channels_);
  }
  std::span<const T> pixel(std::size_t row, std::size_t col) const noexcept {
    return std::span<const T>(data_).subspan(index(row, col, 0), channels_);
  }

  bool same_shape(const Tensor3& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  std::string shape() const { return shape_string(height_, width_, channels_); }

  template <class U>
  Tensor3<U> cast() const {
    Tensor3<U> out(height_, width_, channels_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.storage()[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor3& a, const Tensor3& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

  static std::string shape_string(std::size_t h, std::size_t w, std::size_t c) {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<T> data_;
};

template <class T>
using Image = Tensor3<T>;

template <class T>
using FeatureMap = Tensor3<T>;

/// Rotates columns so that output column w holds input column (w + shift) mod width.
template <class T>
Tensor3<T> roll_columns(const Tensor3<T>& t, std::size_t shift) {
  Tensor3<T> out(t.height(), t.width(), t.channels());
  if (t.width() == 0) return out;
  for (std::size_t r = 0; r < t.height(); ++r) {
    for (std::size_t w = 0; w < t.width(); ++w) {
      auto src = t.pixel(r, (w + shift) % t.width());
      auto dst = out.pixel(r, w);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  return out;
}

/// Circular column crop: columns offset, offset+1, ... offset+width-1 (mod input width).
template <class T>
Tensor3<T> circular_column_crop(const Tensor3<T>& t, std::size_t offset, std::size_t width) {
  Tensor3<T> out(t.height(), width, t.channels());
  for (std::size_t r = 0; r < t.height(); ++r) {
    for (std::size_t w = 0; w < width; ++w) {
      auto src = t.pixel(r, (offset + w) % t.width());
      auto dst = out.pixel(r, w);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  return out;
}

}  // namespace xview
