#pragma once

// PNG/JPEG decoding and encoding backed by OpenCV imgcodecs. Images are RGB, values 0..255.

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include "xview/error.hpp"
#include "xview/tensor.hpp"

namespace xview {

inline Image<float> read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: '" + path.string() + "'");
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode '" + path.string() + "': " + e.what());
  }
  if (bgr.empty()) throw IoError("cannot decode '" + path.string() + "'");
  Image<float> img(static_cast<std::size_t>(bgr.rows), static_cast<std::size_t>(bgr.cols), 3);
  for (int r = 0; r < bgr.rows; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      auto px = img.pixel(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      px[0] = row[c][2];
      px[1] = row[c][1];
      px[2] = row[c][0];
    }
  }
  return img;
}

/// Writes a 3-channel image, rounding and clamping values to 0..255. Format follows the extension.
inline void write_image(const std::filesystem::path& path, const Image<float>& img) {
  if (img.channels() != 3) throw ShapeError("only 3-channel images can be written");
  cv::Mat bgr(static_cast<int>(img.height()), static_cast<int>(img.width()), CV_8UC3);
  auto to_u8 = [](float v) { return static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L)); };
  for (int r = 0; r < bgr.rows; ++r) {
    auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      auto px = img.pixel(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      row[c] = cv::Vec3b(to_u8(px[2]), to_u8(px[1]), to_u8(px[0]));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception& e) {
    throw IoError("cannot encode '" + path.string() + "': " + e.what());
  }
  if (!ok) throw IoError("cannot encode '" + path.string() + "'");
}

}  // namespace xview
