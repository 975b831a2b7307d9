#pragma once

#include <cstdint>
#include <filesystem>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <string>
#include <vector>

#include "stawgan/core/tensor.hpp"
#include "stawgan/errors.hpp"

namespace stawgan::data {

using core::Shape4;
using core::Tensor;

// 8-bit interleaved image, RGB order for 3-channel data.
struct ImageU8 {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;  // HWC

  std::uint8_t& at(int y, int x, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

inline ImageU8 make_image(int height, int width, int channels, std::uint8_t fill = 0) {
  ImageU8 img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(height) * width * channels, fill);
  return img;
}

inline cv::Mat to_mat(const ImageU8& img) {
  cv::Mat m(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3);
  std::memcpy(m.data, img.pixels.data(), img.pixels.size());
  if (img.channels == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
  return m;
}

inline ImageU8 from_mat(const cv::Mat& m) {
  cv::Mat src = m;
  if (src.channels() == 4) cv::cvtColor(src, src, cv::COLOR_BGRA2BGR);
  ImageU8 img = make_image(src.rows, src.cols, src.channels() == 1 ? 1 : 3);
  if (img.channels == 3) {
    cv::Mat rgb;
    cv::cvtColor(src, rgb, cv::COLOR_BGR2RGB);
    std::memcpy(img.pixels.data(), rgb.data, img.pixels.size());
  } else {
    std::memcpy(img.pixels.data(), src.data, img.pixels.size());
  }
  return img;
}

inline ImageU8 read_image(const std::string& path, int expect_channels = 0) {
  cv::Mat m = cv::imread(path, expect_channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read image: " + path);
  return from_mat(m);
}

inline void write_image(const std::string& path, const ImageU8& img) {
  namespace fs = std::filesystem;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  if (!cv::imwrite(path, to_mat(img))) throw IoError("cannot write image: " + path);
}

// Bilinear for images, nearest for masks (preserves the binary value set).
inline ImageU8 resize_bilinear(const ImageU8& img, int height, int width) {
  if (img.height == height && img.width == width) return img;
  cv::Mat dst;
  cv::resize(to_mat(img), dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  return from_mat(dst);
}

inline ImageU8 resize_nearest(const ImageU8& img, int height, int width) {
  if (img.height == height && img.width == width) return img;
  cv::Mat dst;
  cv::resize(to_mat(img), dst, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
  return from_mat(dst);
}

// HWC u8 -> [1,C,H,W] float with raw 0..255 values.
inline Tensor<float> to_tensor_raw(const ImageU8& img) {
  Tensor<float> t(Shape4{1, img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at(0, c, y, x) = static_cast<float>(img.at(y, x, c));
  return t;
}

// [1,C,H,W] float 0..255 -> HWC u8 with round-to-nearest.
inline ImageU8 to_image_raw(const Tensor<float>& t) {
  ImageU8 img = make_image(static_cast<int>(t.h()), static_cast<int>(t.w()),
                           static_cast<int>(t.c()));
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float v = t.at(0, c, y, x);
        v = std::min(std::max(v, 0.0f), 255.0f);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
      }
  return img;
}

}  // namespace stawgan::data
