/* Copyright 2026 The cdadapt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cdadapt/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

namespace cdadapt {

Image Image::crop(int y0, int x0, int h, int w) const {
  if (y0 < 0 || x0 < 0 || y0 + h > height || x0 + w > width) {
    throw DimensionError("crop rectangle outside image");
  }
  Image out(h, w, channels);
  for (int y = 0; y < h; ++y) {
    const auto* src = &data[index(y0 + y, x0, 0)];
    std::copy(src, src + static_cast<std::size_t>(w) * channels, &out.data[out.index(y, 0, 0)]);
  }
  return out;
}

Mask Mask::crop(int y0, int x0, int h, int w) const {
  if (y0 < 0 || x0 < 0 || y0 + h > height || x0 + w > width) {
    throw DimensionError("crop rectangle outside mask");
  }
  Mask out(h, w);
  for (int y = 0; y < h; ++y) {
    const auto* src = &data[static_cast<std::size_t>(y0 + y) * width + x0];
    std::copy(src, src + w, &out.data[static_cast<std::size_t>(y) * w]);
  }
  return out;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

std::string to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }

void ImagePair::validate() const {
  if (t1.height != t2.height || t1.width != t2.width) {
    throw DimensionError("pair '" + id + "': t1 and t2 extents differ");
  }
  if (t1.channels != 3 || t2.channels != 3) {
    throw DimensionError("pair '" + id + "': images must have 3 channels");
  }
  if (mask && (mask->height != t1.height || mask->width != t1.width)) {
    throw DimensionError("pair '" + id + "': mask extent differs from images");
  }
  auto in_unit = [](float v) { return v >= 0.0F && v <= 1.0F; };
  if (!std::all_of(t1.data.begin(), t1.data.end(), in_unit) ||
      !std::all_of(t2.data.begin(), t2.data.end(), in_unit)) {
    throw std::invalid_argument("pair '" + id + "': pixel values outside [0,1]");
  }
  if (mask && std::any_of(mask->data.begin(), mask->data.end(),
                          [](std::uint8_t v) { return v > 1; })) {
    throw std::invalid_argument("pair '" + id + "': mask is not binary");
  }
}

namespace {

Image from_bgr(const cv::Mat& bgr) {
  Image img(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = static_cast<float>(row[x][2 - c]) / 255.0F;
      }
    }
  }
  return img;
}

cv::Mat to_bgr(const Image& image) {
  if (image.channels != 3) throw DimensionError("expected a 3-channel image");
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(y, x, c), 0.0F, 1.0F);
        row[x][2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0F));
      }
    }
  }
  return bgr;
}

Mask from_gray(const cv::Mat& gray) {
  double max_value = 0.0;
  cv::minMaxLoc(gray, nullptr, &max_value);
  const int threshold = max_value <= 1.0 ? 0 : 127;
  Mask mask(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y) {
    const auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < gray.cols; ++x) mask.at(y, x) = row[x] > threshold ? 1 : 0;
  }
  return mask;
}

cv::Mat to_gray(const Mask& mask) {
  cv::Mat gray(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width; ++x) row[x] = mask.at(y, x) ? 255 : 0;
  }
  return gray;
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& mat) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) {
    throw std::runtime_error("failed to write " + path.string());
  }
}

}  // namespace

Image read_png_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image " + path.string());
  return from_bgr(bgr);
}

void write_png_image(const std::filesystem::path& path, const Image& image) {
  write_or_throw(path, to_bgr(image));
}

Mask read_png_mask(const std::filesystem::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw std::runtime_error("cannot read mask " + path.string());
  return from_gray(gray);
}

void write_png_mask(const std::filesystem::path& path, const Mask& mask) {
  write_or_throw(path, to_gray(mask));
}

std::vector<std::uint8_t> encode_png_mask(const Mask& mask) {
  std::vector<std::uint8_t> buf;
  cv::imencode(".png", to_gray(mask), buf);
  return buf;
}

std::vector<std::uint8_t> encode_png_image(const Image& image) {
  std::vector<std::uint8_t> buf;
  cv::imencode(".png", to_bgr(image), buf);
  return buf;
}

Mask decode_png_mask(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) throw std::invalid_argument("empty PNG body");
  cv::Mat gray = cv::imdecode(bytes, cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw std::invalid_argument("body is not a decodable image");
  return from_gray(gray);
}

}  // namespace cdadapt
