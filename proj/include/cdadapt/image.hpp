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

#ifndef CDADAPT_IMAGE_HPP
#define CDADAPT_IMAGE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdadapt {

/// Raised when tensor or image extents do not agree with an operation's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Interleaved H x W x C float raster, values nominally in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0F)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  [[nodiscard]] std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float& at(int y, int x, int c) { return data[index(y, x, c)]; }
  [[nodiscard]] float at(int y, int x, int c) const { return data[index(y, x, c)]; }

  [[nodiscard]] bool empty() const { return data.empty(); }
  [[nodiscard]] bool same_extent(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  /// Copies the rectangle [y0, y0+h) x [x0, x0+w).
  [[nodiscard]] Image crop(int y0, int x0, int h, int w) const;

  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary H x W raster; every value is exactly 0 or 1.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::uint8_t at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] Mask crop(int y0, int x0, int h, int w) const;
  [[nodiscard]] std::size_t count() const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

enum class Domain { kSource, kTarget };

std::string to_string(Domain d);

/// Co-registered bi-temporal pair with an optional change mask.
struct ImagePair {
  std::string id;
  Image t1;
  Image t2;
  std::optional<Mask> mask;
  Domain domain = Domain::kSource;

  /// Throws DimensionError / std::invalid_argument when an invariant is broken.
  void validate() const;
};

// PNG codec (8-bit on disk, [0,1] floats in memory).
Image read_png_image(const std::filesystem::path& path);
void write_png_image(const std::filesystem::path& path, const Image& image);
/// Any pixel > 127 maps to 1. 0/1-valued files are accepted as well.
Mask read_png_mask(const std::filesystem::path& path);
/// Writes 0/255.
void write_png_mask(const std::filesystem::path& path, const Mask& mask);

std::vector<std::uint8_t> encode_png_mask(const Mask& mask);
Mask decode_png_mask(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_png_image(const Image& image);

}  // namespace cdadapt

#endif  // CDADAPT_IMAGE_HPP
