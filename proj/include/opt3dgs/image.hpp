// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace opt3dgs {

/// Interleaved RGB image, row-major, values nominally in [0,1].
template <class T>
struct ImageT {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  ImageT() = default;
  ImageT(int w, int h, T fill = T(0)) : width(w), height(h), data(std::size_t(w) * h * 3, fill) {}

  std::size_t index(int x, int y, int c) const { return (std::size_t(y) * width + x) * 3 + c; }
  T& at(int x, int y, int c) { return data[index(x, y, c)]; }
  T at(int x, int y, int c) const { return data[index(x, y, c)]; }
  std::size_t pixels() const { return std::size_t(width) * height; }
  bool same_shape(const auto& o) const { return width == o.width && height == o.height; }

  template <class U>
  ImageT<U> cast() const {
    ImageT<U> out;
    out.width = width;
    out.height = height;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

using Image = ImageT<float>;
using ImageD = ImageT<double>;
using Rgb = std::array<double, 3>;

/// 8-bit RGB PNG. Alpha and grayscale inputs are converted to RGB.
Image read_png(const std::string& path);
/// Values are clamped to [0,1] and rounded to 8 bits.
void write_png(const std::string& path, const Image& img);

/// Bilinear sample at continuous pixel coordinates (pixel centers at +0.5).
Rgb sample_bilinear(const Image& img, double x, double y);

}  // namespace opt3dgs
