// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace opt3dgs {

Image read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw std::runtime_error("cannot read PNG '" + path + "': " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&png);
    throw std::runtime_error("cannot decode PNG '" + path + "': " + png.message);
  }
  Image img(static_cast<int>(png.width), static_cast<int>(png.height));
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

void write_png(const std::string& path, const Image& img) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(img.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const float v = std::clamp(img.data[i], 0.0f, 1.0f);
    buf[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG '" + path + "': " + png.message);
}

Rgb sample_bilinear(const Image& img, double x, double y) {
  const double fx = std::clamp(x - 0.5, 0.0, double(img.width - 1));
  const double fy = std::clamp(y - 0.5, 0.0, double(img.height - 1));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double tx = fx - x0;
  const double ty = fy - y0;
  Rgb out{};
  for (int c = 0; c < 3; ++c) {
    const double top = (1 - tx) * img.at(x0, y0, c) + tx * img.at(x1, y0, c);
    const double bot = (1 - tx) * img.at(x0, y1, c) + tx * img.at(x1, y1, c);
    out[c] = (1 - ty) * top + ty * bot;
  }
  return out;
}

}  // namespace opt3dgs
