// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "opt3dgs/image.hpp"
#include "opt3dgs/splat_model.hpp"

namespace opt3dgs {

using ParamVec = std::array<double, kParamsPerGaussian>;

inline constexpr double kAlphaClamp = 0.99;
inline constexpr double kScaleFloor = 1e-4;
inline constexpr double kFootprintSigmas = 3.0;

struct RenderSettings {
  Rgb background{0.0, 0.0, 0.0};
  int tile_size = 16;
  int threads = 1;
};

/// Per-primitive values derived once per render and reused by backward.
template <class T>
struct Projected {
  T mx, my;
  T cos_r, sin_r;
  T inv_a, inv_b;  // 1/s1^2, 1/s2^2
  T opacity;
  T ext_x, ext_y;  // half extents of the footprint box
  std::array<T, 3> color;
  bool scale_floored[2];
};

template <class T>
struct RenderOutput {
  ImageT<T> image;      // clamped to [0,1]
  ImageT<T> raw;        // unclamped composite
  std::vector<T> final_transmittance;
  std::vector<ParamVec> per_gaussian_grads;

  // Forward cache for backward().
  std::vector<Projected<T>> projected;
  std::vector<std::vector<std::uint32_t>> tile_lists;  // front-to-back primitive indices per tile
  int tiles_x = 0;
  int tiles_y = 0;
  RenderSettings settings;
};

template <class T>
RenderOutput<T> render(const GaussianCloud& cloud, int width, int height, const RenderSettings& settings = {});

/// Reverse pass. Fills and returns out.per_gaussian_grads with the gradient
/// of sum(dL_dimage * image) with respect to every unconstrained parameter.
template <class T>
const std::vector<ParamVec>& backward(const GaussianCloud& cloud, RenderOutput<T>& out, const ImageT<T>& dL_dimage);

inline constexpr double kPsnrSentinel = 99.0;

template <class T>
double psnr(const ImageT<T>& ref, const ImageT<T>& test, double peak = 1.0);

}  // namespace opt3dgs
