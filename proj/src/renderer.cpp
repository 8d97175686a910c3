// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "opt3dgs/errors.hpp"

namespace opt3dgs {

namespace {

template <class F>
void parallel_for(int n, int threads, F&& fn) {
  threads = std::clamp(threads, 1, std::max(n, 1));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) fn(i);
    });
  for (auto& th : pool) th.join();
}

template <class T>
Projected<T> project(const Gaussian2D& g) {
  Projected<T> p{};
  p.mx = static_cast<T>(g.mu[0]);
  p.my = static_cast<T>(g.mu[1]);
  const double a0 = std::exp(g.log_scale[0]);
  const double a1 = std::exp(g.log_scale[1]);
  p.scale_floored[0] = !(a0 >= kScaleFloor);
  p.scale_floored[1] = !(a1 >= kScaleFloor);
  const double s0 = p.scale_floored[0] ? kScaleFloor : a0;
  const double s1 = p.scale_floored[1] ? kScaleFloor : a1;
  const Sym2 cov = build_covariance(s0, s1, g.rot_angle);
  p.cos_r = static_cast<T>(std::cos(g.rot_angle));
  p.sin_r = static_cast<T>(std::sin(g.rot_angle));
  p.inv_a = static_cast<T>(1.0 / (s0 * s0));
  p.inv_b = static_cast<T>(1.0 / (s1 * s1));
  p.opacity = static_cast<T>(g.opacity());
  p.ext_x = static_cast<T>(kFootprintSigmas * std::sqrt(cov.xx));
  p.ext_y = static_cast<T>(kFootprintSigmas * std::sqrt(cov.yy));
  for (int c = 0; c < 3; ++c) p.color[c] = static_cast<T>(g.color[c]);
  return p;
}

template <class T>
bool covers(const Projected<T>& p, T px, T py) {
  return std::abs(px - p.mx) <= p.ext_x && std::abs(py - p.my) <= p.ext_y;
}

// Rotated-frame offsets of a pixel and the Mahalanobis quadratic form.
template <class T>
struct Local {
  T dx, dy, u1, u2, q;
};

template <class T>
Local<T> local_frame(const Projected<T>& p, T px, T py) {
  Local<T> l;
  l.dx = px - p.mx;
  l.dy = py - p.my;
  l.u1 = p.cos_r * l.dx + p.sin_r * l.dy;
  l.u2 = -p.sin_r * l.dx + p.cos_r * l.dy;
  l.q = l.u1 * l.u1 * p.inv_a + l.u2 * l.u2 * p.inv_b;
  return l;
}

}  // namespace

template <class T>
RenderOutput<T> render(const GaussianCloud& cloud, int width, int height, const RenderSettings& settings) {
  require(width >= 1 && height >= 1, "render: width and height must be at least 1");
  require(settings.tile_size >= 1, "render: tile_size must be positive");
  RenderOutput<T> out;
  out.settings = settings;
  out.image = ImageT<T>(width, height);
  out.raw = ImageT<T>(width, height);
  out.final_transmittance.assign(out.image.pixels(), T(1));

  const int ts = settings.tile_size;
  out.tiles_x = (width + ts - 1) / ts;
  out.tiles_y = (height + ts - 1) / ts;
  out.tile_lists.assign(std::size_t(out.tiles_x) * out.tiles_y, {});

  out.projected.reserve(cloud.size());
  for (const auto& g : cloud.gaussians) out.projected.push_back(project<T>(g));

  for (std::size_t idx : cloud.compositing_order()) {
    const auto& p = out.projected[idx];
    if (!std::isfinite(p.mx) || !std::isfinite(p.my) || !std::isfinite(p.ext_x) || !std::isfinite(p.ext_y)) continue;
    const T half = T(0.5);
    const double x0 = std::ceil(double(p.mx - p.ext_x - half));
    const double x1 = std::floor(double(p.mx + p.ext_x - half));
    const double y0 = std::ceil(double(p.my - p.ext_y - half));
    const double y1 = std::floor(double(p.my + p.ext_y - half));
    if (x1 < 0 || y1 < 0 || x0 > width - 1 || y0 > height - 1 || x0 > x1 || y0 > y1) continue;
    const int tx0 = std::max(0, int(x0)) / ts;
    const int tx1 = std::min(width - 1, int(x1)) / ts;
    const int ty0 = std::max(0, int(y0)) / ts;
    const int ty1 = std::min(height - 1, int(y1)) / ts;
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        out.tile_lists[std::size_t(ty) * out.tiles_x + tx].push_back(static_cast<std::uint32_t>(idx));
  }

  const std::array<T, 3> bg{T(settings.background[0]), T(settings.background[1]), T(settings.background[2])};
  const T alpha_max = T(kAlphaClamp);

  parallel_for(out.tiles_x * out.tiles_y, settings.threads, [&](int tile) {
    const int tx = tile % out.tiles_x;
    const int ty = tile / out.tiles_x;
    const auto& list = out.tile_lists[tile];
    for (int y = ty * ts; y < std::min(height, (ty + 1) * ts); ++y) {
      for (int x = tx * ts; x < std::min(width, (tx + 1) * ts); ++x) {
        const T px = T(x) + T(0.5);
        const T py = T(y) + T(0.5);
        T trans = T(1);
        std::array<T, 3> acc{T(0), T(0), T(0)};
        for (std::uint32_t idx : list) {
          const auto& p = out.projected[idx];
          if (!covers(p, px, py)) continue;
          const auto l = local_frame(p, px, py);
          const T alpha = std::min(p.opacity * std::exp(T(-0.5) * l.q), alpha_max);
          const T w = alpha * trans;
          for (int c = 0; c < 3; ++c) acc[c] += p.color[c] * w;
          trans *= (T(1) - alpha);
        }
        const std::size_t pix = std::size_t(y) * width + x;
        out.final_transmittance[pix] = trans;
        for (int c = 0; c < 3; ++c) {
          const T v = acc[c] + trans * bg[c];
          out.raw.data[pix * 3 + c] = v;
          out.image.data[pix * 3 + c] = std::clamp(v, T(0), T(1));
        }
      }
    }
  });
  return out;
}

template <class T>
const std::vector<ParamVec>& backward(const GaussianCloud& cloud, RenderOutput<T>& out, const ImageT<T>& dL_dimage) {
  require(dL_dimage.same_shape(out.image) && dL_dimage.data.size() == out.image.data.size(),
          "backward: dL_dimage dimensions do not match the render");
  require(out.projected.size() == cloud.size(), "backward: cloud does not match the render");

  const int width = out.image.width;
  const int height = out.image.height;
  const int ts = out.settings.tile_size;
  const std::array<T, 3> bg{T(out.settings.background[0]), T(out.settings.background[1]),
                            T(out.settings.background[2])};
  const T alpha_max = T(kAlphaClamp);

  // Tile-local accumulators, reduced in tile order so the result does not
  // depend on the thread count.
  std::vector<std::vector<ParamVec>> local(out.tile_lists.size());

  parallel_for(out.tiles_x * out.tiles_y, out.settings.threads, [&](int tile) {
    const int tx = tile % out.tiles_x;
    const int ty = tile / out.tiles_x;
    const auto& list = out.tile_lists[tile];
    auto& grads = local[tile];
    grads.assign(list.size(), ParamVec{});
    for (int y = ty * ts; y < std::min(height, (ty + 1) * ts); ++y) {
      for (int x = tx * ts; x < std::min(width, (tx + 1) * ts); ++x) {
        const std::size_t pix = std::size_t(y) * width + x;
        std::array<T, 3> dc{};
        bool any = false;
        for (int c = 0; c < 3; ++c) {
          const T raw = out.raw.data[pix * 3 + c];
          // Output clamp passes gradient only inside [0,1].
          dc[c] = (raw >= T(0) && raw <= T(1)) ? dL_dimage.data[pix * 3 + c] : T(0);
          any = any || dc[c] != T(0);
        }
        if (!any) continue;
        const T px = T(x) + T(0.5);
        const T py = T(y) + T(0.5);
        T trans = out.final_transmittance[pix];
        std::array<T, 3> behind{trans * bg[0], trans * bg[1], trans * bg[2]};
        for (std::size_t k = list.size(); k-- > 0;) {
          const auto& p = out.projected[list[k]];
          if (!covers(p, px, py)) continue;
          const auto l = local_frame(p, px, py);
          const T gauss = std::exp(T(-0.5) * l.q);
          const T raw_alpha = p.opacity * gauss;
          const bool clamped = raw_alpha > alpha_max;
          const T alpha = clamped ? alpha_max : raw_alpha;
          const T one_minus = T(1) - alpha;
          trans = trans / one_minus;  // transmittance in front of this primitive
          const T w = alpha * trans;
          auto& g = grads[k];
          T dL_dalpha = T(0);
          for (int c = 0; c < 3; ++c) {
            g[6 + c] += double(dc[c] * w);
            dL_dalpha += dc[c] * (p.color[c] * trans - behind[c] / one_minus);
            behind[c] += p.color[c] * w;
          }
          if (clamped) continue;
          const double dalpha = double(dL_dalpha);
          const double o = double(p.opacity);
          // alpha = o * exp(-q/2)
          const double dL_dopacity = dalpha * double(gauss);
          g[5] += dL_dopacity * o * (1.0 - o);
          const double dL_dq = -0.5 * dalpha * double(raw_alpha);
          const double u1 = double(l.u1), u2 = double(l.u2);
          const double ia = double(p.inv_a), ib = double(p.inv_b);
          const double c = double(p.cos_r), s = double(p.sin_r);
          g[0] += dL_dq * (-2.0 * u1 * c * ia + 2.0 * u2 * s * ib);
          g[1] += dL_dq * (-2.0 * u1 * s * ia - 2.0 * u2 * c * ib);
          if (!p.scale_floored[0]) g[2] += dL_dq * (-2.0 * u1 * u1 * ia);
          if (!p.scale_floored[1]) g[3] += dL_dq * (-2.0 * u2 * u2 * ib);
          g[4] += dL_dq * (2.0 * u1 * u2 * (ia - ib));
        }
      }
    }
  });

  out.per_gaussian_grads.assign(cloud.size(), ParamVec{});
  for (std::size_t t = 0; t < out.tile_lists.size(); ++t) {
    const auto& list = out.tile_lists[t];
    for (std::size_t k = 0; k < list.size(); ++k) {
      auto& dst = out.per_gaussian_grads[list[k]];
      for (int i = 0; i < kParamsPerGaussian; ++i) dst[i] += local[t][k][i];
    }
  }
  return out.per_gaussian_grads;
}

template <class T>
double psnr(const ImageT<T>& ref, const ImageT<T>& test, double peak) {
  require(ref.same_shape(test) && ref.data.size() == test.data.size() && !ref.data.empty(),
          "psnr: images must have identical dimensions");
  double sse = 0.0;
  for (std::size_t i = 0; i < ref.data.size(); ++i) {
    const double d = double(ref.data[i]) - double(test.data[i]);
    sse += d * d;
  }
  const double mse = sse / double(ref.data.size());
  if (mse == 0.0) return kPsnrSentinel;
  return 10.0 * std::log10(peak * peak / mse);
}

template RenderOutput<float> render<float>(const GaussianCloud&, int, int, const RenderSettings&);
template RenderOutput<double> render<double>(const GaussianCloud&, int, int, const RenderSettings&);
template const std::vector<ParamVec>& backward<float>(const GaussianCloud&, RenderOutput<float>&, const ImageT<float>&);
template const std::vector<ParamVec>& backward<double>(const GaussianCloud&, RenderOutput<double>&,
                                                       const ImageT<double>&);
template double psnr<float>(const ImageT<float>&, const ImageT<float>&, double);
template double psnr<double>(const ImageT<double>&, const ImageT<double>&, double);

}  // namespace opt3dgs
