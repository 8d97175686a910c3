// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/loss.hpp"

#include <cmath>

#include "opt3dgs/errors.hpp"

namespace opt3dgs {

void LossConfig::validate() const {
  require(std::isfinite(lambda_ssim) && lambda_ssim >= 0.0 && lambda_ssim <= 1.0, "lambda_ssim must lie in [0,1]");
  require(std::isfinite(lambda_o) && lambda_o >= 0.0, "lambda_o must be finite and non-negative");
  require(std::isfinite(lambda_sigma) && lambda_sigma >= 0.0, "lambda_sigma must be finite and non-negative");
  require(ssim_window >= 3 && ssim_window % 2 == 1, "ssim_window must be odd and at least 3");
  require(ssim_sigma > 0.0 && ssim_c1 > 0.0 && ssim_c2 > 0.0, "ssim constants must be positive");
}

LossConfig photometric_swap(LossConfig cfg, Stage stage) {
  cfg.photometric_mode = stage == Stage::Exploration ? PhotometricMode::L1 : PhotometricMode::L2;
  return cfg;
}

namespace {

// Separable Gaussian window. Border pixels use the truncated window
// renormalized to unit mass; the per-axis normalizers are kept so the
// transposed operator can be applied in backward.
template <class T>
class Window {
 public:
  Window(int size, double sigma, int width, int height) : radius_(size / 2), width_(width), height_(height) {
    kernel_.resize(size);
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
      const double d = i - radius_;
      kernel_[i] = std::exp(-d * d / (2.0 * sigma * sigma));
      total += kernel_[i];
    }
    for (auto& k : kernel_) k /= total;
    norm_x_ = axis_norm(width);
    norm_y_ = axis_norm(height);
  }

  /// out(p) = sum_q w_pq in(q)
  std::vector<T> apply(const std::vector<T>& in) const { return pass(in, true); }

  /// out(q) = sum_p w_pq in(p)
  std::vector<T> apply_transposed(const std::vector<T>& in) const {
    std::vector<T> scaled(in.size());
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) {
        const std::size_t i = std::size_t(y) * width_ + x;
        scaled[i] = in[i] * norm_x_[x] * norm_y_[y];
      }
    return pass(scaled, false);
  }

 private:
  std::vector<T> axis_norm(int n) const {
    std::vector<T> inv(n);
    for (int p = 0; p < n; ++p) {
      double z = 0.0;
      for (int d = -radius_; d <= radius_; ++d)
        if (p + d >= 0 && p + d < n) z += kernel_[d + radius_];
      inv[p] = T(1.0 / z);
    }
    return inv;
  }

  std::vector<T> pass(const std::vector<T>& in, bool normalize) const {
    std::vector<T> tmp(in.size()), out(in.size());
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) {
        T acc = T(0);
        const int lo = std::max(-radius_, -x), hi = std::min(radius_, width_ - 1 - x);
        for (int d = lo; d <= hi; ++d) acc += T(kernel_[d + radius_]) * in[std::size_t(y) * width_ + x + d];
        tmp[std::size_t(y) * width_ + x] = normalize ? acc * norm_x_[x] : acc;
      }
    for (int y = 0; y < height_; ++y) {
      const int lo = std::max(-radius_, -y), hi = std::min(radius_, height_ - 1 - y);
      for (int x = 0; x < width_; ++x) {
        T acc = T(0);
        for (int d = lo; d <= hi; ++d) acc += T(kernel_[d + radius_]) * tmp[std::size_t(y + d) * width_ + x];
        out[std::size_t(y) * width_ + x] = normalize ? acc * norm_y_[y] : acc;
      }
    }
    return out;
  }

  int radius_;
  int width_, height_;
  std::vector<double> kernel_;
  std::vector<T> norm_x_, norm_y_;
};

template <class T>
std::vector<T> plane(const ImageT<T>& img, int c) {
  std::vector<T> out(img.pixels());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.data[i * 3 + c];
  return out;
}

// Mean SSIM of `a` vs `b`; when `grad_b` is non-null, adds
// d(mean SSIM)/d(b) scaled by `grad_scale` into it.
template <class T>
double ssim_impl(const ImageT<T>& a, const ImageT<T>& b, const LossConfig& cfg, ImageT<T>* grad_b, double grad_scale) {
  require(a.same_shape(b) && a.data.size() == b.data.size() && !a.data.empty(),
          "ssim: images must have identical dimensions");
  const Window<T> win(cfg.ssim_window, cfg.ssim_sigma, a.width, a.height);
  const T c1 = T(cfg.ssim_c1), c2 = T(cfg.ssim_c2);
  const std::size_t n = a.pixels();
  const double inv_count = 1.0 / double(n * 3);
  double total = 0.0;

  for (int c = 0; c < 3; ++c) {
    const auto x = plane(a, c);
    const auto y = plane(b, c);
    std::vector<T> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = win.apply(x);
    const auto my = win.apply(y);
    const auto exx = win.apply(xx);
    const auto eyy = win.apply(yy);
    const auto exy = win.apply(xy);

    std::vector<T> ga, gb, gc;
    if (grad_b) {
      ga.resize(n);
      gb.resize(n);
      gc.resize(n);
    }
    double channel_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T vx = exx[i] - mx[i] * mx[i];
      const T vy = eyy[i] - my[i] * my[i];
      const T cxy = exy[i] - mx[i] * my[i];
      const T n1 = T(2) * (mx[i] * my[i]) + c1;
      const T n2 = T(2) * cxy + c2;
      const T d1 = mx[i] * mx[i] + my[i] * my[i] + c1;
      const T d2 = vx + vy + c2;
      const T s = (n1 * n2) / (d1 * d2);
      channel_sum += double(s);
      if (grad_b) {
        const T ds_dmy = T(2) * mx[i] * n2 / (d1 * d2) - s * T(2) * my[i] / d1;
        const T ds_dvy = -s / d2;
        const T ds_dcxy = T(2) * n1 / (d1 * d2);
        ga[i] = ds_dmy - T(2) * my[i] * ds_dvy - mx[i] * ds_dcxy;
        gb[i] = T(2) * ds_dvy;
        gc[i] = ds_dcxy;
      }
    }
    total += channel_sum;
    if (grad_b) {
      const auto ta = win.apply_transposed(ga);
      const auto tb = win.apply_transposed(gb);
      const auto tc = win.apply_transposed(gc);
      const T scale = T(grad_scale * inv_count);
      for (std::size_t i = 0; i < n; ++i)
        grad_b->data[i * 3 + c] += scale * (ta[i] + tb[i] * y[i] + tc[i] * x[i]);
    }
  }
  return total * inv_count;
}

}  // namespace

template <class T>
double ssim(const ImageT<T>& a, const ImageT<T>& b, const LossConfig& cfg) {
  return ssim_impl<T>(a, b, cfg, nullptr, 0.0);
}

template <class T>
LossResult<T> total_loss(const ImageT<T>& rendered, const ImageT<T>& target, const GaussianCloud& cloud,
                         const LossConfig& cfg) {
  require(rendered.same_shape(target) && rendered.data.size() == target.data.size() && !target.data.empty(),
          "total_loss: rendered and target sizes differ");
  require(!cloud.empty(), "total_loss: cloud must be nonempty");
  LossResult<T> r;
  r.dL_dimage = ImageT<T>(rendered.width, rendered.height);
  const std::size_t count = rendered.data.size();
  const double w_photo = 1.0 - cfg.lambda_ssim;

  double photo = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = double(rendered.data[i]) - double(target.data[i]);
    double g;
    if (cfg.photometric_mode == PhotometricMode::L1) {
      photo += std::abs(d);
      g = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    } else {
      photo += d * d;
      g = 2.0 * d;
    }
    r.dL_dimage.data[i] = T(w_photo * g / double(count));
  }
  r.photometric = photo / double(count);

  if (cfg.lambda_ssim > 0.0) {
    // L_ssim = 1 - SSIM, hence the negative scale on the SSIM gradient.
    r.ssim = ssim_impl<T>(target, rendered, cfg, &r.dL_dimage, -cfg.lambda_ssim);
  } else {
    r.ssim = ssim_impl<T>(target, rendered, cfg, nullptr, 0.0);
  }

  const double norm = cfg.regularizer_reduction == Reduction::Mean ? 1.0 / double(cloud.size()) : 1.0;
  r.dL_dparams.assign(cloud.size(), ParamVec{});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& g = cloud.gaussians[i];
    const double o = g.opacity();
    r.opacity_reg += std::abs(o);
    const auto root_eig = covariance_eigen_sqrt(build_covariance(g));
    r.scale_reg += std::abs(root_eig[0]) + std::abs(root_eig[1]);
    // |o| has derivative sign(o) = 1 on (0,1); sqrt eig_j equals s_j = exp(log_scale_j).
    r.dL_dparams[i][5] = cfg.lambda_o * norm * (o > 0.0 ? 1.0 : 0.0) * o * (1.0 - o);
    const auto s = g.scale();
    r.dL_dparams[i][2] = cfg.lambda_sigma * norm * s[0];
    r.dL_dparams[i][3] = cfg.lambda_sigma * norm * s[1];
  }
  r.opacity_reg *= norm;
  r.scale_reg *= norm;

  r.energy = w_photo * r.photometric + cfg.lambda_ssim * (1.0 - r.ssim) + cfg.lambda_o * r.opacity_reg +
             cfg.lambda_sigma * r.scale_reg;
  return r;
}

template double ssim<float>(const ImageT<float>&, const ImageT<float>&, const LossConfig&);
template double ssim<double>(const ImageT<double>&, const ImageT<double>&, const LossConfig&);
template LossResult<float> total_loss<float>(const ImageT<float>&, const ImageT<float>&, const GaussianCloud&,
                                             const LossConfig&);
template LossResult<double> total_loss<double>(const ImageT<double>&, const ImageT<double>&, const GaussianCloud&,
                                               const LossConfig&);

}  // namespace opt3dgs
