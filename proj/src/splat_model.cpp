// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/splat_model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "opt3dgs/errors.hpp"
#include "opt3dgs/serialize.hpp"

namespace opt3dgs {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("logit: opacity must lie in (0,1)");
  return std::log(p) - std::log1p(-p);
}

double log_activation_inverse(double s) {
  if (!(s > 0.0)) throw std::domain_error("log_activation_inverse: scale must be positive");
  return std::log(s);
}

double Gaussian2D::opacity() const { return sigmoid(opacity_logit); }

std::array<double, 2> Gaussian2D::scale() const {
  return {std::exp(log_scale[0]), std::exp(log_scale[1])};
}

std::array<double, kParamsPerGaussian> Gaussian2D::params() const {
  return {mu[0], mu[1], log_scale[0], log_scale[1], rot_angle, opacity_logit, color[0], color[1], color[2]};
}

void Gaussian2D::set_params(const std::array<double, kParamsPerGaussian>& p) {
  mu = {p[0], p[1]};
  log_scale = {p[2], p[3]};
  rot_angle = p[4];
  opacity_logit = p[5];
  color = {p[6], p[7], p[8]};
}

Sym2 build_covariance(double sx, double sy, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double a = sx * sx;
  const double b = sy * sy;
  // R diag(a,b) R^T, off-diagonal written once so the result is symmetric.
  return {c * c * a + s * s * b, c * s * (a - b), s * s * a + c * c * b};
}

Sym2 build_covariance(const Gaussian2D& g) {
  const auto s = g.scale();
  return build_covariance(s[0], s[1], g.rot_angle);
}

std::array<double, 2> covariance_eigen_sqrt(const Sym2& cov, double tol) {
  const double half_tr = 0.5 * (cov.xx + cov.yy);
  const double half_diff = 0.5 * (cov.xx - cov.yy);
  const double r = std::hypot(half_diff, cov.xy);
  double hi = half_tr + r;
  // Small eigenvalue via det/hi avoids cancellation when hi >> lo.
  double lo = hi > 0.0 ? cov.det() / hi : half_tr - r;
  if (lo < -tol || hi < -tol) throw NumericalError("covariance_eigen_sqrt: matrix is not positive semidefinite");
  hi = std::max(hi, 0.0);
  lo = std::max(lo, 0.0);
  return {std::sqrt(hi), std::sqrt(lo)};
}

std::vector<std::size_t> GaussianCloud::compositing_order() const {
  std::vector<std::size_t> order(gaussians.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
    return gaussians[a].depth_index < gaussians[b].depth_index;
  });
  return order;
}

std::size_t GaussianCloud::insert_after(std::size_t parent, Gaussian2D child) {
  require(parent < gaussians.size(), "insert_after: parent out of range");
  const std::int64_t slot = gaussians[parent].depth_index + 1;
  for (auto& g : gaussians)
    if (g.depth_index >= slot) ++g.depth_index;
  child.depth_index = slot;
  gaussians.push_back(child);
  return gaussians.size() - 1;
}

void GaussianCloud::move_after(std::size_t index, std::size_t parent) {
  require(index < gaussians.size() && parent < gaussians.size(), "move_after: index out of range");
  if (index == parent) return;
  const std::int64_t old = gaussians[index].depth_index;
  for (auto& g : gaussians)
    if (g.depth_index > old) --g.depth_index;
  const std::int64_t slot = gaussians[parent].depth_index + 1;
  for (std::size_t i = 0; i < gaussians.size(); ++i)
    if (i != index && gaussians[i].depth_index >= slot) ++gaussians[i].depth_index;
  gaussians[index].depth_index = slot;
}

bool GaussianCloud::has_total_order() const {
  std::unordered_set<std::int64_t> seen;
  for (const auto& g : gaussians)
    if (g.depth_index < 0 || !seen.insert(g.depth_index).second) return false;
  return true;
}

void write_cloud(std::ostream& os, const GaussianCloud& cloud) {
  os << "cloud 1\n";
  os << "max_count " << cloud.max_count << "\n";
  os << "rng_seed " << cloud.rng_seed << "\n";
  os << "count " << cloud.gaussians.size() << "\n";
  for (const auto& g : cloud.gaussians) {
    os << g.depth_index;
    for (double v : g.params()) {
      os << ' ';
      io::put_double(os, v);
    }
    os << '\n';
  }
}

GaussianCloud read_cloud(std::istream& is) {
  io::expect(is, "cloud");
  if (io::get_int(is) != 1) throw std::runtime_error("checkpoint: unsupported cloud version");
  GaussianCloud cloud;
  io::expect(is, "max_count");
  cloud.max_count = io::get_uint(is);
  io::expect(is, "rng_seed");
  cloud.rng_seed = io::get_uint(is);
  io::expect(is, "count");
  const auto n = io::get_uint(is);
  cloud.gaussians.resize(n);
  for (auto& g : cloud.gaussians) {
    g.depth_index = io::get_int(is);
    std::array<double, kParamsPerGaussian> p{};
    for (double& v : p) v = io::get_double(is);
    g.set_params(p);
  }
  return cloud;
}

}  // namespace opt3dgs
