// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace opt3dgs {

/// Symmetric 2x2 matrix stored as its three unique entries.
struct Sym2 {
  double xx = 0.0;
  double xy = 0.0;
  double yy = 0.0;

  double trace() const { return xx + yy; }
  double det() const { return xx * yy - xy * xy; }
  bool operator==(const Sym2&) const = default;
};

/// Number of scalar parameters carried by one primitive.
inline constexpr int kParamsPerGaussian = 9;

/// Offsets of each parameter group inside the flat 9-vector view of a
/// primitive: mu(2), log_scale(2), rot_angle(1), opacity_logit(1), color(3).
enum class ParamGroup : int { Position = 0, LogScale = 1, Rotation = 2, Opacity = 3, Color = 4 };
inline constexpr int kNumParamGroups = 5;
inline constexpr std::array<int, kNumParamGroups> kGroupOffset{0, 2, 4, 5, 6};
inline constexpr std::array<int, kNumParamGroups> kGroupWidth{2, 2, 1, 1, 3};

/// One anisotropic 2D primitive, all values stored unconstrained.
struct Gaussian2D {
  std::array<double, 2> mu{0.0, 0.0};
  std::array<double, 2> log_scale{0.0, 0.0};
  double rot_angle = 0.0;
  double opacity_logit = 0.0;
  std::array<double, 3> color{0.0, 0.0, 0.0};
  std::int64_t depth_index = 0;

  double opacity() const;
  std::array<double, 2> scale() const;

  std::array<double, kParamsPerGaussian> params() const;
  void set_params(const std::array<double, kParamsPerGaussian>& p);

  bool operator==(const Gaussian2D&) const = default;
};

struct GaussianCloud {
  std::vector<Gaussian2D> gaussians;
  std::size_t max_count = 0;
  std::uint64_t rng_seed = 0;

  std::size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }

  /// Indices sorted by ascending depth_index (front to back).
  std::vector<std::size_t> compositing_order() const;

  /// Appends `child` so that it composites directly behind `parent`;
  /// depth indices at or past the slot shift back by one.
  std::size_t insert_after(std::size_t parent, Gaussian2D child);

  /// Re-slots an existing primitive directly behind `parent`.
  void move_after(std::size_t index, std::size_t parent);

  /// True when depth indices are unique.
  bool has_total_order() const;

  bool operator==(const GaussianCloud&) const = default;
};

double sigmoid(double x);
/// Inverse sigmoid; throws std::domain_error outside (0,1).
double logit(double p);
/// Inverse of exp activation; throws std::domain_error for s <= 0.
double log_activation_inverse(double s);

Sym2 build_covariance(double sx, double sy, double angle);
Sym2 build_covariance(const Gaussian2D& g);

/// Closed-form square roots of the eigenvalues of a symmetric PSD matrix,
/// largest first. Throws NumericalError if an eigenvalue is negative beyond
/// `tol`.
std::array<double, 2> covariance_eigen_sqrt(const Sym2& cov, double tol = 1e-9);

/// Plain-text checkpoint of a cloud. Floats are written as hexfloats so a
/// reload is bit-exact.
void write_cloud(std::ostream& os, const GaussianCloud& cloud);
GaussianCloud read_cloud(std::istream& is);

}  // namespace opt3dgs
