// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "opt3dgs/awsgld.hpp"

namespace opt3dgs {

/// Point in a 1D or 2D landscape; the second coordinate is unused in 1D.
using Point = std::array<double, 2>;

struct Minimum {
  Point x{0.0, 0.0};
  double energy = 0.0;
};

struct Landscape {
  std::string name;
  int dim = 1;
  /// Domain is the box [lo, hi]^dim.
  double lo = -3.0;
  double hi = 3.0;
  std::function<double(const Point&)> energy;
  std::function<Point(const Point&)> gradient;
  std::vector<Minimum> minima;
  std::size_t global = 0;

  const Minimum& global_minimum() const { return minima[global]; }
  std::size_t nearest_minimum(const Point& x) const;
  double distance(const Point& a, const Point& b) const;
};

/// U(x) = (x^2 - 1)^2 - tilt * x on [-3, 3].
Landscape make_double_well(double tilt);

/// Three isotropic Gaussian modes of unequal weight on [-3, 3]^2, with
/// U = -log(sum_k w_k exp(-|x - c_k|^2 / (2 s^2))) shifted so the deepest
/// minimum sits near zero.
Landscape make_gaussian_mixture();

/// Normalized mass of exp(-U / tau) falling in each energy bin.
/// Throws NumericalError if the integral underflows.
std::vector<double> bin_mass_oracle(const Landscape& land, const EnergyPartition& part, double tau,
                                    double rel_tol = 1e-11);

enum class SamplerKind { Sgld, Awsgld };
enum class Preconditioning { Identity, Adam };

struct SamplerConfig {
  double step = 1e-3;
  double tau = 1.0;
  /// Multiplies the sqrt(2 step tau) Langevin noise; equal across arms for
  /// matched comparisons.
  double noise_scale = 1.0;
  Preconditioning precond = Preconditioning::Identity;
  int bins = 20;
  double u1 = 0.0;
  double u_last = 2.0;
  FlatteningConfig flat = default_flat();
  double escape_radius = 0.2;

  static FlatteningConfig default_flat() {
    FlatteningConfig f;
    f.zeta = 0.75;
    f.tau = 1.0;
    f.theta_lr = 1e-2;
    f.theta_lr_decay = 1e3;
    f.warmup_iters = 0;
    f.nu_min = -20.0;
    f.nu_max = 20.0;
    return f;
  }
};

struct TrialResult {
  bool escaped = false;
  std::int64_t first_escape_iter = -1;
  double final_energy = 0.0;
  Point final_x{0.0, 0.0};
  ThetaVector theta;
  std::vector<std::int64_t> occupancy;
};

/// Runs `iters` sampler steps from `start`. The trial counts as escaped the
/// first time the iterate lies within escape_radius of the global minimum.
TrialResult run_escape_trial(const Landscape& land, SamplerKind kind, const Point& start, std::int64_t iters,
                             std::uint64_t seed, const SamplerConfig& cfg);

/// Named escape benchmark: landscape, sampler settings, start point and
/// budget shared by the CLI and the test suites.
struct BenchScenario {
  Landscape land;
  SamplerConfig sampler;
  Point start{0.0, 0.0};
  std::int64_t iters = 0;
};

/// "double-well" (tilt 0.2, started in the shallow well) or "mixture"
/// (started in the shallowest mode). Throws ContractViolation otherwise.
BenchScenario make_scenario(const std::string& name);

double theta_mae(const ThetaVector& theta, const std::vector<double>& oracle);

/// Chi-square distance of the normalized occupancy restricted to `mask`
/// from the uniform distribution over those bins.
double chi_square_to_uniform(const std::vector<std::int64_t>& occupancy, const std::vector<std::uint8_t>& mask);

}  // namespace opt3dgs
