// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "opt3dgs/adam.hpp"
#include "opt3dgs/renderer.hpp"
#include "opt3dgs/rng.hpp"
#include "opt3dgs/splat_model.hpp"

namespace opt3dgs {

/// m energy bins. Interior edges are u_n = u1 + (n-1) * delta_u for
/// n = 1..m-1; bin 1 is (-inf, u1] and bin m is (u_{m-1}, +inf).
class EnergyPartition {
 public:
  EnergyPartition(int m, double u1, double u_last);

  int m() const { return m_; }
  double u1() const { return u1_; }
  double u_last() const { return u_last_; }
  double delta_u() const { return delta_u_; }
  /// u_n for n in 0..m, with u_0 = -inf and u_m = +inf.
  double edge(int n) const;

 private:
  int m_;
  double u1_, u_last_, delta_u_;
};

/// Per-bin weights, 1-based in the accessors.
struct ThetaVector {
  std::vector<double> theta;

  static ThetaVector uniform(int m) { return {std::vector<double>(std::size_t(m), 1.0 / m)}; }
  int m() const { return int(theta.size()); }
  double operator()(int i) const { return theta[std::size_t(i - 1)]; }
  double sum() const;

  bool operator==(const ThetaVector&) const = default;
};

enum class NuClampMode {
  Index,  // log theta(max(J-1, 1))
  Value,  // log max(theta(J-1), 1), i.e. the literal reading
};

struct FlatteningConfig {
  double zeta = 0.75;
  double tau = 1.0;
  double theta_lr = 1e-2;
  /// When positive, theta_lr is multiplied by min(1, (decay / k)^0.75)
  /// on the k-th update.
  double theta_lr_decay = 0.0;
  std::int64_t warmup_iters = 250;
  double nu_min = 0.1;
  double nu_max = 20.0;
  double theta_floor = 1e-12;
  NuClampMode clamp_mode = NuClampMode::Index;
  /// Smoothing weight of the energy EMA; 0 uses the raw energy.
  double energy_ema = 0.0;

  void validate() const;
};

struct NoiseGate {
  double k_gate = 100.0;
  double t_gate = 0.005;
  double lambda_noise = 0.0;
  /// +1 gives sigmoid(-k (t - o)); -1 flips it to sigmoid(k (t - o)).
  int gate_sign = 1;

  double factor(double opacity) const;
};

/// The bin n in 1..m with u_{n-1} < energy <= u_n.
int subregion_index(double energy, const EnergyPartition& part);

/// Piecewise exponential interpolation of theta at `energy`.
double psi(const ThetaVector& theta, double energy, const EnergyPartition& part);

/// Flattening multiplier for the bin containing `energy`, clipped to
/// [nu_min, nu_max].
double gradient_multiplier(const ThetaVector& theta, double energy, const EnergyPartition& part,
                           const FlatteningConfig& cfg);

/// One stochastic-approximation step toward bin J with step size
/// `lr * theta(J)^zeta`. Throws NumericalError when that step is >= 1.
ThetaVector theta_update(const ThetaVector& theta, int J, double zeta, double lr, double floor = 1e-12);

/// Per-Gaussian position noise lr * gate(o) * Sigma * eta.
std::vector<std::array<double, 2>> langevin_noise(const GaussianCloud& cloud, const NoiseGate& gate, double lr,
                                                  Rng& rng);

/// Theta plus the counters needed to drive it from a stream of energies.
class FlatHistogram {
 public:
  FlatHistogram(EnergyPartition part, FlatteningConfig cfg);

  const EnergyPartition& partition() const { return part_; }
  const FlatteningConfig& config() const { return cfg_; }
  const ThetaVector& theta() const { return theta_; }
  std::int64_t updates() const { return updates_; }

  /// Energy after the optional EMA; advances the EMA.
  double smooth(double energy);
  /// nu at `energy`, or 1 while `active` is false.
  double multiplier(double energy, bool active) const;
  /// Applies theta_update for bin J with the scheduled step. Returns false
  /// and leaves theta unchanged when the step is rejected.
  bool update(int J);

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  EnergyPartition part_;
  FlatteningConfig cfg_;
  ThetaVector theta_;
  std::int64_t updates_ = 0;
  double ema_ = 0.0;
  bool ema_init_ = false;
};

/// Learning rate per parameter group.
using GroupRates = std::array<double, kNumParamGroups>;

struct StepReport {
  int bin = 0;
  double nu = 1.0;
  double energy = 0.0;
  bool theta_updated = false;
  bool rejected = false;
  std::string diagnostic;
};

/// Exploration update. Once `theta_active` is set, theta is first updated
/// with the visited bin and nu is read from the updated weights; then every
/// block moves by -lr * nu * Adam(grad) and positions also receive
/// lambda_noise * eps. On a non-finite result the cloud and Adam state are
/// restored and the report is marked rejected.
StepReport awsgld_step(GaussianCloud& cloud, std::span<const ParamVec> grads, double energy, FlatHistogram& flat,
                       bool theta_active, const NoiseGate& gate, const GroupRates& lr, CloudAdam& adam, Rng& rng);

/// Adam step on every group with direction scale `nu`, plus optional
/// position offsets added after the step. Shared by both stages.
void apply_adam_update(GaussianCloud& cloud, std::span<const ParamVec> grads, const GroupRates& lr, double nu,
                       CloudAdam& adam, const std::vector<std::array<double, 2>>* position_offsets);

/// Moves one primitive by -lr * nu * Adam(grad). The group step counters
/// must already have been advanced for this iteration.
void adam_update_gaussian(Gaussian2D& g, std::size_t i, const ParamVec& grad, const GroupRates& lr, double nu,
                          CloudAdam& adam);

bool cloud_is_finite(const GaussianCloud& cloud);

}  // namespace opt3dgs
