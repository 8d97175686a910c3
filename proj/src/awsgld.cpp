// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/awsgld.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "opt3dgs/errors.hpp"
#include "opt3dgs/serialize.hpp"

namespace opt3dgs {

EnergyPartition::EnergyPartition(int m, double u1, double u_last) : m_(m), u1_(u1), u_last_(u_last) {
  require(m >= 3, "EnergyPartition: need at least 3 bins");
  require(std::isfinite(u1) && std::isfinite(u_last) && u1 < u_last, "EnergyPartition: need finite u1 < u_{m-1}");
  delta_u_ = (u_last - u1) / double(m - 2);
}

double EnergyPartition::edge(int n) const {
  if (n <= 0) return -std::numeric_limits<double>::infinity();
  if (n >= m_) return std::numeric_limits<double>::infinity();
  if (n == m_ - 1) return u_last_;
  return u1_ + double(n - 1) * delta_u_;
}

double ThetaVector::sum() const {
  double s = 0.0;
  for (double t : theta) s += t;
  return s;
}

void FlatteningConfig::validate() const {
  require(zeta >= 0.0 && std::isfinite(zeta), "zeta must be finite and non-negative");
  require(tau > 0.0 && std::isfinite(tau), "tau must be positive");
  require(theta_lr >= 0.0 && std::isfinite(theta_lr), "theta_lr must be non-negative");
  require(theta_lr_decay >= 0.0, "theta_lr_decay must be non-negative");
  require(warmup_iters >= 0, "warmup_iters must be non-negative");
  require(nu_min <= nu_max, "nu_min must not exceed nu_max");
  require(theta_floor > 0.0 && theta_floor < 1.0, "theta_floor must lie in (0,1)");
  require(energy_ema >= 0.0 && energy_ema < 1.0, "energy_ema must lie in [0,1)");
}

double NoiseGate::factor(double opacity) const {
  return sigmoid(-double(gate_sign) * k_gate * (t_gate - opacity));
}

int subregion_index(double energy, const EnergyPartition& part) {
  require(!std::isnan(energy), "subregion_index: energy is NaN");
  if (energy <= part.u1()) return 1;
  if (energy > part.u_last()) return part.m();
  int n = int(std::ceil((energy - part.u1()) / part.delta_u())) + 1;
  n = std::clamp(n, 2, part.m() - 1);
  // ceil can land one bin off when energy sits on an edge.
  while (n > 2 && energy <= part.edge(n - 1)) --n;
  while (n < part.m() - 1 && energy > part.edge(n)) ++n;
  return n;
}

double psi(const ThetaVector& theta, double energy, const EnergyPartition& part) {
  require(theta.m() == part.m(), "psi: theta and partition sizes differ");
  const int i = subregion_index(energy, part);
  const int lo = std::max(i - 1, 1);
  double e = energy;
  if (i == 1 || i == part.m()) e = std::clamp(energy, part.u1(), part.u_last());
  const double base = part.edge(std::max(i - 1, 1));
  const double frac = (e - base) / part.delta_u();
  return theta(lo) * std::exp((std::log(theta(i)) - std::log(theta(lo))) * frac);
}

double gradient_multiplier(const ThetaVector& theta, double energy, const EnergyPartition& part,
                           const FlatteningConfig& cfg) {
  require(theta.m() == part.m(), "gradient_multiplier: theta and partition sizes differ");
  const int J = subregion_index(energy, part);
  const double prev = theta(std::max(J - 1, 1));
  const double log_prev = cfg.clamp_mode == NuClampMode::Index ? std::log(prev) : std::log(std::max(prev, 1.0));
  const double nu = 1.0 + cfg.zeta * cfg.tau * (std::log(theta(J)) - log_prev) / part.delta_u();
  return std::clamp(nu, cfg.nu_min, cfg.nu_max);
}

ThetaVector theta_update(const ThetaVector& theta, int J, double zeta, double lr, double floor) {
  require(J >= 1 && J <= theta.m(), "theta_update: bin index out of range");
  const double step = lr * std::pow(theta(J), zeta);
  if (!(step < 1.0)) throw NumericalError("theta_update: step " + std::to_string(step) + " would make weights negative");
  ThetaVector out = theta;
  for (auto& t : out.theta) t -= step * t;
  out.theta[std::size_t(J - 1)] += step;
  double s = 0.0;
  for (auto& t : out.theta) {
    t = std::max(t, floor);
    s += t;
  }
  for (auto& t : out.theta) t /= s;
  return out;
}

std::vector<std::array<double, 2>> langevin_noise(const GaussianCloud& cloud, const NoiseGate& gate, double lr,
                                                  Rng& rng) {
  std::vector<std::array<double, 2>> eps(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& g = cloud.gaussians[i];
    const double e0 = rng.normal();
    const double e1 = rng.normal();
    const Sym2 cov = build_covariance(g);
    const double w = lr * gate.factor(g.opacity());
    eps[i] = {w * (cov.xx * e0 + cov.xy * e1), w * (cov.xy * e0 + cov.yy * e1)};
  }
  return eps;
}

FlatHistogram::FlatHistogram(EnergyPartition part, FlatteningConfig cfg)
    : part_(part), cfg_(cfg), theta_(ThetaVector::uniform(part.m())) {
  cfg_.validate();
}

double FlatHistogram::smooth(double energy) {
  if (cfg_.energy_ema <= 0.0) return energy;
  if (!ema_init_) {
    ema_ = energy;
    ema_init_ = true;
  } else {
    ema_ = cfg_.energy_ema * ema_ + (1.0 - cfg_.energy_ema) * energy;
  }
  return ema_;
}

double FlatHistogram::multiplier(double energy, bool active) const {
  if (!active) return 1.0;
  return gradient_multiplier(theta_, energy, part_, cfg_);
}

bool FlatHistogram::update(int J) {
  double lr = cfg_.theta_lr;
  if (cfg_.theta_lr_decay > 0.0) lr *= std::min(1.0, std::pow(cfg_.theta_lr_decay / double(updates_ + 1), 0.75));
  try {
    theta_ = theta_update(theta_, J, cfg_.zeta, lr, cfg_.theta_floor);
  } catch (const NumericalError&) {
    return false;
  }
  ++updates_;
  return true;
}

void FlatHistogram::save(std::ostream& os) const {
  os << "theta " << theta_.m() << ' ' << updates_ << ' ' << (ema_init_ ? 1 : 0) << ' ';
  io::put_double(os, ema_);
  os << '\n';
  for (double t : theta_.theta) {
    io::put_double(os, t);
    os << '\n';
  }
}

void FlatHistogram::load(std::istream& is) {
  io::expect(is, "theta");
  const auto m = io::get_int(is);
  if (m != part_.m()) throw std::runtime_error("checkpoint: theta size does not match the partition");
  updates_ = io::get_int(is);
  ema_init_ = io::get_int(is) != 0;
  ema_ = io::get_double(is);
  for (auto& t : theta_.theta) t = io::get_double(is);
}

bool cloud_is_finite(const GaussianCloud& cloud) {
  for (const auto& g : cloud.gaussians)
    for (double v : g.params())
      if (!std::isfinite(v)) return false;
  return true;
}

void apply_adam_update(GaussianCloud& cloud, std::span<const ParamVec> grads, const GroupRates& lr, double nu,
                       CloudAdam& adam, const std::vector<std::array<double, 2>>* position_offsets) {
  require(grads.size() == cloud.size(), "apply_adam_update: gradient count differs from cloud size");
  for (int grp = 0; grp < kNumParamGroups; ++grp) {
    AdamState& st = adam.groups[grp];
    require(st.size() == cloud.size() * std::size_t(kGroupWidth[grp]), "apply_adam_update: Adam state size mismatch");
    ++st.step;
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    adam_update_gaussian(cloud.gaussians[i], i, grads[i], lr, nu, adam);
    if (position_offsets) {
      cloud.gaussians[i].mu[0] += (*position_offsets)[i][0];
      cloud.gaussians[i].mu[1] += (*position_offsets)[i][1];
    }
  }
}

void adam_update_gaussian(Gaussian2D& g, std::size_t i, const ParamVec& grad, const GroupRates& lr, double nu,
                          CloudAdam& adam) {
  auto p = g.params();
  for (int grp = 0; grp < kNumParamGroups; ++grp) {
    AdamState& st = adam.groups[grp];
    for (int k = 0; k < kGroupWidth[grp]; ++k) {
      const int idx = kGroupOffset[grp] + k;
      const double dir = st.advance_entry(i * kGroupWidth[grp] + k, grad[idx]);
      p[idx] -= lr[grp] * nu * dir;
    }
  }
  g.set_params(p);
}

StepReport awsgld_step(GaussianCloud& cloud, std::span<const ParamVec> grads, double energy, FlatHistogram& flat,
                       bool theta_active, const NoiseGate& gate, const GroupRates& lr, CloudAdam& adam, Rng& rng) {
  StepReport rep;
  rep.energy = flat.smooth(energy);
  rep.bin = subregion_index(rep.energy, flat.partition());
  if (theta_active) {
    rep.theta_updated = flat.update(rep.bin);
    if (!rep.theta_updated) rep.diagnostic = "awsgld_step: theta step rejected";
  }
  rep.nu = flat.multiplier(rep.energy, theta_active);

  const GaussianCloud saved_cloud = cloud;
  const CloudAdam saved_adam = adam;

  std::vector<std::array<double, 2>> offsets;
  const bool noisy = gate.lambda_noise != 0.0;
  if (noisy) {
    offsets = langevin_noise(cloud, gate, lr[0], rng);
    for (auto& e : offsets) {
      e[0] *= gate.lambda_noise;
      e[1] *= gate.lambda_noise;
    }
  }
  apply_adam_update(cloud, grads, lr, rep.nu, adam, noisy ? &offsets : nullptr);

  if (!cloud_is_finite(cloud)) {
    cloud = saved_cloud;
    adam = saved_adam;
    rep.rejected = true;
    rep.diagnostic = "awsgld_step: non-finite update rejected";
  }
  return rep;
}

}  // namespace opt3dgs
