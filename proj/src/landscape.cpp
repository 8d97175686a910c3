// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/landscape.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <map>

#include "opt3dgs/adam.hpp"
#include "opt3dgs/errors.hpp"
#include "opt3dgs/rng.hpp"

namespace opt3dgs {

std::size_t Landscape::nearest_minimum(const Point& x) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < minima.size(); ++i) {
    const double d = distance(x, minima[i].x);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

double Landscape::distance(const Point& a, const Point& b) const {
  const double dx = a[0] - b[0];
  const double dy = dim == 2 ? a[1] - b[1] : 0.0;
  return std::sqrt(dx * dx + dy * dy);
}

Landscape make_double_well(double tilt) {
  require(std::abs(tilt) < 1.0, "make_double_well: |tilt| must be below 1");
  Landscape L;
  L.name = "double-well";
  L.dim = 1;
  L.energy = [tilt](const Point& p) {
    const double q = p[0] * p[0] - 1.0;
    return q * q - tilt * p[0];
  };
  L.gradient = [tilt](const Point& p) { return Point{4.0 * p[0] * (p[0] * p[0] - 1.0) - tilt, 0.0}; };
  for (double x : {-1.0, 1.0}) {
    for (int it = 0; it < 100; ++it) {
      const double f = 4.0 * x * x * x - 4.0 * x - tilt;
      const double df = 12.0 * x * x - 4.0;
      x -= f / df;
    }
    L.minima.push_back({{x, 0.0}, L.energy({x, 0.0})});
  }
  L.global = L.minima[1].energy < L.minima[0].energy ? 1 : 0;
  return L;
}

Landscape make_gaussian_mixture() {
  struct Mode {
    double cx, cy, w;
  };
  static constexpr std::array<Mode, 3> modes{{{-1.5, -1.0, 0.5}, {1.5, -1.0, 0.3}, {0.0, 1.5, 0.2}}};
  static constexpr double s2 = 0.6 * 0.6;
  const double shift = std::log(modes[0].w);

  Landscape L;
  L.name = "mixture";
  L.dim = 2;
  L.energy = [shift](const Point& p) {
    double z = 0.0;
    for (const auto& m : modes) {
      const double dx = p[0] - m.cx, dy = p[1] - m.cy;
      z += m.w * std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
    }
    return -std::log(z) + shift;
  };
  L.gradient = [](const Point& p) {
    double z = 0.0, gx = 0.0, gy = 0.0;
    for (const auto& m : modes) {
      const double dx = p[0] - m.cx, dy = p[1] - m.cy;
      const double e = m.w * std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
      z += e;
      gx += e * dx / s2;
      gy += e * dy / s2;
    }
    return Point{gx / z, gy / z};
  };
  for (const auto& m : modes) {
    Point x{m.cx, m.cy};
    for (int it = 0; it < 20000; ++it) {
      const Point g = L.gradient(x);
      x[0] -= 0.05 * g[0];
      x[1] -= 0.05 * g[1];
    }
    L.minima.push_back({x, L.energy(x)});
  }
  L.global = 0;
  for (std::size_t i = 1; i < L.minima.size(); ++i)
    if (L.minima[i].energy < L.minima[L.global].energy) L.global = i;
  return L;
}

namespace {

using Fn = std::function<double(double)>;

double bisect(const Fn& f, double a, double b) {
  double fa = f(a);
  for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a)); ++it) {
    const double mid = 0.5 * (a + b);
    const double fm = f(mid);
    if ((fm > 0.0) == (fa > 0.0)) {
      a = mid;
      fa = fm;
    } else {
      b = mid;
    }
  }
  return 0.5 * (a + b);
}

// Bin masses of exp(-(U - uref)/tau) along one line. Critical points split
// the line into monotone pieces; each bin-edge crossing inside a piece is
// located by bisection so every quadrature sees a smooth integrand.
std::vector<double> masses_on_line(const Fn& U, const Fn& dU, double lo, double hi, const EnergyPartition& part,
                                   double tau, double uref, double tol) {
  constexpr int kScan = 4000;
  std::vector<double> cuts{lo};
  const double h = (hi - lo) / kScan;
  double prev = dU(lo);
  for (int i = 1; i <= kScan; ++i) {
    const double x = lo + i * h;
    const double cur = dU(x);
    if ((prev > 0.0) != (cur > 0.0) && prev != 0.0) cuts.push_back(bisect(dU, x - h, x));
    prev = cur;
  }
  cuts.push_back(hi);

  std::vector<double> pts;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double a = cuts[k], b = cuts[k + 1];
    pts.push_back(a);
    const double ua = U(a), ub = U(b);
    for (int n = 1; n <= part.m() - 1; ++n) {
      const double e = part.edge(n);
      if ((ua - e) * (ub - e) < 0.0) pts.push_back(bisect([&](double x) { return U(x) - e; }, a, b));
    }
  }
  pts.push_back(hi);
  std::sort(pts.begin(), pts.end());

  std::vector<double> mass(std::size_t(part.m()), 0.0);
  auto w = [&](double x) { return std::exp(-(U(x) - uref) / tau); };
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double a = pts[k], b = pts[k + 1];
    if (!(b > a)) continue;
    const int bin = subregion_index(U(0.5 * (a + b)), part);
    mass[std::size_t(bin - 1)] += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(w, a, b, 15, tol);
  }
  return mass;
}

std::vector<double> normalize(std::vector<double> mass) {
  double total = 0.0;
  for (double v : mass) total += v;
  if (!(total > 0.0) || !std::isfinite(total)) throw NumericalError("bin_mass_oracle: integral underflow");
  for (double& v : mass) v /= total;
  return mass;
}

}  // namespace

std::vector<double> bin_mass_oracle(const Landscape& land, const EnergyPartition& part, double tau, double rel_tol) {
  require(tau > 0.0, "bin_mass_oracle: tau must be positive");
  double uref = std::numeric_limits<double>::infinity();
  for (const auto& m : land.minima) uref = std::min(uref, m.energy);

  if (land.dim == 1) {
    const Fn U = [&](double x) { return land.energy({x, 0.0}); };
    const Fn dU = [&](double x) { return land.gradient({x, 0.0})[0]; };
    return normalize(masses_on_line(U, dU, land.lo, land.hi, part, tau, uref, rel_tol));
  }

  // 2D: exact piecewise inner integrals along y, then one adaptive outer
  // integral per bin over x. Inner results are cached by abscissa since the
  // outer rules share most of their nodes.
  std::map<double, std::vector<double>> cache;
  auto inner = [&](double x) -> const std::vector<double>& {
    auto it = cache.find(x);
    if (it != cache.end()) return it->second;
    const Fn U = [&](double y) { return land.energy({x, y}); };
    const Fn dU = [&](double y) { return land.gradient({x, y})[1]; };
    return cache.emplace(x, masses_on_line(U, dU, land.lo, land.hi, part, tau, uref, rel_tol)).first->second;
  };
  std::vector<double> mass(std::size_t(part.m()), 0.0);
  for (int n = 0; n < part.m(); ++n) {
    auto f = [&](double x) { return inner(x)[std::size_t(n)]; };
    mass[std::size_t(n)] = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, land.lo, land.hi, 12, 1e-9);
  }
  return normalize(mass);
}

TrialResult run_escape_trial(const Landscape& land, SamplerKind kind, const Point& start, std::int64_t iters,
                             std::uint64_t seed, const SamplerConfig& cfg) {
  require(iters >= 0, "run_escape_trial: iters must be non-negative");
  FlatteningConfig fc = cfg.flat;
  fc.tau = cfg.tau;
  FlatHistogram flat(EnergyPartition(cfg.bins, cfg.u1, cfg.u_last), fc);
  Rng rng = Rng::derive(seed, 0);
  AdamState adam(std::size_t(land.dim));
  const bool aw = kind == SamplerKind::Awsgld;
  const double sd = std::sqrt(2.0 * cfg.step * cfg.tau) * cfg.noise_scale;
  const Point goal = land.global_minimum().x;

  TrialResult r;
  r.occupancy.assign(std::size_t(cfg.bins), 0);
  Point x = start;
  auto check_escape = [&](std::int64_t k) {
    if (!r.escaped && land.distance(x, goal) < cfg.escape_radius) {
      r.escaped = true;
      r.first_escape_iter = k;
    }
  };

  for (std::int64_t k = 0; k < iters; ++k) {
    check_escape(k);
    const double u = land.energy(x);
    const int J = subregion_index(u, flat.partition());
    ++r.occupancy[std::size_t(J - 1)];
    const bool active = aw && k >= fc.warmup_iters;
    if (active) flat.update(J);
    const double nu = flat.multiplier(u, active);

    const Point g = land.gradient(x);
    std::array<double, 2> dir{g[0], g[1]};
    if (cfg.precond == Preconditioning::Adam) {
      const auto d = adam_precondition(std::span<const double>(g.data(), std::size_t(land.dim)), adam);
      for (int i = 0; i < land.dim; ++i) dir[std::size_t(i)] = d[std::size_t(i)];
    }
    for (int i = 0; i < land.dim; ++i) {
      double& xi = x[std::size_t(i)];
      xi += -cfg.step * nu * dir[std::size_t(i)] + sd * rng.normal();
      while (xi > land.hi || xi < land.lo) xi = xi > land.hi ? 2.0 * land.hi - xi : 2.0 * land.lo - xi;
    }
  }
  check_escape(iters);
  r.final_x = x;
  r.final_energy = land.energy(x);
  r.theta = flat.theta();
  return r;
}

BenchScenario make_scenario(const std::string& name) {
  BenchScenario b;
  if (name == "double-well") {
    b.land = make_double_well(0.2);
    b.sampler.tau = 0.1;
    b.sampler.u_last = 2.0;
  } else if (name == "mixture") {
    b.land = make_gaussian_mixture();
    b.sampler.tau = 0.2;
    b.sampler.u_last = 4.0;
  } else {
    throw ContractViolation("unknown scenario '" + name + "'");
  }
  b.sampler.step = 1e-3;
  b.sampler.bins = 20;
  b.sampler.u1 = 0.0;
  b.iters = 100000;
  std::size_t shallow = 0;
  for (std::size_t i = 1; i < b.land.minima.size(); ++i)
    if (b.land.minima[i].energy > b.land.minima[shallow].energy) shallow = i;
  b.start = b.land.minima[shallow].x;
  return b;
}

double theta_mae(const ThetaVector& theta, const std::vector<double>& oracle) {
  require(std::size_t(theta.m()) == oracle.size(), "theta_mae: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < oracle.size(); ++i) s += std::abs(theta.theta[i] - oracle[i]);
  return s / double(oracle.size());
}

double chi_square_to_uniform(const std::vector<std::int64_t>& occupancy, const std::vector<std::uint8_t>& mask) {
  require(occupancy.size() == mask.size(), "chi_square_to_uniform: size mismatch");
  double total = 0.0;
  int reach = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      total += double(occupancy[i]);
      ++reach;
    }
  if (reach == 0 || total <= 0.0) return 0.0;
  const double u = 1.0 / reach;
  double chi = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      const double p = double(occupancy[i]) / total;
      chi += (p - u) * (p - u) / u;
    }
  return chi;
}

}  // namespace opt3dgs
