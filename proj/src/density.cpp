// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/density.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "opt3dgs/errors.hpp"

namespace opt3dgs {

std::vector<std::size_t> sample_by_opacity(const GaussianCloud& cloud, std::size_t count, Rng& rng,
                                           double opacity_floor, const std::vector<std::uint8_t>* exclude) {
  if (count == 0) return {};
  std::vector<double> w(cloud.size(), 0.0);
  bool any = false;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (exclude && (*exclude)[i]) continue;
    const double o = cloud.gaussians[i].opacity();
    w[i] = o;
    if (o > opacity_floor) any = true;
  }
  if (!any) throw NumericalError("sample_by_opacity: no primitive has opacity above the floor");
  std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
  std::vector<std::size_t> out(count);
  for (auto& idx : out) idx = dist(rng.engine());
  return out;
}

SplitResult split_parameters(double o_old, const Sym2& cov_old, int N) {
  require(N >= 1 && N <= kMaxSplit, "split_parameters: N must lie in [1, 32]");
  require(o_old > 0.0 && o_old < 1.0, "split_parameters: opacity must lie in (0,1)");
  SplitResult r;
  if (N == 1) {
    r.opacity = o_old;
    r.cov_factor = 1.0;
    r.cov = cov_old;
    return r;
  }
  r.opacity = -std::expm1(std::log1p(-o_old) / double(N));

  std::vector<double> terms;
  for (int i = 1; i <= N; ++i) {
    double binom = 1.0;  // C(i-1, k)
    double power = r.opacity;
    for (int k = 0; k <= i - 1; ++k) {
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      terms.push_back(sign * binom * power / std::sqrt(double(k + 1)));
      binom = binom * double(i - 1 - k) / double(k + 1);
      power *= r.opacity;
    }
  }
  std::sort(terms.begin(), terms.end(), [](double a, double b) { return std::abs(a) > std::abs(b); });
  double sum = 0.0;
  for (double t : terms) sum += t;
  r.cov_factor = (o_old * o_old) / (sum * sum);
  r.cov = {cov_old.xx * r.cov_factor, cov_old.xy * r.cov_factor, cov_old.yy * r.cov_factor};
  return r;
}

void apply_split(Gaussian2D& g, const SplitResult& split) {
  g.opacity_logit = logit(split.opacity);
  const double d = 0.5 * std::log(split.cov_factor);
  g.log_scale[0] += d;
  g.log_scale[1] += d;
}

namespace {

// Sigmoid rounds to exactly 1 for large logits; splitting needs o < 1.
constexpr double kMaxSplitOpacity = 1.0 - 1e-12;

void split_in_place(Gaussian2D& g, int N) {
  apply_split(g, split_parameters(std::min(g.opacity(), kMaxSplitOpacity), build_covariance(g), N));
}

std::map<std::size_t, int> occurrences(const std::vector<std::size_t>& targets) {
  std::map<std::size_t, int> c;
  for (auto t : targets) ++c[t];
  return c;
}

}  // namespace

std::vector<DensityEvent> grow(GaussianCloud& cloud, double rate, Rng& rng) {
  require(rate >= 0.0 && std::isfinite(rate), "grow: rate must be non-negative");
  if (rate == 0.0 || cloud.size() >= cloud.max_count || cloud.empty()) return {};
  const std::size_t want = std::size_t(std::ceil(rate * double(cloud.size())));
  const std::size_t add = std::min(want, cloud.max_count - cloud.size());
  if (add == 0) return {};

  const auto targets = sample_by_opacity(cloud, add, rng);
  std::vector<DensityEvent> events;
  for (const auto& [t, c] : occurrences(targets)) {
    // Draws past the split cap are dropped.
    const int children = std::min(c, kMaxSplit - 1);
    const int N = children + 1;
    split_in_place(cloud.gaussians[t], N);
    DensityEvent ev{"grow", t, {}, N};
    const Gaussian2D child = cloud.gaussians[t];
    for (int k = 0; k < children; ++k) ev.moved.push_back(cloud.insert_after(t, child));
    events.push_back(std::move(ev));
  }
  return events;
}

std::vector<DensityEvent> relocate_dead(GaussianCloud& cloud, double opacity_floor, Rng& rng) {
  if (opacity_floor <= 0.0) return {};
  std::vector<std::uint8_t> dead(cloud.size(), 0);
  std::vector<std::size_t> dead_idx;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.gaussians[i].opacity() < opacity_floor) {
      dead[i] = 1;
      dead_idx.push_back(i);
    }
  if (dead_idx.empty()) return {};
  if (dead_idx.size() == cloud.size()) throw NumericalError("relocate_dead: every primitive is below the opacity floor");

  const auto targets = sample_by_opacity(cloud, dead_idx.size(), rng, 0.0, &dead);
  std::map<std::size_t, std::vector<std::size_t>> movers;
  for (std::size_t k = 0; k < dead_idx.size(); ++k) movers[targets[k]].push_back(dead_idx[k]);

  std::vector<DensityEvent> events;
  for (auto& [t, list] : movers) {
    // Movers past the split cap stay in place until the next round.
    if (list.size() > std::size_t(kMaxSplit - 1)) list.resize(std::size_t(kMaxSplit - 1));
    const int N = int(list.size()) + 1;
    split_in_place(cloud.gaussians[t], N);
    for (auto i : list) {
      const auto depth = cloud.gaussians[i].depth_index;
      cloud.gaussians[i] = cloud.gaussians[t];
      cloud.gaussians[i].depth_index = depth;
      cloud.move_after(i, t);
    }
    events.push_back({"relocate", t, list, N});
  }
  return events;
}

double sampling_entropy(const GaussianCloud& cloud) {
  double total = 0.0;
  for (const auto& g : cloud.gaussians) total += g.opacity();
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (const auto& g : cloud.gaussians) {
    const double p = g.opacity() / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace opt3dgs
