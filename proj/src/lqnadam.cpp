// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/lqnadam.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "opt3dgs/errors.hpp"
#include "opt3dgs/serialize.hpp"

namespace opt3dgs {

namespace {

double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }
bool finite(const Vec2& v) { return std::isfinite(v[0]) && std::isfinite(v[1]); }

// Adam moments of one primitive, used to undo a failed quasi-Newton step.
struct AdamSlice {
  std::array<std::array<double, 3>, kNumParamGroups> m1{}, m2{};
};

AdamSlice take_slice(const CloudAdam& adam, std::size_t i) {
  AdamSlice s;
  for (int g = 0; g < kNumParamGroups; ++g)
    for (int k = 0; k < kGroupWidth[g]; ++k) {
      s.m1[g][k] = adam.groups[g].m1[i * kGroupWidth[g] + k];
      s.m2[g][k] = adam.groups[g].m2[i * kGroupWidth[g] + k];
    }
  return s;
}

void restore_slice(CloudAdam& adam, std::size_t i, const AdamSlice& s) {
  for (int g = 0; g < kNumParamGroups; ++g)
    for (int k = 0; k < kGroupWidth[g]; ++k) {
      adam.groups[g].m1[i * kGroupWidth[g] + k] = s.m1[g][k];
      adam.groups[g].m2[i * kGroupWidth[g] + k] = s.m2[g][k];
    }
}

bool gaussian_finite(const Gaussian2D& g) {
  for (double v : g.params())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

bool history_push(LbfgsHistory& h, const Vec2& s, const Vec2& y) {
  if (!finite(s) || !finite(y) || !(dot(s, y) > h.curvature_eps)) return false;
  h.s.push_back(s);
  h.y.push_back(y);
  while (h.s.size() > std::size_t(h.K)) {
    h.s.pop_front();
    h.y.pop_front();
  }
  return true;
}

Vec2 lbfgs_direction(const LbfgsHistory& h, const Vec2& grad, bool* fell_back) {
  if (fell_back) *fell_back = false;
  const std::size_t n = h.size();
  if (n == 0) return grad;

  Vec2 q = grad;
  std::vector<double> alpha(n), rho(n);
  for (std::size_t j = n; j-- > 0;) {
    rho[j] = 1.0 / dot(h.y[j], h.s[j]);
    alpha[j] = rho[j] * dot(h.s[j], q);
    q[0] -= alpha[j] * h.y[j][0];
    q[1] -= alpha[j] * h.y[j][1];
  }
  const double gamma = dot(h.s.back(), h.y.back()) / dot(h.y.back(), h.y.back());
  q[0] *= gamma;
  q[1] *= gamma;
  for (std::size_t j = 0; j < n; ++j) {
    const double beta = rho[j] * dot(h.y[j], q);
    q[0] += h.s[j][0] * (alpha[j] - beta);
    q[1] += h.s[j][1] * (alpha[j] - beta);
  }
  if (!finite(q)) {
    if (fell_back) *fell_back = true;
    return grad;
  }
  return q;
}

LqnState::LqnState(std::size_t n, int K_, double eps) : K(K_), curvature_eps(eps) {
  require(K_ >= 1, "LqnState: history size must be positive");
  resize(n);
}

void LqnState::resize(std::size_t n) {
  LbfgsHistory proto;
  proto.K = K;
  proto.curvature_eps = curvature_eps;
  histories.resize(n, proto);
  prev_mu.resize(n, Vec2{0.0, 0.0});
  prev_grad.resize(n, Vec2{0.0, 0.0});
  has_prev.resize(n, 0);
}

void LqnState::reset_gaussian(std::size_t i) {
  histories[i].clear();
  has_prev[i] = 0;
}

LqnReport lqnadam_step(GaussianCloud& cloud, std::span<const ParamVec> grads, LqnState& state,
                       const NoiseGate& gate, const GroupRates& lr, CloudAdam& adam, Rng& rng) {
  require(grads.size() == cloud.size(), "lqnadam_step: gradient count differs from cloud size");
  state.resize(cloud.size());
  LqnReport rep;

  std::vector<ParamVec> pseudo(grads.begin(), grads.end());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec2 mu = cloud.gaussians[i].mu;
    const Vec2 g{grads[i][0], grads[i][1]};
    if (state.has_prev[i]) {
      const Vec2 s{mu[0] - state.prev_mu[i][0], mu[1] - state.prev_mu[i][1]};
      const Vec2 y{g[0] - state.prev_grad[i][0], g[1] - state.prev_grad[i][1]};
      if (!history_push(state.histories[i], s, y)) ++rep.rejected_pairs;
    }
    bool fell_back = false;
    const Vec2 d = lbfgs_direction(state.histories[i], g, &fell_back);
    if (fell_back) ++rep.fallbacks;
    pseudo[i][0] = d[0];
    pseudo[i][1] = d[1];
    state.prev_mu[i] = mu;
    state.prev_grad[i] = g;
    state.has_prev[i] = 1;
  }

  std::vector<Vec2> noise;
  if (gate.lambda_noise != 0.0) {
    noise = langevin_noise(cloud, gate, lr[0], rng);
    for (auto& e : noise) {
      e[0] *= gate.lambda_noise;
      e[1] *= gate.lambda_noise;
    }
  }

  for (auto& st : adam.groups) ++st.step;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Gaussian2D& g = cloud.gaussians[i];
    const Gaussian2D before = g;
    const AdamSlice slice = take_slice(adam, i);
    adam_update_gaussian(g, i, pseudo[i], lr, 1.0, adam);
    if (!noise.empty()) {
      g.mu[0] += noise[i][0];
      g.mu[1] += noise[i][1];
    }
    if (!gaussian_finite(g)) {
      ++rep.fallbacks;
      g = before;
      restore_slice(adam, i, slice);
      adam_update_gaussian(g, i, grads[i], lr, 1.0, adam);
      if (!noise.empty()) {
        g.mu[0] += noise[i][0];
        g.mu[1] += noise[i][1];
      }
    }
  }
  return rep;
}

void write_lqn(std::ostream& os, const LqnState& st) {
  os << "lqn 1 " << st.histories.size() << ' ' << st.K << ' ';
  io::put_double(os, st.curvature_eps);
  os << '\n';
  for (std::size_t i = 0; i < st.histories.size(); ++i) {
    const auto& h = st.histories[i];
    os << int(st.has_prev[i]) << ' ';
    for (double v : {st.prev_mu[i][0], st.prev_mu[i][1], st.prev_grad[i][0], st.prev_grad[i][1]}) {
      io::put_double(os, v);
      os << ' ';
    }
    os << h.size();
    for (std::size_t j = 0; j < h.size(); ++j)
      for (double v : {h.s[j][0], h.s[j][1], h.y[j][0], h.y[j][1]}) {
        os << ' ';
        io::put_double(os, v);
      }
    os << '\n';
  }
}

LqnState read_lqn(std::istream& is) {
  io::expect(is, "lqn");
  if (io::get_int(is) != 1) throw std::runtime_error("checkpoint: unsupported lqn version");
  const auto n = io::get_uint(is);
  const int K = int(io::get_int(is));
  const double eps = io::get_double(is);
  LqnState st(n, K, eps);
  for (std::size_t i = 0; i < n; ++i) {
    st.has_prev[i] = std::uint8_t(io::get_int(is));
    st.prev_mu[i][0] = io::get_double(is);
    st.prev_mu[i][1] = io::get_double(is);
    st.prev_grad[i][0] = io::get_double(is);
    st.prev_grad[i][1] = io::get_double(is);
    const auto len = io::get_uint(is);
    for (std::size_t j = 0; j < len; ++j) {
      Vec2 s{io::get_double(is), 0.0};
      s[1] = io::get_double(is);
      Vec2 y{io::get_double(is), 0.0};
      y[1] = io::get_double(is);
      st.histories[i].s.push_back(s);
      st.histories[i].y.push_back(y);
    }
  }
  return st;
}

}  // namespace opt3dgs
