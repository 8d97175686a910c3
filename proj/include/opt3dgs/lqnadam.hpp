// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <span>
#include <vector>

#include "opt3dgs/adam.hpp"
#include "opt3dgs/awsgld.hpp"
#include "opt3dgs/renderer.hpp"
#include "opt3dgs/rng.hpp"
#include "opt3dgs/splat_model.hpp"

namespace opt3dgs {

using Vec2 = std::array<double, 2>;

/// Up to K (s, y) pairs for one primitive's position, oldest first.
struct LbfgsHistory {
  int K = 5;
  double curvature_eps = 1e-10;
  std::deque<Vec2> s;
  std::deque<Vec2> y;

  std::size_t size() const { return s.size(); }
  void clear() {
    s.clear();
    y.clear();
  }
  bool operator==(const LbfgsHistory&) const = default;
};

/// Appends (s, y) when s.y > curvature_eps, evicting the oldest pair at
/// capacity. Returns whether the pair was stored.
bool history_push(LbfgsHistory& h, const Vec2& s, const Vec2& y);

/// Two-loop recursion approximating H^-1 grad. An empty history returns
/// grad; a non-finite intermediate also returns grad and sets *fell_back.
Vec2 lbfgs_direction(const LbfgsHistory& h, const Vec2& grad, bool* fell_back = nullptr);

/// Histories plus the previous position and gradient of every primitive,
/// from which the next pair is formed.
struct LqnState {
  std::vector<LbfgsHistory> histories;
  std::vector<Vec2> prev_mu;
  std::vector<Vec2> prev_grad;
  std::vector<std::uint8_t> has_prev;
  int K = 5;
  double curvature_eps = 1e-10;

  LqnState() = default;
  LqnState(std::size_t n, int K, double curvature_eps);

  void resize(std::size_t n);
  /// Forget all pairs of one primitive (after relocation).
  void reset_gaussian(std::size_t i);

  bool operator==(const LqnState&) const = default;
};

struct LqnReport {
  int rejected_pairs = 0;
  int fallbacks = 0;
};

/// Exploitation update. Positions take an Adam step on the L-BFGS direction
/// plus lambda_noise * eps; other groups take a plain Adam step. A primitive
/// whose update is non-finite redoes this step with its raw gradient.
LqnReport lqnadam_step(GaussianCloud& cloud, std::span<const ParamVec> grads, LqnState& state,
                       const NoiseGate& gate, const GroupRates& lr, CloudAdam& adam, Rng& rng);

void write_lqn(std::ostream& os, const LqnState& state);
LqnState read_lqn(std::istream& is);

}  // namespace opt3dgs
