// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "opt3dgs/splat_model.hpp"

namespace opt3dgs {

/// First/second moment accumulators for one parameter block.
struct AdamState {
  std::vector<double> m1;
  std::vector<double> m2;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;

  explicit AdamState(std::size_t n = 0) : m1(n, 0.0), m2(n, 0.0) {}

  std::size_t size() const { return m1.size(); }
  void resize(std::size_t n) {
    m1.resize(n, 0.0);
    m2.resize(n, 0.0);
  }
  void zero(std::size_t begin, std::size_t count);

  /// Advances one entry's moments with `g` and returns its bias-corrected
  /// direction at the current `step`. Call after incrementing `step`.
  double advance_entry(std::size_t i, double g);

  bool operator==(const AdamState&) const = default;
};

/// Bias-corrected Adam direction m_hat / (sqrt(v_hat) + eps_hat). Advances
/// the state by one step.
std::vector<double> adam_precondition(std::span<const double> grad, AdamState& state);

/// Adam state for every parameter group of a cloud, laid out per group as
/// [gaussian * width + k].
struct CloudAdam {
  std::array<AdamState, kNumParamGroups> groups;

  explicit CloudAdam(std::size_t n = 0) { resize(n); }

  AdamState& group(ParamGroup g) { return groups[static_cast<int>(g)]; }
  const AdamState& group(ParamGroup g) const { return groups[static_cast<int>(g)]; }

  void resize(std::size_t gaussians);
  /// Zeroes every moment belonging to one primitive.
  void reset_gaussian(std::size_t i);
  void set_hyper(double beta1, double beta2, double eps_hat);

  bool operator==(const CloudAdam&) const = default;
};

void write_adam(std::ostream& os, const CloudAdam& adam);
CloudAdam read_adam(std::istream& is);

}  // namespace opt3dgs
