// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "opt3dgs/rng.hpp"
#include "opt3dgs/splat_model.hpp"

namespace opt3dgs {

inline constexpr int kMaxSplit = 32;

/// `count` i.i.d. indices with P(i) proportional to opacity. Primitives
/// flagged in `exclude` get zero weight. Throws NumericalError when no
/// eligible primitive has opacity above `opacity_floor`.
std::vector<std::size_t> sample_by_opacity(const GaussianCloud& cloud, std::size_t count, Rng& rng,
                                           double opacity_floor = 0.0,
                                           const std::vector<std::uint8_t>* exclude = nullptr);

struct SplitResult {
  double opacity = 0.0;
  /// Sigma_new = cov_factor * Sigma_old.
  double cov_factor = 1.0;
  Sym2 cov;
};

/// Opacity and covariance shared by the N children of one primitive so
/// that the composite of N stacked copies matches the original.
SplitResult split_parameters(double o_old, const Sym2& cov_old, int N);

/// Writes the split result into `g`, keeping its rotation.
void apply_split(Gaussian2D& g, const SplitResult& split);

struct DensityEvent {
  std::string kind;  // "grow" or "relocate"
  std::size_t target = 0;
  std::vector<std::size_t> moved;  // new or relocated primitive indices
  int N = 1;
};

/// Adds min(ceil(rate * n), max_count - n) primitives by splitting targets
/// drawn with sample_by_opacity. New primitives are appended to the
/// gaussians vector and slotted behind their parent in depth order. A
/// target keeps at most kMaxSplit - 1 children per call.
std::vector<DensityEvent> grow(GaussianCloud& cloud, double rate, Rng& rng);

/// Moves every primitive with opacity below `opacity_floor` onto a live
/// target and splits the target's mass among itself and its movers. At
/// most kMaxSplit - 1 movers land on one target per call.
/// Throws NumericalError when every primitive is dead.
std::vector<DensityEvent> relocate_dead(GaussianCloud& cloud, double opacity_floor, Rng& rng);

/// Shannon entropy (nats) of the opacity sampling distribution.
double sampling_entropy(const GaussianCloud& cloud);

}  // namespace opt3dgs
