// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>

namespace opt3dgs {

/// Seedable random stream whose full state (engine plus the normal
/// distribution's cached variate) can be checkpointed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream derived from (seed, stream id).
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  double normal() { return normal_(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::mt19937_64& engine() { return engine_; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

  bool operator==(const Rng& o) const { return engine_ == o.engine_ && normal_ == o.normal_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace opt3dgs
