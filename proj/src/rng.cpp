// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/rng.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace opt3dgs {

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  Rng r;
  r.engine_.seed(seq);
  return r;
}

// The engine state is ~300 integers; it is written on one line so the
// surrounding checkpoint stays line oriented.
void Rng::save(std::ostream& os) const {
  std::ostringstream ss;
  ss << engine_ << ' ' << normal_;
  os << "rng " << ss.str() << '\n';
}

void Rng::load(std::istream& is) {
  std::string tag;
  is >> tag;
  if (tag != "rng") throw std::runtime_error("checkpoint: expected rng state");
  is >> engine_ >> normal_;
  if (!is) throw std::runtime_error("checkpoint: corrupt rng state");
}

}  // namespace opt3dgs
