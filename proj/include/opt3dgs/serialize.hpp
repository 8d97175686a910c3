// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

namespace opt3dgs::io {

// Bit-exact text encoding of doubles via hexfloat.
void put_double(std::ostream& os, double v);
double get_double(std::istream& is);

std::int64_t get_int(std::istream& is);
std::uint64_t get_uint(std::istream& is);

/// Reads one whitespace-delimited token and throws if it differs from `tag`.
void expect(std::istream& is, std::string_view tag);

}  // namespace opt3dgs::io
