// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/serialize.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace opt3dgs::io {

namespace {

std::string token(std::istream& is) {
  std::string t;
  if (!(is >> t)) throw std::runtime_error("checkpoint: unexpected end of input");
  return t;
}

}  // namespace

void put_double(std::ostream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  os << buf;
}

double get_double(std::istream& is) {
  // operator>> does not parse hexfloats in libstdc++, strtod does.
  const std::string t = token(is);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(t.c_str(), &end);
  if (end == t.c_str() || *end != '\0') throw std::runtime_error("checkpoint: bad number '" + t + "'");
  return v;
}

std::int64_t get_int(std::istream& is) {
  const std::string t = token(is);
  std::size_t pos = 0;
  const long long v = std::stoll(t, &pos);
  if (pos != t.size()) throw std::runtime_error("checkpoint: bad integer '" + t + "'");
  return v;
}

std::uint64_t get_uint(std::istream& is) {
  const std::string t = token(is);
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(t, &pos);
  if (pos != t.size()) throw std::runtime_error("checkpoint: bad integer '" + t + "'");
  return v;
}

void expect(std::istream& is, std::string_view tag) {
  const std::string t = token(is);
  if (t != tag) throw std::runtime_error("checkpoint: expected '" + std::string(tag) + "', got '" + t + "'");
}

}  // namespace opt3dgs::io
