// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/adam.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "opt3dgs/errors.hpp"
#include "opt3dgs/serialize.hpp"

namespace opt3dgs {

void AdamState::zero(std::size_t begin, std::size_t count) {
  for (std::size_t i = begin; i < begin + count && i < m1.size(); ++i) {
    m1[i] = 0.0;
    m2[i] = 0.0;
  }
}

double AdamState::advance_entry(std::size_t i, double g) {
  m1[i] = beta1 * m1[i] + (1.0 - beta1) * g;
  m2[i] = beta2 * m2[i] + (1.0 - beta2) * g * g;
  const double t = static_cast<double>(step);
  const double m_hat = m1[i] / (1.0 - std::pow(beta1, t));
  const double v_hat = m2[i] / (1.0 - std::pow(beta2, t));
  return m_hat / (std::sqrt(v_hat) + eps_hat);
}

std::vector<double> adam_precondition(std::span<const double> grad, AdamState& state) {
  require(grad.size() == state.size(), "adam_precondition: gradient and state sizes differ");
  ++state.step;
  std::vector<double> dir(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) dir[i] = state.advance_entry(i, grad[i]);
  return dir;
}

void CloudAdam::resize(std::size_t gaussians) {
  for (int g = 0; g < kNumParamGroups; ++g) groups[g].resize(gaussians * kGroupWidth[g]);
}

void CloudAdam::reset_gaussian(std::size_t i) {
  for (int g = 0; g < kNumParamGroups; ++g) groups[g].zero(i * kGroupWidth[g], kGroupWidth[g]);
}

void CloudAdam::set_hyper(double beta1, double beta2, double eps_hat) {
  for (auto& s : groups) {
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps_hat = eps_hat;
  }
}

void write_adam(std::ostream& os, const CloudAdam& adam) {
  os << "adam 1\n";
  for (const auto& s : adam.groups) {
    os << s.step << ' ' << s.size();
    for (double b : {s.beta1, s.beta2, s.eps_hat}) {
      os << ' ';
      io::put_double(os, b);
    }
    os << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) {
      io::put_double(os, s.m1[i]);
      os << ' ';
      io::put_double(os, s.m2[i]);
      os << '\n';
    }
  }
}

CloudAdam read_adam(std::istream& is) {
  io::expect(is, "adam");
  if (io::get_int(is) != 1) throw std::runtime_error("checkpoint: unsupported adam version");
  CloudAdam adam;
  for (auto& s : adam.groups) {
    s.step = io::get_int(is);
    const auto n = io::get_uint(is);
    s.beta1 = io::get_double(is);
    s.beta2 = io::get_double(is);
    s.eps_hat = io::get_double(is);
    s.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      s.m1[i] = io::get_double(is);
      s.m2[i] = io::get_double(is);
    }
  }
  return adam;
}

}  // namespace opt3dgs
