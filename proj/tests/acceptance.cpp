// SPDX-License-Identifier: Apache-2.0
// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Arguments select a subset, e.g. `acceptance 3 5`.
#include <algorithm>
#include <boost/math/distributions/binomial.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "opt3dgs/density.hpp"
#include "opt3dgs/landscape.hpp"
#include "opt3dgs/lqnadam.hpp"
#include "opt3dgs/trainer.hpp"
#include "scene_helpers.hpp"

using namespace opt3dgs;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1. Renderer, loss and regularizer gradients against central differences.
Outcome gradient_fidelity() {
  std::mt19937_64 gen(20240601);
  int checked = 0, redrawn = 0;
  double worst = 0.0;
  std::string where;
  while (checked < 100) {
    const auto s = testkit::random_scene(gen, 10);
    const auto rep = testkit::check_scene(s);
    if (!rep.smooth) {
      ++redrawn;
      continue;
    }
    ++checked;
    if (rep.worst_rel > worst) {
      worst = rep.worst_rel;
      where = rep.worst_where;
    }
  }
  return {worst < 1e-4, fmt("100 scenes, worst relative error %.3g (%s), %d scenes redrawn at kinks", worst,
                            where.c_str(), redrawn)};
}

// 2. Split algebra.
Outcome split_algebra() {
  double worst = 0.0;
  bool identity = true;
  for (int step = 1; step <= 19; ++step) {
    const double o = 0.05 * step;
    for (int N = 1; N <= 8; ++N) {
      const auto r = split_parameters(o, {1.0, 0.2, 0.7}, N);
      worst = std::max(worst, std::abs(1.0 - std::pow(1.0 - r.opacity, N) - o));
      if (N == 1) identity = identity && r.opacity == o && r.cov_factor == 1.0 && r.cov == Sym2{1.0, 0.2, 0.7};
    }
  }
  const auto ex = split_parameters(0.75, {1.0, 0.0, 1.0}, 2);
  // Direct summation of the covariance series for N = 2.
  const double series = ex.opacity + (ex.opacity - ex.opacity * ex.opacity / std::sqrt(2.0));
  const double oracle = 0.75 * 0.75 / (series * series);
  const bool example = std::abs(ex.opacity - 0.5) <= 1e-12 && std::abs(ex.cov_factor - 0.8300) <= 1e-4 &&
                       std::abs(ex.cov_factor - oracle) <= 1e-12;
  return {worst <= 1e-12 && identity && example,
          fmt("conservation worst %.2e, N=1 identity %s, (0.75, 2) -> o %.15f factor %.6f (oracle %.6f)", worst,
              identity ? "exact" : "broken", ex.opacity, ex.cov_factor, oracle)};
}

SamplerConfig theta_sampler() {
  SamplerConfig c;
  c.tau = 1.0;
  c.step = 3e-4;
  c.bins = 20;
  c.u1 = 0.0;
  c.u_last = 2.0;
  return c;
}

// 3. Theta against quadrature masses.
Outcome theta_convergence() {
  const auto land = make_double_well(0.2);
  const auto cfg = theta_sampler();
  const auto oracle = bin_mass_oracle(land, EnergyPartition(cfg.bins, cfg.u1, cfg.u_last), cfg.tau);
  std::vector<double> mae;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = run_escape_trial(land, SamplerKind::Awsgld, land.minima[1 - land.global].x, 1000000, seed, cfg);
    mae.push_back(theta_mae(r.theta, oracle));
  }
  const double med = median(mae);
  return {med < 0.02, fmt("median MAE %.4f over 10 seeds (min %.4f, max %.4f)", med,
                          *std::min_element(mae.begin(), mae.end()), *std::max_element(mae.begin(), mae.end()))};
}

// 4. Bin occupancy flatness, paired by seed.
Outcome flat_histogram() {
  const auto sc = make_scenario("double-well");
  const auto oracle = bin_mass_oracle(sc.land, EnergyPartition(sc.sampler.bins, sc.sampler.u1, sc.sampler.u_last),
                                      sc.sampler.tau);
  std::vector<std::uint8_t> reach(oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) reach[i] = oracle[i] > 0.0;
  int wins = 0;
  std::vector<double> chi_s, chi_a;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto s = run_escape_trial(sc.land, SamplerKind::Sgld, sc.start, sc.iters, seed, sc.sampler);
    const auto a = run_escape_trial(sc.land, SamplerKind::Awsgld, sc.start, sc.iters, seed, sc.sampler);
    chi_s.push_back(chi_square_to_uniform(s.occupancy, reach));
    chi_a.push_back(chi_square_to_uniform(a.occupancy, reach));
    wins += chi_a.back() < chi_s.back();
  }
  return {wins >= 16, fmt("AW-SGLD flatter in %d/20 seeds; median chi-square SGLD %.3f, AW-SGLD %.3f", wins,
                          median(chi_s), median(chi_a))};
}

// 5. Escape from the shallow well. The margin is frozen at about half the
// escape-fraction difference of 0.82 seen in a pilot on seeds 1001-1050.
constexpr double kEscapeMargin = 0.40;

Outcome mode_escape() {
  const auto sc = make_scenario("double-well");
  int es = 0, ea = 0, only_a = 0, only_s = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const bool s = run_escape_trial(sc.land, SamplerKind::Sgld, sc.start, sc.iters, seed, sc.sampler).escaped;
    const bool a = run_escape_trial(sc.land, SamplerKind::Awsgld, sc.start, sc.iters, seed, sc.sampler).escaped;
    es += s;
    ea += a;
    only_a += a && !s;
    only_s += s && !a;
  }
  // Exact one-sided McNemar test on the discordant pairs.
  const int n = only_a + only_s;
  const double p = n == 0 ? 1.0 : boost::math::cdf(boost::math::complement(boost::math::binomial(n, 0.5), only_a - 1));
  const double diff = (ea - es) / 50.0;
  return {p < 0.05 && diff >= kEscapeMargin,
          fmt("escaped SGLD %d/50, AW-SGLD %d/50, discordant %d vs %d, one-sided p = %.3g, difference %.2f "
              "(frozen margin %.2f)",
              es, ea, only_a, only_s, p, diff, kEscapeMargin)};
}

// 6. Ill-conditioned quadratic: LQN-Adam against Adam, and the two-loop direction against Newton.
Vec2 hmul(const Sym2& H, const Vec2& v) { return {H.xx * v[0] + H.xy * v[1], H.xy * v[0] + H.yy * v[1]}; }
double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }

Sym2 rotated(double l1, double l2, double th) {
  const double c = std::cos(th), s = std::sin(th);
  return {l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c};
}

constexpr std::int64_t kQuadCap = 200000;
constexpr double kQuadLr = 0.01;

std::int64_t iters_to_converge(const Sym2& H, const Vec2& start, bool lqn) {
  GaussianCloud c;
  Gaussian2D g;
  g.mu = start;
  c.gaussians = {g};
  c.max_count = 1;
  CloudAdam adam(1);
  adam.set_hyper(0.9, 0.999, 1e-15);
  LqnState st(1, 5, 1e-10);
  Rng rng(0);
  const GroupRates lr{kQuadLr, 0.0, 0.0, 0.0, 0.0};
  for (std::int64_t t = 0; t < kQuadCap; ++t) {
    const Vec2 d = hmul(H, c.gaussians[0].mu);
    if (std::hypot(d[0], d[1]) < 1e-6) return t;
    std::vector<ParamVec> grads(1, ParamVec{});
    grads[0][0] = d[0];
    grads[0][1] = d[1];
    if (lqn) lqnadam_step(c, grads, st, NoiseGate{}, lr, adam, rng);
    else apply_adam_update(c, grads, lr, 1.0, adam, nullptr);
  }
  return kQuadCap;
}

// L-BFGS with exact line search on 0.5 x^T H x; restarts from a fresh point
// once converged. Returns the history after K accepted pushes.
LbfgsHistory exact_line_search_history(const Sym2& H, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LbfgsHistory h;
  Vec2 x{u(gen), u(gen)};
  int pushes = 0;
  while (pushes < h.K) {
    const Vec2 g = hmul(H, x);
    if (std::hypot(g[0], g[1]) < 1e-9) {
      x = {u(gen), u(gen)};
      continue;
    }
    const Vec2 d = lbfgs_direction(h, g);
    const Vec2 Hd = hmul(H, d);
    const double alpha = dot(g, d) / dot(d, Hd);
    const Vec2 s{-alpha * d[0], -alpha * d[1]};
    if (history_push(h, s, hmul(H, s))) ++pushes;
    x = {x[0] + s[0], x[1] + s[1]};
  }
  return h;
}

Outcome lqn_convergence() {
  std::ostringstream per;
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Sym2 H = rotated(1.0, 100.0, 3.14159265358979 * u(gen));
    const double ang = 6.28318530717959 * u(gen);
    const Vec2 start{std::cos(ang), std::sin(ang)};
    const auto nl = iters_to_converge(H, start, true), na = iters_to_converge(H, start, false);
    wins += nl < na;
    per << (seed > 1 ? " " : "") << nl << "/" << na;
  }
  double worst_cos = 1.0;
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Sym2 H = rotated(1.0, 100.0, 3.14159265358979 * u(gen));
    const auto h = exact_line_search_history(H, gen);
    const Vec2 g{u(gen) - 0.5, u(gen) - 0.5};
    const Vec2 d = lbfgs_direction(h, g);
    const double det = H.det();
    const Vec2 n{(H.yy * g[0] - H.xy * g[1]) / det, (-H.xy * g[0] + H.xx * g[1]) / det};
    worst_cos = std::min(worst_cos, dot(d, n) / std::sqrt(dot(d, d) * dot(n, n)));
  }
  return {wins == 10 && worst_cos >= 0.999,
          fmt("LQN-Adam faster in %d/10 seeds (iterations LQN/Adam: %s; cap %lld, lr %.3g); worst two-loop cosine %.9f",
              wins, per.str().c_str(), static_cast<long long>(kQuadCap), kQuadLr, worst_cos)};
}

// 7. Ablation on three images. The margin is the one fixed before the run.
constexpr double kAblationMargin = 0.1;

Outcome ablation() {
  const char* images[] = {"astronaut", "chelsea", "coffee"};
  bool pass = true;
  std::ostringstream os;
  for (const char* name : images) {
    const Image target = read_png(std::string(TEST_DATA_DIR) + "/" + name + "_128.png");
    std::vector<double> arm[3];
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      for (int a = 0; a < 3; ++a) {
        TrainConfig cfg;
        cfg.seed = seed;
        if (a == 0) cfg.flat.zeta = 0.0;
        if (a < 2) cfg.exploitation = ExploitationMode::Adam;
        arm[a].push_back(run_fit(target, cfg).report.psnr);
      }
    }
    const double b = median(arm[0]), w = median(arm[1]), f = median(arm[2]);
    const bool ok = b <= w && w <= f && f - b >= kAblationMargin;
    pass = pass && ok;
    os << fmt("%s%s: baseline %.2f, +AW-SGLD %.2f, +LQN-Adam %.2f", os.tellp() > 0 ? "; " : "", name, b, w, f);
  }
  return {pass, os.str() + fmt(" (median dB over 5 seeds, margin %.2f)", kAblationMargin)};
}

Image small_target() {
  const Image full = read_png(std::string(TEST_DATA_DIR) + "/astronaut_128.png");
  Image img(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = full.at(x + 32, y + 16, c);
  return img;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.total_iters = 400;
  cfg.switch_iter = 300;
  cfg.warmup_iters = 50;
  cfg.densify_interval = 100;
  cfg.init_count = 100;
  cfg.max_gaussians = 200;
  cfg.seed = 11;
  return cfg;
}

std::string telemetry(const Image& img, const TrainConfig& cfg, RunOptions opts = {}) {
  std::ostringstream os;
  opts.telemetry = &os;
  run_fit(img, cfg, opts);
  return os.str();
}

// 8. With nu fixed at one, no noise and no exploitation stage the trainer is plain Adam.
Outcome reduction_identity() {
  const Image img = small_target();
  TrainConfig aw = small_config();
  aw.flat.zeta = 0.0;
  aw.gate.lambda_noise = 0.0;
  aw.switch_iter = aw.total_iters;
  TrainConfig adam = aw;
  adam.exploration = ExplorationMode::Adam;
  const auto a = telemetry(img, aw), b = telemetry(img, adam);
  const auto rows = std::count(a.begin(), a.end(), '\n') - 1;
  return {a == b, fmt("%lld telemetry rows, %s", static_cast<long long>(rows),
                      a == b ? "byte-identical" : "differ")};
}

// 9. Determinism and checkpoint continuation.
Outcome determinism() {
  const Image img = small_target();
  TrainConfig cfg = small_config();
  cfg.snapshot_interval = 50;
  const auto dir = fs::temp_directory_path() / "opt3dgs_acceptance_resume";
  fs::remove_all(dir);
  RunOptions opts;
  opts.out_dir = dir.string();
  const auto a = telemetry(img, cfg, opts), b = telemetry(img, cfg);
  bool resumed = true;
  std::ostringstream which;
  for (std::int64_t k : {150, 350}) {
    RunOptions r;
    r.resume_from = (dir / fmt("ckpt_%06lld.txt", static_cast<long long>(k))).string();
    r.write_header = false;
    const auto tail = telemetry(img, cfg, r);
    const auto pos = a.find("\n" + std::to_string(k) + ",");
    const bool same = pos != std::string::npos && tail == a.substr(pos + 1);
    resumed = resumed && same;
    which << (k == 150 ? "" : ", ") << "from " << k << (same ? " exact" : " diverged");
  }
  fs::remove_all(dir);
  return {a == b && resumed,
          fmt("repeat run %s; resume %s", a == b ? "byte-identical" : "differs", which.str().c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},   {"split algebra", split_algebra},
      {"theta convergence", theta_convergence},   {"flat histogram", flat_histogram},
      {"mode escape", mode_escape},               {"LQN-Adam convergence", lqn_convergence},
      {"ablation ordering", ablation},            {"reduction identity", reduction_identity},
      {"determinism and resume", determinism},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!pick.empty() && !pick.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << "CRITERION " << id << " " << (o.pass ? "PASS" : "FAIL") << " [" << criteria[i].first << "] "
              << o.detail << fmt(" (%.1f s)", secs) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
