// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "opt3dgs/adam.hpp"
#include "opt3dgs/awsgld.hpp"
#include "opt3dgs/image.hpp"
#include "opt3dgs/loss.hpp"
#include "opt3dgs/lqnadam.hpp"
#include "opt3dgs/rng.hpp"
#include "opt3dgs/splat_model.hpp"

namespace opt3dgs {

enum class ExplorationMode {
  Awsgld,  // Adam direction scaled by nu, plus gated noise
  Adam,    // plain Adam; theta is still tracked for telemetry
};
enum class ExploitationMode { LqnAdam, Adam };

struct TrainConfig {
  std::int64_t total_iters = 3000;
  std::int64_t switch_iter = 2900;
  std::int64_t warmup_iters = 250;
  std::int64_t densify_interval = 100;
  double growth_rate = 0.05;
  std::size_t max_gaussians = 500;
  std::size_t init_count = 250;
  double init_scale_fraction = 0.5;
  double opacity_floor = 0.005;

  /// Base learning rate per group and the ratio final/base reached by
  /// exponential decay at total_iters.
  GroupRates lr{0.02048, 0.005, 0.001, 0.05, 0.0025};
  GroupRates lr_final_ratio{0.01, 1.0, 1.0, 1.0, 1.0};
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-15;

  NoiseGate gate{100.0, 0.005, 1.0, 1};
  int bins = 200;
  double energy_min = 0.0;
  double energy_max = 0.2;
  FlatteningConfig flat{};
  LossConfig loss{};

  int history_size = 5;
  double curvature_eps = 1e-10;
  bool carry_adam_state = true;

  ExplorationMode exploration = ExplorationMode::Awsgld;
  ExploitationMode exploitation = ExploitationMode::LqnAdam;

  std::uint64_t seed = 0;
  std::int64_t snapshot_interval = 0;
  int threads = 1;
  int tile_size = 16;
  Rgb background{0.0, 0.0, 0.0};

  void validate() const;
  /// Learning rates at iteration t.
  GroupRates rates_at(std::int64_t t) const;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys, bad
/// values and duplicate keys raise ConfigError. Keys not present keep the
/// values already in `base`.
TrainConfig parse_config(std::istream& is, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});
/// Every key with its current value, in parse_config syntax.
std::string config_to_text(const TrainConfig& cfg);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the loss is non-finite on two consecutive iterations.
class TrainAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Random cloud over the image: uniform positions, isotropic scales set to
/// a fraction of the mean nearest-neighbour spacing, opacity 0.5 and
/// colours sampled from `target`.
GaussianCloud init_random(std::size_t count, const Image& target, std::size_t max_count, double scale_fraction,
                          Rng& rng);

/// Everything needed to continue a run bit-exactly.
struct TrainerState {
  std::int64_t iter = 0;
  GaussianCloud cloud;
  CloudAdam adam;
  FlatHistogram flat;
  LqnState lqn;
  Rng noise_rng;
  Rng density_rng;
  int nonfinite_streak = 0;

  TrainerState(const TrainConfig& cfg);
  void save(std::ostream& os) const;
  void load(std::istream& is);
};

struct RunOptions {
  /// Snapshots, checkpoints and the abort checkpoint go here when set.
  std::string out_dir;
  std::ostream* telemetry = nullptr;
  std::ostream* events = nullptr;
  bool write_header = true;
  /// Checkpoint to continue from instead of a fresh initialization.
  std::string resume_from;
  /// Stop before this iteration (negative runs to total_iters).
  std::int64_t stop_at = -1;
};

struct FitReport {
  double initial_psnr = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::size_t n_gaussians = 0;
  std::int64_t iterations = 0;
  double wall_seconds = 0.0;
};

struct FitResult {
  GaussianCloud cloud;
  FitReport report;
};

inline constexpr const char* kTelemetryHeader =
    "iter,stage,loss_total,loss_photo,energy_bin,nu,psnr,n_gaussians,rejected_pairs,relocations,theta_sum_drift,"
    "theta_updated,fallbacks";

FitResult run_fit(const Image& target, const TrainConfig& cfg, const RunOptions& opts = {});

/// Final render of a cloud at the target's size.
Image render_image(const GaussianCloud& cloud, int width, int height, const TrainConfig& cfg);

}  // namespace opt3dgs
