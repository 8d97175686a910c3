// SPDX-License-Identifier: Apache-2.0
#include "opt3dgs/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "opt3dgs/density.hpp"
#include "opt3dgs/errors.hpp"
#include "opt3dgs/renderer.hpp"
#include "opt3dgs/serialize.hpp"

namespace opt3dgs {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

struct Field {
  std::string name;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <class E>
Field enum_field(const std::string& name, E& ref, std::vector<std::pair<std::string, E>> names) {
  return {name,
          [&ref, names, name](const std::string& v) {
            for (const auto& [n, e] : names)
              if (n == v) {
                ref = e;
                return;
              }
            throw ConfigError("config: key '" + name + "' has unknown value '" + v + "'");
          },
          [&ref, names]() {
            for (const auto& [n, e] : names)
              if (e == ref) return n;
            return std::string("?");
          }};
}

Field dbl(const std::string& name, double& ref) {
  return {name, [&ref, name](const std::string& v) { ref = parse_double(name, v); },
          [&ref]() { return fmt_double(ref); }};
}

template <class I>
Field integer(const std::string& name, I& ref) {
  return {name, [&ref, name](const std::string& v) { ref = static_cast<I>(parse_int(name, v)); },
          [&ref]() { return std::to_string(ref); }};
}

Field boolean(const std::string& name, bool& ref) {
  return {name, [&ref, name](const std::string& v) { ref = parse_bool(name, v); },
          [&ref]() { return std::string(ref ? "true" : "false"); }};
}

std::vector<Field> fields(TrainConfig& c) {
  static const char* group_names[kNumParamGroups] = {"position", "log_scale", "rotation", "opacity", "color"};
  std::vector<Field> f{
      integer("total_iters", c.total_iters),
      integer("switch_iter", c.switch_iter),
      integer("warmup_iters", c.warmup_iters),
      integer("densify_interval", c.densify_interval),
      dbl("growth_rate", c.growth_rate),
      integer("max_gaussians", c.max_gaussians),
      integer("init_count", c.init_count),
      dbl("init_scale_fraction", c.init_scale_fraction),
      dbl("opacity_floor", c.opacity_floor),
  };
  for (int g = 0; g < kNumParamGroups; ++g) {
    f.push_back(dbl(std::string("lr_") + group_names[g], c.lr[g]));
    f.push_back(dbl(std::string("lr_") + group_names[g] + "_final_ratio", c.lr_final_ratio[g]));
  }
  const std::vector<Field> rest{
      dbl("adam_beta1", c.adam_beta1),
      dbl("adam_beta2", c.adam_beta2),
      dbl("adam_eps", c.adam_eps),
      dbl("lambda_noise", c.gate.lambda_noise),
      dbl("k_gate", c.gate.k_gate),
      dbl("t_gate", c.gate.t_gate),
      integer("gate_sign", c.gate.gate_sign),
      integer("bins", c.bins),
      dbl("energy_min", c.energy_min),
      dbl("energy_max", c.energy_max),
      dbl("zeta", c.flat.zeta),
      dbl("tau", c.flat.tau),
      dbl("theta_lr", c.flat.theta_lr),
      dbl("theta_lr_decay", c.flat.theta_lr_decay),
      dbl("nu_min", c.flat.nu_min),
      dbl("nu_max", c.flat.nu_max),
      dbl("theta_floor", c.flat.theta_floor),
      enum_field("nu_clamp", c.flat.clamp_mode, {{"index", NuClampMode::Index}, {"value", NuClampMode::Value}}),
      dbl("energy_ema", c.flat.energy_ema),
      dbl("lambda_ssim", c.loss.lambda_ssim),
      dbl("lambda_o", c.loss.lambda_o),
      dbl("lambda_sigma", c.loss.lambda_sigma),
      integer("ssim_window", c.loss.ssim_window),
      dbl("ssim_sigma", c.loss.ssim_sigma),
      dbl("ssim_c1", c.loss.ssim_c1),
      dbl("ssim_c2", c.loss.ssim_c2),
      enum_field("regularizer_reduction", c.loss.regularizer_reduction,
                 {{"mean", Reduction::Mean}, {"sum", Reduction::Sum}}),
      integer("history_size", c.history_size),
      dbl("curvature_eps", c.curvature_eps),
      boolean("carry_adam_state", c.carry_adam_state),
      enum_field("exploration", c.exploration, {{"awsgld", ExplorationMode::Awsgld}, {"adam", ExplorationMode::Adam}}),
      enum_field("exploitation", c.exploitation,
                 {{"lqnadam", ExploitationMode::LqnAdam}, {"adam", ExploitationMode::Adam}}),
      integer("seed", c.seed),
      integer("snapshot_interval", c.snapshot_interval),
      integer("threads", c.threads),
      integer("tile_size", c.tile_size),
      dbl("background_r", c.background[0]),
      dbl("background_g", c.background[1]),
      dbl("background_b", c.background[2]),
  };
  f.insert(f.end(), rest.begin(), rest.end());
  return f;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::validate() const {
  require(total_iters >= 0, "total_iters must be non-negative");
  require(0 <= warmup_iters && warmup_iters <= switch_iter && switch_iter <= total_iters,
          "need 0 <= warmup_iters <= switch_iter <= total_iters");
  require(densify_interval >= 0, "densify_interval must be non-negative");
  require(growth_rate >= 0.0 && std::isfinite(growth_rate), "growth_rate must be non-negative");
  require(max_gaussians >= 1, "max_gaussians must be positive");
  require(init_count >= 1 && init_count <= max_gaussians, "init_count must lie in [1, max_gaussians]");
  require(init_scale_fraction > 0.0, "init_scale_fraction must be positive");
  require(opacity_floor >= 0.0 && opacity_floor < 1.0, "opacity_floor must lie in [0,1)");
  for (int g = 0; g < kNumParamGroups; ++g) {
    require(lr[g] >= 0.0 && std::isfinite(lr[g]), "learning rates must be non-negative");
    require(lr_final_ratio[g] > 0.0, "learning-rate ratios must be positive");
  }
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0, "Adam betas must lie in [0,1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(gate.gate_sign == 1 || gate.gate_sign == -1, "gate_sign must be 1 or -1");
  require(std::isfinite(gate.lambda_noise), "lambda_noise must be finite");
  require(bins >= 3 && energy_min < energy_max, "need bins >= 3 and energy_min < energy_max");
  flat.validate();
  loss.validate();
  require(history_size >= 1, "history_size must be positive");
  require(curvature_eps >= 0.0, "curvature_eps must be non-negative");
  require(snapshot_interval >= 0, "snapshot_interval must be non-negative");
  require(threads >= 1 && tile_size >= 1, "threads and tile_size must be positive");
}

GroupRates TrainConfig::rates_at(std::int64_t t) const {
  GroupRates r{};
  const double frac = total_iters > 0 ? double(t) / double(total_iters) : 0.0;
  for (int g = 0; g < kNumParamGroups; ++g)
    r[g] = lr_final_ratio[g] == 1.0 ? lr[g] : lr[g] * std::pow(lr_final_ratio[g], frac);
  return r;
}

TrainConfig parse_config(std::istream& is, TrainConfig base) {
  auto table = fields(base);
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.name == key; });
    if (it == table.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    it->set(value);
  }
  base.flat.warmup_iters = base.warmup_iters;
  return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, base);
}

std::string config_to_text(const TrainConfig& cfg) {
  TrainConfig copy = cfg;
  std::ostringstream os;
  for (const auto& f : fields(copy)) os << f.name << " = " << f.get() << '\n';
  return os.str();
}

GaussianCloud init_random(std::size_t count, const Image& target, std::size_t max_count, double scale_fraction,
                          Rng& rng) {
  require(count >= 1, "init_random: count must be positive");
  require(count <= max_count, "init_random: count exceeds max_gaussians");
  require(target.width >= 1 && target.height >= 1, "init_random: empty target image");
  GaussianCloud cloud;
  cloud.max_count = max_count;
  cloud.gaussians.resize(count);
  for (auto& g : cloud.gaussians) {
    g.mu[0] = rng.uniform(0.0, double(target.width));
    g.mu[1] = rng.uniform(0.0, double(target.height));
  }
  double spacing = 0.0;
  if (count > 1) {
    for (std::size_t i = 0; i < count; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < count; ++j) {
        if (i == j) continue;
        const double dx = cloud.gaussians[i].mu[0] - cloud.gaussians[j].mu[0];
        const double dy = cloud.gaussians[i].mu[1] - cloud.gaussians[j].mu[1];
        best = std::min(best, dx * dx + dy * dy);
      }
      spacing += std::sqrt(best);
    }
    spacing /= double(count);
  } else {
    spacing = std::sqrt(double(target.width) * double(target.height));
  }
  const double log_s = std::log(std::max(scale_fraction * spacing, kScaleFloor));
  for (std::size_t i = 0; i < count; ++i) {
    auto& g = cloud.gaussians[i];
    g.log_scale = {log_s, log_s};
    g.rot_angle = 0.0;
    g.opacity_logit = logit(0.5);
    const Rgb c = sample_bilinear(target, g.mu[0], g.mu[1]);
    g.color = {c[0], c[1], c[2]};
    g.depth_index = std::int64_t(i);
  }
  return cloud;
}

TrainerState::TrainerState(const TrainConfig& cfg)
    : flat(EnergyPartition(cfg.bins, cfg.energy_min, cfg.energy_max),
           [&] {
             FlatteningConfig f = cfg.flat;
             f.warmup_iters = cfg.warmup_iters;
             return f;
           }()),
      lqn(0, cfg.history_size, cfg.curvature_eps),
      noise_rng(Rng::derive(cfg.seed, 1)),
      density_rng(Rng::derive(cfg.seed, 2)) {}

void TrainerState::save(std::ostream& os) const {
  os << "trainer 1\n" << iter << ' ' << nonfinite_streak << '\n';
  write_cloud(os, cloud);
  write_adam(os, adam);
  flat.save(os);
  write_lqn(os, lqn);
  noise_rng.save(os);
  density_rng.save(os);
}

void TrainerState::load(std::istream& is) {
  io::expect(is, "trainer");
  if (io::get_int(is) != 1) throw std::runtime_error("checkpoint: unsupported trainer version");
  iter = io::get_int(is);
  nonfinite_streak = int(io::get_int(is));
  cloud = read_cloud(is);
  adam = read_adam(is);
  flat.load(is);
  lqn = read_lqn(is);
  noise_rng.load(is);
  density_rng.load(is);
}

Image render_image(const GaussianCloud& cloud, int width, int height, const TrainConfig& cfg) {
  RenderSettings rs;
  rs.background = cfg.background;
  rs.tile_size = cfg.tile_size;
  rs.threads = cfg.threads;
  return render<float>(cloud, width, height, rs).image;
}

namespace {

std::string numbered(const std::string& dir, const char* stem, std::int64_t iter, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%06lld.%s", stem, static_cast<long long>(iter), ext);
  return (std::filesystem::path(dir) / buf).string();
}

void write_checkpoint(const std::string& path, const TrainerState& st) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  st.save(out);
}

struct Row {
  std::int64_t iter = 0;
  Stage stage = Stage::Exploration;
  double loss_total = 0.0;
  double loss_photo = 0.0;
  int bin = 0;
  double nu = 1.0;
  double psnr = 0.0;
  std::size_t n = 0;
  int rejected_pairs = 0;
  int relocations = 0;
  double drift = 0.0;
  bool theta_updated = false;
  int fallbacks = 0;
};

void write_row(std::ostream& os, const Row& r) {
  os << r.iter << ',' << (r.stage == Stage::Exploration ? "explore" : "exploit") << ',' << fmt_double(r.loss_total)
     << ',' << fmt_double(r.loss_photo) << ',' << r.bin << ',' << fmt_double(r.nu) << ',' << fmt_double(r.psnr)
     << ',' << r.n << ',' << r.rejected_pairs << ',' << r.relocations << ',' << fmt_double(r.drift) << ','
     << (r.theta_updated ? 1 : 0) << ',' << r.fallbacks << '\n';
}

void write_events(std::ostream& os, std::int64_t iter, const std::vector<DensityEvent>& events, double entropy) {
  for (const auto& e : events) {
    os << iter << ',' << e.kind << ',' << e.target << ',';
    for (std::size_t k = 0; k < e.moved.size(); ++k) os << (k ? ";" : "") << e.moved[k];
    os << ',' << e.N << ',' << fmt_double(entropy) << '\n';
  }
}

}  // namespace

FitResult run_fit(const Image& target, const TrainConfig& cfg_in, const RunOptions& opts) {
  TrainConfig cfg = cfg_in;
  cfg.flat.warmup_iters = cfg.warmup_iters;
  cfg.validate();
  require(target.width >= 1 && target.height >= 1, "run_fit: empty target image");
  const auto t0 = std::chrono::steady_clock::now();

  TrainerState st(cfg);
  if (!opts.resume_from.empty()) {
    std::ifstream in(opts.resume_from);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + opts.resume_from + "'");
    st.load(in);
  } else {
    Rng init_rng = Rng::derive(cfg.seed, 0);
    st.cloud = init_random(cfg.init_count, target, cfg.max_gaussians, cfg.init_scale_fraction, init_rng);
    st.cloud.rng_seed = cfg.seed;
    st.adam.resize(st.cloud.size());
    st.lqn.resize(st.cloud.size());
  }
  st.adam.set_hyper(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  RenderSettings rs;
  rs.background = cfg.background;
  rs.tile_size = cfg.tile_size;
  rs.threads = cfg.threads;
  const int W = target.width, H = target.height;

  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);
  if (opts.telemetry && opts.write_header) *opts.telemetry << kTelemetryHeader << '\n';
  if (opts.events && opts.write_header) *opts.events << "iter,event,target,moved,N,sampling_entropy\n";

  FitResult result;
  result.report.initial_psnr = psnr<float>(target, render<float>(st.cloud, W, H, rs).image);
  const std::int64_t end = opts.stop_at >= 0 ? std::min(opts.stop_at, cfg.total_iters) : cfg.total_iters;

  for (; st.iter < end; ++st.iter) {
    const std::int64_t t = st.iter;
    if (!opts.out_dir.empty() && cfg.snapshot_interval > 0 && t > 0 && t % cfg.snapshot_interval == 0) {
      write_checkpoint(numbered(opts.out_dir, "ckpt", t, "txt"), st);
      write_png(numbered(opts.out_dir, "snap", t, "png"), render<float>(st.cloud, W, H, rs).image);
    }

    const Stage stage = t < cfg.switch_iter ? Stage::Exploration : Stage::Exploitation;
    const LossConfig lcfg = photometric_swap(cfg.loss, stage);
    auto out = render<float>(st.cloud, W, H, rs);
    auto loss = total_loss<float>(out.image, target, st.cloud, lcfg);

    Row row;
    row.iter = t;
    row.stage = stage;
    row.loss_total = loss.energy;
    row.loss_photo = loss.photometric;
    row.psnr = psnr<float>(target, out.image);

    if (!std::isfinite(loss.energy)) {
      ++st.nonfinite_streak;
      row.n = st.cloud.size();
      if (opts.telemetry) write_row(*opts.telemetry, row);
      if (st.nonfinite_streak >= 2) {
        if (!opts.out_dir.empty()) write_checkpoint((std::filesystem::path(opts.out_dir) / "ckpt_last_good.txt").string(), st);
        throw TrainAborted("run_fit: non-finite loss on two consecutive iterations at iteration " + std::to_string(t));
      }
      continue;
    }
    st.nonfinite_streak = 0;

    const auto& render_grads = backward<float>(st.cloud, out, loss.dL_dimage);
    std::vector<ParamVec> grads(st.cloud.size());
    for (std::size_t i = 0; i < grads.size(); ++i)
      for (int k = 0; k < kParamsPerGaussian; ++k) grads[i][k] = render_grads[i][k] + loss.dL_dparams[i][k];

    const GroupRates rates = cfg.rates_at(t);
    if (stage == Stage::Exploration) {
      const bool active = t >= cfg.warmup_iters;
      if (cfg.exploration == ExplorationMode::Awsgld) {
        const StepReport rep =
            awsgld_step(st.cloud, grads, loss.energy, st.flat, active, cfg.gate, rates, st.adam, st.noise_rng);
        row.bin = rep.bin;
        row.nu = rep.nu;
        row.theta_updated = rep.theta_updated;
        row.fallbacks = rep.rejected ? 1 : 0;
      } else {
        const double e = st.flat.smooth(loss.energy);
        row.bin = subregion_index(e, st.flat.partition());
        apply_adam_update(st.cloud, grads, rates, 1.0, st.adam, nullptr);
        if (active) row.theta_updated = st.flat.update(row.bin);
      }
    } else {
      if (t == cfg.switch_iter && !cfg.carry_adam_state) {
        AdamState& pos = st.adam.group(ParamGroup::Position);
        pos.zero(0, pos.size());
        pos.step = 0;
      }
      row.bin = subregion_index(loss.energy, st.flat.partition());
      if (cfg.exploitation == ExploitationMode::LqnAdam) {
        const LqnReport rep = lqnadam_step(st.cloud, grads, st.lqn, cfg.gate, rates, st.adam, st.noise_rng);
        row.rejected_pairs = rep.rejected_pairs;
        row.fallbacks = rep.fallbacks;
      } else {
        apply_adam_update(st.cloud, grads, rates, 1.0, st.adam, nullptr);
      }
    }

    const bool densify_now = stage == Stage::Exploration && cfg.densify_interval > 0 &&
                             (t + 1) % cfg.densify_interval == 0 && t + 1 < cfg.switch_iter;
    if (densify_now) {
      auto moved = relocate_dead(st.cloud, cfg.opacity_floor, st.density_rng);
      for (const auto& e : moved) {
        row.relocations += int(e.moved.size());
        for (auto i : e.moved) {
          st.adam.reset_gaussian(i);
          st.lqn.reset_gaussian(i);
        }
      }
      auto grown = grow(st.cloud, cfg.growth_rate, st.density_rng);
      st.adam.resize(st.cloud.size());
      st.lqn.resize(st.cloud.size());
      if (opts.events) {
        const double h = sampling_entropy(st.cloud);
        write_events(*opts.events, t, moved, h);
        write_events(*opts.events, t, grown, h);
      }
    }

    row.n = st.cloud.size();
    row.drift = std::abs(st.flat.theta().sum() - 1.0);
    if (opts.telemetry) write_row(*opts.telemetry, row);
  }

  const Image final_img = render<float>(st.cloud, W, H, rs).image;
  result.report.psnr = psnr<float>(target, final_img);
  result.report.ssim = ssim<float>(target, final_img, cfg.loss);
  result.report.n_gaussians = st.cloud.size();
  result.report.iterations = st.iter;
  result.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.cloud = std::move(st.cloud);
  return result;
}

}  // namespace opt3dgs
