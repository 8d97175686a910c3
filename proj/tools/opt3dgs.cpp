// SPDX-License-Identifier: Apache-2.0
// Command-line front end: fit, bench, zeta-sweep and eval.
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "opt3dgs/errors.hpp"
#include "opt3dgs/landscape.hpp"
#include "opt3dgs/loss.hpp"
#include "opt3dgs/renderer.hpp"
#include "opt3dgs/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace opt3dgs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Raised for problems the user can fix by changing arguments or config.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::shared_ptr<spdlog::logger> make_logger(const std::string& out_dir, const std::string& name) {
  std::vector<spdlog::sink_ptr> sinks{std::make_shared<spdlog::sinks::stderr_color_sink_mt>()};
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>((fs::path(out_dir) / (name + ".log")).string(), true));
  }
  auto log = std::make_shared<spdlog::logger>(name, sinks.begin(), sinks.end());
  log->set_pattern("[%H:%M:%S] %v");
  return log;
}

TrainConfig config_for(const std::string& path, std::uint64_t seed, bool seed_given) {
  TrainConfig cfg;
  if (!path.empty()) {
    try {
      cfg = load_config(path);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  if (seed_given) cfg.seed = seed;
  try {
    cfg.validate();
  } catch (const ContractViolation& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

Image load_image(const std::string& path) {
  if (!fs::is_regular_file(path)) throw std::runtime_error("cannot read image '" + path + "'");
  return read_png(path);
}

json metrics_json(const FitReport& r) {
  return json{{"psnr", r.psnr},
              {"ssim", r.ssim},
              {"initial_psnr", r.initial_psnr},
              {"n_gaussians", r.n_gaussians},
              {"iterations", r.iterations},
              {"wall_time", r.wall_seconds}};
}

FitReport fit_into(const Image& target, const TrainConfig& cfg, const std::string& out, spdlog::logger& log) {
  fs::create_directories(out);
  {
    std::ofstream c(fs::path(out) / "config_used.txt");
    c << config_to_text(cfg);
  }
  std::ofstream tel(fs::path(out) / "telemetry.csv");
  std::ofstream ev(fs::path(out) / "events.csv");
  RunOptions opts;
  opts.out_dir = out;
  opts.telemetry = &tel;
  opts.events = &ev;
  log.info("fitting {}x{} target, {} iterations, seed {}", target.width, target.height, cfg.total_iters, cfg.seed);
  FitResult res = run_fit(target, cfg, opts);
  write_png((fs::path(out) / "final.png").string(), render_image(res.cloud, target.width, target.height, cfg));
  {
    std::ofstream ck(fs::path(out) / "final_cloud.txt");
    write_cloud(ck, res.cloud);
  }
  std::ofstream m(fs::path(out) / "metrics.json");
  m << metrics_json(res.report).dump(2) << '\n';
  log.info("psnr {:.3f} dB (initial {:.3f}), ssim {:.4f}, {} gaussians, {:.1f}s", res.report.psnr,
           res.report.initial_psnr, res.report.ssim, res.report.n_gaussians, res.report.wall_seconds);
  return res.report;
}

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      throw UsageError("bad value '" + item + "' in --values");
    }
    if (pos != item.size() || !(v > 0.0)) throw UsageError("--values entries must be positive numbers");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--values is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage Gaussian splatting optimizer testbed"};
  app.require_subcommand(1);

  std::string image, config, out, ref, test, scenario, optimizer, values;
  std::uint64_t seed = 0;
  int seeds = 1;
  std::int64_t iters = -1;

  auto* fit = app.add_subcommand("fit", "fit a cloud to one image");
  fit->add_option("--image", image, "target PNG")->required();
  fit->add_option("--config", config, "key = value config file");
  auto* fit_seed = fit->add_option("--seed", seed, "random seed");
  fit->add_option("--out", out, "output directory")->required();

  auto* bench = app.add_subcommand("bench", "escape trials on a synthetic landscape");
  bench->add_option("--scenario", scenario, "double-well or mixture")->required();
  bench->add_option("--optimizer", optimizer, "sgld or awsgld")->required();
  bench->add_option("--seeds", seeds, "number of trials")->check(CLI::PositiveNumber);
  bench->add_option("--seed", seed, "first trial seed");
  bench->add_option("--iters", iters, "sampler steps per trial (default per scenario)");
  bench->add_option("--out", out, "output directory")->required();

  auto* sweep = app.add_subcommand("zeta-sweep", "fit once per zeta value with a shared seed");
  sweep->add_option("--values", values, "comma-separated zeta values")->required();
  sweep->add_option("--image", image, "target PNG")->required();
  sweep->add_option("--config", config, "key = value config file");
  auto* sweep_seed = sweep->add_option("--seed", seed, "random seed");
  sweep->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "PSNR and SSIM of a test image against a reference");
  eval->add_option("--ref", ref, "reference PNG")->required();
  eval->add_option("--test", test, "test PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*fit) {
      auto log = make_logger(out, "fit");
      try {
        const TrainConfig cfg = config_for(config, seed, fit_seed->count() > 0);
        const Image target = load_image(image);
        fit_into(target, cfg, out, *log);
      } catch (const UsageError& e) {
        log->error("{}", e.what());
        return kExitUsage;
      } catch (const std::exception& e) {
        log->error("{}", e.what());
        return kExitRuntime;
      }
      return kExitOk;
    }

    if (*bench) {
      SamplerKind kind;
      if (optimizer == "sgld") {
        kind = SamplerKind::Sgld;
      } else if (optimizer == "awsgld") {
        kind = SamplerKind::Awsgld;
      } else {
        std::cerr << "unknown optimizer '" << optimizer << "'\n";
        return kExitUsage;
      }
      BenchScenario sc;
      try {
        sc = make_scenario(scenario);
      } catch (const ContractViolation& e) {
        std::cerr << e.what() << '\n';
        return kExitUsage;
      }
      if (iters >= 0) sc.iters = iters;
      auto log = make_logger(out, "bench");
      const auto oracle = bin_mass_oracle(sc.land, EnergyPartition(sc.sampler.bins, sc.sampler.u1, sc.sampler.u_last),
                                          sc.sampler.tau);
      const fs::path csv_path = fs::path(out) / ("bench_" + scenario + "_" + optimizer + ".csv");
      std::ofstream csv(csv_path);
      csv << "scenario,optimizer,seed,escaped,first_escape_iter,final_energy,theta_mae\n";
      int escaped = 0;
      for (int k = 0; k < seeds; ++k) {
        const std::uint64_t s = seed + std::uint64_t(k);
        const TrialResult r = run_escape_trial(sc.land, kind, sc.start, sc.iters, s, sc.sampler);
        escaped += r.escaped ? 1 : 0;
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%s,%llu,%d,%lld,%.17g,%.17g\n", scenario.c_str(), optimizer.c_str(),
                      static_cast<unsigned long long>(s), r.escaped ? 1 : 0,
                      static_cast<long long>(r.first_escape_iter), r.final_energy, theta_mae(r.theta, oracle));
        csv << buf;
      }
      const double frac = double(escaped) / double(seeds);
      csv << "# escape_fraction," << escaped << '/' << seeds << ',' << frac << '\n';
      log->info("{} {}: {}/{} trials escaped ({:.3f}); rows in {}", scenario, optimizer, escaped, seeds, frac,
                csv_path.string());
      return kExitOk;
    }

    if (*sweep) {
      auto log = make_logger(out, "zeta_sweep");
      try {
        const auto zetas = parse_values(values);
        const TrainConfig base = config_for(config, seed, sweep_seed->count() > 0);
        const Image target = load_image(image);
        std::ofstream csv(fs::path(out) / "zeta_sweep.csv");
        csv << "zeta,seed,psnr,ssim\n";
        for (double z : zetas) {
          TrainConfig cfg = base;
          cfg.flat.zeta = z;
          char sub[64];
          std::snprintf(sub, sizeof sub, "zeta_%g", z);
          const FitReport r = fit_into(target, cfg, (fs::path(out) / sub).string(), *log);
          char buf[256];
          std::snprintf(buf, sizeof buf, "%.17g,%llu,%.17g,%.17g\n", z, static_cast<unsigned long long>(cfg.seed),
                        r.psnr, r.ssim);
          csv << buf;
        }
      } catch (const UsageError& e) {
        log->error("{}", e.what());
        return kExitUsage;
      }
      return kExitOk;
    }

    if (*eval) {
      const Image a = load_image(ref);
      const Image b = load_image(test);
      if (!a.same_shape(b)) {
        std::cerr << "image sizes differ: " << a.width << "x" << a.height << " vs " << b.width << "x" << b.height
                  << '\n';
        return kExitRuntime;
      }
      const json j{{"psnr", psnr<float>(a, b)}, {"ssim", ssim<float>(a, b)}};
      std::cout << j.dump() << '\n';
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
