// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "opt3dgs/image.hpp"
#include "opt3dgs/loss.hpp"

using namespace opt3dgs;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const auto capture = fs::temp_directory_path() / "opt3dgs_cli_stdout.txt";
  const std::string cmd = std::string(CLI_PATH) + " " + args + " > " + capture.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path workdir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "opt3dgs_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    Image img(20, 16);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 20; ++x) {
        img.at(x, y, 0) = float(x) / 20.0f;
        img.at(x, y, 1) = float(y) / 16.0f;
        img.at(x, y, 2) = (x + y) % 5 == 0 ? 1.0f : 0.2f;
      }
    write_png((d / "target.png").string(), img);
    write_png((d / "zeros.png").string(), Image(20, 16, 0.0f));
    write_png((d / "ones.png").string(), Image(20, 16, 1.0f));
    write_png((d / "small.png").string(), Image(8, 8, 0.5f));
    std::ofstream cfg(d / "tiny.cfg");
    cfg << "total_iters = 40\nswitch_iter = 30\nwarmup_iters = 10\ndensify_interval = 10\n"
           "init_count = 12\nmax_gaussians = 24\nsnapshot_interval = 20\n";
    std::ofstream bad(d / "bad.cfg");
    bad << "no_such_key = 3\n";
    return d;
  }();
  return dir;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("fit writes every artifact and finite metrics") {
  const auto d = workdir();
  const auto out = d / "fit_a";
  const auto r = cli("fit --image " + q(d / "target.png") + " --config " + q(d / "tiny.cfg") + " --seed 3 --out " +
                     q(out));
  REQUIRE(r.code == 0);
  for (const char* f : {"telemetry.csv", "events.csv", "final.png", "metrics.json", "config_used.txt", "fit.log",
                        "snap_000020.png", "ckpt_000020.txt"})
    CHECK_MESSAGE(fs::exists(out / f), f);
  const auto m = json::parse(slurp(out / "metrics.json"));
  CHECK(std::isfinite(m["psnr"].get<double>()));
  CHECK(m["n_gaussians"].get<int>() <= 24);
  CHECK(m["iterations"].get<int>() == 40);
}

TEST_CASE("fit with the same seed gives byte-identical telemetry") {
  const auto d = workdir();
  for (const char* name : {"fit_b", "fit_c"})
    REQUIRE(cli("fit --image " + q(d / "target.png") + " --config " + q(d / "tiny.cfg") + " --seed 5 --out " +
                q(d / name))
                .code == 0);
  CHECK(slurp(d / "fit_b" / "telemetry.csv") == slurp(d / "fit_c" / "telemetry.csv"));
  CHECK(slurp(d / "fit_b" / "telemetry.csv").size() > 100);
}

TEST_CASE("fit errors") {
  const auto d = workdir();
  const auto missing = d / "fit_missing";
  const auto r = cli("fit --image " + q(d / "nope.png") + " --config " + q(d / "tiny.cfg") + " --out " + q(missing));
  CHECK(r.code != 0);
  if (fs::exists(missing))
    for (const auto& e : fs::directory_iterator(missing)) CHECK(e.path().extension() == ".log");

  CHECK(cli("fit --image " + q(d / "target.png") + " --config " + q(d / "bad.cfg") + " --out " + q(d / "fit_bad"))
            .code == 1);
  CHECK(cli("fit --config " + q(d / "tiny.cfg") + " --out " + q(d / "fit_noimg")).code == 1);
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
}

TEST_CASE("bench rows and summary") {
  const auto d = workdir();
  REQUIRE(cli("bench --scenario double-well --optimizer awsgld --seeds 1 --iters 2000 --out " + q(d / "b1")).code ==
          0);
  std::ifstream in(d / "b1" / "bench_double-well_awsgld.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "scenario,optimizer,seed,escaped,first_escape_iter,final_energy,theta_mae");
  int rows = 0, summaries = 0;
  while (std::getline(in, line)) (line.rfind("# escape_fraction", 0) == 0 ? summaries : rows)++;
  CHECK(rows == 1);
  CHECK(summaries == 1);

  REQUIRE(cli("bench --scenario mixture --optimizer sgld --seeds 3 --iters 500 --out " + q(d / "b3")).code == 0);
  const auto text = slurp(d / "b3" / "bench_mixture_sgld.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);

  CHECK(cli("bench --scenario volcano --optimizer sgld --out " + q(d / "bx")).code == 1);
  CHECK(cli("bench --scenario mixture --optimizer momentum --out " + q(d / "bx")).code == 1);
  CHECK(cli("bench --scenario mixture --optimizer sgld --seeds 0 --out " + q(d / "bx")).code == 1);
}

TEST_CASE("zeta-sweep rows share the seed and are reproducible") {
  const auto d = workdir();
  const std::string base = "zeta-sweep --image " + q(d / "target.png") + " --config " + q(d / "tiny.cfg") +
                           " --seed 9 --values 0.25,0.5,0.75,1.0 --out ";
  REQUIRE(cli(base + q(d / "z1")).code == 0);
  REQUIRE(cli(base + q(d / "z2")).code == 0);
  const auto text = slurp(d / "z1" / "zeta_sweep.csv");
  CHECK(text == slurp(d / "z2" / "zeta_sweep.csv"));
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  CHECK(line == "zeta,seed,psnr,ssim");
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    CHECK(line.find(",9,") != std::string::npos);
  }
  CHECK(rows == 4);

  REQUIRE(cli("zeta-sweep --image " + q(d / "target.png") + " --config " + q(d / "tiny.cfg") +
              " --values 0.8 --out " + q(d / "z3"))
              .code == 0);
  const auto one = slurp(d / "z3" / "zeta_sweep.csv");
  CHECK(std::count(one.begin(), one.end(), '\n') == 2);

  CHECK(cli("zeta-sweep --image " + q(d / "target.png") + " --values , --out " + q(d / "z4")).code == 1);
  CHECK(cli("zeta-sweep --image " + q(d / "target.png") + " --values -1 --out " + q(d / "z5")).code == 1);
}

TEST_CASE("eval matches the in-process metrics") {
  const auto d = workdir();
  auto r = cli("eval --ref " + q(d / "target.png") + " --test " + q(d / "target.png"));
  REQUIRE(r.code == 0);
  auto j = json::parse(r.out);
  CHECK(j["psnr"].get<double>() == 99.0);
  CHECK(j["ssim"].get<double>() == 1.0);

  r = cli("eval --ref " + q(d / "zeros.png") + " --test " + q(d / "ones.png"));
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["psnr"].get<double>() == 0.0);

  r = cli("eval --ref " + q(d / "target.png") + " --test " + q(d / "fit_a" / "final.png"));
  if (fs::exists(d / "fit_a" / "final.png")) {
    REQUIRE(r.code == 0);
    j = json::parse(r.out);
    const Image a = read_png((d / "target.png").string()), b = read_png((d / "fit_a" / "final.png").string());
    CHECK(j["psnr"].get<double>() == psnr<float>(a, b));
    CHECK(j["ssim"].get<double>() == ssim<float>(a, b));
  }

  CHECK(cli("eval --ref " + q(d / "target.png") + " --test " + q(d / "small.png")).code == 2);
  CHECK(cli("eval --ref " + q(d / "target.png")).code == 1);
}

TEST_CASE("commands leave their inputs untouched") {
  const auto d = workdir();
  const auto img = slurp(d / "target.png"), cfg = slurp(d / "tiny.cfg");
  REQUIRE(cli("fit --image " + q(d / "target.png") + " --config " + q(d / "tiny.cfg") + " --out " + q(d / "fit_d"))
              .code == 0);
  CHECK(slurp(d / "target.png") == img);
  CHECK(slurp(d / "tiny.cfg") == cfg);
}
