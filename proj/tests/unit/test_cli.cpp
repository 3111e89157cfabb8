#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mistseg/dataset.hpp"
#include "mistseg/image_io.hpp"
#include "mistseg/metrics.hpp"
#include "mistseg_cli/cli.hpp"

using namespace mistseg;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mistseg_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

std::string last_line(const std::string& text) {
  auto end = text.find_last_not_of('\n');
  auto start = text.rfind('\n', end);
  return text.substr(start == std::string::npos ? 0 : start + 1, end - (start == std::string::npos ? 0 : start + 1) + 1);
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run_cli({}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"gen-data", "--out", "x", "--bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"gen-data"}).code, cli::kExitUsage);
  const auto r = run_cli({"eval", "--pred", "/nonexistent/p", "--gt", "/nonexistent/g"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run_cli({"--help"}).code, cli::kExitOk); }

TEST(Cli, GenDataWritesFourFoldersOfSixteen) {
  const auto dir = scratch("gen");
  const auto r = run_cli({"gen-data", "--out", (dir / "d").string(), "--n", "16", "--size", "64", "--seed", "0"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  for (const char* sub : {"rgb", "depth", "scribble", "gt"}) EXPECT_EQ(count_files(dir / "d" / sub), 16u) << sub;
  EXPECT_EQ(io::read_png(dir / "d" / "rgb" / "0000.png").width, 64u);
}

TEST(Cli, RuntimeFailureExitsTwo) {
  const auto dir = scratch("fail");
  EXPECT_EQ(run_cli({"gen-data", "--out", (dir / "d").string(), "--size", "40"}).code, cli::kExitFailure);
}

TEST(Cli, ConfigErrorsAreReported) {
  const auto dir = scratch("cfg");
  std::ofstream(dir / "bad.cfg") << "alpha = banana\n";
  const auto r = run_cli({"gen-data", "--out", (dir / "d").string(), "--config", (dir / "bad.cfg").string()});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
}

TEST(Cli, TreeFilterKeepsConstantSignal) {
  const auto dir = scratch("tf");
  pipeline::save_dataset(dir / "d", pipeline::gen_synthetic(1, 32, 2));
  io::Image8 sig{32, 32, 1, std::vector<std::uint8_t>(32 * 32, 77)};
  io::write_png(dir / "s.png", sig);
  const auto r = run_cli({"tree-filter", "--image", (dir / "d" / "rgb" / "0000.png").string(), "--signal",
                          (dir / "s.png").string(), "--sigma", "0.02", "--out", (dir / "f.png").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(io::read_png(dir / "f.png").pixels, sig.pixels);
  EXPECT_EQ(r.out.rfind("mst_weight,", 0), 0u);
}

TEST(Cli, EvalOfGroundTruthAgainstItself) {
  const auto dir = scratch("eval");
  pipeline::save_dataset(dir / "d", pipeline::gen_synthetic(4, 32, 3));
  const auto gt = (dir / "d" / "gt").string();
  const auto r = run_cli({"eval", "--pred", gt, "--gt", gt, "--out", (dir / "m.csv").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(last_line(r.out), "*,0,1,1,1");
  std::ifstream in(dir / "m.csv");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(in), {}), r.out);
}

TEST(Cli, PoeDemoSymmetricExperts) {
  const auto r = run_cli({"poe-demo", "--expert", "1,1", "--expert", "-1,1"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("product,0,0.33333333333333"), std::string::npos) << r.out;
}

TEST(Cli, MiDemoPrintsOneRowPerRho) {
  const auto r = run_cli({"mi-demo", "--rho", "0.5", "--steps", "20", "--batch", "64", "--eval", "256"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(r.out.rfind("rho,true_mi,estimate\n0.5,0.143841036225", 0), 0u) << r.out;
  EXPECT_EQ(run_cli({"mi-demo", "--rho", "1.5"}).code, cli::kExitFailure);
}

TEST(Cli, InferThenEvalReproducesTrainerMae) {
  const auto dir = scratch("pipeline");
  const auto data = (dir / "d").string();
  std::ofstream(dir / "toy.cfg") << "epochs_stage1 = 1\nepochs_stage2 = 1\nlr_stage1 = 1e-3\nlr_stage2 = 1e-3\n";
  const auto cfg = (dir / "toy.cfg").string();
  ASSERT_EQ(run_cli({"gen-data", "--out", data, "--n", "6", "--size", "32", "--seed", "4"}).code, 0);

  const auto t1 = run_cli({"train-stage1", "--data", data, "--out", (dir / "s1").string(), "--config", cfg});
  ASSERT_EQ(t1.code, cli::kExitOk) << t1.err;
  const auto mae_line = last_line(t1.out);
  ASSERT_EQ(mae_line.rfind("final_train_mae,", 0), 0u) << t1.out;
  const double trainer_mae = std::stod(mae_line.substr(16));
  EXPECT_EQ(count_files(dir / "d" / "pseudo"), 6u);

  const auto inf = run_cli({"infer", "--model", (dir / "s1" / "stage1.mstw").string(), "--data", data, "--out",
                            (dir / "p1").string()});
  ASSERT_EQ(inf.code, cli::kExitOk) << inf.err;
  const auto ev = run_cli({"eval", "--pred", (dir / "p1").string(), "--gt", (dir / "d" / "gt").string()});
  ASSERT_EQ(ev.code, cli::kExitOk) << ev.err;
  const auto mean_row = last_line(ev.out);
  EXPECT_NEAR(std::stod(mean_row.substr(2, mean_row.find(',', 2) - 2)), trainer_mae, 5e-7);

  // Full precision through the same PNG files.
  const auto preds = pipeline::load_maps(dir / "p1"), gts = pipeline::load_maps(dir / "d" / "gt");
  double mae = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) mae += pipeline::evaluate(preds[i], gts[i]).mae;
  EXPECT_NEAR(mae / static_cast<double>(preds.size()), trainer_mae, 1e-9);

  const auto t2 = run_cli({"train-stage2", "--data", data, "--out", (dir / "s2").string(), "--config", cfg});
  ASSERT_EQ(t2.code, cli::kExitOk) << t2.err;
  const auto inf2 = run_cli({"infer", "--model", (dir / "s2" / "stage2.mstw").string(), "--data", data, "--out",
                             (dir / "p2").string(), "--stochastic", "3"});
  ASSERT_EQ(inf2.code, cli::kExitOk) << inf2.err;
  EXPECT_EQ(count_files(dir / "p2"), 6u);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(count_files(dir / "p2" / "draws" / std::to_string(k)), 6u);
  EXPECT_EQ(run_cli({"infer", "--model", (dir / "s1" / "stage1.mstw").string(), "--data", data, "--out",
                     (dir / "p3").string(), "--stochastic", "2"})
                .code,
            cli::kExitFailure);
}
