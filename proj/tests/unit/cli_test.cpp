#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "histoprog/cli/cli.hpp"
#include "histoprog/common/error.hpp"

using namespace histoprog;
using namespace histoprog::cli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "histoprog");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("histoprog_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small run: few slides, small cohort.
std::vector<std::string> small(std::vector<std::string> args, const fs::path& dir) {
  for (const char* s : {"synth.slides=3", "synth.test_slides=1", "synth.slide_size=128", "synth.patients=60",
                        "prognosis.epochs=60", "evaluate.seeds=2", "evaluate.bootstrap=20"}) {
    args.push_back("--set");
    args.push_back(s);
  }
  args.push_back("--run-dir");
  args.push_back(dir.string());
  return args;
}

}  // namespace

TEST(RunConfig, DefaultsConvertAndUnknownKeysFail) {
  KeyValueConfig cfg = default_run_config();
  EXPECT_EQ(prognosis_config(cfg).head, prognosis::HeadKind::cox);
  EXPECT_EQ(cohort_spec(cfg).beta, synthdata::strong_beta());
  EXPECT_EQ(distill_config(cfg).kd.alpha1, 0.5);
  EXPECT_THROW(cfg.set("no.such.key", "1"), ValidationError);
  cfg.set("prognosis.head", "bogus");
  EXPECT_THROW(prognosis_config(cfg), ValidationError);
}

TEST(Split, DisjointCoveringAndSeeded) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = split_indices(37, 0.3, seed);
    EXPECT_EQ(s.test.size(), 11u);
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
    EXPECT_TRUE(std::is_sorted(s.test.begin(), s.test.end()));
    EXPECT_EQ(split_indices(37, 0.3, seed).test, s.test);
  }
  EXPECT_THROW(split_indices(3, 0.01, 0), ValidationError);
}

TEST(ClassScores, HandExample) {
  // truth 0,0,1,1 ; predicted 0,1,1,1
  gradcore::Tensor p({4, 5}, 0.0);
  p.at(0, 0) = p.at(1, 1) = p.at(2, 1) = p.at(3, 1) = 1;
  std::vector<meanteacher::PatchSample> patches(4);
  for (int i = 0; i < 4; ++i) patches[static_cast<std::size_t>(i)].label = i / 2;
  const auto s = class_scores(p, patches);
  EXPECT_DOUBLE_EQ(s.accuracy, 0.75);
  EXPECT_DOUBLE_EQ(s.f1[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.f1[1], 0.8);
  EXPECT_TRUE(std::isnan(s.f1[4]));
  EXPECT_DOUBLE_EQ(s.macro_f1, (2.0 / 3.0 + 0.8) / 2);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"bogus"}).code, 1);
  EXPECT_EQ(run_cli({"synth"}).code, 1);  // --run-dir is required
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST(Cli, UnknownConfigKeyExitsOne) {
  const auto dir = fresh_dir("badkey");
  const auto r = run_cli({"synth", "--run-dir", dir.string(), "--set", "nope=1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nope"), std::string::npos);
}

TEST(Cli, MissingInputNamesThePath) {
  const auto r = run_cli({"normalize", "--method", "macenko", "--input", "/nonexistent/x.png", "--output", "/tmp/o.png"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("/nonexistent/x.png"), std::string::npos);
  const auto dir = fresh_dir("missing");
  const auto p = run_cli({"train-prognosis", "--run-dir", dir.string()});
  EXPECT_EQ(p.code, 1);
  EXPECT_NE(p.err.find("cohort.csv"), std::string::npos);
}

TEST(Cli, BackgroundOnlyImageIsRejected) {
  const auto dir = fresh_dir("bg");
  fs::create_directories(dir);
  save_raster(dir / "bg.png", RasterImage(32, 32, 3, 1.0));
  ASSERT_EQ(run_cli(small({"synth"}, dir)).code, 0);
  const auto r = run_cli({"normalize", "--method", "macenko", "--run-dir", dir.string(), "--input",
                          (dir / "bg.png").string(), "--output", (dir / "out.png").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("background-only image"), std::string::npos);
}

TEST(Cli, LockedRunDirectoryIsARuntimeFailure) {
  const auto dir = fresh_dir("lock");
  fs::create_directories(dir);
  std::ofstream(dir / ".lock") << "";
  EXPECT_EQ(run_cli({"synth", "--run-dir", dir.string()}).code, 2);
  fs::remove(dir / ".lock");
  EXPECT_EQ(run_cli(small({"synth"}, dir)).code, 0);
  EXPECT_FALSE(fs::exists(dir / ".lock"));
}

TEST(Cli, SynthIsDeterministicAndConfigPersists) {
  const auto a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
  ASSERT_EQ(run_cli(small({"synth", "--seed", "7"}, a)).code, 0);
  ASSERT_EQ(run_cli(small({"synth", "--seed", "7"}, b)).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 10u);
  const std::string resolved = slurp(a / "config.resolved");
  EXPECT_NE(resolved.find("seed=7\n"), std::string::npos);
  EXPECT_NE(resolved.find("synth.patients=60\n"), std::string::npos);
}

TEST(Cli, ReportFailsLoudlyThenSucceeds) {
  const auto dir = fresh_dir("report");
  ASSERT_EQ(run_cli(small({"synth"}, dir)).code, 0);
  const auto missing = run_cli({"report", "--run-dir", dir.string()});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("kd_comparison.csv"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "report.md"));

  ASSERT_EQ(run_cli({"train-prognosis", "--run-dir", dir.string()}).code, 0);
  ASSERT_EQ(run_cli({"evaluate", "--run-dir", dir.string(), "--sections", "label_fraction,survival"}).code, 0);
  const auto curve = read_csv(dir / "metrics/label_fraction.csv");
  EXPECT_EQ(curve.rows.size(), 12u);  // 2 splits x 6 fractions
  EXPECT_EQ(curve.rows[0][1], "0.1250");
  EXPECT_TRUE(fs::exists(dir / "figures/km.svg"));
  EXPECT_EQ(run_cli({"evaluate", "--run-dir", dir.string(), "--sections", "nope"}).code, 1);
}
