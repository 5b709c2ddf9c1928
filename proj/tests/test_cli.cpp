#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "icl1nn/analysis.hpp"
#include "icl1nn/io/checkpoint.hpp"
#include "icl1nn/io/csv.hpp"
#include "icl1nn/io/svg.hpp"

namespace fs = std::filesystem;
using namespace icl1nn;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "icl1nn_cli_test";

fs::path fresh(const std::string& name) {
  const fs::path p = kRoot / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Runs the CLI with `args` (and an optional environment prefix); returns its exit status.
int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = "env -u ICL1NN_OUT -u ICL1NN_WORKERS " + env + " '" + std::string(ICL1NN_CLI) + "' " + args +
                          " > '" + (kRoot / "last_stdout.txt").string() + "' 2> '" +
                          (kRoot / "last_stderr.txt").string() + "'";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) { return io::read_text(p.string()); }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

fs::path write_config(const fs::path& dir, const std::string& body) {
  const fs::path p = dir / "run.cfg";
  io::write_text(p.string(), body);
  return p;
}

const char* kMinimalDiag = "regime = diag-dynamics\nN = 4\nd = 4\nsteps = 100\nmc_samples = 2000\n";

std::vector<double> column(const io::CsvTable& t, const std::string& name) {
  std::vector<double> v;
  for (const auto& r : t.rows) v.push_back(io::parse_double(r[t.column(name)], name));
  return v;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  fs::create_directories(kRoot);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("train --help"), 0);
  EXPECT_NE(slurp(kRoot / "last_stdout.txt").find("sgd.batch_size"), std::string::npos);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("train --workers 0"), 1);
}

TEST(Cli, TrainWritesLogPlotAndManifest) {
  const fs::path d = fresh("train");
  const fs::path cfg = write_config(d, kMinimalDiag);
  ASSERT_EQ(run("train --config " + q(cfg) + " --seed 3 --out " + q(d / "out")), 0);
  const io::CsvTable t = io::read_csv((d / "out" / "train.csv").string());
  EXPECT_EQ(t.rows.size(), 101u);
  EXPECT_EQ(t.header.front(), "step");
  const std::string svg = slurp(d / "out" / "loss.svg");
  EXPECT_EQ(io::svg_attribute_values(svg, "data-y"), column(t, "loss"));
  const json m = json::parse(slurp(d / "out" / "manifest.json"));
  EXPECT_EQ(m.at("config").at("seed").get<int>(), 3);
  EXPECT_EQ(m.at("config").at("regime"), "diag-dynamics");
  EXPECT_TRUE(m.contains("version"));
  EXPECT_TRUE(m.contains("wall_time_s"));
  EXPECT_TRUE(m.at("outputs").is_array());
  EXPECT_TRUE(fs::exists(d / "out" / "checkpoint.csv"));
  EXPECT_NO_THROW(io::read_checkpoint((d / "out" / "checkpoint.csv").string()));
}

TEST(Cli, OutputsAreByteIdenticalAcrossRunsAndWorkers) {
  const fs::path d = fresh("determinism");
  const fs::path cfg = write_config(d, kMinimalDiag);
  ASSERT_EQ(run("train --config " + q(cfg) + " --seed 11 --out " + q(d / "a")), 0);
  ASSERT_EQ(run("train --config " + q(cfg) + " --seed 11 --out " + q(d / "b")), 0);
  ASSERT_EQ(run("train --config " + q(cfg) + " --seed 11 --workers 8 --out " + q(d / "c")), 0);
  ASSERT_EQ(run("train --config " + q(cfg) + " --seed 11 --out " + q(d / "e"), "ICL1NN_WORKERS=5"), 0);
  for (const char* f : {"train.csv", "checkpoint.csv", "loss.svg"})
    for (const char* other : {"b", "c", "e"}) EXPECT_EQ(slurp(d / "a" / f), slurp(d / other / f)) << f << " vs " << other;
  ASSERT_EQ(run("train --config " + q(cfg) + " --seed 12 --out " + q(d / "f")), 0);
  EXPECT_NE(slurp(d / "a" / "train.csv"), slurp(d / "f" / "train.csv"));
}

TEST(Cli, ManifestReproducesRun) {
  const fs::path d = fresh("manifest");
  const fs::path cfg = write_config(d, "regime = sgd\nN = 4\nd = 3\nsgd.epochs = 5\nsgd.dataset_size = 200\n"
                                       "sgd.batch_size = 20\nsgd.test_instances = 50\n");
  ASSERT_EQ(run("train --config " + q(cfg) + " --seed 4 --out " + q(d / "a")), 0);
  ASSERT_EQ(run("train --from-manifest " + q(d / "a" / "manifest.json") + " --out " + q(d / "b")), 0);
  EXPECT_EQ(slurp(d / "a" / "train.csv"), slurp(d / "b" / "train.csv"));
  EXPECT_EQ(slurp(d / "a" / "checkpoint.csv"), slurp(d / "b" / "checkpoint.csv"));
}

TEST(Cli, MultipleSeedsWriteBand) {
  const fs::path d = fresh("seeds");
  const fs::path cfg = write_config(d, "regime = sgd\nN = 4\nd = 3\nsgd.epochs = 4\nsgd.dataset_size = 100\n"
                                       "sgd.batch_size = 20\nsgd.test_instances = 20\nseeds = 3\n");
  ASSERT_EQ(run("train --config " + q(cfg) + " --seed 7 --out " + q(d / "o")), 0);
  for (const char* f : {"train_seed7.csv", "train_seed8.csv", "train_seed9.csv", "train_band.csv", "loss.svg"})
    EXPECT_TRUE(fs::exists(d / "o" / f)) << f;
  const io::CsvTable band = io::read_csv((d / "o" / "train_band.csv").string());
  EXPECT_EQ(band.header[1], "loss_mean");
  EXPECT_EQ(band.rows.size(), 5u);
}

TEST(Cli, ConfigErrorsExitOneWithoutOutputs) {
  const fs::path d = fresh("config_errors");
  const fs::path bad = write_config(d, "N = 4\nlearning_rate = 0.1\n");
  EXPECT_EQ(run("train --config " + q(bad) + " --out " + q(d / "o")), 1);
  EXPECT_NE(slurp(kRoot / "last_stderr.txt").find("run.cfg:2"), std::string::npos);
  EXPECT_EQ(run("train --config " + q(d / "missing.cfg") + " --out " + q(d / "o")), 1);
  EXPECT_EQ(run("train --out " + q(d / "o")), 1);
  EXPECT_EQ(run("landscape --grid 300 --out " + q(d / "o")), 1);
  EXPECT_EQ(run("verify nonsense --out " + q(d / "o")), 1);
  EXPECT_EQ(run("shift-eval --checkpoint " + q(d / "none.csv") + " --out " + q(d / "o")), 1);
  EXPECT_FALSE(fs::exists(d / "o"));
}

TEST(Cli, NumericAbortExitsTwoWithPartialLog) {
  const fs::path d = fresh("abort");
  const fs::path cfg = write_config(d, "regime = sgd\nN = 4\nd = 4\nsgd.epochs = 3\nsgd.dataset_size = 64\n"
                                       "sgd.batch_size = 8\nsgd.test_instances = 0\nsgd.init_scale = 1e308\n");
  EXPECT_EQ(run("train --config " + q(cfg) + " --out " + q(d / "o")), 2);
  EXPECT_TRUE(fs::exists(d / "o" / "train.csv"));
  const json m = json::parse(slurp(d / "o" / "manifest.json"));
  EXPECT_NE(m.at("abort_reason").get<std::string>().find("not finite"), std::string::npos);
}

TEST(Cli, VerifyExitCodes) {
  const fs::path d = fresh("verify");
  EXPECT_EQ(run("verify gradients --N 3 --d 3 --pairs 2 --out " + q(d / "g")), 0);
  const io::CsvTable g = io::read_csv((d / "g" / "verify_gradients.csv").string());
  EXPECT_EQ(g.header, (std::vector<std::string>{"block", "statistic", "estimate", "stderr", "verdict"}));
  // Three steps cannot halve the loss.
  EXPECT_EQ(run("verify dynamics --N 4 --d 4 --steps 3 --mc-samples 500 --out " + q(d / "dyn")), 3);
  const json m = json::parse(slurp(d / "dyn" / "manifest.json"));
  EXPECT_FALSE(m.at("all_pass").get<bool>());
}

TEST(Cli, LandscapeAtZeroXi1MatchesSlice) {
  const fs::path d = fresh("landscape");
  ASSERT_EQ(run("landscape --N 4 --d 4 --xi1-min 0 --xi1-max 2 --grid-x 2 --xi2-min -2 --xi2-max 2 --grid-y 3 "
                "--mc-samples 20000 --seed 5 --out " + q(d)),
            0);
  const io::CsvTable t = io::read_csv((d / "landscape.csv").string());
  ASSERT_EQ(t.rows.size(), 6u);
  int checked = 0;
  for (const auto& r : t.rows) {
    const double xi1 = io::parse_double(r[0], "xi1"), xi2 = io::parse_double(r[1], "xi2");
    if (xi1 != 0.0) continue;
    const double loss = io::parse_double(r[2], "loss"), se = io::parse_double(r[3], "se");
    EXPECT_LE(std::abs(loss - loss_slice_xi1_zero(4, xi2)), 4.0 * se) << "xi2=" << xi2;
    ++checked;
  }
  EXPECT_EQ(checked, 3);
  const std::string svg = slurp(d / "landscape.svg");
  EXPECT_EQ(io::svg_attribute_values(svg, "data-value", 5), std::vector<double>{io::parse_double(t.rows[5][2], "z")});
}

TEST(Cli, ShiftEvalBaselineAndClassification) {
  const fs::path d = fresh("shift");
  io::write_checkpoint((d / "zero.csv").string(), {8, 16, AttentionWeights(8)});
  ASSERT_EQ(run("shift-eval --checkpoint " + q(d / "zero.csv") +
                " --N 16 --d 8 --instances 3000 --seed 2 --step 0 --out " + q(d / "zero")),
            0);
  const json z = json::parse(slurp(d / "zero" / "shift_report.json"));
  EXPECT_LE(std::abs(z.at("mse_vs_1nn").get<double>() - uniform_attention_mse(16)),
            4.0 * z.at("mse_stderr").get<double>());

  ASSERT_EQ(run("gen-data --kind shifted --N 16 --d 8 --instances 500 --labels integer --seed 8 --out " + q(d / "data")),
            0);
  io::write_checkpoint((d / "trained.csv").string(), {8, 16, DiagonalParams{50.0, 200.0}});
  const fs::path curve = d / "curve.csv";
  for (int step : {0, 10}) {
    const fs::path ck = step == 0 ? d / "zero.csv" : d / "trained.csv";
    ASSERT_EQ(run("shift-eval --checkpoint " + q(ck) + " --dataset " + q(d / "data" / "dataset.csv") +
                  " --classify --step " + std::to_string(step) + " --curve " + q(curve) + " --out " + q(d / "eval")),
              0);
  }
  const io::CsvTable t = io::read_csv(curve.string());
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_GT(io::parse_double(t.rows[0][3], "rate"), 0.1);
  EXPECT_EQ(io::parse_double(t.rows[1][3], "rate"), 0.0);
  const json r = json::parse(slurp(d / "eval" / "shift_report.json"));
  EXPECT_EQ(r.at("mismatch_count").get<int>(), 0);
  EXPECT_EQ(r.at("deviation_bounds").at("refined_holds").get<int>(), 500);
  EXPECT_EQ(io::svg_attribute_values(slurp(d / "eval" / "test_curve.svg"), "data-x"), (std::vector<double>{0, 10}));
}

TEST(Cli, ShiftEvalRejectsBadInputsBeforeWriting) {
  const fs::path d = fresh("shift_bad");
  io::write_checkpoint((d / "ck.csv").string(), {4, 8, DiagonalParams{1.0, 1.0}});
  ASSERT_EQ(run("gen-data --N 8 --d 5 --instances 10 --out " + q(d / "data")), 0);
  EXPECT_EQ(run("shift-eval --checkpoint " + q(d / "ck.csv") + " --dataset " + q(d / "data" / "dataset.csv") +
                " --out " + q(d / "o")),
            1);
  EXPECT_EQ(run("shift-eval --checkpoint " + q(d / "ck.csv") + " --dataset " + q(d / "nope.csv") + " --out " +
                q(d / "o")),
            1);
  ASSERT_EQ(run("gen-data --N 8 --d 4 --instances 10 --labels normal --out " + q(d / "normal")), 0);
  EXPECT_EQ(run("shift-eval --checkpoint " + q(d / "ck.csv") + " --dataset " + q(d / "normal" / "dataset.csv") +
                " --classify --out " + q(d / "o")),
            1);
  EXPECT_FALSE(fs::exists(d / "o"));
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const fs::path d = fresh("env");
  ASSERT_EQ(run("gen-data --N 4 --d 3 --instances 5", "ICL1NN_OUT=" + q(d / "from_env")), 0);
  EXPECT_TRUE(fs::exists(d / "from_env" / "dataset.csv"));
  EXPECT_TRUE(fs::exists(d / "from_env" / "manifest.json"));
  ASSERT_EQ(run("gen-data --N 4 --d 3 --instances 5 --out " + q(d / "flag"), "ICL1NN_OUT=" + q(d / "ignored")), 0);
  EXPECT_TRUE(fs::exists(d / "flag" / "dataset.csv"));
  EXPECT_FALSE(fs::exists(d / "ignored"));
  EXPECT_EQ(slurp(d / "from_env" / "dataset.csv"), slurp(d / "flag" / "dataset.csv"));
}
