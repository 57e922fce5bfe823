// End-to-end tests of the command-line binary: argument handling, exit codes,
// artifact layout, and the reproducibility contracts that span process
// boundaries (eval matching the training log, echoed configs re-running
// bit-exactly). The binary path is injected by the build as ICPC_CLI_PATH.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "json.hpp"

namespace {

struct CliResult {
  int code = -1;
  std::string output;  // stdout + stderr interleaved
};

std::string temp_dir(const std::string& tag) {
  std::string dir = std::filesystem::temp_directory_path().string() + "/icpc_cli_" + tag + "_" +
                    std::to_string(getpid());
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args, const std::string& scratch) {
  std::string log = scratch + "/cli_output.txt";
  std::string cmd = std::string(ICPC_CLI_PATH) + " " + args + " > '" + log + "' 2>&1";
  int rc = std::system(cmd.c_str());
  CliResult r;
  r.code = (rc >= 0 && WIFEXITED(rc)) ? WEXITSTATUS(rc) : -1;
  r.output = read_file(log);
  return r;
}

// Small-but-real setup: 4 classes, 32x32 images, 16-wide model, a few steps.
std::string write_tiny_config(const std::string& dir) {
  std::string path = dir + "/tiny.conf";
  std::ofstream out(path);
  out << "data.classes = 4\n"
         "data.train_images = 4\n"
         "data.val_images = 2\n"
         "data.image_size = 32\n"
         "data.shapes_min = 1\n"
         "data.shapes_max = 2\n"
         "model.context_len = 4\n"
         "model.embed_dim = 16\n"
         "model.global_dim = 16\n"
         "model.decoder_width = 16\n"
         "train.total_steps = 4\n"
         "train.batch_size = 2\n"
         "train.eval_interval = 2\n";
  return path;
}

std::map<std::string, std::string> parse_echoed_config(const std::string& path) {
  std::map<std::string, std::string> kv;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    size_t eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

double last_logged_val_miou(const std::string& metrics_path) {
  std::ifstream in(metrics_path);
  std::string line;
  double miou = -1.0;
  bool seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j.contains("val_miou")) {
      miou = j["val_miou"].get<double>();
      seen = true;
    }
  }
  EXPECT_TRUE(seen) << "no val_miou entry in " << metrics_path;
  return miou;
}

size_t count_occurrences(const std::string& haystack, const std::string& needle) {
  size_t n = 0;
  for (size_t pos = haystack.find(needle); pos != std::string::npos;
       pos = haystack.find(needle, pos + needle.size()))
    ++n;
  return n;
}

TEST(Cli, NoSubcommandIsUsageError) {
  std::string dir = temp_dir("nosub");
  CliResult r = run_cli("", dir);
  EXPECT_EQ(r.code, 2);
  std::filesystem::remove_all(dir);
}

TEST(Cli, HelpExitsZero) {
  std::string dir = temp_dir("help");
  CliResult r = run_cli("--help", dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("train"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Cli, NegativeGammaIsConfigError) {
  std::string dir = temp_dir("neg_gamma");
  std::string cfg = write_tiny_config(dir);
  CliResult r = run_cli("train --config " + cfg + " --set gamma=-1 --out " + dir + "/run", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("gamma"), std::string::npos) << r.output;
  std::filesystem::remove_all(dir);
}

TEST(Cli, UnknownSetKeyIsConfigError) {
  std::string dir = temp_dir("bad_key");
  std::string cfg = write_tiny_config(dir);
  CliResult r = run_cli("train --config " + cfg + " --set gama=1 --out " + dir + "/run", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("gama"), std::string::npos) << r.output;
  std::filesystem::remove_all(dir);
}

TEST(Cli, TrainWritesArtifacts) {
  std::string dir = temp_dir("train");
  std::string cfg = write_tiny_config(dir);
  CliResult r = run_cli("train --config " + cfg + " --out " + dir + "/run", dir);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("final val mIoU"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir + "/run/checkpoint.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/run/metrics.ndjson"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/run/config.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/run/final_eval.json"));
  std::filesystem::remove_all(dir);
}

TEST(Cli, SetOverridesAreEchoed) {
  std::string dir = temp_dir("echo_set");
  std::string cfg = write_tiny_config(dir);
  CliResult r = run_cli(
      "train --config " + cfg + " --set gamma=0.25 --seed 11 --out " + dir + "/run", dir);
  ASSERT_EQ(r.code, 0) << r.output;
  auto kv = parse_echoed_config(dir + "/run/config.txt");
  EXPECT_EQ(kv.at("gamma"), "0.25");
  EXPECT_EQ(kv.at("run.seed"), "11");
  std::filesystem::remove_all(dir);
}

TEST(Cli, EvalReproducesLoggedValMiou) {
  std::string dir = temp_dir("eval_repro");
  std::string cfg = write_tiny_config(dir);
  ASSERT_EQ(run_cli("train --config " + cfg + " --out " + dir + "/run", dir).code, 0);
  double logged = last_logged_val_miou(dir + "/run/metrics.ndjson");

  CliResult r = run_cli("eval --out " + dir + "/run", dir);
  ASSERT_EQ(r.code, 0) << r.output;
  auto table = nlohmann::json::parse(read_file(dir + "/run/eval_val_decoder.json"));
  EXPECT_EQ(table["split"], "val");
  EXPECT_EQ(table["source"], "decoder");
  // separate-process eval of the final checkpoint must reproduce the logged
  // value exactly, not approximately
  EXPECT_EQ(table["miou"].get<double>(), logged);
  std::filesystem::remove_all(dir);
}

TEST(Cli, EvalRawAlignmentRuns) {
  std::string dir = temp_dir("eval_raw");
  std::string cfg = write_tiny_config(dir);
  ASSERT_EQ(run_cli("train --config " + cfg + " --out " + dir + "/run", dir).code, 0);
  CliResult r = run_cli("eval --source raw-alignment --split train --out " + dir + "/run", dir);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(dir + "/run/eval_train_raw-alignment.json"));
  std::filesystem::remove_all(dir);
}

TEST(Cli, EvalUnknownSplitIsConfigError) {
  std::string dir = temp_dir("eval_split");
  std::string cfg = write_tiny_config(dir);
  ASSERT_EQ(run_cli("train --config " + cfg + " --out " + dir + "/run", dir).code, 0);
  CliResult r = run_cli("eval --split test --out " + dir + "/run", dir);
  EXPECT_EQ(r.code, 2);
  std::filesystem::remove_all(dir);
}

TEST(Cli, EvalMissingCheckpointIsConfigError) {
  std::string dir = temp_dir("eval_missing");
  CliResult r = run_cli("eval --out " + dir, dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("missing checkpoint"), std::string::npos) << r.output;
  std::filesystem::remove_all(dir);
}

TEST(Cli, AblateAxisSweepWritesSummaryAndIsolatesChildren) {
  std::string dir = temp_dir("ablate_axis");
  std::string cfg = write_tiny_config(dir);
  CliResult r = run_cli("ablate --config " + cfg +
                            " --set ablate.axis.gamma=0,0.5 --set ablate.seeds=1,2 --out " + dir +
                            "/sweep",
                        dir);
  ASSERT_EQ(r.code, 0) << r.output;

  auto summary = nlohmann::json::parse(read_file(dir + "/sweep/summary.json"));
  EXPECT_EQ(summary["seeds"].size(), 2u);
  ASSERT_EQ(summary["variants"].size(), 2u);
  for (const auto& row : summary["variants"]) {
    EXPECT_EQ(row["val_miou"].size(), 2u);
    EXPECT_TRUE(row["failures"].empty());
  }
  EXPECT_FALSE(summary["any_failure"].get<bool>());

  // same variant, different seed: configs differ only in seed and run name
  auto a = parse_echoed_config(dir + "/sweep/gamma=0/seed1/config.txt");
  auto b = parse_echoed_config(dir + "/sweep/gamma=0/seed2/config.txt");
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [key, value] : a) {
    if (key == "run.seed" || key == "run.name")
      EXPECT_NE(value, b.at(key)) << key;
    else
      EXPECT_EQ(value, b.at(key)) << key;
  }
  // same seed, different variant: configs differ only in the axis key (and name)
  auto c = parse_echoed_config(dir + "/sweep/gamma=0.5/seed1/config.txt");
  for (const auto& [key, value] : a) {
    if (key == "gamma" || key == "run.name")
      EXPECT_NE(value, c.at(key)) << key;
    else
      EXPECT_EQ(value, c.at(key)) << key;
  }
  std::filesystem::remove_all(dir);
}

TEST(Cli, AblateRecordsDivergentChildAndContinues) {
  std::string dir = temp_dir("ablate_div");
  std::string cfg = write_tiny_config(dir);
  CliResult r = run_cli("ablate --config " + cfg +
                            " --set ablate.axis.train.weight_decay=0.0001,1e30"
                            " --set ablate.seeds=1 --out " +
                            dir + "/sweep",
                        dir);
  EXPECT_EQ(r.code, 3) << r.output;  // a child diverged -> numeric failure

  auto summary = nlohmann::json::parse(read_file(dir + "/sweep/summary.json"));
  ASSERT_EQ(summary["variants"].size(), 2u);
  bool saw_ok = false, saw_failed = false;
  for (const auto& row : summary["variants"]) {
    if (row["failures"].empty()) {
      EXPECT_EQ(row["val_miou"].size(), 1u);
      saw_ok = true;
    } else {
      EXPECT_TRUE(row["val_miou"].empty());
      EXPECT_NE(row["failures"][0].get<std::string>().find("diverged"), std::string::npos);
      saw_failed = true;
    }
  }
  EXPECT_TRUE(saw_ok);
  EXPECT_TRUE(saw_failed);
  EXPECT_TRUE(summary["any_failure"].get<bool>());
  std::filesystem::remove_all(dir);
}

TEST(Cli, PlotConvergenceAndEmbeddings) {
  std::string dir = temp_dir("plot");
  std::string cfg = write_tiny_config(dir);
  ASSERT_EQ(run_cli("train --config " + cfg + " --out " + dir + "/run", dir).code, 0);

  CliResult conv = run_cli("plot convergence --out " + dir + "/run", dir);
  EXPECT_EQ(conv.code, 0) << conv.output;
  EXPECT_TRUE(std::filesystem::exists(dir + "/run/convergence.svg"));

  CliResult emb = run_cli("plot embeddings --out " + dir + "/run", dir);
  EXPECT_EQ(emb.code, 0) << emb.output;
  std::string svg = read_file(dir + "/run/embeddings.svg");
  EXPECT_EQ(count_occurrences(svg, "text-emb"), 4u);  // one marker per class

  CliResult sne =
      run_cli("plot embeddings --set plot.projection=sne --out " + dir + "/run", dir);
  EXPECT_EQ(sne.code, 0) << sne.output;
  std::filesystem::remove_all(dir);
}

TEST(Cli, PlotOnEmptyDirIsConfigError) {
  std::string dir = temp_dir("plot_empty");
  CliResult r = run_cli("plot convergence --out " + dir, dir);
  EXPECT_EQ(r.code, 2);
  std::filesystem::remove_all(dir);
}

TEST(Cli, UnknownPlotKindIsConfigError) {
  std::string dir = temp_dir("plot_kind");
  CliResult r = run_cli("plot histogram --out " + dir, dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("histogram"), std::string::npos) << r.output;
  std::filesystem::remove_all(dir);
}

TEST(Cli, EchoedConfigRerunsBitExact) {
  std::string dir = temp_dir("rerun");
  std::string cfg = write_tiny_config(dir);
  ASSERT_EQ(
      run_cli("train --config " + cfg + " --set gamma=0.25 --out " + dir + "/run1", dir).code, 0);
  // the echoed config alone must reproduce the run bit-for-bit
  ASSERT_EQ(
      run_cli("train --config " + dir + "/run1/config.txt --out " + dir + "/run2", dir).code, 0);
  EXPECT_EQ(read_file(dir + "/run1/metrics.ndjson"), read_file(dir + "/run2/metrics.ndjson"));
  EXPECT_EQ(read_file(dir + "/run1/checkpoint.ckpt"), read_file(dir + "/run2/checkpoint.ckpt"));
  std::filesystem::remove_all(dir);
}

}  // namespace
