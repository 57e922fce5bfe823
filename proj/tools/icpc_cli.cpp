// Command-line surface: train / eval / ablate / plot over one run directory.
// Exit codes: 0 success, 2 usage or config error, 3 numeric failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "icpc/ablate.hpp"
#include "icpc/check.hpp"
#include "icpc/checkpoint.hpp"
#include "icpc/config.hpp"
#include "icpc/model.hpp"
#include "icpc/plot.hpp"
#include "icpc/train.hpp"
#include "json.hpp"

namespace {

struct CliArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = "out";
  int64_t seed = -1;

  std::string checkpoint;      // eval
  std::string split = "val";   // eval
  std::string source = "decoder";
  std::string plot_kind;       // plot
};

icpc::Config merged_config(const CliArgs& args) {
  icpc::Config cfg;
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const std::string& kv : args.sets) cfg.apply_override(kv);
  if (args.seed >= 0) cfg.set("run.seed", std::to_string(args.seed));
  cfg.validate();
  return cfg;
}

int cmd_train(const CliArgs& args) {
  icpc::Config cfg = merged_config(args);
  icpc::TrainResult r = icpc::train_run(cfg, args.out_dir);
  std::printf("trained %lld steps\n", static_cast<long long>(r.steps));
  std::printf("final train mIoU %.4f\n", r.final_train_miou);
  if (r.final_val_miou >= 0.0) std::printf("final val mIoU %.4f\n", r.final_val_miou);
  std::printf("checkpoint: %s\nmetrics: %s\n", r.checkpoint_path.c_str(),
              r.metrics_path.c_str());
  return 0;
}

int cmd_eval(const CliArgs& args) {
  std::string ckpt = args.checkpoint.empty() ? args.out_dir + "/checkpoint.ckpt"
                                             : args.checkpoint;
  if (!std::filesystem::exists(ckpt)) throw icpc::config_error("missing checkpoint: " + ckpt);
  if (args.split != "train" && args.split != "val")
    throw icpc::config_error("unknown split '" + args.split + "' (expected train|val)");
  icpc::PredictionSource source = icpc::parse_prediction_source(args.source);

  icpc::Checkpoint ck = icpc::load_checkpoint(ckpt);
  icpc::IcpcModel model = icpc::restore_model(ck);
  icpc::Dataset data = icpc::generate_dataset(icpc::dataset_spec_from(ck.config));
  const auto& split = args.split == "train" ? data.train : data.val;
  if (split.empty()) throw icpc::config_error("split '" + args.split + "' is empty");
  icpc::EvalResult r = icpc::evaluate_split(model, split, source);

  nlohmann::ordered_json table;
  table["checkpoint"] = ckpt;
  table["split"] = args.split;
  table["source"] = args.source;
  table["step"] = ck.step;
  table["miou"] = r.miou;
  table["iou"] = r.iou;
  std::string out_path = std::filesystem::path(ckpt).parent_path().string();
  if (out_path.empty()) out_path = ".";
  out_path += "/eval_" + args.split + "_" + args.source + ".json";
  std::ofstream out(out_path, std::ios::trunc);
  icpc::check(static_cast<bool>(out), "eval: cannot write " + out_path);
  out << table.dump(2) << "\n";

  for (size_t k = 0; k < r.iou.size(); ++k) {
    if (r.iou[k] < 0.0)
      std::printf("class %2zu  IoU      - (absent from ground truth)\n", k);
    else
      std::printf("class %2zu  IoU %.4f\n", k, r.iou[k]);
  }
  std::printf("%s %s mIoU %.17g\n", args.split.c_str(), args.source.c_str(), r.miou);
  std::printf("table: %s\n", out_path.c_str());
  return 0;
}

int cmd_ablate(const CliArgs& args) {
  icpc::Config cfg = merged_config(args);
  icpc::AblationSummary s = icpc::run_ablation(cfg, args.out_dir);
  std::fputs(icpc::ablation_table(s).c_str(), stdout);
  std::printf("summary: %s\n", s.summary_path.c_str());
  if (s.any_divergence) return 3;
  if (s.any_failure) return 2;
  return 0;
}

int cmd_plot(const CliArgs& args) {
  std::string path;
  if (args.plot_kind == "convergence") {
    path = icpc::convergence_plot(args.out_dir);
  } else if (args.plot_kind == "embeddings") {
    icpc::Config cfg = merged_config(args);
    path = icpc::embeddings_plot(args.out_dir, cfg.str("plot.projection"));
  } else {
    throw icpc::config_error("unknown plot kind '" + args.plot_kind +
                             "' (expected convergence|embeddings)");
  }
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CliArgs args;
  CLI::App app{"Instance-conditioned prompt segmentation with contrastive alignment"};
  app.fallthrough();
  app.require_subcommand(1);
  app.add_option("--config", args.config_path, "Config file of `key = value` lines");
  app.add_option("--set", args.sets, "Override a config key, e.g. --set gamma=0.5")
      ->type_size(1)
      ->allow_extra_args(false);
  app.add_option("--out", args.out_dir, "Run directory (default: out)");
  app.add_option("--seed", args.seed, "Override run.seed");

  CLI::App* train = app.add_subcommand("train", "Train and write checkpoint + metrics");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", args.checkpoint,
                   "Checkpoint file (default: <out>/checkpoint.ckpt)");
  eval->add_option("--split", args.split, "train|val (default: val)");
  eval->add_option("--source", args.source, "decoder|raw-alignment (default: decoder)");
  CLI::App* ablate = app.add_subcommand("ablate", "Run an ablation sweep");
  CLI::App* plot = app.add_subcommand("plot", "Write a plot from a finished run");
  plot->add_option("kind", args.plot_kind, "convergence|embeddings")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit 0; any usage problem exits 2
  }

  try {
    if (train->parsed()) return cmd_train(args);
    if (eval->parsed()) return cmd_eval(args);
    if (ablate->parsed()) return cmd_ablate(args);
    if (plot->parsed()) return cmd_plot(args);
    std::fputs("no subcommand given\n", stderr);
    return 2;
  } catch (const icpc::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const icpc::divergence_error& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
