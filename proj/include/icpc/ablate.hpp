#pragma once

// Ablation sweeps: a shipped factor preset toggling the three components
// (instance conditioning, contrastive learning, multi-scale alignment) plus
// the prompting-mode variants, or generic axes declared as
// `ablate.axis.<key> = v1,v2,...`. Each combination runs once per seed in its
// own child directory; failures are recorded and the sweep continues.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/config.hpp"
#include "icpc/train.hpp"
#include "json.hpp"

namespace icpc {

struct AblationVariant {
  std::string name;
  std::map<std::string, std::string> overrides;
};

// Mirrors the component on/off grid: base prompting is a static learnable
// context, and the three switches are instance conditioning (ic), the
// contrastive objective (cl), and multi-scale alignment (ms). The extra
// cocoop/instance rows cover the other instance-conditioned prompting modes.
inline std::vector<AblationVariant> factor_preset(const std::string& gamma_on) {
  auto combo = [&](std::string name, std::string mode, bool cl, bool ms) {
    return AblationVariant{std::move(name),
                           {{"prompt_mode", std::move(mode)},
                            {"gamma", cl ? gamma_on : "0"},
                            {"multi_scale", ms ? "true" : "false"}}};
  };
  return {
      combo("base", "learnable", false, false),
      combo("ic", "icpc", false, false),
      combo("cocoop", "cocoop", false, false),
      combo("instance", "instance", false, false),
      combo("cl", "learnable", true, false),
      combo("ms", "learnable", false, true),
      combo("ic_cl", "icpc", true, false),
      combo("ic_ms", "icpc", false, true),
      combo("cl_ms", "learnable", true, true),
      combo("full", "icpc", true, true),
  };
}

inline std::vector<AblationVariant> axes_variants(const Config& base) {
  auto axes = base.ablation_axes();
  check_config(!axes.empty(),
               "ablate: set ablate.preset=factor or declare at least one ablate.axis.<key>");
  std::vector<AblationVariant> variants{{"", {}}};
  for (const auto& [key, csv] : axes) {
    std::vector<AblationVariant> next;
    for (const std::string& raw : split(csv, ',')) {
      std::string value = trim(raw);
      check_config(!value.empty(), "ablate: empty value in axis " + key);
      for (const AblationVariant& v : variants) {
        AblationVariant nv = v;
        nv.overrides[key] = value;
        std::string leaf = key.substr(key.rfind('.') + 1);
        nv.name += (nv.name.empty() ? "" : ",") + leaf + "=" + value;
        next.push_back(std::move(nv));
      }
    }
    variants = std::move(next);
  }
  for (AblationVariant& v : variants)
    for (char& c : v.name)
      if (c == '/' || c == '\\' || c == ' ') c = '_';
  return variants;
}

inline std::vector<uint64_t> parse_seed_list(const Config& cfg) {
  std::vector<uint64_t> seeds;
  for (const std::string& s : split(cfg.str("ablate.seeds"), ','))
    seeds.push_back(static_cast<uint64_t>(std::stoll(trim(s))));
  return seeds;
}

struct AblationCell {
  std::string name;
  std::vector<uint64_t> seeds;
  std::vector<double> mious;  // one per successful seed
  std::vector<std::string> failures;
  bool config_failure = false;
  bool divergence_failure = false;

  double mean() const {
    double s = 0.0;
    for (double v : mious) s += v;
    return mious.empty() ? std::nan("") : s / static_cast<double>(mious.size());
  }
  // population standard deviation over the seed set
  double stddev() const {
    if (mious.empty()) return std::nan("");
    double m = mean(), s = 0.0;
    for (double v : mious) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(mious.size()));
  }
};

struct AblationSummary {
  std::vector<AblationCell> cells;
  bool any_failure = false;
  bool any_divergence = false;
  std::string summary_path;
};

inline AblationSummary run_ablation(const Config& base, const std::string& out_dir) {
  base.validate();
  std::vector<AblationVariant> variants;
  const std::string preset = base.str("ablate.preset");
  if (preset == "factor")
    variants = factor_preset(base.str("gamma") == "0" ? "0.5" : base.str("gamma"));
  else if (preset.empty())
    variants = axes_variants(base);
  else
    throw config_error("unknown ablate.preset '" + preset + "' (expected factor)");

  std::vector<uint64_t> seeds = parse_seed_list(base);
  std::filesystem::create_directories(out_dir);

  AblationSummary summary;
  for (const AblationVariant& v : variants) {
    AblationCell cell;
    cell.name = v.name;
    for (uint64_t seed : seeds) {
      Config child = base;
      for (const auto& [k, val] : v.overrides) child.set(k, val);
      child.set("run.seed", std::to_string(seed));
      child.set("run.name", v.name + "-seed" + std::to_string(seed));
      std::string child_dir = out_dir + "/" + v.name + "/seed" + std::to_string(seed);
      try {
        TrainResult r = train_run(child, child_dir);
        cell.seeds.push_back(seed);
        cell.mious.push_back(r.final_val_miou);
      } catch (const divergence_error& e) {
        cell.failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
        cell.divergence_failure = true;
      } catch (const config_error& e) {
        cell.failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
        cell.config_failure = true;
      }
      // anything else (I/O, internal invariant) propagates: the sweep itself is broken
    }
    summary.any_failure = summary.any_failure || !cell.failures.empty();
    summary.any_divergence = summary.any_divergence || cell.divergence_failure;
    summary.cells.push_back(std::move(cell));
  }

  nlohmann::ordered_json j;
  j["seeds"] = seeds;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const AblationCell& c : summary.cells) {
    nlohmann::ordered_json row;
    row["name"] = c.name;
    row["val_miou"] = c.mious;
    if (!c.mious.empty()) {
      row["mean"] = c.mean();
      row["std"] = c.stddev();
    }
    row["failures"] = c.failures;
    rows.push_back(row);
  }
  j["variants"] = rows;
  j["any_failure"] = summary.any_failure;
  summary.summary_path = out_dir + "/summary.json";
  std::ofstream out(summary.summary_path, std::ios::trunc);
  check(static_cast<bool>(out), "ablate: cannot write " + summary.summary_path);
  out << j.dump(2) << "\n";
  return summary;
}

// Plain-text mean±std table for terminal display.
inline std::string ablation_table(const AblationSummary& summary) {
  size_t width = 8;
  for (const AblationCell& c : summary.cells) width = std::max(width, c.name.size());
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-*s  %9s  %9s  %s\n", static_cast<int>(width), "variant",
                "mean", "std", "runs");
  out += buf;
  for (const AblationCell& c : summary.cells) {
    if (c.mious.empty())
      std::snprintf(buf, sizeof(buf), "%-*s  %9s  %9s  0/%zu failed\n",
                    static_cast<int>(width), c.name.c_str(), "-", "-",
                    c.failures.size());
    else
      std::snprintf(buf, sizeof(buf), "%-*s  %9.4f  %9.4f  %zu/%zu\n", static_cast<int>(width),
                    c.name.c_str(), c.mean(), c.stddev(), c.mious.size(),
                    c.mious.size() + c.failures.size());
    out += buf;
  }
  return out;
}

}  // namespace icpc
