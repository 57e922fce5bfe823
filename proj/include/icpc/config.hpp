#pragma once

// Flat dotted-key configuration with a pinned default for every key, strict
// unknown-key rejection, and a canonical echo format that can be re-read to
// reproduce a run exactly.

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "icpc/check.hpp"

namespace icpc {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

class Config {
 public:
  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"run.name", "run"},
        {"run.seed", "7"},

        {"data.classes", "8"},
        {"data.train_images", "10"},
        {"data.val_images", "8"},
        {"data.image_size", "64"},
        {"data.shapes_min", "2"},
        {"data.shapes_max", "3"},
        {"data.noise", "0.05"},
        {"data.jitter", "0.25"},
        {"data.boundary_band", "2"},
        {"data.seed", "1"},

        {"model.context_len", "8"},
        {"model.embed_dim", "64"},
        {"model.global_dim", "64"},
        {"model.text_heads", "1"},
        {"model.text_layers", "2"},
        {"model.refine_heads", "1"},
        {"model.refine_blocks", "1"},
        {"model.refine_lambda_init", "0.0001"},
        {"model.refine_lambda_trainable", "true"},
        {"model.decoder_width", "64"},

        {"prompt_mode", "icpc"},
        {"normalize_embeddings", "true"},
        {"multi_scale", "true"},
        {"gamma", "0.5"},
        {"temp_align", "0.07"},
        {"align_loss_all_scales", "false"},
        {"contrast_temperature", "0.1"},
        {"positives_per_class", "5"},
        {"negatives_cap", "64"},
        {"sampling_strategy", "easy-to-hard"},
        {"cosine_points", "false"},

        {"train.total_steps", "2000"},
        {"train.batch_size", "8"},
        {"train.base_lr", "0.003"},
        {"train.image_encoder_lr_mult", "0.1"},
        {"train.freeze_text_encoder", "true"},
        {"train.weight_decay", "0.0001"},
        {"train.optimizer", "adamw"},
        {"train.eval_interval", "200"},
        {"train.checkpoint_interval", "0"},

        {"plot.projection", "pca"},

        {"ablate.preset", ""},
        {"ablate.seeds", "1,2,3,4,5"},
    };
    return d;
  }

  Config() : values_(defaults()) {}

  // Sweep axes (`ablate.axis.<key> = v1,v2,...`) are open-ended; every other
  // key must exist in the defaults table.
  void set(const std::string& key, const std::string& value) {
    if (key.rfind("ablate.axis.", 0) != 0 && defaults().find(key) == defaults().end())
      throw config_error("unknown config key: " + key);
    values_[key] = value;
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw config_error(path + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  // Command-line override of the form key=value.
  void apply_override(const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("override must be key=value, got: " + kv);
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("unknown config key: " + key);
    return it->second;
  }

  long integer(const std::string& key) const {
    const std::string v = str(key);
    char* end = nullptr;
    long out = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
      throw config_error("config key " + key + " expects an integer, got: " + v);
    return out;
  }

  double real(const std::string& key) const {
    const std::string v = str(key);
    char* end = nullptr;
    double out = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
      throw config_error("config key " + key + " expects a number, got: " + v);
    return out;
  }

  bool boolean(const std::string& key) const {
    const std::string v = str(key);
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw config_error("config key " + key + " expects true/false, got: " + v);
  }

  void validate() const {
    auto positive_int = [&](const std::string& k) {
      if (integer(k) < 1) throw config_error("config key " + k + " must be >= 1");
    };
    auto nonneg_int = [&](const std::string& k) {
      if (integer(k) < 0) throw config_error("config key " + k + " must be >= 0");
    };
    auto positive_real = [&](const std::string& k) {
      double v = real(k);
      if (!(v > 0.0) || !std::isfinite(v))
        throw config_error("config key " + k + " must be a positive number");
    };
    auto nonneg_real = [&](const std::string& k) {
      double v = real(k);
      if (v < 0.0 || !std::isfinite(v))
        throw config_error("config key " + k + " must be a non-negative number");
    };

    if (real("gamma") < 0.0 || !std::isfinite(real("gamma")))
      throw config_error("gamma must be a non-negative number");
    positive_real("temp_align");
    positive_real("contrast_temperature");
    positive_int("positives_per_class");
    positive_int("negatives_cap");
    boolean("normalize_embeddings");
    boolean("multi_scale");
    boolean("align_loss_all_scales");
    boolean("cosine_points");

    const std::string pm = str("prompt_mode");
    if (pm != "icpc" && pm != "cocoop" && pm != "learnable" && pm != "fixed" && pm != "instance")
      throw config_error("prompt_mode must be one of icpc|cocoop|learnable|fixed|instance, got: " +
                         pm);
    const std::string ss = str("sampling_strategy");
    if (ss != "easy-to-hard" && ss != "random")
      throw config_error("sampling_strategy must be easy-to-hard or random, got: " + ss);
    const std::string opt = str("train.optimizer");
    if (opt != "adamw" && opt != "sgd")
      throw config_error("train.optimizer must be adamw or sgd, got: " + opt);
    const std::string proj = str("plot.projection");
    if (proj != "pca" && proj != "sne")
      throw config_error("plot.projection must be pca or sne, got: " + proj);

    positive_int("run.seed");
    positive_int("data.classes");
    positive_int("data.train_images");
    positive_int("data.val_images");
    positive_int("data.image_size");
    positive_int("data.shapes_min");
    positive_int("data.shapes_max");
    nonneg_real("data.noise");
    nonneg_real("data.jitter");
    nonneg_int("data.boundary_band");
    positive_int("data.seed");

    positive_int("model.context_len");
    positive_int("model.embed_dim");
    positive_int("model.global_dim");
    positive_int("model.text_heads");
    positive_int("model.text_layers");
    positive_int("model.refine_heads");
    positive_int("model.refine_blocks");
    positive_int("model.decoder_width");
    if (!std::isfinite(real("model.refine_lambda_init")))
      throw config_error("model.refine_lambda_init must be finite");
    boolean("model.refine_lambda_trainable");
    if (integer("model.embed_dim") % integer("model.text_heads") != 0)
      throw config_error("model.embed_dim must be divisible by model.text_heads");
    if (integer("model.embed_dim") % integer("model.refine_heads") != 0)
      throw config_error("model.embed_dim must be divisible by model.refine_heads");

    positive_int("train.total_steps");
    positive_int("train.batch_size");
    positive_real("train.base_lr");
    positive_real("train.image_encoder_lr_mult");
    boolean("train.freeze_text_encoder");
    nonneg_real("train.weight_decay");
    nonneg_int("train.eval_interval");
    nonneg_int("train.checkpoint_interval");

    for (const std::string& s : split(str("ablate.seeds"), ',')) {
      const std::string t = trim(s);
      char* end = nullptr;
      long v = std::strtol(t.c_str(), &end, 10);
      if (t.empty() || end == t.c_str() || *end != '\0' || v < 1)
        throw config_error("ablate.seeds must be a comma-separated list of positive integers");
    }
  }

  // Canonical text form: sorted `key = value` lines. Reloading the echoed
  // file reproduces this configuration exactly.
  std::string echo() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  // Axis keys declared for an ablation sweep, with the prefix stripped.
  std::map<std::string, std::string> ablation_axes() const {
    std::map<std::string, std::string> out;
    const std::string prefix = "ablate.axis.";
    for (const auto& [k, v] : values_)
      if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace icpc
