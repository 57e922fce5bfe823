#pragma once

// Checkpoint container: an 8-byte magic, a little-endian u32 manifest length,
// a JSON manifest (format version, step, full flat config, parameter groups,
// tensor directory), then the raw parameter payload as little-endian doubles
// in directory order. Round-trips are bit-exact.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/config.hpp"
#include "icpc/model.hpp"
#include "icpc/params.hpp"
#include "json.hpp"

namespace icpc {

inline constexpr char kCheckpointMagic[8] = {'I', 'C', 'P', 'C', 'C', 'K', 'P', '1'};

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const Config& cfg, int64_t step) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["step"] = step;
  nlohmann::json jconfig = nlohmann::json::object();
  for (const auto& [k, v] : cfg.values()) jconfig[k] = v;
  manifest["config"] = jconfig;
  nlohmann::json jgroups = nlohmann::json::object();
  for (const std::string& g : params.group_names()) {
    jgroups[g] = {{"trainable", params.group_trainable(g)}, {"lr_mult", params.group_lr_mult(g)}};
  }
  manifest["groups"] = jgroups;
  nlohmann::json jtensors = nlohmann::json::array();
  int64_t offset = 0;
  for (const auto& e : params.entries()) {
    jtensors.push_back({{"name", e.name},
                        {"shape", e.t.shape()},
                        {"offset", offset},
                        {"count", e.t.size()}});
    offset += e.t.size();
  }
  manifest["tensors"] = jtensors;

  std::string text = manifest.dump();
  check(text.size() < (1u << 31), "checkpoint: manifest too large");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw error("checkpoint: cannot open for writing: " + path);
  out.write(kCheckpointMagic, 8);
  uint32_t len = static_cast<uint32_t>(text.size());
  unsigned char lenb[4] = {static_cast<unsigned char>(len & 0xff),
                           static_cast<unsigned char>((len >> 8) & 0xff),
                           static_cast<unsigned char>((len >> 16) & 0xff),
                           static_cast<unsigned char>((len >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(lenb), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : params.entries()) {
    const auto& v = e.t.val();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw error("checkpoint: write failed: " + path);
}

struct Checkpoint {
  Config config;
  int64_t step = 0;
  std::map<std::string, bool> group_trainable;
  std::map<std::string, double> group_lr_mult;
  struct TensorData {
    std::vector<int> shape;
    std::vector<double> values;
  };
  std::map<std::string, TensorData> tensors;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("checkpoint: cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw error("checkpoint: bad magic in " + path);
  unsigned char lenb[4];
  in.read(reinterpret_cast<char*>(lenb), 4);
  if (!in) throw error("checkpoint: truncated header in " + path);
  uint32_t len = static_cast<uint32_t>(lenb[0]) | (static_cast<uint32_t>(lenb[1]) << 8) |
                 (static_cast<uint32_t>(lenb[2]) << 16) | (static_cast<uint32_t>(lenb[3]) << 24);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw error("checkpoint: truncated manifest in " + path);
  nlohmann::json manifest = nlohmann::json::parse(text);
  check(manifest.at("format_version").get<int>() == 1,
        "checkpoint: unsupported format version in " + path);

  Checkpoint ck;
  ck.step = manifest.at("step").get<int64_t>();
  for (const auto& [k, v] : manifest.at("config").items())
    ck.config.set(k, v.get<std::string>());
  for (const auto& [g, spec] : manifest.at("groups").items()) {
    ck.group_trainable[g] = spec.at("trainable").get<bool>();
    ck.group_lr_mult[g] = spec.at("lr_mult").get<double>();
  }
  for (const auto& jt : manifest.at("tensors")) {
    Checkpoint::TensorData td;
    td.shape = jt.at("shape").get<std::vector<int>>();
    int64_t count = jt.at("count").get<int64_t>();
    check(count == shape_size(td.shape), "checkpoint: tensor count/shape mismatch in " + path);
    td.values.resize(static_cast<size_t>(count));
    in.read(reinterpret_cast<char*>(td.values.data()),
            static_cast<std::streamsize>(td.values.size() * sizeof(double)));
    if (!in) throw error("checkpoint: truncated payload in " + path);
    ck.tensors[jt.at("name").get<std::string>()] = std::move(td);
  }
  return ck;
}

// Copies checkpoint values into an already-built parameter store; names and
// shapes must match the store exactly.
inline void restore_params(ParamStore& params, const Checkpoint& ck) {
  size_t used = 0;
  for (const auto& e : params.entries()) {
    auto it = ck.tensors.find(e.name);
    check(it != ck.tensors.end(), "checkpoint: missing parameter '" + e.name + "'");
    check(it->second.shape == e.t.shape(),
          "checkpoint: shape mismatch for '" + e.name + "' (" + shape_str(it->second.shape) +
              " vs " + shape_str(e.t.shape()) + ")");
    Tensor t = e.t;  // same storage; the copy just grants mutable access
    std::copy(it->second.values.begin(), it->second.values.end(), t.val().begin());
    ++used;
  }
  check(used == ck.tensors.size(), "checkpoint: file carries parameters the model lacks");
}

// Builds the model described by the checkpoint's embedded config and loads
// the saved weights into it.
inline IcpcModel restore_model(const Checkpoint& ck) {
  ck.config.validate();
  IcpcModel model = IcpcModel::from_config(ck.config);
  restore_params(model.params(), ck);
  return model;
}

}  // namespace icpc
