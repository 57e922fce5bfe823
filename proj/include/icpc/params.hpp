#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/rng.hpp"
#include "icpc/tensor.hpp"

namespace icpc {

// Named parameter registry. Every trainable (or frozen) tensor lives here
// under a dotted name "group.local", where the group controls the learning
// rate multiplier / freezing. Iteration order is the registration order, which
// keeps optimizer sweeps, hashing, and checkpoints deterministic.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::string group;
    Tensor t;
  };

  void set_group(const std::string& group, bool trainable, double lr_mult) {
    groups_[group] = {trainable, lr_mult};
  }

  bool has_group(const std::string& group) const { return groups_.count(group) > 0; }

  bool group_trainable(const std::string& group) const {
    auto it = groups_.find(group);
    check(it != groups_.end(), "params: unknown group '" + group + "'");
    return it->second.trainable;
  }

  double group_lr_mult(const std::string& group) const {
    auto it = groups_.find(group);
    check(it != groups_.end(), "params: unknown group '" + group + "'");
    return it->second.lr_mult;
  }

  Tensor add(const std::string& group, const std::string& local, std::vector<int> shape,
             std::vector<Real> vals) {
    check(groups_.count(group) > 0, "params: register group '" + group + "' first");
    std::string name = group + "." + local;
    check(index_.count(name) == 0, "params: duplicate parameter '" + name + "'");
    Tensor t = Tensor::leaf(std::move(shape), std::move(vals), groups_[group].trainable);
    index_[name] = entries_.size();
    entries_.push_back({name, group, t});
    return t;
  }

  Tensor add_normal(const std::string& group, const std::string& local, std::vector<int> shape,
                    Rng& rng, Real stddev) {
    int n = shape_size(shape);
    std::vector<Real> vals(static_cast<size_t>(n));
    for (Real& v : vals) v = rng.normal() * stddev;
    return add(group, local, std::move(shape), std::move(vals));
  }

  Tensor add_full(const std::string& group, const std::string& local, std::vector<int> shape,
                  Real value) {
    int n = shape_size(shape);
    return add(group, local, std::move(shape), std::vector<Real>(static_cast<size_t>(n), value));
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "params: unknown parameter '" + name + "'");
    return entries_[it->second].t;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<std::string> group_names() const {
    std::vector<std::string> out;
    for (const auto& [name, g] : groups_) out.push_back(name);
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.t.zero_grad();
  }

  int total_size() const {
    int n = 0;
    for (const auto& e : entries_) n += e.t.size();
    return n;
  }

  // FNV-1a over the raw little-endian bytes of every value in a group, in
  // registration order. Used to prove frozen groups never move.
  uint64_t group_hash(const std::string& group) const {
    check(groups_.count(group) > 0, "params: unknown group '" + group + "'");
    uint64_t h = 1469598103934665603ull;
    auto eat = [&h](const void* p, size_t n) {
      const unsigned char* b = static_cast<const unsigned char*>(p);
      for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& e : entries_) {
      if (e.group != group) continue;
      eat(e.name.data(), e.name.size());
      const auto& v = e.t.val();
      eat(v.data(), v.size() * sizeof(Real));
    }
    return h;
  }

 private:
  struct GroupCfg {
    bool trainable = true;
    double lr_mult = 1.0;
  };
  std::map<std::string, GroupCfg> groups_;
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

}  // namespace icpc
