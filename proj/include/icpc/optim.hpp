#pragma once

// Optimizers over a ParamStore: AdamW (decoupled weight decay) for real
// training, plus a plain gradient-descent mode whose update is written so a
// group's learning-rate multiplier is one literal IEEE multiplication — the
// multiplier contract is testable bit-exactly.

#include <cmath>
#include <string>
#include <vector>

#include "icpc/check.hpp"
#include "icpc/params.hpp"

namespace icpc {

enum class OptimizerKind { adamw, sgd };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adamw") return OptimizerKind::adamw;
  if (s == "sgd") return OptimizerKind::sgd;
  throw config_error("unknown optimizer '" + s + "' (expected adamw|sgd)");
}

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, Real base_lr, Real weight_decay)
      : kind_(kind), lr_(base_lr), wd_(weight_decay) {
    check_config(base_lr > 0.0, "optimizer: base learning rate must be positive");
  }

  void step(ParamStore& ps) {
    ++t_;
    if (kind_ == OptimizerKind::adamw && m_.empty()) {
      m_.resize(ps.entries().size());
      v_.resize(ps.entries().size());
      for (size_t i = 0; i < ps.entries().size(); ++i) {
        m_[i].assign(ps.entries()[i].t.val().size(), 0.0);
        v_[i].assign(ps.entries()[i].t.val().size(), 0.0);
      }
    }
    for (size_t i = 0; i < ps.entries().size(); ++i) {
      const auto& e = ps.entries()[i];
      if (!ps.group_trainable(e.group)) continue;
      Real mult = static_cast<Real>(ps.group_lr_mult(e.group));
      auto& val = e.t.node()->val;
      const auto& grad = e.t.node()->grad;
      if (kind_ == OptimizerKind::sgd) {
        // delta = mult * (lr * g): the multiplier is the final single multiply
        for (size_t j = 0; j < val.size(); ++j) val[j] -= mult * (lr_ * grad[j]);
      } else {
        Real bc1 = 1.0 - std::pow(kBeta1, static_cast<Real>(t_));
        Real bc2 = 1.0 - std::pow(kBeta2, static_cast<Real>(t_));
        Real lr_eff = mult * lr_;
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < val.size(); ++j) {
          Real g = grad[j];
          m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
          v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
          Real update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + kEps);
          val[j] -= lr_eff * update + lr_eff * wd_ * val[j];
        }
      }
    }
  }

  OptimizerKind kind() const { return kind_; }

 private:
  static constexpr Real kBeta1 = 0.9;
  static constexpr Real kBeta2 = 0.999;
  static constexpr Real kEps = 1e-8;
  OptimizerKind kind_;
  Real lr_, wd_;
  long long t_ = 0;
  std::vector<std::vector<Real>> m_, v_;
};

}  // namespace icpc
