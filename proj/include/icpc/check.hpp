#pragma once

#include <stdexcept>
#include <string>

namespace icpc {

// Base error for all library failures.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or usage: maps to CLI exit code 2.
class config_error : public error {
 public:
  using error::error;
};

// Non-finite loss during training: maps to CLI exit code 3.
class divergence_error : public error {
 public:
  using error::error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw error(msg);
}

inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw config_error(msg);
}

}  // namespace icpc
