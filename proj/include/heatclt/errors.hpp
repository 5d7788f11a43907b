#pragma once

#include <stdexcept>
#include <string>

namespace heatclt {

/// Invalid configuration or violated precondition on user input (CLI exit 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical breakdown: non-finite state, singular matrix, non-convergence (CLI exit 3).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace heatclt
