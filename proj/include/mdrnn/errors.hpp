#pragma once

#include <stdexcept>

#include "mdrnn/numerics.hpp"

namespace mdrnn {

/// Invalid configuration or command-line settings.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, unreadable or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mdrnn
