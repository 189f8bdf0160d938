#pragma once

#include <stdexcept>
#include <string>

namespace otpet {

// bad user input: config files, CLI usage, malformed data files
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// solver blow-ups: NaN/Inf iterates, non-converging root finds
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace otpet
