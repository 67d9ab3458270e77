#pragma once

#include <stdexcept>
#include <string>

namespace timebin {

/// Thrown when an operation receives a parameter outside its documented domain
/// (non-finite value, negative loss, split fraction outside [0,1], ...).
class InvalidParameter : public std::invalid_argument {
 public:
  explicit InvalidParameter(const std::string& what) : std::invalid_argument(what) {}
};

/// Thrown when evolving a state would exceed its configured slot capacity.
class CapacityError : public std::length_error {
 public:
  explicit CapacityError(const std::string& what) : std::length_error(what) {}
};

/// Thrown when a fringe data set cannot yield a visibility (e.g. fitted offset <= 0).
class InvalidFringe : public std::runtime_error {
 public:
  explicit InvalidFringe(const std::string& what) : std::runtime_error(what) {}
};

/// Configuration file error carrying a line number for diagnostics.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line = 0) : std::runtime_error(what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace timebin
