#pragma once

#include <stdexcept>
#include <string>

namespace qfilter {

// Base of every error raised by the library. Carries a stable kind string so
// the harness can report failures without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class InvalidDimension : public Error {
 public:
  explicit InvalidDimension(const std::string& what) : Error("invalid-dimension", what) {}
};

class InvalidPotential : public Error {
 public:
  explicit InvalidPotential(const std::string& what) : Error("invalid-potential", what) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error("invalid-argument", what) {}
};

class GridError : public Error {
 public:
  explicit GridError(const std::string& what) : Error("grid", what) {}
};

// Non-finite state during time stepping.
class BlowUpError : public Error {
 public:
  BlowUpError(int step, const std::string& what)
      : Error("blow-up", what + " at step " + std::to_string(step)), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

class DegenerateStateError : public Error {
 public:
  DegenerateStateError(int step, const std::string& what)
      : Error("degenerate-state", what + " at step " + std::to_string(step)), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

class NotAStateError : public Error {
 public:
  explicit NotAStateError(const std::string& what) : Error("not-a-state", what) {}
};

class KernelDegeneracyError : public Error {
 public:
  KernelDegeneracyError(double t, const std::string& what)
      : Error("kernel-degeneracy", what + " at t=" + std::to_string(t)), t_(t) {}
  double time() const noexcept { return t_; }

 private:
  double t_;
};

class ResolutionError : public Error {
 public:
  explicit ResolutionError(const std::string& what) : Error("resolution", what) {}
};

class IncompatibleModels : public Error {
 public:
  explicit IncompatibleModels(const std::string& what) : Error("incompatible-models", what) {}
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error("config", field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace qfilter
