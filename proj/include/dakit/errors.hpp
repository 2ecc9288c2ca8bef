#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace da {

// Exit codes reported by the CLI. Library code throws; the CLI maps the
// exception class to the code.
enum class ExitCode : int {
  ok = 0,
  config = 2,
  provenance = 3,
  numerical = 4,
  training = 5,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration, malformed artifact files, contract violations
// (dimension mismatches and the like).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Hash-chain mismatches between artifacts.
class ProvenanceError : public Error {
 public:
  using Error::Error;
};

// Numerical failures: state blowup, degenerate ensembles, singular
// innovation covariance.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what, std::int64_t time_index = -1,
                          int member = -1)
      : Error(what), time_index(time_index), member(member) {}

  std::int64_t time_index;
  int member;
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what, int epoch = -1)
      : Error(what), epoch(epoch) {}

  int epoch;
};

inline ExitCode exit_code_for(const Error& e) {
  if (dynamic_cast<const ProvenanceError*>(&e)) return ExitCode::provenance;
  if (dynamic_cast<const NumericalError*>(&e)) return ExitCode::numerical;
  if (dynamic_cast<const TrainingError*>(&e)) return ExitCode::training;
  return ExitCode::config;
}

}  // namespace da
