#pragma once

#include <stdexcept>
#include <string>

namespace enkbf {

// Ensemble (or truth) blow-up: non-finite entries or V_t beyond the divergence
// threshold. Carries the step index at which the run died.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Singular covariance where an invertible one is required.
class RankDeficiencyError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Iterative solver ran out of iterations.
class NoConvergenceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad config file contents; message names the offending key.
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Whole-experiment failure (e.g. every sweep cell diverged).
class ExperimentError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace enkbf
