#pragma once

#include <optional>
#include <vector>

#include "enkbf/diagnostics.hpp"
#include "enkbf/ensemble_stats.hpp"
#include "enkbf/model.hpp"
#include "enkbf/truth.hpp"

namespace enkbf {

enum class FilterScheme { general, fully_observed_regularized };

struct FilterConfig {
  double dt = 0.0;
  long n_steps = 0;
  int m = 0;
  FilterScheme scheme = FilterScheme::general;
  double pinv_rel_tol = 1e-12;
  long record_every = 1;  // diagnostic thinning; the final step is always recorded
};

struct FilterRun {
  std::vector<double> times;
  std::vector<Vector> means;
  std::vector<DiagnosticsRow> diags;
  Ensemble final_ensemble;
};

// One step of the general deterministic EnKBF:
//   X+_i = X_i + dt f(X_i) + dt D P^+ (X_i - xbar) - 1/2 Q R^{-1} (dt h(X_i) + dt hbar - 2 dy)
Ensemble enkbf_step_general(const Ensemble& ens, const ModelSpec& model, const Vector& dy,
                            double dt, double pinv_rel_tol = 1e-12);

// One step of the fully-observed regularized scheme (h = id, R = eps*I):
//   X+_i = X_i + dt f(X_i) + dt D P^+ (X_i - xbar) - 1/2 P (P + (eps/dt) I)^{-1} (X_i + xbar - 2 dy/dt)
// The (eps/dt)-regularized inverse replaces the R^{-1} scaling; D P^+ generalizes
// the plain P^{-1} deviation term (D = I for Lorenz-63).
Ensemble enkbf_step_fully_observed(const Ensemble& ens, const ModelSpec& model, double epsilon,
                                   const Vector& dy, double dt, double pinv_rel_tol = 1e-12);

// A P + P A^T + 2D - P H^T R^{-1} H P for the empirical covariance; requires an
// invertible P (throws RankDeficiencyError otherwise). Used for residual tests.
Matrix covariance_rhs(const EmpiricalStats& stats, const LinearModelSpec& linear);

// Iterates the selected scheme over truth.obs_increments, recording a
// DiagnosticsRow (against truth.states) every record_every steps plus at the
// final step. Divergence (non-finite entries or V > 1e12) throws
// DivergenceError with the step index; it is never clamped.
// epsilon is required by the fully_observed_regularized scheme; if absent it is
// inferred from the model's R = eps*I.
FilterRun run_filter(const ModelSpec& model, const TruthPath& truth, const FilterConfig& cfg,
                     const Ensemble& init, std::optional<double> epsilon = std::nullopt);

}  // namespace enkbf
