#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "enkbf/enkbf.hpp"
#include "enkbf/kbf.hpp"

namespace enkbf {

// Where the mean-field law's moments come from:
//  - linear_exact: the Kalman-Bucy belief stepped along the observation path
//    (exact law for linear-Gaussian models);
//  - jumbo_ensemble: empirical moments of a large reference ensemble evolved by
//    the EnKBF itself (surrogate for nonlinear models; m_ref >= 8*M enforced).
enum class MomentSourceKind { linear_exact, jumbo_ensemble };

struct MomentSet {
  Vector mean;
  Matrix cov;
  Vector h_mean;
  Matrix cross_cov;
};

// One mean-field (McKean-Vlasov) particle step with EXTERNAL moments — the
// moments are never recomputed from these particles:
//   X+_i = X_i + dt f(X_i) + dt D cov^{-1} (X_i - mean)
//               - 1/2 cross_cov R^{-1} (dt h(X_i) + dt h_mean - 2 dy)
// Requires invertible cov (lambda_min > 1e-12 lambda_max); throws
// RankDeficiencyError otherwise, mirroring the mean-field stopping time.
Ensemble meanfield_step(const Ensemble& particles, const MomentSet& moments,
                        const ModelSpec& model, const Vector& dy, double dt);

struct ChaosRow {
  int m = 0;
  int seeds_used = 0;
  int seeds_failed = 0;
  double mean_gap = 0.0;    // seed average of (1/M) sum_i ||X_i(T) - Xhat_i(T)||^2
  double stderr_gap = 0.0;  // standard error over seeds
};

struct ChaosOptions {
  MomentSourceKind source = MomentSourceKind::linear_exact;
  std::optional<LinearModelSpec> linear;  // required for linear_exact
  Vector init_mean;                       // particles drawn iid from N(init_mean, init_cov)
  Matrix init_cov;
  std::uint64_t master_seed = 0;
};

// Coupled propagation-of-chaos experiment: for each (M, seed) cell, EnKBF and
// mean-field systems start from identical particles and see the same dy
// sequence; the terminal L2 particle gap is averaged over seeds. Failed seeds
// are excluded and counted.
std::vector<ChaosRow> run_chaos_experiment(const ModelSpec& model, const TruthPath& truth,
                                           const std::vector<int>& m_list, int m_ref, int n_seeds,
                                           const FilterConfig& cfg, const ChaosOptions& options);

struct MeanfieldCondition {
  bool satisfied = false;
  double kappa_minus = 0.0;
};

// Sufficient well-posedness condition ||f||_Lip^2 < 2 lam_min(D) ||R^{-1}||_F ||h||_Lip^2
// and the kappa_- rate it implies; c4 is the caller-supplied C4(t) bound.
MeanfieldCondition check_meanfield_condition(const ModelSpec& model, double f_lip, double h_lip,
                                             double c4 = 1.0);

// Draws m iid N(mean, cov) particles (sub-streams of seed) at time t0.
Ensemble sample_gaussian_ensemble(const Vector& mean, const Matrix& cov, int m, double t0,
                                  std::uint64_t seed);

void write_chaos_csv(const std::vector<ChaosRow>& rows, const std::string& path);

}  // namespace enkbf
