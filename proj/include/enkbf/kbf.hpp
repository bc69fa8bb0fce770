#pragma once

#include <vector>

#include "enkbf/model.hpp"

namespace enkbf {

struct GaussianBelief {
  Vector mean;  // x-bar_t
  Matrix cov;   // P-bar_t
};

// A p + p A^T + 2D - p H^T R^{-1} H p, symmetrized.
Matrix riccati_rhs(const Matrix& p, const LinearModelSpec& linear);

// Classical RK4 on the matrix Riccati ODE, symmetrizing after each step.
// Returns P at every grid time (n_steps + 1 matrices, starting with p0).
std::vector<Matrix> integrate_riccati(const Matrix& p0, const LinearModelSpec& linear, double dt,
                                      long n_steps);

struct StationaryRiccati {
  Matrix p_inf;
  double residual = 0.0;    // ||riccati_rhs(p_inf)||_F at return
  bool rank_warning = false;  // set when (A,H) not observable or (A,C) not controllable
};

// Integrates the Riccati ODE from P0 = I until ||rhs||_F <= tol * (1 + ||P||_F),
// with step halving on misbehavior. Throws NoConvergenceError past max_iter.
StationaryRiccati stationary_riccati(const LinearModelSpec& linear, double tol = 1e-10,
                                     long max_iter = 2000000);

// One Euler step of the Kalman-Bucy mean and covariance:
//   mean+ = mean + dt (A mean + b) - P H^T R^{-1} (dt H mean - dy)
//   cov+  = cov + dt riccati_rhs(cov)
// Euler (not RK4) so EnKBF-vs-KBF comparisons share their discretization error.
GaussianBelief kbf_mean_step(const GaussianBelief& belief, const LinearModelSpec& linear,
                             const Vector& dy, double dt);

// Rank of [H; HA; ...; HA^{nx-1}] via singular values, threshold 1e-10 * sigma_max.
int observability_rank(const LinearModelSpec& linear);

// Rank of [C, AC, ..., A^{nx-1}C], same threshold rule.
int controllability_rank(const LinearModelSpec& linear);

// lambda_* = min over eigenvalues of -Re(eig(A - P H^T R^{-1} H)); positive
// means the stationary filter dynamics are exponentially stable.
double stability_margin(const LinearModelSpec& linear, const Matrix& p_inf);

}  // namespace enkbf
