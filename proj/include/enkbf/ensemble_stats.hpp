#pragma once

#include "enkbf/model.hpp"

namespace enkbf {

struct Ensemble {
  Matrix particles;  // nx x M, column i = X^i
  double t = 0.0;
  int m = 0;
};

// Empirical moment closures with 1/(M-1) normalization. All sums run in
// ascending particle index so a fixed seed gives bit-identical statistics
// regardless of how many sweep workers are active.
struct EmpiricalStats {
  Vector mean;       // x-bar
  Matrix cov;        // P, symmetrized
  Vector h_mean;     // h-bar
  Matrix cross_cov;  // Q
  double v = 0.0;    // V = sum ||X^i - x-bar||^2 / (M-1) = tr P
};

EmpiricalStats empirical_stats(const Ensemble& ens, const ModelSpec& model);

// Eigendecomposition-based Moore-Penrose inverse: eigenvalues <= rel_tol * lambda_max
// map to 0, the rest to their reciprocals. Input must be symmetric (PSD expected).
Matrix pseudo_inverse(const Matrix& p, double rel_tol = 1e-12);

double frobenius_norm(const Matrix& m);

}  // namespace enkbf
