#pragma once

#include <cstdint>
#include <string>

#include "enkbf/model.hpp"

namespace enkbf {

// Pre-generated reference trajectory plus observation increments (twin
// experiment: the filter later assimilates obs_increments against states).
struct TruthPath {
  double dt = 0.0;
  Matrix states;          // (n_steps+1) x nx, row n = X^ref at t = n*dt
  Matrix obs_increments;  // n_steps x ny, row n = dY over [t_n, t_{n+1}]
  std::uint64_t seed = 0;
};

// Euler-Maruyama on the signal, exact Gaussian increments on the observation:
//   X_{n+1} = X_n + dt f(X_n) + sqrt(2) C dW_n,   dW ~ N(0, dt I)
//   dY_n    = dt h(X_n) + R^{1/2} dB_n,           dB ~ N(0, dt I)
// W and B come from independent sub-streams (mix_seed(seed, 0/1)) so the same
// signal path can be reused with different observation noise scalings.
TruthPath simulate_truth(const ModelSpec& model, const Vector& x0, double dt, long n_steps,
                         std::uint64_t seed);

// Symmetric PSD square root via eigendecomposition. Eigenvalues in
// [-1e-12*||m||, 0) are clipped to 0; anything lower is a not-PSD error.
Matrix sqrt_psd(const Matrix& m);

// CSV: header t,x_1..x_nx,dy_1..dy_ny; the final row has empty dy fields.
void write_truth_csv(const TruthPath& truth, const std::string& path);

}  // namespace enkbf
