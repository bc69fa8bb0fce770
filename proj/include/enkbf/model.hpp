#pragma once

#include <functional>

#include <Eigen/Core>

namespace enkbf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// A continuous-time filtering problem:
//   dX = f(X) dt + sqrt(2) C dW,   dY = h(X) dt + R^{1/2} dB.
struct ModelSpec {
  int nx = 0;
  int ny = 0;
  int nw = 0;
  std::function<Vector(const Vector&)> drift;         // f
  Matrix diffusion_factor;                            // C, nx x nw
  std::function<Vector(const Vector&)> forward_map;   // h
  Matrix obs_cov;                                     // R, ny x ny
  Matrix obs_cov_inv;                                 // cached R^{-1}
  bool identity_h = false;                            // true when h(x) = x by construction
};

// Linear-Gaussian problem: f(x) = Ax + b, h(x) = Hx.
struct LinearModelSpec {
  Matrix a_matrix;          // A, nx x nx
  Vector b_vector;          // b
  Matrix h_matrix;          // H, ny x nx
  Matrix diffusion_factor;  // C, nx x nw
  Matrix obs_cov;           // R, ny x ny

  int nx() const { return static_cast<int>(a_matrix.rows()); }
  int ny() const { return static_cast<int>(h_matrix.rows()); }
  int nw() const { return static_cast<int>(diffusion_factor.cols()); }
};

// Validates the invariants (R symmetric SPD, dimensions consistent) and caches
// R^{-1}. Throws std::invalid_argument on violation.
ModelSpec make_model(int nx, int ny, int nw, std::function<Vector(const Vector&)> drift,
                     Matrix diffusion_factor, std::function<Vector(const Vector&)> forward_map,
                     Matrix obs_cov, bool identity_h = false);

// ModelSpec view of a linear model.
ModelSpec linear_model(const LinearModelSpec& linear);

Vector eval_drift(const ModelSpec& model, const Vector& x);

// Stochastically perturbed Lorenz-63: D = C = I3, h(x) = x, R = eps*I3.
ModelSpec lorenz63_model(double epsilon);

// D = C*C^T, exactly symmetric (symmetrized after the product).
Matrix diffusion_tensor(const ModelSpec& model);

}  // namespace enkbf
