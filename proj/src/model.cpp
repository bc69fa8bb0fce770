#include "enkbf/model.hpp"

#include <stdexcept>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace enkbf {

ModelSpec make_model(int nx, int ny, int nw, std::function<Vector(const Vector&)> drift,
                     Matrix diffusion_factor, std::function<Vector(const Vector&)> forward_map,
                     Matrix obs_cov, bool identity_h) {
  if (nx <= 0 || ny <= 0 || nw <= 0) throw std::invalid_argument("model dimensions must be positive");
  if (diffusion_factor.rows() != nx || diffusion_factor.cols() != nw)
    throw std::invalid_argument("diffusion_factor must be nx x nw");
  if (obs_cov.rows() != ny || obs_cov.cols() != ny)
    throw std::invalid_argument("obs_cov must be ny x ny");
  const double scale = obs_cov.cwiseAbs().maxCoeff();
  if ((obs_cov - obs_cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (scale > 0 ? scale : 1.0))
    throw std::invalid_argument("obs_cov must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(obs_cov);
  if (eig.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("obs_cov must be strictly positive definite");

  ModelSpec model;
  model.nx = nx;
  model.ny = ny;
  model.nw = nw;
  model.drift = std::move(drift);
  model.diffusion_factor = std::move(diffusion_factor);
  model.forward_map = std::move(forward_map);
  model.obs_cov = std::move(obs_cov);
  model.obs_cov_inv = model.obs_cov.llt().solve(Matrix::Identity(ny, ny));
  model.identity_h = identity_h;
  return model;
}

ModelSpec linear_model(const LinearModelSpec& linear) {
  const int nx = linear.nx();
  const int ny = linear.ny();
  if (linear.a_matrix.cols() != nx) throw std::invalid_argument("A must be square");
  if (linear.b_vector.size() != nx) throw std::invalid_argument("b must have length nx");
  if (linear.h_matrix.cols() != nx) throw std::invalid_argument("H must have nx columns");
  const Matrix a = linear.a_matrix;
  const Vector b = linear.b_vector;
  const Matrix h = linear.h_matrix;
  const bool identity = (ny == nx) && h.isIdentity(0.0);
  return make_model(
      nx, ny, linear.nw(), [a, b](const Vector& x) -> Vector { return a * x + b; },
      linear.diffusion_factor, [h](const Vector& x) -> Vector { return h * x; }, linear.obs_cov,
      identity);
}

Vector eval_drift(const ModelSpec& model, const Vector& x) {
  if (x.size() != model.nx) throw std::invalid_argument("eval_drift: state has wrong length");
  return model.drift(x);
}

ModelSpec lorenz63_model(double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("lorenz63_model: epsilon must be > 0");
  // Component evaluation order is fixed as written; tests compare bitwise
  // against an independent re-coding of the same expressions.
  auto drift = [](const Vector& x) -> Vector {
    Vector f(3);
    f(0) = 10.0 * (x(1) - x(0));
    f(1) = (28.0 - x(2)) * x(0) - x(1);
    f(2) = x(0) * x(1) - (8.0 / 3.0) * x(2);
    return f;
  };
  auto identity = [](const Vector& x) -> Vector { return x; };
  return make_model(3, 3, 3, drift, Matrix::Identity(3, 3), identity,
                    epsilon * Matrix::Identity(3, 3), /*identity_h=*/true);
}

Matrix diffusion_tensor(const ModelSpec& model) {
  Matrix d = model.diffusion_factor * model.diffusion_factor.transpose();
  d = 0.5 * (d + d.transpose()).eval();
  return d;
}

}  // namespace enkbf
