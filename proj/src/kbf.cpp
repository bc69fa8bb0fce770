#include "enkbf/kbf.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "enkbf/errors.hpp"
#include "enkbf/ensemble_stats.hpp"

namespace enkbf {

namespace {

Matrix hth_over_r(const LinearModelSpec& linear) {
  const Matrix r_inv = linear.obs_cov.llt().solve(Matrix::Identity(linear.ny(), linear.ny()));
  return linear.h_matrix.transpose() * r_inv * linear.h_matrix;
}

int svd_rank(const Matrix& m) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const double smax = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
  if (smax <= 0.0) return 0;
  int rank = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > 1e-10 * smax) ++rank;
  return rank;
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

Matrix riccati_rhs(const Matrix& p, const LinearModelSpec& linear) {
  const int nx = linear.nx();
  if (p.rows() != nx || p.cols() != nx) throw std::invalid_argument("riccati_rhs: p must be nx x nx");
  const Matrix d = linear.diffusion_factor * linear.diffusion_factor.transpose();
  Matrix rhs = linear.a_matrix * p + p * linear.a_matrix.transpose() + 2.0 * symmetrize(d) -
               p * hth_over_r(linear) * p;
  return symmetrize(rhs);
}

std::vector<Matrix> integrate_riccati(const Matrix& p0, const LinearModelSpec& linear, double dt,
                                      long n_steps) {
  if (dt <= 0.0) throw std::invalid_argument("integrate_riccati: dt must be > 0");
  std::vector<Matrix> out;
  out.reserve(n_steps + 1);
  Matrix p = symmetrize(p0);
  out.push_back(p);
  for (long n = 0; n < n_steps; ++n) {
    const Matrix k1 = riccati_rhs(p, linear);
    const Matrix k2 = riccati_rhs(p + 0.5 * dt * k1, linear);
    const Matrix k3 = riccati_rhs(p + 0.5 * dt * k2, linear);
    const Matrix k4 = riccati_rhs(p + dt * k3, linear);
    p = symmetrize(p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    if (!p.allFinite()) throw DivergenceError("integrate_riccati: non-finite covariance", n + 1);
    out.push_back(p);
  }
  return out;
}

StationaryRiccati stationary_riccati(const LinearModelSpec& linear, double tol, long max_iter) {
  const int nx = linear.nx();
  StationaryRiccati result;
  result.rank_warning =
      observability_rank(linear) < nx || controllability_rank(linear) < nx;

  // Integrate to stationarity; the step is adapted downward whenever a trial
  // step misbehaves (non-finite or residual growing), upward on smooth decay.
  Matrix p = Matrix::Identity(nx, nx);
  double res = frobenius_norm(riccati_rhs(p, linear));
  double dt = 0.1 / (1.0 + linear.a_matrix.norm() + hth_over_r(linear).norm());
  for (long iter = 0; iter < max_iter; ++iter) {
    if (res <= tol * (1.0 + frobenius_norm(p))) {
      result.p_inf = p;
      result.residual = res;
      return result;
    }
    const Matrix k1 = riccati_rhs(p, linear);
    const Matrix k2 = riccati_rhs(p + 0.5 * dt * k1, linear);
    const Matrix k3 = riccati_rhs(p + 0.5 * dt * k2, linear);
    const Matrix k4 = riccati_rhs(p + dt * k3, linear);
    const Matrix trial = symmetrize(p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    if (!trial.allFinite()) {
      dt *= 0.5;
      continue;
    }
    const double trial_res = frobenius_norm(riccati_rhs(trial, linear));
    if (trial_res > res && trial_res > tol * (1.0 + frobenius_norm(trial))) {
      dt *= 0.5;
      continue;
    }
    p = trial;
    res = trial_res;
    dt *= 1.1;
  }
  throw NoConvergenceError("stationary_riccati: residual " + std::to_string(res) +
                           " above tolerance after max_iter steps");
}

GaussianBelief kbf_mean_step(const GaussianBelief& belief, const LinearModelSpec& linear,
                             const Vector& dy, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("kbf_mean_step: dt must be > 0");
  if (belief.mean.size() != linear.nx()) throw std::invalid_argument("kbf_mean_step: mean length");
  if (dy.size() != linear.ny()) throw std::invalid_argument("kbf_mean_step: dy length");
  if (linear.h_matrix.isZero(0.0))
    throw std::invalid_argument("kbf_mean_step: zero H is rejected (no observation gain)");

  const Matrix r_inv = linear.obs_cov.llt().solve(Matrix::Identity(linear.ny(), linear.ny()));
  GaussianBelief next;
  next.mean = belief.mean + dt * (linear.a_matrix * belief.mean + linear.b_vector) -
              belief.cov * linear.h_matrix.transpose() * r_inv *
                  (dt * (linear.h_matrix * belief.mean) - dy);
  next.cov = belief.cov + dt * riccati_rhs(belief.cov, linear);
  return next;
}

int observability_rank(const LinearModelSpec& linear) {
  const int nx = linear.nx();
  const int ny = linear.ny();
  Matrix stacked(nx * ny, nx);
  Matrix block = linear.h_matrix;
  for (int k = 0; k < nx; ++k) {
    stacked.middleRows(k * ny, ny) = block;
    block = block * linear.a_matrix;
  }
  return svd_rank(stacked);
}

int controllability_rank(const LinearModelSpec& linear) {
  const int nx = linear.nx();
  const int nw = linear.nw();
  Matrix stacked(nx, nx * nw);
  Matrix block = linear.diffusion_factor;
  for (int k = 0; k < nx; ++k) {
    stacked.middleCols(k * nw, nw) = block;
    block = linear.a_matrix * block;
  }
  return svd_rank(stacked);
}

double stability_margin(const LinearModelSpec& linear, const Matrix& p_inf) {
  const Matrix closed_loop = linear.a_matrix - p_inf * hth_over_r(linear);
  Eigen::EigenSolver<Matrix> eig(closed_loop);
  double margin = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
    margin = std::min(margin, -eig.eigenvalues()(i).real());
  return margin;
}

}  // namespace enkbf
