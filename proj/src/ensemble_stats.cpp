#include "enkbf/ensemble_stats.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace enkbf {

EmpiricalStats empirical_stats(const Ensemble& ens, const ModelSpec& model) {
  const int m = ens.m;
  const int nx = model.nx;
  const int ny = model.ny;
  if (m < 2) throw std::invalid_argument("empirical_stats: M must be >= 2");
  if (ens.particles.rows() != nx || ens.particles.cols() != m)
    throw std::invalid_argument("empirical_stats: particle matrix must be nx x M");

  EmpiricalStats stats;
  stats.mean = Vector::Zero(nx);
  for (int i = 0; i < m; ++i) stats.mean += ens.particles.col(i);
  stats.mean /= static_cast<double>(m);

  const double norm = 1.0 / static_cast<double>(m - 1);
  stats.cov = Matrix::Zero(nx, nx);
  stats.v = 0.0;
  Matrix h_devs(ny, m);
  stats.h_mean = Vector::Zero(ny);
  for (int i = 0; i < m; ++i) {
    h_devs.col(i) = model.forward_map(ens.particles.col(i));
    stats.h_mean += h_devs.col(i);
  }
  stats.h_mean /= static_cast<double>(m);

  Vector d(nx);
  for (int i = 0; i < m; ++i) {
    d = ens.particles.col(i) - stats.mean;
    stats.cov += d * d.transpose();
    stats.v += d.squaredNorm();
  }
  stats.cov *= norm;
  stats.cov = (0.5 * (stats.cov + stats.cov.transpose())).eval();
  stats.v *= norm;

  stats.cross_cov = Matrix::Zero(nx, ny);
  for (int i = 0; i < m; ++i)
    stats.cross_cov += (ens.particles.col(i) - stats.mean) * (h_devs.col(i) - stats.h_mean).transpose();
  stats.cross_cov *= norm;
  return stats;
}

Matrix pseudo_inverse(const Matrix& p, double rel_tol) {
  if (p.rows() != p.cols()) throw std::invalid_argument("pseudo_inverse: matrix must be square");
  if (rel_tol <= 0.0 || rel_tol >= 1.0)
    throw std::invalid_argument("pseudo_inverse: rel_tol must be in (0, 1)");
  const double scale = p.cwiseAbs().maxCoeff();
  if ((p - p.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (scale > 0 ? scale : 1.0))
    throw std::invalid_argument("pseudo_inverse: matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(p);
  const double lam_max = eig.eigenvalues().maxCoeff();
  Vector inv = eig.eigenvalues();
  for (Eigen::Index i = 0; i < inv.size(); ++i)
    inv(i) = inv(i) <= rel_tol * lam_max ? 0.0 : 1.0 / inv(i);
  Matrix out = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  out = (0.5 * (out + out.transpose())).eval();
  return out;
}

double frobenius_norm(const Matrix& m) { return std::sqrt(m.array().square().sum()); }

}  // namespace enkbf
