#include "enkbf/truth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "enkbf/errors.hpp"
#include "enkbf/rng.hpp"

namespace enkbf {

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

TruthPath simulate_truth(const ModelSpec& model, const Vector& x0, double dt, long n_steps,
                         std::uint64_t seed) {
  if (dt <= 0.0) throw std::invalid_argument("simulate_truth: dt must be > 0");
  if (x0.size() != model.nx) throw std::invalid_argument("simulate_truth: x0 has wrong length");
  if (!x0.allFinite()) throw std::invalid_argument("simulate_truth: x0 must be finite");
  if (n_steps < 0) throw std::invalid_argument("simulate_truth: n_steps must be >= 0");

  GaussianStream signal(mix_seed(seed, 0));
  GaussianStream obs(mix_seed(seed, 1));
  const double sqrt_dt = std::sqrt(dt);
  const Matrix sqrt2_c = std::sqrt(2.0) * model.diffusion_factor;
  const Matrix r_half = sqrt_psd(model.obs_cov);

  TruthPath truth;
  truth.dt = dt;
  truth.seed = seed;
  truth.states.resize(n_steps + 1, model.nx);
  truth.obs_increments.resize(n_steps, model.ny);
  truth.states.row(0) = x0.transpose();

  Vector x = x0;
  for (long n = 0; n < n_steps; ++n) {
    truth.obs_increments.row(n) =
        (dt * model.forward_map(x) + r_half * (sqrt_dt * obs.vector(model.ny))).transpose();
    x += dt * model.drift(x) + sqrt2_c * (sqrt_dt * signal.vector(model.nw));
    if (!x.allFinite()) throw DivergenceError("simulate_truth: non-finite state", n + 1);
    truth.states.row(n + 1) = x.transpose();
  }
  return truth;
}

Matrix sqrt_psd(const Matrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("sqrt_psd: matrix must be square");
  const double scale = m.cwiseAbs().maxCoeff();
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (scale > 0 ? scale : 1.0))
    throw std::invalid_argument("sqrt_psd: matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const double lam_max = eig.eigenvalues().size() ? eig.eigenvalues().cwiseAbs().maxCoeff() : 0.0;
  Vector roots = eig.eigenvalues();
  for (Eigen::Index i = 0; i < roots.size(); ++i) {
    if (roots(i) < -1e-12 * lam_max)
      throw std::invalid_argument("sqrt_psd: matrix is not positive semidefinite");
    roots(i) = std::sqrt(roots(i) < 0.0 ? 0.0 : roots(i));
  }
  Matrix s = eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
  s = 0.5 * (s + s.transpose()).eval();
  return s;
}

void write_truth_csv(const TruthPath& truth, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_truth_csv: cannot open " + path);
  const Eigen::Index nx = truth.states.cols();
  const Eigen::Index ny = truth.obs_increments.cols();
  out << "t";
  for (Eigen::Index k = 0; k < nx; ++k) out << ",x_" << (k + 1);
  for (Eigen::Index k = 0; k < ny; ++k) out << ",dy_" << (k + 1);
  out << "\n";
  for (Eigen::Index n = 0; n < truth.states.rows(); ++n) {
    out << fmt17(static_cast<double>(n) * truth.dt);
    for (Eigen::Index k = 0; k < nx; ++k) out << "," << fmt17(truth.states(n, k));
    for (Eigen::Index k = 0; k < ny; ++k) {
      out << ",";
      if (n < truth.obs_increments.rows()) out << fmt17(truth.obs_increments(n, k));
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write_truth_csv: write failed for " + path);
}

}  // namespace enkbf
