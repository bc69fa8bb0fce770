#include "enkbf/enkbf.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "enkbf/errors.hpp"
#include "enkbf/kbf.hpp"

namespace enkbf {

namespace {

Matrix pinv_from_eig(const Eigen::SelfAdjointEigenSolver<Matrix>& eig, double rel_tol) {
  const double lam_max = eig.eigenvalues().maxCoeff();
  Vector inv = eig.eigenvalues();
  for (Eigen::Index i = 0; i < inv.size(); ++i)
    inv(i) = inv(i) <= rel_tol * lam_max ? 0.0 : 1.0 / inv(i);
  Matrix out = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

// Infers eps from R = eps*I; rejects models the fully-observed scheme does not cover.
double check_fully_observed(const ModelSpec& model, std::optional<double> epsilon) {
  if (!model.identity_h)
    throw std::invalid_argument("fully_observed scheme requires h(x) = x");
  const double eps = epsilon ? *epsilon : model.obs_cov(0, 0);
  if (eps <= 0.0) throw std::invalid_argument("fully_observed scheme: epsilon must be > 0");
  const Matrix expected = eps * Matrix::Identity(model.ny, model.ny);
  if ((model.obs_cov - expected).cwiseAbs().maxCoeff() > 1e-12 * eps)
    throw std::invalid_argument("fully_observed scheme requires R = eps*I");
  return eps;
}

}  // namespace

Ensemble enkbf_step_general(const Ensemble& ens, const ModelSpec& model, const Vector& dy,
                            double dt, double pinv_rel_tol) {
  if (dy.size() != model.ny) throw std::invalid_argument("enkbf_step_general: dy length");
  if (dt <= 0.0) throw std::invalid_argument("enkbf_step_general: dt must be > 0");
  const EmpiricalStats stats = empirical_stats(ens, model);
  const Matrix d = diffusion_tensor(model);
  const Matrix p_plus = pseudo_inverse(stats.cov, pinv_rel_tol);
  const Matrix dev_gain = dt * (d * p_plus);                       // dt D P^+
  const Matrix obs_gain = 0.5 * (stats.cross_cov * model.obs_cov_inv);  // 1/2 Q R^{-1}

  Ensemble next = ens;
  next.t = ens.t + dt;
  for (int i = 0; i < ens.m; ++i) {
    const Vector xi = ens.particles.col(i);
    next.particles.col(i) = xi + dt * model.drift(xi) + dev_gain * (xi - stats.mean) -
                            obs_gain * (dt * model.forward_map(xi) + dt * stats.h_mean - 2.0 * dy);
  }
  if (!next.particles.allFinite())
    throw DivergenceError("enkbf_step_general: non-finite particle", 0);
  return next;
}

Ensemble enkbf_step_fully_observed(const Ensemble& ens, const ModelSpec& model, double epsilon,
                                   const Vector& dy, double dt, double pinv_rel_tol) {
  if (dy.size() != model.ny) throw std::invalid_argument("enkbf_step_fully_observed: dy length");
  if (dt <= 0.0) throw std::invalid_argument("enkbf_step_fully_observed: dt must be > 0");
  check_fully_observed(model, epsilon);
  const EmpiricalStats stats = empirical_stats(ens, model);
  const Matrix d = diffusion_tensor(model);
  const Matrix p_plus = pseudo_inverse(stats.cov, pinv_rel_tol);
  const Matrix dev_gain = dt * (d * p_plus);
  // K = P (P + (eps/dt) I)^{-1}; both factors symmetric, so K = solve(B, P)^T.
  const Matrix reg = stats.cov + (epsilon / dt) * Matrix::Identity(model.nx, model.nx);
  const Matrix obs_gain = 0.5 * reg.llt().solve(stats.cov).transpose();

  Ensemble next = ens;
  next.t = ens.t + dt;
  const Vector shift = stats.mean - (2.0 / dt) * dy;
  for (int i = 0; i < ens.m; ++i) {
    const Vector xi = ens.particles.col(i);
    next.particles.col(i) =
        xi + dt * model.drift(xi) + dev_gain * (xi - stats.mean) - obs_gain * (xi + shift);
  }
  if (!next.particles.allFinite())
    throw DivergenceError("enkbf_step_fully_observed: non-finite particle", 0);
  return next;
}

Matrix covariance_rhs(const EmpiricalStats& stats, const LinearModelSpec& linear) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(stats.cov, Eigen::EigenvaluesOnly);
  const double lam_max = eig.eigenvalues().maxCoeff();
  if (eig.eigenvalues().minCoeff() <= 1e-12 * std::max(lam_max, 0.0))
    throw RankDeficiencyError("covariance_rhs: empirical covariance is singular");
  return riccati_rhs(stats.cov, linear);
}

FilterRun run_filter(const ModelSpec& model, const TruthPath& truth, const FilterConfig& cfg,
                     const Ensemble& init, std::optional<double> epsilon) {
  if (truth.dt != cfg.dt) throw std::invalid_argument("run_filter: truth.dt must equal cfg.dt");
  if (init.m != cfg.m) throw std::invalid_argument("run_filter: init.m must equal cfg.m");
  if (cfg.record_every < 1) throw std::invalid_argument("run_filter: record_every must be >= 1");
  if (cfg.n_steps < 0 || cfg.n_steps > truth.obs_increments.rows())
    throw std::invalid_argument("run_filter: n_steps exceeds truth length");
  const bool fully_observed = cfg.scheme == FilterScheme::fully_observed_regularized;
  const double eps = fully_observed ? check_fully_observed(model, epsilon) : 0.0;

  const int nx = model.nx;
  const Matrix d = diffusion_tensor(model);
  const Matrix identity = Matrix::Identity(nx, nx);

  FilterRun run;
  const long n_records = cfg.n_steps / cfg.record_every + 2;
  run.times.reserve(n_records);
  run.means.reserve(n_records);
  run.diags.reserve(n_records);

  Ensemble ens = init;
  ens.t = 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(nx);
  Eigen::LLT<Matrix> llt(nx);
  Matrix next_particles(nx, cfg.m);
  Matrix dev_gain(nx, nx), obs_gain(nx, nx), reg(nx, nx);
  Vector shift(nx), xi(nx);

  for (long n = 0; n <= cfg.n_steps; ++n) {
    const EmpiricalStats stats = empirical_stats(ens, model);
    if (!ens.particles.allFinite() || !std::isfinite(stats.v) || stats.v > 1e12)
      throw DivergenceError("run_filter: ensemble diverged", n);
    eig.compute(stats.cov);

    if (n % cfg.record_every == 0 || n == cfg.n_steps) {
      DiagnosticsRow row;
      row.t = static_cast<double>(n) * cfg.dt;
      row.e_sq = estimation_error(truth.states.row(n).transpose(), stats.mean);
      row.v = stats.v;
      row.lambda_min = eig.eigenvalues().minCoeff();
      row.lambda_max = eig.eigenvalues().maxCoeff();
      row.frob_p = frobenius_norm(stats.cov);
      row.trace_p = stats.cov.trace();
      run.times.push_back(row.t);
      run.means.push_back(stats.mean);
      run.diags.push_back(row);
    }
    if (n == cfg.n_steps) break;

    const Vector dy = truth.obs_increments.row(n).transpose();
    dev_gain.noalias() = cfg.dt * (d * pinv_from_eig(eig, cfg.pinv_rel_tol));
    if (fully_observed) {
      reg = stats.cov + (eps / cfg.dt) * identity;
      llt.compute(reg);
      obs_gain.noalias() = 0.5 * llt.solve(stats.cov).transpose();
      shift = stats.mean - (2.0 / cfg.dt) * dy;
      for (int i = 0; i < cfg.m; ++i) {
        xi = ens.particles.col(i);
        next_particles.col(i) =
            xi + cfg.dt * model.drift(xi) + dev_gain * (xi - stats.mean) - obs_gain * (xi + shift);
      }
    } else {
      obs_gain.resize(nx, model.ny);
      obs_gain.noalias() = 0.5 * (stats.cross_cov * model.obs_cov_inv);
      for (int i = 0; i < cfg.m; ++i) {
        xi = ens.particles.col(i);
        next_particles.col(i) =
            xi + cfg.dt * model.drift(xi) + dev_gain * (xi - stats.mean) -
            obs_gain * (cfg.dt * model.forward_map(xi) + cfg.dt * stats.h_mean - 2.0 * dy);
      }
    }
    ens.particles = next_particles;
    ens.t += cfg.dt;
  }
  run.final_ensemble = ens;
  return run;
}

}  // namespace enkbf
