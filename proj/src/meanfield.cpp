#include "enkbf/meanfield.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "enkbf/errors.hpp"
#include "enkbf/rng.hpp"
#include "enkbf/truth.hpp"

namespace enkbf {

Ensemble meanfield_step(const Ensemble& particles, const MomentSet& moments,
                        const ModelSpec& model, const Vector& dy, double dt) {
  if (dy.size() != model.ny) throw std::invalid_argument("meanfield_step: dy length");
  if (dt <= 0.0) throw std::invalid_argument("meanfield_step: dt must be > 0");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(moments.cov);
  const double lam_max = eig.eigenvalues().maxCoeff();
  if (eig.eigenvalues().minCoeff() <= 1e-12 * std::max(lam_max, 0.0))
    throw RankDeficiencyError("meanfield_step: singular mean-field covariance");
  Vector inv = eig.eigenvalues().cwiseInverse();
  Matrix cov_inv = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  cov_inv = (0.5 * (cov_inv + cov_inv.transpose())).eval();

  const Matrix d = diffusion_tensor(model);
  const Matrix dev_gain = dt * (d * cov_inv);
  const Matrix obs_gain = 0.5 * (moments.cross_cov * model.obs_cov_inv);

  Ensemble next = particles;
  next.t = particles.t + dt;
  for (int i = 0; i < particles.m; ++i) {
    const Vector xi = particles.particles.col(i);
    next.particles.col(i) =
        xi + dt * model.drift(xi) + dev_gain * (xi - moments.mean) -
        obs_gain * (dt * model.forward_map(xi) + dt * moments.h_mean - 2.0 * dy);
  }
  if (!next.particles.allFinite())
    throw DivergenceError("meanfield_step: non-finite particle", 0);
  return next;
}

namespace {

MomentSet moments_from_belief(const GaussianBelief& belief, const LinearModelSpec& linear) {
  MomentSet ms;
  ms.mean = belief.mean;
  ms.cov = belief.cov;
  ms.h_mean = linear.h_matrix * belief.mean;
  ms.cross_cov = belief.cov * linear.h_matrix.transpose();
  return ms;
}

MomentSet moments_from_stats(const EmpiricalStats& stats) {
  return MomentSet{stats.mean, stats.cov, stats.h_mean, stats.cross_cov};
}

}  // namespace

std::vector<ChaosRow> run_chaos_experiment(const ModelSpec& model, const TruthPath& truth,
                                           const std::vector<int>& m_list, int m_ref, int n_seeds,
                                           const FilterConfig& cfg, const ChaosOptions& options) {
  for (int m : m_list)
    if (m < 2) throw std::invalid_argument("run_chaos_experiment: every M must be >= 2");
  if (n_seeds < 0) throw std::invalid_argument("run_chaos_experiment: n_seeds must be >= 0");
  if (truth.dt != cfg.dt)
    throw std::invalid_argument("run_chaos_experiment: truth.dt must equal cfg.dt");
  if (cfg.n_steps > truth.obs_increments.rows())
    throw std::invalid_argument("run_chaos_experiment: n_steps exceeds truth length");
  const bool jumbo = options.source == MomentSourceKind::jumbo_ensemble;
  if (jumbo) {
    const int max_m = *std::max_element(m_list.begin(), m_list.end());
    if (m_ref < 8 * max_m)
      throw std::invalid_argument("run_chaos_experiment: m_ref must be >= 8*max(m_list)");
  } else if (!options.linear) {
    throw std::invalid_argument("run_chaos_experiment: linear_exact needs a LinearModelSpec");
  }
  if (n_seeds == 0) return {};

  // linear_exact: the belief trajectory depends only on the observation path,
  // so it is computed once and shared by every cell.
  std::vector<MomentSet> exact_moments;
  if (!jumbo) {
    exact_moments.reserve(cfg.n_steps);
    GaussianBelief belief{options.init_mean, options.init_cov};
    for (long n = 0; n < cfg.n_steps; ++n) {
      exact_moments.push_back(moments_from_belief(belief, *options.linear));
      belief = kbf_mean_step(belief, *options.linear, truth.obs_increments.row(n).transpose(), cfg.dt);
    }
  }

  std::vector<ChaosRow> rows;
  for (size_t mi = 0; mi < m_list.size(); ++mi) {
    const int m = m_list[mi];
    std::vector<double> gaps;
    int failed = 0;
    for (int s = 0; s < n_seeds; ++s) {
      const std::uint64_t cell_seed =
          mix_seed(options.master_seed, static_cast<std::uint64_t>(mi) * n_seeds + s);
      try {
        Ensemble enkbf_sys =
            sample_gaussian_ensemble(options.init_mean, options.init_cov, m, 0.0, cell_seed);
        Ensemble mf_sys = enkbf_sys;
        // Per-seed jumbo reference, independent of the cell particles.
        Ensemble ref;
        if (jumbo)
          ref = sample_gaussian_ensemble(options.init_mean, options.init_cov, m_ref, 0.0,
                                         mix_seed(cell_seed, 0x6a756d626full));
        for (long n = 0; n < cfg.n_steps; ++n) {
          const Vector dy = truth.obs_increments.row(n).transpose();
          const MomentSet moments =
              jumbo ? moments_from_stats(empirical_stats(ref, model)) : exact_moments[n];
          enkbf_sys = enkbf_step_general(enkbf_sys, model, dy, cfg.dt, cfg.pinv_rel_tol);
          mf_sys = meanfield_step(mf_sys, moments, model, dy, cfg.dt);
          if (jumbo) ref = enkbf_step_general(ref, model, dy, cfg.dt, cfg.pinv_rel_tol);
        }
        double gap = 0.0;
        for (int i = 0; i < m; ++i)
          gap += (enkbf_sys.particles.col(i) - mf_sys.particles.col(i)).squaredNorm();
        gaps.push_back(gap / static_cast<double>(m));
      } catch (const std::exception&) {
        ++failed;
      }
    }
    ChaosRow row;
    row.m = m;
    row.seeds_used = static_cast<int>(gaps.size());
    row.seeds_failed = failed;
    if (!gaps.empty()) {
      double sum = 0.0;
      for (double g : gaps) sum += g;
      row.mean_gap = sum / static_cast<double>(gaps.size());
      if (gaps.size() > 1) {
        double ss = 0.0;
        for (double g : gaps) ss += (g - row.mean_gap) * (g - row.mean_gap);
        row.stderr_gap = std::sqrt(ss / (static_cast<double>(gaps.size()) - 1.0)) /
                         std::sqrt(static_cast<double>(gaps.size()));
      }
    }
    rows.push_back(row);
  }
  return rows;
}

MeanfieldCondition check_meanfield_condition(const ModelSpec& model, double f_lip, double h_lip,
                                             double c4) {
  if (f_lip < 0.0 || h_lip <= 0.0 || c4 <= 0.0)
    throw std::invalid_argument("check_meanfield_condition: bad constants");
  const Matrix d = diffusion_tensor(model);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(d, Eigen::EigenvaluesOnly);
  const double lam_min_d = eig.eigenvalues().minCoeff();
  const double r_inv_frob = frobenius_norm(model.obs_cov_inv);
  const double lhs = f_lip * f_lip;
  const double rhs = 2.0 * lam_min_d * r_inv_frob * h_lip * h_lip;
  MeanfieldCondition out;
  out.satisfied = lhs < rhs;
  out.kappa_minus =
      (rhs - lhs) / (2.0 * r_inv_frob * r_inv_frob * std::pow(h_lip, 4) * c4);
  return out;
}

Ensemble sample_gaussian_ensemble(const Vector& mean, const Matrix& cov, int m, double t0,
                                  std::uint64_t seed) {
  if (m < 2) throw std::invalid_argument("sample_gaussian_ensemble: M must be >= 2");
  const Matrix root = sqrt_psd(cov);
  GaussianStream stream(mix_seed(seed, 2));
  Ensemble ens;
  ens.m = m;
  ens.t = t0;
  ens.particles.resize(mean.size(), m);
  for (int i = 0; i < m; ++i)
    ens.particles.col(i) = mean + root * stream.vector(mean.size());
  return ens;
}

void write_chaos_csv(const std::vector<ChaosRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_chaos_csv: cannot open " + path);
  out << "M,seeds_used,mean_gap,stderr_gap\n";
  for (const auto& r : rows)
    out << r.m << ',' << r.seeds_used << ',' << format_double(r.mean_gap) << ','
        << format_double(r.stderr_gap) << "\n";
  if (!out) throw std::runtime_error("write_chaos_csv: write failed for " + path);
}

}  // namespace enkbf
