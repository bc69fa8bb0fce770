#include "enkbf/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace enkbf {

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double estimation_error(const Vector& x_ref, const Vector& mean) {
  if (x_ref.size() != mean.size())
    throw std::invalid_argument("estimation_error: length mismatch");
  return 0.5 * (x_ref - mean).squaredNorm();
}

std::pair<double, double> eigen_extremes(const Matrix& p) {
  if (p.rows() != p.cols()) throw std::invalid_argument("eigen_extremes: matrix must be square");
  const double scale = p.cwiseAbs().maxCoeff();
  if ((p - p.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (scale > 0 ? scale : 1.0))
    throw std::invalid_argument("eigen_extremes: matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(p, Eigen::EigenvaluesOnly);
  return {eig.eigenvalues().minCoeff(), eig.eigenvalues().maxCoeff()};
}

double v_upper_bound(double v0, double l_plus, double trace_d, double lambda_max_r, int m) {
  if (m < 2) throw std::invalid_argument("v_upper_bound: m must be >= 2");
  if (lambda_max_r <= 0.0) throw std::invalid_argument("v_upper_bound: lambda_max_r must be > 0");
  const double md = static_cast<double>(m);
  const double fixed_point = lambda_max_r * l_plus * md +
                             std::sqrt(std::pow(lambda_max_r * md * l_plus, 2) +
                                       2.0 * lambda_max_r * md * trace_d);
  return std::max(v0, fixed_point);
}

double v_lower_bound(double v0, double l_minus, double lambda_min_r, double lambda_min_d) {
  const double fixed_point =
      lambda_min_r * l_minus +
      std::sqrt(std::pow(lambda_min_r * l_minus, 2) + 2.0 * lambda_min_r * lambda_min_d);
  return std::min(v0, fixed_point);
}

double v_local_bound(double v0, double l_plus, double trace_d, double t) {
  if (l_plus <= 0.0) throw std::invalid_argument("v_local_bound: l_plus must be > 0");
  if (t < 0.0) throw std::invalid_argument("v_local_bound: t must be >= 0");
  return std::exp(2.0 * l_plus * t) * (v0 + trace_d / l_plus);
}

std::pair<double, double> eigenvalue_bound_formulas(double lam0_max, double lam0_min, double f_lip,
                                                    int m, int nx, double lambda_max_d,
                                                    double lambda_min_d, double epsilon) {
  const double nxm = static_cast<double>(nx) * static_cast<double>(m);
  const double lam_max_bound =
      std::max(lam0_max, epsilon * f_lip * std::sqrt(nxm) +
                             std::sqrt(epsilon * epsilon * f_lip * f_lip * nxm +
                                       2.0 * epsilon * lambda_max_d));
  const double c1 = lam_max_bound / std::sqrt(epsilon);
  const double lam_min_bound =
      std::min(lam0_min, -std::pow(epsilon, 1.5) * f_lip * c1 * std::sqrt(nxm) +
                             std::sqrt(std::pow(epsilon, 3) * f_lip * f_lip * c1 * c1 * nxm +
                                       2.0 * epsilon * lambda_min_d));
  return {lam_max_bound, lam_min_bound};
}

BoundEnvelope make_bound_envelope(double v0, double lam0_max, double lam0_min, double l_plus,
                                  double l_minus, double f_lip, int m, int nx, const Matrix& d,
                                  const Matrix& r, double epsilon) {
  const auto [d_min, d_max] = eigen_extremes(d);
  const auto [r_min, r_max] = eigen_extremes(r);
  BoundEnvelope env;
  env.v_upper = v_upper_bound(v0, l_plus, d.trace(), r_max, m);
  env.v_lower = v_lower_bound(v0, l_minus, r_min, d_min);
  const auto [lmax_b, lmin_b] =
      eigenvalue_bound_formulas(lam0_max, lam0_min, f_lip, m, nx, d_max, d_min, epsilon);
  env.lam_max_bound = lmax_b;
  env.lam_min_bound = lmin_b;
  env.l_plus = l_plus;
  env.l_minus = l_minus;
  env.epsilon = epsilon;
  env.m = m;
  env.nx = nx;
  env.lambda_max_d = d_max;
  env.lambda_min_d = d_min;
  return env;
}

std::pair<double, double> dissipativity_estimate(
    const ModelSpec& model, const std::vector<std::pair<Vector, Vector>>& samples) {
  bool any = false;
  double lo = 0.0, hi = 0.0;
  for (const auto& [x, y] : samples) {
    const double denom = (x - y).squaredNorm();
    if (denom == 0.0) continue;
    const double q = (model.drift(x) - model.drift(y)).dot(x - y) / denom;
    if (!any) {
      lo = hi = q;
      any = true;
    } else {
      lo = std::min(lo, q);
      hi = std::max(hi, q);
    }
  }
  if (!any) throw std::invalid_argument("dissipativity_estimate: all sample pairs degenerate");
  return {hi, lo};  // (l_plus_hat, l_minus_hat)
}

double time_average(const std::vector<double>& series, double burn_in_fraction) {
  if (burn_in_fraction < 0.0 || burn_in_fraction >= 1.0)
    throw std::invalid_argument("time_average: burn_in_fraction must be in [0, 1)");
  // The 1e-9 nudge keeps floor() exact when the product is an integer up to
  // roundoff (e.g. len 3, fraction 1/3).
  const size_t skip = static_cast<size_t>(
      std::floor(burn_in_fraction * static_cast<double>(series.size()) + 1e-9));
  if (skip >= series.size())
    throw std::invalid_argument("time_average: series empty after burn-in");
  double sum = 0.0;
  for (size_t i = skip; i < series.size(); ++i) sum += series[i];
  return sum / static_cast<double>(series.size() - skip);
}

std::pair<double, double> loglog_slope(const std::vector<double>& xs,
                                       const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("loglog_slope: need >= 2 paired points");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double n = static_cast<double>(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] <= 0.0 || ys[i] <= 0.0)
      throw std::invalid_argument("loglog_slope: inputs must be positive");
    const double lx = std::log10(xs[i]);
    const double ly = std::log10(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("loglog_slope: degenerate abscissae");
  const double slope = (n * sxy - sx * sy) / denom;
  const double intercept = (sy - slope * sx) / n;
  return {slope, intercept};
}

void write_diagnostics_csv(const std::vector<DiagnosticsRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_diagnostics_csv: cannot open " + path);
  out << "t,e_sq,v,lambda_min,lambda_max,frob_p,trace_p\n";
  for (const auto& r : rows) {
    out << format_double(r.t) << ',' << format_double(r.e_sq) << ',' << format_double(r.v) << ','
        << format_double(r.lambda_min) << ',' << format_double(r.lambda_max) << ','
        << format_double(r.frob_p) << ',' << format_double(r.trace_p) << "\n";
  }
  if (!out) throw std::runtime_error("write_diagnostics_csv: write failed for " + path);
}

}  // namespace enkbf
