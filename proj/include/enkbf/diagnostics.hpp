#pragma once

#include <string>
#include <utility>
#include <vector>

#include "enkbf/model.hpp"

namespace enkbf {

// One recorded observation of a filter run. e_sq carries the 1/2 factor:
// E_t = ||x_ref - xbar||^2 / 2.
struct DiagnosticsRow {
  double t = 0.0;
  double e_sq = 0.0;
  double v = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double frob_p = 0.0;
  double trace_p = 0.0;
};

// The closed-form bound expressions evaluated for one (model, run) setup, with
// the inputs echoed so a stored envelope is self-describing.
struct BoundEnvelope {
  double v_upper = 0.0;
  double v_lower = 0.0;
  double lam_max_bound = 0.0;
  double lam_min_bound = 0.0;
  double l_plus = 0.0;
  double l_minus = 0.0;
  double epsilon = 0.0;
  int m = 0;
  int nx = 0;
  double lambda_max_d = 0.0;
  double lambda_min_d = 0.0;
};

double estimation_error(const Vector& x_ref, const Vector& mean);

// Extreme eigenvalues of a symmetric matrix (asymmetry beyond 1e-10*||p|| is an
// error). Returns (lambda_min, lambda_max).
std::pair<double, double> eigen_extremes(const Matrix& p);

// Uniform-in-t spread bound:
//   max{ v0, lam_max(R) L+ M + sqrt((lam_max(R) M L+)^2 + 2 lam_max(R) M tr D) }
double v_upper_bound(double v0, double l_plus, double trace_d, double lambda_max_r, int m);

// Spread lower bound, same fixed-point structure with (L-, lam_min):
//   min{ v0, lam_min(R) L- + sqrt((lam_min(R) L-)^2 + 2 lam_min(R) lam_min(D)) }
double v_lower_bound(double v0, double l_minus, double lambda_min_r, double lambda_min_d);

// Local-in-time bound e^{2 L+ t} (v0 + tr D / L+); requires L+ > 0.
double v_local_bound(double v0, double l_plus, double trace_d, double t);

// Small-eps eigenvalue envelopes:
//   lam_max_bound = max{ lam0_max, eps f_lip sqrt(nx m) + sqrt(eps^2 f_lip^2 nx m + 2 eps lam_max(D)) }
//   with C1 = lam_max_bound / sqrt(eps):
//   lam_min_bound = min{ lam0_min, -eps^{3/2} f_lip C1 sqrt(nx m) + sqrt(eps^3 f_lip^2 C1^2 nx m + 2 eps lam_min(D)) }
std::pair<double, double> eigenvalue_bound_formulas(double lam0_max, double lam0_min, double f_lip,
                                                    int m, int nx, double lambda_max_d,
                                                    double lambda_min_d, double epsilon);

BoundEnvelope make_bound_envelope(double v0, double lam0_max, double lam0_min, double l_plus,
                                  double l_minus, double f_lip, int m, int nx, const Matrix& d,
                                  const Matrix& r, double epsilon);

// Empirical dissipativity constants: max / min over sample pairs of
// <f(x)-f(y), x-y> / ||x-y||^2. Pairs with x = y are skipped.
std::pair<double, double> dissipativity_estimate(const ModelSpec& model,
                                                 const std::vector<std::pair<Vector, Vector>>& samples);

// Mean after discarding the first floor(burn_in_fraction * len) entries.
double time_average(const std::vector<double>& series, double burn_in_fraction);

// OLS fit of log10(y) against log10(x); returns (slope, intercept).
std::pair<double, double> loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys);

// CSV: t,e_sq,v,lambda_min,lambda_max,frob_p,trace_p at 17 significant digits.
void write_diagnostics_csv(const std::vector<DiagnosticsRow>& rows, const std::string& path);

// %.17g formatting used by every CSV/JSON writer in the project.
std::string format_double(double x);

}  // namespace enkbf
