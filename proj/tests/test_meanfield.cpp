#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "enkbf/enkbf.hpp"
#include "enkbf/errors.hpp"
#include "enkbf/kbf.hpp"
#include "enkbf/meanfield.hpp"
#include "enkbf/model.hpp"
#include "enkbf/truth.hpp"

using enkbf::Ensemble;
using enkbf::Matrix;
using enkbf::MomentSet;
using enkbf::Vector;

namespace {

enkbf::LinearModelSpec scalar_linear(double a, double c, double r) {
  enkbf::LinearModelSpec linear;
  linear.a_matrix = Matrix::Constant(1, 1, a);
  linear.b_vector = Vector::Zero(1);
  linear.h_matrix = Matrix::Identity(1, 1);
  linear.diffusion_factor = Matrix::Constant(1, 1, c);
  linear.obs_cov = Matrix::Constant(1, 1, r);
  return linear;
}

enkbf::ModelSpec diffusion_only_model(int nx, double eps) {
  auto zero = [nx](const Vector&) { return Vector::Zero(nx); };
  auto id = [](const Vector& x) { return x; };
  return enkbf::make_model(nx, nx, nx, zero, Matrix::Identity(nx, nx), id,
                           eps * Matrix::Identity(nx, nx), /*identity_h=*/true);
}

MomentSet moments_of(const enkbf::EmpiricalStats& stats) {
  return MomentSet{stats.mean, stats.cov, stats.h_mean, stats.cross_cov};
}

}  // namespace

TEST_SUITE("meanfield") {

TEST_CASE("feeding back empirical moments reproduces the interacting step") {
  const auto model = enkbf::lorenz63_model(0.1);
  const auto ens = enkbf::sample_gaussian_ensemble(Vector::Zero(3), 4.0 * Matrix::Identity(3, 3),
                                                   12, 0.0, 51);
  Vector dy(3);
  dy << 0.02, -0.01, 0.03;
  const auto stats = enkbf::empirical_stats(ens, model);
  const auto direct = enkbf::enkbf_step_general(ens, model, dy, 1e-3);
  const auto mf = enkbf::meanfield_step(ens, moments_of(stats), model, dy, 1e-3);
  CHECK(mf.particles == direct.particles);
  CHECK(mf.t == direct.t);
}

TEST_CASE("a particle sitting at the law's mean does not move") {
  const auto model = diffusion_only_model(2, 1.0);
  Vector mu(2);
  mu << 1.5, -0.25;
  Ensemble ens;
  ens.particles = Matrix(2, 2);
  ens.particles.col(0) = mu;
  ens.particles.col(1) = mu;
  ens.m = 2;
  MomentSet moments;
  moments.mean = mu;
  moments.cov = Matrix::Identity(2, 2);  // external moments, full rank on purpose
  moments.h_mean = mu;
  moments.cross_cov = Matrix::Identity(2, 2);
  const double dt = 0.05;
  const Vector dy = dt * mu;  // innovation-free observation increment
  const auto next = enkbf::meanfield_step(ens, moments, model, dy, dt);
  CHECK(next.particles == ens.particles);
}

TEST_CASE("meanfield_step rejects singular moment covariances and bad inputs") {
  const auto model = diffusion_only_model(2, 1.0);
  Ensemble ens;
  ens.particles = Matrix::Zero(2, 2);
  ens.particles(0, 0) = 1.0;
  ens.m = 2;
  MomentSet moments;
  moments.mean = Vector::Zero(2);
  moments.cov = Matrix::Zero(2, 2);
  moments.cov(0, 0) = 1.0;  // rank 1
  moments.h_mean = Vector::Zero(2);
  moments.cross_cov = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(enkbf::meanfield_step(ens, moments, model, Vector::Zero(2), 0.1),
                  enkbf::RankDeficiencyError);

  moments.cov = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(enkbf::meanfield_step(ens, moments, model, Vector::Zero(1), 0.1),
                  std::invalid_argument);
  CHECK_THROWS_AS(enkbf::meanfield_step(ens, moments, model, Vector::Zero(2), 0.0),
                  std::invalid_argument);
}

TEST_CASE("coupled loop with shared moments never separates") {
  const auto lin = scalar_linear(0.0, 1.0, 1.0);
  const auto model = enkbf::linear_model(lin);
  const auto truth = enkbf::simulate_truth(model, Vector::Zero(1), 0.01, 50, 19);
  Ensemble interacting = enkbf::sample_gaussian_ensemble(Vector::Zero(1),
                                                         Matrix::Identity(1, 1), 6, 0.0, 67);
  Ensemble meanfield = interacting;
  for (long n = 0; n < 50; ++n) {
    const Vector dy = truth.obs_increments.row(n).transpose();
    const auto stats = enkbf::empirical_stats(interacting, model);
    interacting = enkbf::enkbf_step_general(interacting, model, dy, 0.01);
    meanfield = enkbf::meanfield_step(meanfield, moments_of(stats), model, dy, 0.01);
  }
  CHECK((interacting.particles - meanfield.particles).norm() == 0.0);
}

TEST_CASE("linear chaos gap shrinks as M grows") {
  const auto lin = scalar_linear(0.0, std::sqrt(0.5), 1.0);
  const auto model = enkbf::linear_model(lin);
  const double dt = 1e-3;
  const long n_steps = 300;
  const auto truth = enkbf::simulate_truth(model, Vector::Zero(1), dt, n_steps, 11);

  enkbf::FilterConfig cfg;
  cfg.dt = dt;
  cfg.n_steps = n_steps;
  enkbf::ChaosOptions options;
  options.source = enkbf::MomentSourceKind::linear_exact;
  options.linear = lin;
  options.init_mean = Vector::Zero(1);
  options.init_cov = 4.0 * Matrix::Identity(1, 1);
  options.master_seed = 7;

  const auto rows = enkbf::run_chaos_experiment(model, truth, {8, 32}, 0, 5, cfg, options);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].m == 8);
  CHECK(rows[1].m == 32);
  for (const auto& row : rows) {
    CHECK(row.seeds_used == 5);
    CHECK(row.seeds_failed == 0);
    CHECK(row.mean_gap > 0.0);
    CHECK(row.stderr_gap > 0.0);
    CHECK(std::isfinite(row.mean_gap));
  }
  CHECK(rows[1].mean_gap < rows[0].mean_gap);

  // zero seeds asks for nothing and yields nothing
  CHECK(enkbf::run_chaos_experiment(model, truth, {8, 32}, 0, 0, cfg, options).empty());

  // identical call is bit-identical
  const auto again = enkbf::run_chaos_experiment(model, truth, {8, 32}, 0, 5, cfg, options);
  CHECK(again[0].mean_gap == rows[0].mean_gap);
  CHECK(again[1].stderr_gap == rows[1].stderr_gap);
}

TEST_CASE("jumbo-ensemble moments drive the nonlinear chaos experiment") {
  const auto model = enkbf::lorenz63_model(0.1);
  Vector x0(3);
  x0 << -5.9, -5.6, 24.4;
  const double dt = 1e-3;
  const auto truth = enkbf::simulate_truth(model, x0, dt, 100, 3);
  enkbf::FilterConfig cfg;
  cfg.dt = dt;
  cfg.n_steps = 100;
  enkbf::ChaosOptions options;
  options.source = enkbf::MomentSourceKind::jumbo_ensemble;
  options.init_mean = x0;
  options.init_cov = 0.01 * Matrix::Identity(3, 3);
  options.master_seed = 21;
  const auto rows = enkbf::run_chaos_experiment(model, truth, {4}, 32, 2, cfg, options);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].seeds_used + rows[0].seeds_failed == 2);
  CHECK(rows[0].seeds_used > 0);
  CHECK(std::isfinite(rows[0].mean_gap));
  CHECK(rows[0].mean_gap >= 0.0);
}

TEST_CASE("chaos experiment validates its configuration") {
  const auto lin = scalar_linear(0.0, 1.0, 1.0);
  const auto model = enkbf::linear_model(lin);
  const auto truth = enkbf::simulate_truth(model, Vector::Zero(1), 0.01, 20, 1);
  enkbf::FilterConfig cfg;
  cfg.dt = 0.01;
  cfg.n_steps = 20;
  enkbf::ChaosOptions options;
  options.source = enkbf::MomentSourceKind::linear_exact;
  options.linear = lin;
  options.init_mean = Vector::Zero(1);
  options.init_cov = Matrix::Identity(1, 1);

  CHECK_THROWS_AS(enkbf::run_chaos_experiment(model, truth, {1, 8}, 0, 2, cfg, options),
                  std::invalid_argument);
  CHECK_THROWS_AS(enkbf::run_chaos_experiment(model, truth, {8}, 0, -1, cfg, options),
                  std::invalid_argument);

  auto no_linear = options;
  no_linear.linear.reset();
  CHECK_THROWS_AS(enkbf::run_chaos_experiment(model, truth, {8}, 0, 2, cfg, no_linear),
                  std::invalid_argument);

  auto jumbo = options;
  jumbo.source = enkbf::MomentSourceKind::jumbo_ensemble;
  CHECK_THROWS_AS(enkbf::run_chaos_experiment(model, truth, {8}, 63, 2, cfg, jumbo),
                  std::invalid_argument);  // m_ref below 8*max(m_list)

  auto bad_dt = cfg;
  bad_dt.dt = 0.02;
  CHECK_THROWS_AS(enkbf::run_chaos_experiment(model, truth, {8}, 0, 2, bad_dt, options),
                  std::invalid_argument);
  auto too_long = cfg;
  too_long.n_steps = 21;
  CHECK_THROWS_AS(enkbf::run_chaos_experiment(model, truth, {8}, 0, 2, too_long, options),
                  std::invalid_argument);
}

TEST_CASE("well-posedness condition hand values") {
  const auto model = diffusion_only_model(1, 1.0);  // D = I, R = I
  const auto c1 = enkbf::check_meanfield_condition(model, 1.0, 1.0, 1.0);
  CHECK(c1.satisfied);
  CHECK(c1.kappa_minus == doctest::Approx(0.5).epsilon(1e-14));

  const auto c2 = enkbf::check_meanfield_condition(model, 0.0, 1.0, 1.0);
  CHECK(c2.satisfied);
  CHECK(c2.kappa_minus == doctest::Approx(1.0).epsilon(1e-14));

  const auto noisy = diffusion_only_model(1, 100.0);  // weak observations
  const auto c3 = enkbf::check_meanfield_condition(noisy, 1.0, 1.0, 1.0);
  CHECK_FALSE(c3.satisfied);
  CHECK(c3.kappa_minus < 0.0);

  CHECK_THROWS_AS(enkbf::check_meanfield_condition(model, -1.0, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(enkbf::check_meanfield_condition(model, 1.0, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(enkbf::check_meanfield_condition(model, 1.0, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("gaussian ensemble sampling moments and determinism") {
  Vector mu(1);
  mu << 3.0;
  const Matrix cov = 4.0 * Matrix::Identity(1, 1);
  const auto ens = enkbf::sample_gaussian_ensemble(mu, cov, 20000, 1.25, 2024);
  CHECK(ens.m == 20000);
  CHECK(ens.t == 1.25);
  const double mean = ens.particles.row(0).mean();
  double var = 0.0;
  for (int i = 0; i < ens.m; ++i) var += (ens.particles(0, i) - mean) * (ens.particles(0, i) - mean);
  var /= (ens.m - 1);
  CHECK(std::abs(mean - 3.0) < 0.05);
  CHECK(std::abs(var - 4.0) < 0.15);

  const auto again = enkbf::sample_gaussian_ensemble(mu, cov, 20000, 1.25, 2024);
  CHECK(again.particles == ens.particles);
  const auto other = enkbf::sample_gaussian_ensemble(mu, cov, 20000, 1.25, 2025);
  CHECK(other.particles != ens.particles);

  CHECK_THROWS_AS(enkbf::sample_gaussian_ensemble(mu, cov, 1, 0.0, 1), std::invalid_argument);
}

TEST_CASE("streams from different seeds are decorrelated") {
  const Vector mu = Vector::Zero(1);
  const Matrix cov = Matrix::Identity(1, 1);
  const int n = 200;
  double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
  for (int s = 0; s < n; ++s) {
    const double a = enkbf::sample_gaussian_ensemble(mu, cov, 2, 0.0, 2 * s).particles(0, 0);
    const double b = enkbf::sample_gaussian_ensemble(mu, cov, 2, 0.0, 2 * s + 1).particles(0, 0);
    sa += a;
    sb += b;
    saa += a * a;
    sbb += b * b;
    sab += a * b;
  }
  const double cov_ab = sab / n - (sa / n) * (sb / n);
  const double var_a = saa / n - (sa / n) * (sa / n);
  const double var_b = sbb / n - (sb / n) * (sb / n);
  const double corr = cov_ab / std::sqrt(var_a * var_b);
  CHECK(std::abs(corr) < 0.25);  // ~3/sqrt(n)
}

TEST_CASE("chaos csv layout") {
  std::vector<enkbf::ChaosRow> rows(2);
  rows[0].m = 8;
  rows[0].seeds_used = 5;
  rows[0].seeds_failed = 0;
  rows[0].mean_gap = 0.5;
  rows[0].stderr_gap = 0.1;
  rows[1].m = 32;
  rows[1].seeds_used = 4;
  rows[1].seeds_failed = 1;
  rows[1].mean_gap = 1.0 / 3.0;
  rows[1].stderr_gap = 0.0;
  const auto path = (std::filesystem::temp_directory_path() / "enkbf_test_chaos.csv").string();
  enkbf::write_chaos_csv(rows, path);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line == "M,seeds_used,mean_gap,stderr_gap");
  std::getline(in, line);
  {
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    CHECK(field == "8");
    std::getline(ss, field, ',');
    CHECK(field == "5");
    std::getline(ss, field, ',');
    CHECK(std::strtod(field.c_str(), nullptr) == 0.5);
    std::getline(ss, field, ',');
    CHECK(std::strtod(field.c_str(), nullptr) == 0.1);
  }
  std::getline(in, line);
  {
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    CHECK(field == "32");
    std::getline(ss, field, ',');
    CHECK(field == "4");
    std::getline(ss, field, ',');
    CHECK(std::strtod(field.c_str(), nullptr) == 1.0 / 3.0);
  }
  CHECK_FALSE(static_cast<bool>(std::getline(in, line)));  // exactly header + 2 rows
  in.close();
  std::filesystem::remove(path);
}

}  // TEST_SUITE
