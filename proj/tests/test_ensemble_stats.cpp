#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

#include "enkbf/ensemble_stats.hpp"
#include "enkbf/model.hpp"

using enkbf::Ensemble;
using enkbf::Matrix;
using enkbf::Vector;

namespace {

enkbf::ModelSpec identity_model(int nx) {
  auto id = [](const Vector& x) { return x; };
  auto zero = [nx](const Vector&) { return Vector::Zero(nx); };
  return enkbf::make_model(nx, nx, nx, zero, Matrix::Identity(nx, nx), id,
                           Matrix::Identity(nx, nx), /*identity_h=*/true);
}

Ensemble make_ensemble(const Matrix& particles) {
  Ensemble ens;
  ens.particles = particles;
  ens.t = 0.0;
  ens.m = static_cast<int>(particles.cols());
  return ens;
}

}  // namespace

TEST_SUITE("ensemble-stats") {

TEST_CASE("two-particle hand values") {
  Matrix p(1, 2);
  p << 1, -1;
  const auto stats = enkbf::empirical_stats(make_ensemble(p), identity_model(1));
  CHECK(stats.mean(0) == 0.0);
  CHECK(stats.cov(0, 0) == 2.0);  // (1 + 1) / (M - 1)
  CHECK(stats.v == 2.0);
  CHECK(stats.h_mean(0) == 0.0);
  CHECK(stats.cross_cov(0, 0) == 2.0);
}

TEST_CASE("identical particles collapse to zero spread") {
  Matrix p(2, 5);
  for (int i = 0; i < 5; ++i) p.col(i) << 1.5, -2.5;
  const auto stats = enkbf::empirical_stats(make_ensemble(p), identity_model(2));
  CHECK(stats.mean(0) == 1.5);
  CHECK(stats.mean(1) == -2.5);
  CHECK(stats.cov.norm() == 0.0);
  CHECK(stats.cross_cov.norm() == 0.0);
  CHECK(stats.v == 0.0);
}

TEST_CASE("identity observation makes cross covariance equal covariance bitwise") {
  std::mt19937_64 eng(3);
  std::normal_distribution<double> g;
  Matrix p(3, 7);
  for (int i = 0; i < p.rows(); ++i)
    for (int j = 0; j < p.cols(); ++j) p(i, j) = g(eng);
  const auto stats = enkbf::empirical_stats(make_ensemble(p), identity_model(3));
  CHECK(stats.cov == stats.cross_cov);
  CHECK(stats.h_mean == stats.mean);
  CHECK(stats.cov == Matrix(stats.cov.transpose()));
}

TEST_CASE("v equals the covariance trace") {
  std::mt19937_64 eng(17);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 1000; ++trial) {
    Matrix p(3, 8);
    for (int i = 0; i < p.rows(); ++i)
      for (int j = 0; j < p.cols(); ++j) p(i, j) = g(eng);
    const auto stats = enkbf::empirical_stats(make_ensemble(p), identity_model(3));
    CHECK(std::abs(stats.cov.trace() - stats.v) <= 1e-10 * stats.v);
    // Frobenius norm of a PSD matrix is sandwiched by its trace.
    const double fro = enkbf::frobenius_norm(stats.cov);
    CHECK(fro <= stats.v * (1.0 + 1e-10));
    CHECK(stats.v <= std::sqrt(3.0) * fro * (1.0 + 1e-10));
  }
}

TEST_CASE("covariance is invariant under mean shifts") {
  Matrix p(2, 4);
  p << 1, -3, 5, 7, 2, 0, -4, 6;  // integers, exact mean with M = 4
  const auto base = enkbf::empirical_stats(make_ensemble(p), identity_model(2));

  Matrix shifted = (p.array() + 1024.0).matrix();  // power-of-two shift keeps arithmetic exact
  const auto moved = enkbf::empirical_stats(make_ensemble(shifted), identity_model(2));
  CHECK(base.cov == moved.cov);
  CHECK(base.v == moved.v);
  CHECK(moved.mean(0) == base.mean(0) + 1024.0);

  std::mt19937_64 eng(9);
  std::normal_distribution<double> g;
  Matrix q(2, 6);
  for (int i = 0; i < q.rows(); ++i)
    for (int j = 0; j < q.cols(); ++j) q(i, j) = g(eng);
  const auto s0 = enkbf::empirical_stats(make_ensemble(q), identity_model(2));
  Matrix qs = (q.array() + 0.37).matrix();
  const auto s1 = enkbf::empirical_stats(make_ensemble(qs), identity_model(2));
  CHECK((s0.cov - s1.cov).norm() <= 1e-12 * (1.0 + s0.cov.norm()));
}

TEST_CASE("partial observation cross covariance") {
  // h keeps only the first coordinate: Q must be cov's first column.
  auto zero = [](const Vector&) { return Vector::Zero(2); };
  auto h = [](const Vector& x) { return Vector(x.head(1)); };
  const auto model =
      enkbf::make_model(2, 1, 2, zero, Matrix::Identity(2, 2), h, Matrix::Identity(1, 1));
  Matrix p(2, 5);
  p << 1, 2, 3, 4, 10, -1, 0, 2, 5, -3;
  const auto stats = enkbf::empirical_stats(make_ensemble(p), model);
  REQUIRE(stats.cross_cov.rows() == 2);
  REQUIRE(stats.cross_cov.cols() == 1);
  CHECK(stats.cross_cov(0, 0) == doctest::Approx(stats.cov(0, 0)).epsilon(1e-12));
  CHECK(stats.cross_cov(1, 0) == doctest::Approx(stats.cov(1, 0)).epsilon(1e-12));
}

TEST_CASE("empirical_stats input validation") {
  Matrix one(1, 1);
  one << 1;
  CHECK_THROWS_AS(enkbf::empirical_stats(make_ensemble(one), identity_model(1)),
                  std::invalid_argument);
  Ensemble bad = make_ensemble(Matrix::Zero(2, 4));
  CHECK_THROWS_AS(enkbf::empirical_stats(bad, identity_model(3)), std::invalid_argument);
  Ensemble lied = make_ensemble(Matrix::Zero(2, 4));
  lied.m = 5;
  CHECK_THROWS_AS(enkbf::empirical_stats(lied, identity_model(2)), std::invalid_argument);
}

TEST_CASE("pseudo_inverse hand values") {
  CHECK((enkbf::pseudo_inverse(Matrix::Identity(3, 3)) - Matrix::Identity(3, 3)).norm() < 1e-12);

  Matrix d(2, 2);
  d << 2, 0, 0, 0;
  Matrix expect(2, 2);
  expect << 0.5, 0, 0, 0;
  CHECK((enkbf::pseudo_inverse(d) - expect).norm() < 1e-12);

  CHECK(enkbf::pseudo_inverse(Matrix::Zero(3, 3)).norm() == 0.0);
}

TEST_CASE("pseudo_inverse satisfies the Moore-Penrose identities") {
  std::mt19937_64 eng(21);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix b(4, 2);
    for (int i = 0; i < b.rows(); ++i)
      for (int j = 0; j < b.cols(); ++j) b(i, j) = g(eng);
    const Matrix p = b * b.transpose();  // rank 2 PSD
    const Matrix pinv = enkbf::pseudo_inverse(p);
    CHECK((p * pinv * p - p).norm() <= 1e-8 * p.norm());
    CHECK((pinv * p * pinv - pinv).norm() <= 1e-8 * pinv.norm());
    CHECK((pinv - pinv.transpose()).norm() == 0.0);
  }
}

TEST_CASE("pseudo_inverse matches the inverse on full-rank input") {
  std::mt19937_64 eng(23);
  std::normal_distribution<double> g;
  Matrix a(3, 3);
  for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = g(eng);
  const Matrix p = a * a.transpose() + 0.1 * Matrix::Identity(3, 3);
  CHECK((enkbf::pseudo_inverse(p) - p.inverse()).norm() <= 1e-8 * p.inverse().norm());
}

TEST_CASE("pseudo_inverse input validation") {
  Matrix asym(2, 2);
  asym << 1, 0.5, 0, 1;
  CHECK_THROWS_AS(enkbf::pseudo_inverse(asym), std::invalid_argument);
  CHECK_THROWS_AS(enkbf::pseudo_inverse(Matrix::Zero(2, 3)), std::invalid_argument);
  CHECK_THROWS_AS(enkbf::pseudo_inverse(Matrix::Identity(2, 2), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(enkbf::pseudo_inverse(Matrix::Identity(2, 2), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(enkbf::pseudo_inverse(Matrix::Identity(2, 2), -1e-3), std::invalid_argument);
}

TEST_CASE("frobenius_norm hand values") {
  Matrix ones(2, 2);
  ones.setOnes();
  CHECK(enkbf::frobenius_norm(ones) == 2.0);
  CHECK(enkbf::frobenius_norm(Matrix::Identity(3, 3)) == std::sqrt(3.0));
  CHECK(enkbf::frobenius_norm(Matrix::Zero(4, 2)) == 0.0);
}

}  // TEST_SUITE
