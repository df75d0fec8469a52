#include "catch_amalgamated.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "rmtq/dbm.hpp"
#include "rmtq/ensembles.hpp"
#include "rmtq/spectral.hpp"

using namespace rmtq;
using Catch::Matchers::WithinAbs;

TEST_CASE("Brownian increments have the fixed normalisation", "[dbm]") {
  for (auto sym : {SymmetryClass::RealSymmetric, SymmetryClass::ComplexHermitian}) {
    RandomSource rng(1);
    const double dt = 0.3, beta = beta_of(sym);
    const int m = 10000;
    double off = 0.0, diag = 0.0, pseudo_re = 0.0;
    for (int k = 0; k < m; ++k) {
      const HermitianMatrix db = brownian_increment(3, sym, dt, rng);
      REQUIRE(db.is_exactly_hermitian());
      off += std::norm(db(2, 0));
      pseudo_re += (db(2, 0) * db(2, 0)).real();
      diag += std::norm(db(1, 1));
    }
    CHECK_THAT(off / m, WithinAbs(dt, 0.05 * dt));
    CHECK_THAT(diag / m, WithinAbs(2.0 / beta * dt, 0.05 * 2.0 / beta * dt));
    if (sym == SymmetryClass::ComplexHermitian) CHECK(std::abs(pseudo_re / m) <= 0.05 * dt);
  }
  RandomSource rng(2);
  CHECK_THROWS_AS(brownian_increment(3, SymmetryClass::RealSymmetric, 0.0, rng), InputError);
}

TEST_CASE("matrix DBM", "[dbm][property]") {
  const std::size_t n = 3;
  const double dt = 0.02;
  const int steps = 5, paths = 10000;
  for (auto sym : {SymmetryClass::RealSymmetric, SymmetryClass::ComplexHermitian}) {
    RandomSource rng(3);
    const HermitianMatrix h0 = sample_wigner(EnsembleSpec::wigner(n, sym), rng);
    double off_var = 0.0, tr_var = 0.0;
    Complex mean_entry = 0.0;
    for (int p = 0; p < paths; ++p) {
      HermitianMatrix h = h0;
      for (int k = 0; k < steps; ++k) {
        const HermitianMatrix db = brownian_increment(n, sym, dt, rng);
        const HermitianMatrix next = matrix_dbm_step(h, db);
        REQUIRE(next.is_exactly_hermitian());
        // Weyl: eigenvalues move by at most ||dB|| / sqrt(N)
        const RealVector l0 = eigh(h, false).eigenvalues, l1 = eigh(next, false).eigenvalues;
        const double bound = eigh(db, false).eigenvalues.cwiseAbs().maxCoeff() / std::sqrt(double(n));
        REQUIRE((l1 - l0).cwiseAbs().maxCoeff() <= bound * (1.0 + 1e-12) + 1e-14);
        h = next;
      }
      const Complex d = h(1, 0) - h0(1, 0);
      off_var += std::norm(d);
      mean_entry += d;
      tr_var += std::pow(h.trace() - h0.trace(), 2);
    }
    const double t = steps * dt;
    CHECK_THAT(off_var / paths, WithinAbs(t / n, 0.05 * t / n));
    CHECK_THAT(tr_var / paths, WithinAbs(2.0 / beta_of(sym) * t, 0.05 * 2.0 / beta_of(sym) * t));
    CHECK(std::abs(mean_entry / double(paths)) <= 5.0 * std::sqrt(t / n / paths));
  }
}

TEST_CASE("Ornstein-Uhlenbeck flow", "[dbm]") {
  const std::size_t n = 2;
  RandomSource rng(4);
  const HermitianMatrix mean = sample_gue(n, rng);
  SECTION("the mean is a fixed point without noise") {
    const HermitianMatrix zero = HermitianMatrix::zero(n, SymmetryClass::ComplexHermitian);
    const HermitianMatrix h = ou_step(mean, mean, 0.1, zero);
    CHECK((h.dense() - mean.dense()).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("stationary variance and preserved expectation") {
    const double dt = 0.05;
    const int steps = 400, paths = 10000;
    double var = 0.0;
    Complex drift = 0.0;
    for (int p = 0; p < paths; ++p) {
      HermitianMatrix h = mean;
      for (int k = 0; k < steps; ++k) h = ou_step(h, mean, dt, rng);
      const Complex d = h(1, 0) - mean(1, 0);
      var += std::norm(d);
      drift += d;
    }
    CHECK_THAT(var / paths, WithinAbs(1.0 / n, 0.05 / n));
    CHECK(std::abs(drift / double(paths)) <= 5.0 * std::sqrt(1.0 / n / paths));
  }
  CHECK_THROWS_AS(ou_step(mean, mean, -1.0, rng), InputError);
}

TEST_CASE("eigenvalue DBM drift", "[dbm]") {
  SECTION("two particles repel with rate 2/(N gap)") {
    const std::vector<double> l{-0.3, 0.5};
    const double dt = 1e-6;
    for (int beta : {1, 2}) {
      const std::vector<double> out = eigenvalue_drift_step(l, dt, beta);
      const double g = l[1] - l[0];
      CHECK_THAT((out[1] - out[0]) - g, WithinAbs(2.0 / 2.0 * dt / g, 1e-15));
    }
  }
  SECTION("N = 2 gap squared grows linearly: g^2 = g0^2 + 2t") {
    std::vector<double> l{-0.1, 0.1};
    const double dt = 1e-4;
    for (int k = 0; k < 10000; ++k) l = eigenvalue_drift_step(l, dt, 2);
    CHECK_THAT(std::pow(l[1] - l[0], 2), WithinAbs(0.04 + 2.0, 1e-3));
    CHECK_THAT(l[0] + l[1], WithinAbs(0.0, 1e-12));
  }
  SECTION("symmetric data keeps its centre of mass") {
    std::vector<double> l{-1.0, -0.2, 0.2, 1.0};
    for (int k = 0; k < 200; ++k) l = eigenvalue_drift_step(l, 1e-3, 1);
    CHECK_THAT(l[0] + l[1] + l[2] + l[3], WithinAbs(0.0, 1e-12));
    CHECK(detail::strictly_increasing(l));
  }
}

TEST_CASE("eigenvalue DBM keeps the ordering", "[dbm][property]") {
  RandomSource rng(5);
  for (int beta : {1, 2}) {
    std::vector<double> l{0.0, 1e-3, 2e-3, 0.5, 0.5001, 1.0};
    for (int k = 0; k < 2000; ++k) {
      l = eigenvalue_dbm_step(l, 1e-3, rng, beta);
      REQUIRE(detail::strictly_increasing(l));
    }
  }
  const DbmPath path = simulate_eigenvalue_dbm({-1.0, 0.0, 1.0}, 1e-2, 50, 2, rng, 10);
  REQUIRE(path.times.size() == 6);
  for (std::size_t k = 1; k < path.times.size(); ++k) CHECK(path.times[k] > path.times[k - 1]);
  for (const auto& v : path.eigenvalues) CHECK(detail::strictly_increasing(v));
}

TEST_CASE("eigenvalue DBM errors", "[dbm]") {
  RandomSource rng(6);
  CHECK_THROWS_AS(eigenvalue_dbm_step({0.0, 0.0}, 1e-3, rng, 2), InputError);
  CHECK_THROWS_AS(eigenvalue_dbm_step({1.0, 0.0}, 1e-3, rng, 2), InputError);
  CHECK_THROWS_AS(eigenvalue_dbm_step({0.0, 1.0}, 0.0, rng, 2), InputError);
  CHECK_THROWS_AS(eigenvalue_dbm_step({0.0, 1.0}, 1e-3, rng, 4), InputError);
  CHECK_THROWS_AS(eigenvalue_dbm_step_driven({0.0, 1.0}, 1e-3, {0.0}, 2, nullptr), InputError);
  EigenDbmOptions no_refine;
  no_refine.substep_factor = 1e9;
  no_refine.max_halvings = 0;
  CHECK_THROWS_AS(eigenvalue_dbm_step_driven({0.0, 1.0}, 1e-3, {10.0, -10.0}, 2, nullptr, no_refine), IntegrationError);
  EigenDbmOptions shallow;
  shallow.max_depth = 0;
  CHECK_THROWS_AS(eigenvalue_drift_step({0.0, 1e-6}, 1.0, 2, shallow), IntegrationError);
}

TEST_CASE("quadratic covariation of projected noises", "[dbm]") {
  const std::size_t n = 100;
  RandomSource rng(7);
  const HermitianMatrix h0 = sample_gue(n, rng);
  const HermitianMatrix a = sample_gue(n, rng);
  const double dt = 1e-3;
  SECTION("same parameter, same index") {
    const CovariationEstimate c = measure_quadratic_covariation(h0, a, 0.2, 0.2, 50, 50, dt, 500, rng);
    CHECK_THAT(c.overlap_average, WithinAbs(1.0, 1e-12));
    CHECK(std::abs(c.estimate - 1.0) <= 3.0 * c.standard_error);
  }
  SECTION("same parameter, different indices") {
    const CovariationEstimate c = measure_quadratic_covariation(h0, a, 0.2, 0.2, 50, 51, dt, 500, rng);
    CHECK(c.overlap_average <= 1e-20);
    CHECK(std::abs(c.estimate) <= 3.0 * c.standard_error);
  }
  SECTION("different parameters match the path-averaged overlap") {
    const CovariationEstimate c = measure_quadratic_covariation(h0, a, 0.0, 0.02, 50, 50, dt, 500, rng);
    CHECK(c.overlap_average > 0.05);
    CHECK(std::abs(c.estimate - c.overlap_average) <= 3.0 * c.standard_error);
  }
  CHECK_THROWS_AS(measure_quadratic_covariation(h0, a, 0.0, 0.1, 0, 1, dt, 10, rng), InputError);
  CHECK_THROWS_AS(measure_quadratic_covariation(h0, a, 0.0, 0.1, 1, 1, dt, 1, rng), InputError);
}

TEST_CASE("projected noises have unit rate", "[dbm]") {
  RandomSource rng(8);
  for (auto sym : {SymmetryClass::RealSymmetric, SymmetryClass::ComplexHermitian}) {
    const HermitianMatrix h = sample_wigner(EnsembleSpec::wigner(20, sym), rng);
    const SpectralData sd = eigh(h, true);
    double acc = 0.0;
    const int m = 4000;
    for (int k = 0; k < m; ++k) {
      const std::vector<double> b = projected_noise(*sd.eigenvectors, brownian_increment(20, sym, 0.5, rng));
      for (double v : b) acc += v * v;
    }
    CHECK_THAT(acc / (m * 20.0), WithinAbs(0.5, 0.01));
  }
}

TEST_CASE("eigenvalue SDE driven by projected noises tracks the matrix flow", "[dbm]") {
  const std::size_t n = 100;
  const double t1 = std::pow(double(n), -0.8);
  const std::size_t steps = 200;
  int close = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    RandomSource rng(100 + static_cast<std::uint64_t>(s));
    const HermitianMatrix h0 = sample_gue(n, rng);
    const CoupledPaths c = coupled_eigenvalue_paths(h0, t1 / steps, steps, rng);
    REQUIRE(detail::strictly_increasing(c.sde_eigenvalues));
    close += c.max_bulk_deviation <= 1.0 / n;
  }
  CHECK(close >= 19);
}

TEST_CASE("matrix path storage and CSV", "[dbm]") {
  RandomSource rng(9);
  const DbmPath p = simulate_matrix_dbm(sample_goe(4, rng), 0.01, 7, rng, 3, true);
  REQUIRE(p.times.size() == 4);  // 0, 3, 6, 7 steps
  CHECK_THAT(p.times.back(), WithinAbs(0.07, 1e-15));
  CHECK(p.matrices.size() == 4);
  for (const auto& m : p.matrices) CHECK(m.is_exactly_hermitian());
  for (const auto& v : p.eigenvalues) CHECK(std::is_sorted(v.begin(), v.end()));
  std::ostringstream os;
  write_path_csv(os, p);
  CHECK(os.str().rfind("t,i,lambda\n", 0) == 0);
  std::size_t lines = 0;
  for (char ch : os.str()) lines += ch == '\n';
  CHECK(lines == 1 + 4 * 4);
  CHECK_THROWS_AS(simulate_matrix_dbm(sample_goe(4, rng), 0.01, 7, rng, 0), InputError);
}
