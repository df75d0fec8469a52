#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "rmtq/csv.hpp"
#include "rmtq/ensembles.hpp"
#include "rmtq/error.hpp"
#include "rmtq/random.hpp"
#include "rmtq/spectral.hpp"

namespace rmtq {

/// Hermitian Brownian increment over dt: off-diagonal E|dB_ab|^2 = dt, diagonal
/// variance (2/beta) dt. Drawn column by column over the lower triangle.
inline HermitianMatrix brownian_increment(std::size_t n, SymmetryClass sym, double dt, RandomSource& rng) {
  if (!(dt > 0.0)) throw InputError("brownian_increment: dt must be positive");
  const auto nn = static_cast<Eigen::Index>(n);
  const double sd = std::sqrt(dt);
  ComplexMatrix m(nn, nn);
  for (Eigen::Index j = 0; j < nn; ++j) {
    if (sym == SymmetryClass::RealSymmetric) {
      m(j, j) = M_SQRT2 * sd * rng.normal();
      for (Eigen::Index i = j + 1; i < nn; ++i) m(i, j) = sd * rng.normal();
    } else {
      m(j, j) = sd * rng.normal();
      for (Eigen::Index i = j + 1; i < nn; ++i) {
        const double re = rng.normal(), im = rng.normal();
        m(i, j) = Complex(re, im) * (sd * M_SQRT1_2);
      }
    }
  }
  return HermitianMatrix::from_lower(std::move(m), sym);
}

/// H + dB / sqrt(N) for a given increment.
inline HermitianMatrix matrix_dbm_step(const HermitianMatrix& h, const HermitianMatrix& db) {
  return h + (1.0 / std::sqrt(static_cast<double>(h.n()))) * db;
}

inline HermitianMatrix matrix_dbm_step(const HermitianMatrix& h, double dt, RandomSource& rng) {
  return matrix_dbm_step(h, brownian_increment(h.n(), h.symmetry(), dt, rng));
}

/// Euler-Maruyama step of dH = -(H - mean)/2 dt + dB / sqrt(N), increment given.
inline HermitianMatrix ou_step(const HermitianMatrix& h, const HermitianMatrix& mean, double dt,
                               const HermitianMatrix& db) {
  if (!(dt > 0.0)) throw InputError("ou_step: dt must be positive");
  HermitianMatrix::check_compatible(h, mean);
  return h + (-0.5 * dt) * (h - mean) + (1.0 / std::sqrt(static_cast<double>(h.n()))) * db;
}

inline HermitianMatrix ou_step(const HermitianMatrix& h, const HermitianMatrix& mean, double dt,
                               RandomSource& rng) {
  return ou_step(h, mean, dt, brownian_increment(h.n(), h.symmetry(), dt, rng));
}

struct EigenDbmOptions {
  double substep_factor = 0.1;  // local step <= factor * N * (min gap)^2
  int max_halvings = 20;        // refinements after an ordering violation
  int max_depth = 400;          // overall bisection depth guard; beta = 1 gaps come very close
};

namespace detail {

inline bool strictly_increasing(const std::vector<double>& v) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (!(v[k] > v[k - 1])) return false;
  return true;
}

inline double min_gap(const std::vector<double>& v) {
  double g = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < v.size(); ++k) g = std::min(g, v[k] - v[k - 1]);
  return g;
}

// One Euler step of the eigenvalue SDE with increments db over dt.
inline std::vector<double> eigen_euler(const std::vector<double>& l, double dt, const std::vector<double>& db,
                                       double noise_coef) {
  const std::size_t n = l.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double drift = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) drift += 1.0 / (l[i] - l[j]);
    out[i] = l[i] + noise_coef * db[i] + inv_n * drift * dt;
  }
  return out;
}

inline std::vector<double> eigen_advance(const std::vector<double>& l, double dt, const std::vector<double>& db,
                                         double noise_coef, RandomSource* bridge, const EigenDbmOptions& o,
                                         int depth, int violations) {
  if (depth > o.max_depth) throw IntegrationError("eigenvalue_dbm_step: step refinement exhausted", dt);
  const double limit = o.substep_factor * static_cast<double>(l.size()) * std::pow(min_gap(l), 2);
  bool split = dt > limit;
  if (split) violations = 0;  // a fresh attempt at a smaller step
  if (!split) {
    std::vector<double> out = eigen_euler(l, dt, db, noise_coef);
    if (strictly_increasing(out)) return out;
    if (violations >= o.max_halvings)
      throw IntegrationError("eigenvalue_dbm_step: ordering violated after maximal refinement", dt);
    ++violations;
    split = true;
  }
  // Brownian bridge: the first half-increment given the total.
  std::vector<double> db1(db.size()), db2(db.size());
  const double sd = std::sqrt(dt / 4.0);
  for (std::size_t i = 0; i < db.size(); ++i) {
    const double xi = bridge ? bridge->normal() : 0.0;
    db1[i] = 0.5 * db[i] + sd * xi;
    db2[i] = db[i] - db1[i];
  }
  const std::vector<double> mid = eigen_advance(l, 0.5 * dt, db1, noise_coef, bridge, o, depth + 1, violations);
  return eigen_advance(mid, 0.5 * dt, db2, noise_coef, bridge, o, depth + 1, violations);
}

inline void check_eigen_input(const std::vector<double>& l, double dt, int beta) {
  if (l.empty()) throw InputError("eigenvalue_dbm_step: empty input");
  if (!(dt > 0.0)) throw InputError("eigenvalue_dbm_step: dt must be positive");
  if (beta != 1 && beta != 2) throw InputError("eigenvalue_dbm_step: beta must be 1 or 2");
  if (!strictly_increasing(l)) throw InputError("eigenvalue_dbm_step: input must be strictly increasing");
}

}  // namespace detail

/// d lambda_i = sqrt(2/(beta N)) db_i + (1/N) sum_{j != i} dt / (lambda_i - lambda_j),
/// with driving increments db (variance dt each) supplied by the caller. Steps
/// that are too long for the local gaps, or break the ordering, are split with a
/// Brownian bridge drawn from `bridge` (no bridge noise when it is null).
inline std::vector<double> eigenvalue_dbm_step_driven(const std::vector<double>& lambdas, double dt,
                                                      const std::vector<double>& db, int beta,
                                                      RandomSource* bridge, const EigenDbmOptions& o = {}) {
  detail::check_eigen_input(lambdas, dt, beta);
  if (db.size() != lambdas.size()) throw InputError("eigenvalue_dbm_step: increment size mismatch");
  const double coef = std::sqrt(2.0 / (beta * static_cast<double>(lambdas.size())));
  return detail::eigen_advance(lambdas, dt, db, coef, bridge, o, 0, 0);
}

inline std::vector<double> eigenvalue_dbm_step(const std::vector<double>& lambdas, double dt, RandomSource& rng,
                                               int beta, const EigenDbmOptions& o = {}) {
  detail::check_eigen_input(lambdas, dt, beta);
  std::vector<double> db(lambdas.size());
  const double sd = std::sqrt(dt);
  for (auto& x : db) x = sd * rng.normal();
  return eigenvalue_dbm_step_driven(lambdas, dt, db, beta, &rng, o);
}

/// Deterministic flow (no noise).
inline std::vector<double> eigenvalue_drift_step(const std::vector<double>& lambdas, double dt, int beta,
                                                 const EigenDbmOptions& o = {}) {
  return eigenvalue_dbm_step_driven(lambdas, dt, std::vector<double>(lambdas.size(), 0.0), beta, nullptr, o);
}

/// Projected noises db_i = sqrt(beta/2) u_i^* dB u_i (unit variance per dt).
inline std::vector<double> projected_noise(const ComplexMatrix& u, const HermitianMatrix& db) {
  const double scale = std::sqrt(beta_of(db.symmetry()) / 2.0);
  const ComplexMatrix bu = db.dense() * u;
  std::vector<double> out(static_cast<std::size_t>(u.cols()));
  for (Eigen::Index i = 0; i < u.cols(); ++i) out[static_cast<std::size_t>(i)] = scale * u.col(i).dot(bu.col(i)).real();
  return out;
}

struct DbmPath {
  std::vector<double> times;
  std::vector<std::vector<double>> eigenvalues;   // ascending at every stored time
  std::vector<HermitianMatrix> matrices;          // only when requested
};

inline std::vector<double> to_std(const RealVector& v) { return {v.data(), v.data() + v.size()}; }

/// Matrix DBM from h0; eigenvalues stored every `store_every` steps (and at 0).
inline DbmPath simulate_matrix_dbm(const HermitianMatrix& h0, double dt, std::size_t steps, RandomSource& rng,
                                   std::size_t store_every = 1, bool keep_matrices = false) {
  if (store_every == 0) throw InputError("simulate_matrix_dbm: store_every must be >= 1");
  DbmPath path;
  HermitianMatrix h = h0;
  auto store = [&](double t) {
    path.times.push_back(t);
    path.eigenvalues.push_back(to_std(eigh(h, false).eigenvalues));
    if (keep_matrices) path.matrices.push_back(h);
  };
  store(0.0);
  for (std::size_t k = 1; k <= steps; ++k) {
    h = matrix_dbm_step(h, dt, rng);
    if (k % store_every == 0 || k == steps) store(static_cast<double>(k) * dt);
  }
  return path;
}

inline DbmPath simulate_eigenvalue_dbm(const std::vector<double>& l0, double dt, std::size_t steps, int beta,
                                       RandomSource& rng, std::size_t store_every = 1,
                                       const EigenDbmOptions& o = {}) {
  if (store_every == 0) throw InputError("simulate_eigenvalue_dbm: store_every must be >= 1");
  DbmPath path;
  std::vector<double> l = l0;
  path.times.push_back(0.0);
  path.eigenvalues.push_back(l);
  for (std::size_t k = 1; k <= steps; ++k) {
    l = eigenvalue_dbm_step(l, dt, rng, beta, o);
    if (k % store_every == 0 || k == steps) {
      path.times.push_back(static_cast<double>(k) * dt);
      path.eigenvalues.push_back(l);
    }
  }
  return path;
}

struct CovariationEstimate {
  double estimate = 0.0;          // sum db_i^{x1} db_j^{x2} / (steps dt)
  double overlap_average = 0.0;   // path average of |<u_i^{x1}, u_j^{x2}>|^2
  double standard_error = 0.0;    // of the estimate, from the per-step products
  std::size_t steps = 0;
};

/// Runs the matrix flow H_t and, at every step, projects the common increment
/// onto u_i of H_t + x1 A and u_j of H_t + x2 A.
inline CovariationEstimate measure_quadratic_covariation(const HermitianMatrix& h0, const HermitianMatrix& a,
                                                         double x1, double x2, std::size_t i, std::size_t j,
                                                         double dt, std::size_t steps, RandomSource& rng) {
  HermitianMatrix::check_compatible(h0, a);
  if (i < 1 || j < 1 || i > h0.n() || j > h0.n()) throw InputError("measure_quadratic_covariation: bad index");
  if (steps < 2) throw InputError("measure_quadratic_covariation: need at least two steps");
  HermitianMatrix h = h0;
  const auto ii = static_cast<Eigen::Index>(i - 1), jj = static_cast<Eigen::Index>(j - 1);
  const double scale = std::sqrt(beta_of(h0.symmetry()) / 2.0);
  double sum = 0.0, sum_sq = 0.0, overlap = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    const SpectralData s1 = eigh(build_monoparametric(h, a, x1), true);
    const SpectralData s2 = x2 == x1 ? s1 : eigh(build_monoparametric(h, a, x2), true);
    const auto u = s1.eigenvectors->col(ii);
    const auto v = s2.eigenvectors->col(jj);
    overlap += std::norm(u.dot(v));
    const HermitianMatrix db = brownian_increment(h.n(), h.symmetry(), dt, rng);
    const double b1 = scale * u.dot(db.dense() * u).real();
    const double b2 = scale * v.dot(db.dense() * v).real();
    const double prod = b1 * b2 / dt;
    sum += prod;
    sum_sq += prod * prod;
    h = matrix_dbm_step(h, db);
  }
  const double n = static_cast<double>(steps);
  CovariationEstimate out;
  out.steps = steps;
  out.estimate = sum / n;
  out.overlap_average = overlap / n;
  const double var = std::max(sum_sq / n - out.estimate * out.estimate, 0.0) * n / (n - 1.0);
  out.standard_error = std::sqrt(var / n);
  return out;
}

/// Matrix path and the eigenvalue SDE driven by its projected noises.
struct CoupledPaths {
  std::vector<double> matrix_eigenvalues;  // at the final time
  std::vector<double> sde_eigenvalues;
  double max_bulk_deviation = 0.0;  // max over the bulk window of |difference|
};

inline CoupledPaths coupled_eigenvalue_paths(const HermitianMatrix& h0, double dt, std::size_t steps,
                                             RandomSource& rng, const EigenDbmOptions& o = {}) {
  HermitianMatrix h = h0;
  SpectralData sd = eigh(h, true);
  std::vector<double> l = to_std(sd.eigenvalues);
  const int beta = beta_of(h0.symmetry());
  for (std::size_t k = 0; k < steps; ++k) {
    const HermitianMatrix db = brownian_increment(h.n(), h.symmetry(), dt, rng);
    const std::vector<double> b = projected_noise(*sd.eigenvectors, db);
    l = eigenvalue_dbm_step_driven(l, dt, b, beta, &rng, o);
    h = matrix_dbm_step(h, db);
    sd = eigh(h, true);
  }
  CoupledPaths out;
  out.matrix_eigenvalues = to_std(sd.eigenvalues);
  out.sde_eigenvalues = l;
  const IndexRange bulk = bulk_window(h.n());
  for (std::size_t i = bulk.first; i <= bulk.last; ++i)
    out.max_bulk_deviation = std::max(out.max_bulk_deviation,
                                      std::abs(out.matrix_eigenvalues[i - 1] - out.sde_eigenvalues[i - 1]));
  return out;
}

inline void write_path_csv(std::ostream& os, const DbmPath& path) {
  csv::header(os, {"t", "i", "lambda"});
  for (std::size_t k = 0; k < path.times.size(); ++k)
    for (std::size_t i = 0; i < path.eigenvalues[k].size(); ++i)
      csv::row(os, {path.times[k], static_cast<long long>(i + 1), path.eigenvalues[k][i]});
}

}  // namespace rmtq
