#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#ifdef RMTQ_USE_LAPACKE
#include <mutex>

#include <lapacke.h>
#ifdef RMTQ_OPENBLAS
extern "C" void openblas_set_num_threads(int);
#endif
#endif

#include "rmtq/ensembles.hpp"
#include "rmtq/error.hpp"

namespace rmtq {

/// Ascending eigenvalues of one Hermitian matrix and, optionally, the matching
/// orthonormal eigenvectors (column i belongs to eigenvalue i).
struct SpectralData {
  RealVector eigenvalues;
  std::optional<ComplexMatrix> eigenvectors;

  std::size_t n() const { return static_cast<std::size_t>(eigenvalues.size()); }
  bool has_vectors() const { return eigenvectors.has_value(); }

  /// 1-based access, lambda(1) <= ... <= lambda(N).
  double lambda(std::size_t i) const { return eigenvalues(static_cast<Eigen::Index>(i - 1)); }
};

namespace detail {

// Make the largest-magnitude component of every column real and positive
// (first such component on ties).
inline void fix_phases(ComplexMatrix& u) {
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      const double a = std::norm(u(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (best <= 0.0) continue;
    const Complex phase = std::conj(u(arg, j)) / std::abs(u(arg, j));
    u.col(j) *= phase;
    u(arg, j) = Complex(u(arg, j).real(), 0.0);
  }
}

#ifdef RMTQ_USE_LAPACKE
// Divide-and-conquer drivers; BLAS stays single-threaded so that a trial's
// result does not depend on how many cores the library grabs.
inline void lapack_eigh(const HermitianMatrix& h, bool want_vectors, SpectralData& out) {
#ifdef RMTQ_OPENBLAS
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
#endif
  const auto n = static_cast<lapack_int>(h.n());
  const char job = want_vectors ? 'V' : 'N';
  out.eigenvalues.resize(n);
  lapack_int info = 0;
  if (h.symmetry() == SymmetryClass::RealSymmetric) {
    Eigen::MatrixXd a = h.dense().real();
    info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, job, 'L', n, a.data(), n, out.eigenvalues.data());
    if (info == 0 && want_vectors) out.eigenvectors = a.cast<Complex>();
  } else {
    ComplexMatrix a = h.dense();
    info = LAPACKE_zheevd(LAPACK_COL_MAJOR, job, 'L', n, reinterpret_cast<lapack_complex_double*>(a.data()), n,
                          out.eigenvalues.data());
    if (info == 0 && want_vectors) out.eigenvectors = std::move(a);
  }
  if (info != 0) throw SolverError("eigh: LAPACK eigensolver failed with info " + std::to_string(info), 0.0);
}
#endif

}  // namespace detail

/// Dense Hermitian eigendecomposition. Real symmetric input is solved with the
/// real solver.
inline SpectralData eigh(const HermitianMatrix& h, bool want_vectors) {
  if (!h.all_finite()) throw InputError("eigh: matrix has non-finite entries");
  SpectralData out;
#ifdef RMTQ_USE_LAPACKE
  detail::lapack_eigh(h, want_vectors, out);
#else
  const int options = want_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly;
  if (h.symmetry() == SymmetryClass::RealSymmetric) {
    const Eigen::MatrixXd re = h.dense().real();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(re, options);
    if (es.info() != Eigen::Success) throw SolverError("eigh: real eigensolver failed", 0.0);
    out.eigenvalues = es.eigenvalues();
    if (want_vectors) out.eigenvectors = es.eigenvectors().cast<Complex>();
  } else {
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h.dense(), options);
    if (es.info() != Eigen::Success) throw SolverError("eigh: complex eigensolver failed", 0.0);
    out.eigenvalues = es.eigenvalues();
    if (want_vectors) out.eigenvectors = es.eigenvectors();
  }
#endif
  if (out.eigenvectors) detail::fix_phases(*out.eigenvectors);
  return out;
}

/// Raw gaps lambda_{i+1} - lambda_i; element k (0-based) is the gap above lambda_{k+1}.
inline std::vector<double> gaps(const SpectralData& sd) {
  if (sd.n() < 2) throw InputError("gaps: need at least two eigenvalues");
  std::vector<double> out(sd.n() - 1);
  for (std::size_t k = 0; k + 1 < sd.n(); ++k) {
    const double g = sd.eigenvalues(static_cast<Eigen::Index>(k + 1)) -
                     sd.eigenvalues(static_cast<Eigen::Index>(k));
    out[k] = std::max(g, 0.0);
  }
  return out;
}

struct GapSample {
  std::size_t index = 0;  // 1-based i, gap between lambda_i and lambda_{i+1}
  double raw_gap = 0.0;
  double rescaled = 0.0;  // s = N rho (lambda_{i+1} - lambda_i)
  double rho = 0.0;
};

/// Rescaled gap s = N * rho_at(lambda_i) * (lambda_{i+1} - lambda_i).
/// Returns nullopt when the density at lambda_i is not positive; the caller
/// decides whether to skip or abort.
template <class DensityFn>
std::optional<GapSample> rescaled_gap(const SpectralData& sd, std::size_t i, DensityFn&& rho_at) {
  if (i < 1 || i + 1 > sd.n()) throw InputError("rescaled_gap: index out of range");
  GapSample g;
  g.index = i;
  g.raw_gap = std::max(sd.lambda(i + 1) - sd.lambda(i), 0.0);
  g.rho = rho_at(sd.lambda(i));
  if (!(g.rho > 0.0)) return std::nullopt;
  g.rescaled = static_cast<double>(sd.n()) * g.rho * g.raw_gap;
  return g;
}

/// Inclusive 1-based index range.
struct IndexRange {
  std::size_t first = 1;
  std::size_t last = 0;

  static IndexRange all(std::size_t n) { return {1, n}; }
  std::size_t size() const { return last >= first ? last - first + 1 : 0; }
  bool contains(std::size_t i) const { return i >= first && i <= last; }
};

/// Default bulk window [N/10, 9N/10].
inline IndexRange bulk_window(std::size_t n) {
  return {std::max<std::size_t>(1, n / 10), std::max<std::size_t>(1, 9 * n / 10)};
}

/// o_ij = |<u_i, v_j>|^2 for i in rows (eigenvectors of sd1), j in cols (sd2).
struct OverlapMatrix {
  IndexRange rows;
  IndexRange cols;
  Eigen::MatrixXd values;  // values(r, c) <-> (rows.first + r, cols.first + c)

  double at(std::size_t i, std::size_t j) const {
    return values(static_cast<Eigen::Index>(i - rows.first),
                  static_cast<Eigen::Index>(j - cols.first));
  }
};

inline OverlapMatrix overlaps(const SpectralData& sd1, const SpectralData& sd2, IndexRange rows,
                              IndexRange cols) {
  if (!sd1.has_vectors() || !sd2.has_vectors())
    throw InputError("overlaps: both spectral data need eigenvectors");
  if (sd1.n() != sd2.n()) throw InputError("overlaps: dimension mismatch");
  if (rows.size() == 0 || cols.size() == 0 || rows.last > sd1.n() || cols.last > sd2.n())
    throw InputError("overlaps: index range out of bounds");
  const auto r0 = static_cast<Eigen::Index>(rows.first - 1);
  const auto c0 = static_cast<Eigen::Index>(cols.first - 1);
  const auto nr = static_cast<Eigen::Index>(rows.size());
  const auto nc = static_cast<Eigen::Index>(cols.size());
  const ComplexMatrix inner =
      sd1.eigenvectors->middleCols(r0, nr).adjoint() * sd2.eigenvectors->middleCols(c0, nc);
  return {rows, cols, inner.cwiseAbs2()};
}

/// <G(z)> = (1/N) sum_i 1/(lambda_i - z).
inline Complex resolvent_trace(const SpectralData& sd, Complex z) {
  Complex acc = 0.0;
  for (Eigen::Index i = 0; i < sd.eigenvalues.size(); ++i) acc += 1.0 / (sd.eigenvalues(i) - z);
  return acc / static_cast<double>(sd.n());
}

/// <G1 G2 obs> with G_r = (H_r - z_r)^{-1}, from the two eigendecompositions:
/// (1/N) sum_ij (u_i* obs v_j)(v_j* u_i) / ((lambda_i - z1)(mu_j - z2)).
inline Complex resolvent_trace_product(const SpectralData& sd1, const SpectralData& sd2, Complex z1,
                                       Complex z2, const HermitianMatrix& obs) {
  if (z1.imag() == 0.0 || z2.imag() == 0.0)
    throw InputError("resolvent_trace_product: spectral parameters must be off the real axis");
  if (!sd1.has_vectors() || !sd2.has_vectors())
    throw InputError("resolvent_trace_product: eigenvectors required");
  if (sd1.n() != sd2.n() || obs.n() != sd1.n())
    throw InputError("resolvent_trace_product: dimension mismatch");
  const ComplexMatrix& u = *sd1.eigenvectors;
  const ComplexMatrix& v = *sd2.eigenvectors;
  const ComplexMatrix uv = u.adjoint() * v;                   // (u_i* v_j) at (i, j)
  const ComplexMatrix uav = u.adjoint() * (obs.dense() * v);  // (u_i* obs v_j) at (i, j)
  const Eigen::Index n = u.cols();
  Eigen::VectorXcd g1(n), g2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g1(i) = 1.0 / (sd1.eigenvalues(i) - z1);
    g2(i) = 1.0 / (sd2.eigenvalues(i) - z2);
  }
  Complex acc = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    Complex col = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) col += g1(i) * uav(i, j) * std::conj(uv(i, j));
    acc += col * g2(j);
  }
  return acc / static_cast<double>(n);
}

inline Complex resolvent_trace_product(const HermitianMatrix& h1, const HermitianMatrix& h2,
                                       Complex z1, Complex z2, const HermitianMatrix& obs) {
  if (z1.imag() == 0.0 || z2.imag() == 0.0)
    throw InputError("resolvent_trace_product: spectral parameters must be off the real axis");
  return resolvent_trace_product(eigh(h1, true), eigh(h2, true), z1, z2, obs);
}

/// Wigner semicircle density sqrt((4 - x^2)_+) / (2 pi).
inline double semicircle_density(double x) {
  const double r = 4.0 - x * x;
  return r > 0.0 ? std::sqrt(r) / (2.0 * M_PI) : 0.0;
}

/// Semicircle CDF, closed form.
inline double semicircle_cdf(double x) {
  if (x <= -2.0) return 0.0;
  if (x >= 2.0) return 1.0;
  return 0.5 + x * std::sqrt(4.0 - x * x) / (4.0 * M_PI) + std::asin(x / 2.0) / M_PI;
}

}  // namespace rmtq
