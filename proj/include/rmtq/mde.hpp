#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "rmtq/csv.hpp"
#include "rmtq/ensembles.hpp"
#include "rmtq/error.hpp"
#include "rmtq/spectral.hpp"

namespace rmtq {

/// Spectrum of the deterministic part D = B + xA, stored as weighted modes.
///
/// values are ascending, weights sum to one. When the eigenbasis is tracked,
/// mode k is the eigenvector in column columns[k] of *basis (a null basis
/// means the standard basis, i.e. D was diagonal). A compressed spectrum has
/// merged equal values and no columns; it supports scalar quantities only.
struct DeformationSpectrum {
  std::vector<double> values;
  std::vector<double> weights;
  std::vector<std::size_t> columns;
  std::shared_ptr<const ComplexMatrix> basis;
  std::size_t n = 0;  // matrix dimension, 0 for an abstract spectrum

  /// D = 0 as a single abstract mode (pure Wigner).
  static DeformationSpectrum semicircle() { return scalar(0.0); }

  /// D = c I as a single abstract mode.
  static DeformationSpectrum scalar(double c) {
    DeformationSpectrum s;
    s.values = {c};
    s.weights = {1.0};
    return s;
  }

  /// D = diag(d) in the standard basis.
  static DeformationSpectrum from_values(const std::vector<double>& d) {
    if (d.empty()) throw InputError("DeformationSpectrum: empty spectrum");
    for (double v : d)
      if (!std::isfinite(v)) throw InputError("DeformationSpectrum: non-finite value");
    DeformationSpectrum s;
    s.n = d.size();
    s.columns.resize(d.size());
    std::iota(s.columns.begin(), s.columns.end(), std::size_t{0});
    std::stable_sort(s.columns.begin(), s.columns.end(),
                     [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    s.values.reserve(d.size());
    for (auto c : s.columns) s.values.push_back(d[c]);
    s.weights.assign(d.size(), 1.0 / static_cast<double>(d.size()));
    return s;
  }

  /// Ascending values paired with basis columns 0..n-1.
  static DeformationSpectrum from_eigen(const RealVector& values,
                                        std::shared_ptr<const ComplexMatrix> basis) {
    const auto n = static_cast<std::size_t>(values.size());
    if (n == 0) throw InputError("DeformationSpectrum: empty spectrum");
    if (basis && (static_cast<std::size_t>(basis->cols()) != n ||
                  static_cast<std::size_t>(basis->rows()) != n))
      throw InputError("DeformationSpectrum: basis shape mismatch");
    DeformationSpectrum s;
    s.n = n;
    s.values.assign(values.data(), values.data() + n);
    s.weights.assign(n, 1.0 / static_cast<double>(n));
    if (basis) {
      s.columns.resize(n);
      std::iota(s.columns.begin(), s.columns.end(), std::size_t{0});
      s.basis = std::move(basis);
    }
    return s;
  }

  static DeformationSpectrum from_matrix(const HermitianMatrix& d, bool track_basis = true) {
    if (d.dense().isDiagonal(0.0)) {
      std::vector<double> diag(d.n());
      for (std::size_t k = 0; k < d.n(); ++k) diag[k] = d(k, k).real();
      auto s = from_values(diag);
      if (!track_basis) s.columns.clear();
      return s;
    }
    SpectralData sd = eigh(d, track_basis);
    std::shared_ptr<const ComplexMatrix> b;
    if (track_basis) b = std::make_shared<const ComplexMatrix>(std::move(*sd.eigenvectors));
    auto s = from_eigen(sd.eigenvalues, std::move(b));
    s.n = d.n();
    return s;
  }

  std::size_t modes() const { return values.size(); }
  bool has_basis() const { return !columns.empty(); }
  bool is_scalar() const { return !values.empty() && values.front() == values.back(); }
  double min() const { return values.front(); }
  double max() const { return values.back(); }
  double mean() const {
    double acc = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) acc += weights[k] * values[k];
    return acc;
  }

  /// Merges equal values, drops the basis.
  DeformationSpectrum compressed() const {
    DeformationSpectrum s;
    s.n = n;
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (!s.values.empty() && s.values.back() == values[k]) {
        s.weights.back() += weights[k];
      } else {
        s.values.push_back(values[k]);
        s.weights.push_back(weights[k]);
      }
    }
    return s;
  }

  /// Dense matrix whose column k is the eigenvector of mode k.
  ComplexMatrix mode_basis() const {
    if (!has_basis()) throw InputError("DeformationSpectrum: eigenbasis not tracked");
    const auto dim = static_cast<Eigen::Index>(n);
    ComplexMatrix u = ComplexMatrix::Zero(dim, static_cast<Eigen::Index>(modes()));
    for (std::size_t k = 0; k < modes(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const auto c = static_cast<Eigen::Index>(columns[k]);
      if (basis)
        u.col(kk) = basis->col(c);
      else
        u(c, kk) = 1.0;
    }
    return u;
  }
};

/// D(x) = B + xA for a fixed pair (B, A). When B = 0 the eigendecomposition of
/// A is computed once and every D(x) shares that basis; when both are diagonal
/// no decomposition is needed at all.
class DeformationFamily {
 public:
  explicit DeformationFamily(const DeformationSpec& spec, bool track_basis = true)
      : spec_(spec), track_(track_basis) {
    const bool b_diag = spec.b().dense().isDiagonal(0.0);
    const bool a_diag = spec.a().dense().isDiagonal(0.0);
    if (b_diag && a_diag) {
      kind_ = Kind::Diagonal;
      b_diag_ = spec.b().dense().diagonal().real();
      a_diag_ = spec.a().dense().diagonal().real();
    } else if (spec.b_is_zero()) {
      kind_ = Kind::SharedBasis;
      SpectralData sd = eigh(spec.a(), track_basis);
      a_values_ = sd.eigenvalues;
      if (track_basis) a_basis_ = std::make_shared<const ComplexMatrix>(std::move(*sd.eigenvectors));
    } else {
      kind_ = Kind::General;
    }
  }

  static DeformationFamily direction(const HermitianMatrix& a, bool track_basis = true) {
    return DeformationFamily(DeformationSpec(HermitianMatrix::zero(a.n(), a.symmetry()), a),
                             track_basis);
  }

  const DeformationSpec& spec() const { return spec_; }
  std::size_t n() const { return spec_.n(); }

  std::shared_ptr<const DeformationSpectrum> at(double x) const {
    switch (kind_) {
      case Kind::Diagonal: {
        const RealVector d = b_diag_ + x * a_diag_;
        auto s = DeformationSpectrum::from_values(std::vector<double>(d.data(), d.data() + d.size()));
        if (!track_) s.columns.clear();
        return std::make_shared<const DeformationSpectrum>(std::move(s));
      }
      case Kind::SharedBasis: {
        const auto n = static_cast<std::size_t>(a_values_.size());
        DeformationSpectrum s;
        s.n = n;
        s.values.resize(n);
        s.weights.assign(n, 1.0 / static_cast<double>(n));
        if (track_) {
          s.columns.resize(n);
          s.basis = a_basis_;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t src = x >= 0.0 ? k : n - 1 - k;  // negative x reverses the order
          s.values[k] = x * a_values_(static_cast<Eigen::Index>(src));
          if (track_) s.columns[k] = src;
        }
        return std::make_shared<const DeformationSpectrum>(std::move(s));
      }
      case Kind::General:
        break;
    }
    return std::make_shared<const DeformationSpectrum>(
        DeformationSpectrum::from_matrix(build_monoparametric(spec_.b(), spec_.a(), x), track_));
  }

 private:
  enum class Kind { Diagonal, SharedBasis, General };
  DeformationSpec spec_;
  bool track_;
  Kind kind_ = Kind::General;
  RealVector b_diag_, a_diag_;
  RealVector a_values_;
  std::shared_ptr<const ComplexMatrix> a_basis_;
};

struct MdeOptions {
  double damping = 0.5;
  double newton_switch = 1e-3;
  int max_iterations = 10000;
  double tolerance = 1e-12;
};

/// Solution of m = <(D - z - m)^{-1}> at one spectral parameter. For a
/// real-axis solution z is real and m is the extrapolated boundary value.
struct MdeSolution {
  Complex z;
  Complex m;
  double residual = 0.0;
  int iterations = 0;
  bool real_axis = false;
  std::shared_ptr<const DeformationSpectrum> spectrum;

  /// M_k = 1 / (d_k - z - m).
  Complex mode_value(std::size_t k) const { return 1.0 / (spectrum->values[k] - z - m); }

  std::vector<Complex> mdiag() const {
    std::vector<Complex> out(spectrum->modes());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = mode_value(k);
    return out;
  }

  double density() const { return std::max(m.imag(), 0.0) / M_PI; }
};

/// Closed-form semicircle Stieltjes transform (-z + sqrt(z^2 - 4)) / 2, Im z > 0.
inline Complex semicircle_stieltjes(Complex z) {
  return 0.5 * (-z + std::sqrt(z - 2.0) * std::sqrt(z + 2.0));
}

/// Semicircle quantile: x with semicircle_cdf(x) = p.
inline double semicircle_quantile(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InputError("semicircle_quantile: p outside [0,1]");
  double lo = -2.0, hi = 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (semicircle_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

namespace detail {

struct ScalarSolve {
  Complex m;
  double residual;
  int iterations;
};

inline void mde_sums(const DeformationSpectrum& s, Complex zm, Complex& g, Complex& gp) {
  g = 0.0;
  gp = 0.0;
  for (std::size_t k = 0; k < s.values.size(); ++k) {
    const Complex r = 1.0 / (s.values[k] - zm);
    g += s.weights[k] * r;
    gp += s.weights[k] * r * r;
  }
}

inline double mde_residual(const DeformationSpectrum& s, Complex z, Complex m) {
  Complex g, gp;
  mde_sums(s, z + m, g, gp);
  return std::abs(m - g);
}

// Damped fixed point, then Newton with backtracking on the residual and the
// half-plane constraint.
inline ScalarSolve solve_scalar(const DeformationSpectrum& s, Complex z, Complex m,
                                const MdeOptions& o) {
  if (!(m.imag() > 0.0)) m = Complex(m.real(), std::max(z.imag(), 1e-3));
  double res = std::numeric_limits<double>::infinity();
  for (int it = 0; it < o.max_iterations; ++it) {
    Complex g, gp;
    mde_sums(s, z + m, g, gp);
    const Complex f = m - g;
    res = std::abs(f);
    if (!std::isfinite(res)) break;
    if (res <= o.tolerance) return {m, res, it};
    if (res < o.newton_switch) {
      Complex step = f / (1.0 - gp);
      bool accepted = false;
      for (int h = 0; h < 40; ++h, step *= 0.5) {
        const Complex cand = m - step;
        if (!(cand.imag() > 0.0)) continue;
        if (mde_residual(s, z, cand) < res) {
          m = cand;
          accepted = true;
          break;
        }
      }
      if (accepted) continue;
    }
    m = (1.0 - o.damping) * m + o.damping * g;
  }
  throw SolverError("solve_mde: no convergence at z=(" + std::to_string(z.real()) + "," +
                        std::to_string(z.imag()) + ")",
                    res);
}

// Walks from (E + i eta_from, m_from) to E + i eta_to, subdividing the step
// geometrically when a warm-started solve fails.
inline ScalarSolve continue_to(const DeformationSpectrum& s, double e, double eta_from,
                               Complex m_from, double eta_to, const MdeOptions& o,
                               int depth = 0) {
  try {
    return solve_scalar(s, Complex(e, eta_to), m_from, o);
  } catch (const SolverError&) {
    if (depth >= 8) throw;
  }
  const double mid = std::sqrt(eta_from * eta_to);
  const ScalarSolve half = continue_to(s, e, eta_from, m_from, mid, o, depth + 1);
  return continue_to(s, e, mid, half.m, eta_to, o, depth + 1);
}

// Cold start: begin at Im z = 1 from the shifted semicircle and descend.
inline ScalarSolve solve_cold(const DeformationSpectrum& s, Complex z, const MdeOptions& o) {
  const double mean = s.mean();
  if (z.imag() >= 1.0) return solve_scalar(s, z, semicircle_stieltjes(z - mean), o);
  double eta = 1.0;
  ScalarSolve cur = solve_scalar(s, Complex(z.real(), eta), semicircle_stieltjes(Complex(z.real() - mean, eta)), o);
  int total = cur.iterations;
  while (eta * 0.25 > z.imag()) {
    cur = continue_to(s, z.real(), eta, cur.m, eta * 0.25, o);
    eta *= 0.25;
    total += cur.iterations;
  }
  cur = continue_to(s, z.real(), eta, cur.m, z.imag(), o);
  cur.iterations += total;
  return cur;
}

inline const DeformationSpectrum& solver_view(const DeformationSpectrum& s,
                                              std::optional<DeformationSpectrum>& tmp) {
  if (s.values.empty()) throw InputError("solve_mde: empty deformation spectrum");
  // Compressing pays off only when there are repeated values.
  bool repeated = false;
  for (std::size_t k = 1; k < s.values.size() && !repeated; ++k) repeated = s.values[k] == s.values[k - 1];
  if (!repeated) return s;
  tmp = s.compressed();
  return *tmp;
}

// Psi(z) = <log(D - z - m)> + m^2/2 satisfies Psi' = -m, so -Im Psi / pi is
// the CDF of the Cauchy-smoothed density at height Im z.
inline double smoothed_cdf(const DeformationSpectrum& s, Complex z, Complex m) {
  Complex acc = 0.0;
  for (std::size_t k = 0; k < s.values.size(); ++k)
    acc += s.weights[k] * std::log(s.values[k] - z - m);
  acc += 0.5 * m * m;
  return -acc.imag() / M_PI;
}

}  // namespace detail

inline MdeSolution solve_mde(std::shared_ptr<const DeformationSpectrum> spectrum, Complex z,
                             const MdeOptions& opts = {}, std::optional<Complex> warm = std::nullopt) {
  if (!spectrum) throw InputError("solve_mde: null spectrum");
  if (!(z.imag() > 0.0)) throw InputError("solve_mde: Im z must be positive");
  std::optional<DeformationSpectrum> tmp;
  const DeformationSpectrum& view = detail::solver_view(*spectrum, tmp);
  const detail::ScalarSolve r =
      warm ? detail::solve_scalar(view, z, *warm, opts) : detail::solve_cold(view, z, opts);
  MdeSolution sol;
  sol.z = z;
  sol.m = r.m;
  sol.residual = r.residual;
  sol.iterations = r.iterations;
  sol.spectrum = std::move(spectrum);
  return sol;
}

inline MdeSolution solve_mde(const DeformationSpectrum& spectrum, Complex z,
                             const MdeOptions& opts = {}) {
  return solve_mde(std::make_shared<const DeformationSpectrum>(spectrum), z, opts);
}

struct RealAxisOptions {
  double eta_start = 1e-2;
  double eta_min = 1e-6;
  double edge_density = 1e-3;   // below this the extrapolation assumes sqrt(eta) behaviour
  double density_floor = 1e-6;  // extrapolated densities below this are reported as 0
  MdeOptions mde;
};

/// Boundary values at a real energy E.
struct RealAxisValue {
  double e = 0.0;
  Complex m;           // extrapolated m(E + i0)
  double rho = 0.0;    // density
  double cdf = 0.0;    // integral of rho up to E (only when requested)
  bool edge = false;   // sqrt(eta) extrapolation was used
  double residual = 0.0;
  Complex m_start;     // solution at eta_start, for warm-starting a neighbouring energy
};

/// Real-axis evaluation by eta-continuation: solve at eta_start, halve down to
/// eta_min warm-starting each solve, and extrapolate the last two levels to 0.
inline RealAxisValue evaluate_real_axis(const DeformationSpectrum& spectrum, double e,
                                        const RealAxisOptions& o = {}, bool want_cdf = true,
                                        std::optional<Complex> warm_start = std::nullopt) {
  if (!std::isfinite(e)) throw InputError("evaluate_real_axis: non-finite energy");
  std::optional<DeformationSpectrum> tmp;
  const DeformationSpectrum& s = detail::solver_view(spectrum, tmp);

  double eta = o.eta_start;
  detail::ScalarSolve cur = warm_start ? detail::solve_scalar(s, Complex(e, eta), *warm_start, o.mde)
                                       : detail::solve_cold(s, Complex(e, eta), o.mde);
  RealAxisValue out;
  out.e = e;
  out.m_start = cur.m;
  Complex m_prev = cur.m;
  double eta_prev = eta;
  double res_max = cur.residual;
  while (eta > o.eta_min) {
    m_prev = cur.m;
    eta_prev = eta;
    cur = detail::continue_to(s, e, eta, cur.m, eta * 0.5, o.mde);
    eta *= 0.5;
    res_max = std::max(res_max, cur.residual);
  }
  out.residual = res_max;

  const double rho_raw = cur.m.imag() / M_PI;
  Complex m0;
  if (rho_raw >= o.edge_density) {
    m0 = 2.0 * cur.m - m_prev;
  } else {
    out.edge = true;
    m0 = (M_SQRT2 * cur.m - m_prev) / (M_SQRT2 - 1.0);
  }
  double rho = m0.imag() / M_PI;
  if (!(rho >= o.density_floor)) {
    rho = 0.0;
    m0 = Complex(m0.real(), 0.0);
  }
  out.m = m0;
  out.rho = rho;

  if (want_cdf) {
    const double f_last = detail::smoothed_cdf(s, Complex(e, eta), cur.m);
    const double f_prev = detail::smoothed_cdf(s, Complex(e, eta_prev), m_prev);
    out.cdf = std::clamp(2.0 * f_last - f_prev, 0.0, 1.0);
  }
  return out;
}

inline double density_at(const DeformationSpectrum& spectrum, double e, const RealAxisOptions& o = {}) {
  return evaluate_real_axis(spectrum, e, o, false).rho;
}

inline double cdf_at(const DeformationSpectrum& spectrum, double e, const RealAxisOptions& o = {}) {
  return evaluate_real_axis(spectrum, e, o, true).cdf;
}

/// Real-axis solution usable by stability_factor / m12_observable.
inline MdeSolution solve_mde_real_axis(std::shared_ptr<const DeformationSpectrum> spectrum, double e,
                                       const RealAxisOptions& o = {}) {
  if (!spectrum) throw InputError("solve_mde_real_axis: null spectrum");
  const RealAxisValue v = evaluate_real_axis(*spectrum, e, o, false);
  MdeSolution sol;
  sol.z = Complex(e, 0.0);
  sol.m = v.m;
  sol.residual = v.residual;
  sol.real_axis = true;
  sol.spectrum = std::move(spectrum);
  return sol;
}

/// Self-consistent density of states tabulated on a grid.
struct ScDos {
  std::vector<double> grid;
  std::vector<double> rho;
  std::vector<double> cdf;
  double support_lo = 0.0;
  double support_hi = 0.0;

  /// Monotone cubic Hermite interpolation of the CDF with rho as slopes.
  double cdf_at(double e) const {
    if (e <= grid.front()) return cdf.front();
    if (e >= grid.back()) return cdf.back();
    const std::size_t k = interval(e);
    const double h = grid[k + 1] - grid[k];
    const double f0 = cdf[k], f1 = cdf[k + 1];
    const double delta = (f1 - f0) / h;
    double d0 = rho[k], d1 = rho[k + 1];
    if (delta <= 0.0) {
      d0 = d1 = 0.0;
    } else {
      const double a = d0 / delta, b = d1 / delta;
      const double r = a * a + b * b;
      if (r > 9.0) {
        const double tau = 3.0 / std::sqrt(r);
        d0 *= tau;
        d1 *= tau;
      }
    }
    const double t = (e - grid[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * f0 + (t3 - 2 * t2 + t) * h * d0 + (-2 * t3 + 3 * t2) * f1 +
           (t3 - t2) * h * d1;
  }

  /// Piecewise-linear density lookup, 0 outside the grid.
  double rho_at(double e) const {
    if (e < grid.front() || e > grid.back()) return 0.0;
    if (e == grid.back()) return rho.back();
    const std::size_t k = interval(e);
    const double t = (e - grid[k]) / (grid[k + 1] - grid[k]);
    return (1.0 - t) * rho[k] + t * rho[k + 1];
  }

  double total_mass() const { return cdf.back() - cdf.front(); }

 private:
  std::size_t interval(double e) const {
    auto it = std::upper_bound(grid.begin(), grid.end(), e);
    return static_cast<std::size_t>(std::distance(grid.begin(), it)) - 1;
  }
};

/// Uniform grid over [min d - 2.1, max d + 2.1], which contains the support.
inline std::vector<double> default_grid(const DeformationSpectrum& s, std::size_t points = 801) {
  if (points < 2) throw InputError("default_grid: need at least two points");
  const double lo = s.min() - 2.1, hi = s.max() + 2.1;
  std::vector<double> g(points);
  for (std::size_t k = 0; k < points; ++k)
    g[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
  return g;
}

namespace detail {

// Support edge inside [a, b], where exactly one end has positive density.
inline double locate_edge(const DeformationSpectrum& s, double a, double b, bool inside_left,
                          const RealAxisOptions& o) {
  for (int it = 0; it < 40 && b - a > 1e-12; ++it) {
    const double mid = 0.5 * (a + b);
    const bool positive = evaluate_real_axis(s, mid, o, false).rho > 0.0;
    if (positive == inside_left)
      a = mid;
    else
      b = mid;
  }
  return inside_left ? b : a;  // the zero-density side
}

}  // namespace detail

/// Tabulates rho and the CDF on the grid. Cells that contain a support edge are
/// refined: the edge is located by bisection and graded nodes are inserted on
/// its inner side.
inline ScDos scdos(const DeformationSpectrum& spectrum, const std::vector<double>& grid,
                   const RealAxisOptions& o = {}) {
  if (grid.size() < 2) throw InputError("scdos: grid needs at least two points");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (!(grid[k] > grid[k - 1])) throw InputError("scdos: grid must be strictly increasing");
  std::optional<DeformationSpectrum> tmp;
  const DeformationSpectrum& s = detail::solver_view(spectrum, tmp);

  struct Node {
    double e, rho, cdf;
  };
  std::vector<Node> nodes;
  nodes.reserve(grid.size() + 64);
  std::optional<Complex> warm;
  auto eval = [&](double e, std::optional<Complex>& w) {
    RealAxisValue v;
    try {
      v = evaluate_real_axis(s, e, o, true, w);
    } catch (const SolverError&) {
      if (!w) throw;
      v = evaluate_real_axis(s, e, o, true);  // cold restart before giving up
    }
    w = v.m_start;
    return Node{e, v.rho, v.cdf};
  };
  for (double e : grid) nodes.push_back(eval(e, warm));
  if (nodes.front().rho > 0.0 || nodes.back().rho > 0.0)
    throw InputError("scdos: grid does not cover the support");

  std::vector<Node> extra;
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const bool l = nodes[k].rho > 0.0, r = nodes[k + 1].rho > 0.0;
    if (l == r) continue;
    const double a = nodes[k].e, b = nodes[k + 1].e;
    const double edge = detail::locate_edge(s, a, b, l, o);
    std::optional<Complex> w;
    extra.push_back(eval(edge, w));
    const double width = b - a;
    for (double f : {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.05, 0.2, 0.5}) {
      const double e = l ? edge - f * width : edge + f * width;
      if (e > a && e < b) extra.push_back(eval(e, w));
    }
  }
  nodes.insert(nodes.end(), extra.begin(), extra.end());
  std::sort(nodes.begin(), nodes.end(), [](const Node& x, const Node& y) { return x.e < y.e; });
  nodes.erase(std::unique(nodes.begin(), nodes.end(),
                          [](const Node& x, const Node& y) { return x.e == y.e; }),
              nodes.end());

  ScDos out;
  for (const Node& nd : nodes) {
    out.grid.push_back(nd.e);
    out.rho.push_back(nd.rho);
    out.cdf.push_back(nd.cdf);
  }
  for (std::size_t k = 1; k < out.cdf.size(); ++k) out.cdf[k] = std::max(out.cdf[k], out.cdf[k - 1]);
  const auto first = std::find_if(out.rho.begin(), out.rho.end(), [](double r) { return r > 0.0; });
  if (first == out.rho.end()) throw SolverError("scdos: density vanishes on the whole grid", 0.0);
  const auto last = std::find_if(out.rho.rbegin(), out.rho.rend(), [](double r) { return r > 0.0; });
  out.support_lo = out.grid[static_cast<std::size_t>(first - out.rho.begin()) - 1];
  out.support_hi = out.grid[out.grid.size() - static_cast<std::size_t>(last - out.rho.rbegin())];
  return out;
}

inline ScDos scdos(const DeformationSpectrum& spectrum, const RealAxisOptions& o = {}) {
  return scdos(spectrum, default_grid(spectrum), o);
}

/// Classical locations gamma_i, i = 1..N, with bulk flags rho(gamma_i) >= c1.
struct QuantileTable {
  std::vector<double> gamma;  // gamma[i-1] = gamma_i
  std::vector<bool> bulk;
  double c1 = 0.05;

  std::size_t n() const { return gamma.size(); }
  double at(std::size_t i) const { return gamma.at(i - 1); }
  bool in_bulk(std::size_t i) const { return bulk.at(i - 1); }
};

namespace detail {

inline double invert_cdf(const ScDos& dos, double p) {
  const double top = dos.cdf.back();
  if (!(p >= 0.0) || p > top + 1e-8) throw InputError("quantiles: level outside the CDF range");
  p = std::min(p, top - 1e-9);  // the top level is reached at the upper edge
  if (p <= dos.cdf.front()) return dos.grid.front();
  // first node with cdf >= p, then bisection on the interpolant inside the cell
  const auto it = std::lower_bound(dos.cdf.begin(), dos.cdf.end(), p);
  const std::size_t k = static_cast<std::size_t>(it - dos.cdf.begin());
  double lo = dos.grid[k - 1], hi = dos.grid[k];
  for (int iter = 0; iter < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++iter) {
    const double mid = 0.5 * (lo + hi);
    (dos.cdf_at(mid) < p ? lo : hi) = mid;
  }
  return hi;
}

}  // namespace detail

inline QuantileTable quantiles(const ScDos& dos, std::size_t n, double c1 = 0.05) {
  if (n < 1) throw InputError("quantiles: n must be >= 1");
  QuantileTable t;
  t.c1 = c1;
  t.gamma.resize(n);
  t.bulk.resize(n);
  for (std::size_t i = 1; i <= n; ++i) {
    const double g = detail::invert_cdf(dos, static_cast<double>(i) / static_cast<double>(n));
    t.gamma[i - 1] = g;
    t.bulk[i - 1] = dos.rho_at(g) >= c1;
  }
  return t;
}

/// Quantile and density there, from the un-tabulated CDF (safeguarded Newton).
struct QuantilePoint {
  double gamma = 0.0;
  double rho = 0.0;
  double cdf = 0.0;
};

inline QuantilePoint quantile_at(const DeformationSpectrum& spectrum, double p,
                                 const RealAxisOptions& o = {}) {
  if (!(p > 0.0 && p <= 1.0)) throw InputError("quantile_at: level must lie in (0,1]");
  std::optional<DeformationSpectrum> tmp;
  const DeformationSpectrum& s = detail::solver_view(spectrum, tmp);
  double lo = s.min() - 2.05, hi = s.max() + 2.05;
  double x = s.mean() + 4.0 * (p - 0.5);
  x = std::clamp(x, lo, hi);
  QuantilePoint best{hi, 0.0, 1.0};
  std::optional<Complex> warm;
  for (int it = 0; it < 200; ++it) {
    const RealAxisValue v = evaluate_real_axis(s, x, o, true, warm);
    warm = v.m_start;
    const double f = v.cdf - p;
    if (f >= 0.0 && x <= best.gamma) best = {x, v.rho, v.cdf};
    if (std::abs(f) <= 1e-13) return {x, v.rho, v.cdf};
    (f < 0.0 ? lo : hi) = x;
    if (hi - lo <= 1e-13 * std::max(1.0, std::abs(x))) break;
    double next = v.rho > 0.0 ? x - f / v.rho : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    x = next;
  }
  return best;
}

/// i0 = ceil(N * CDF(E)) clamped to [1, N]; values within 1e-9 of an integer
/// are snapped so that exact quantiles map to their own index.
inline std::size_t index_from_cdf(double f, std::size_t n) {
  const double v = static_cast<double>(n) * f;
  const double r = std::round(v);
  const double c = std::abs(v - r) <= 1e-9 ? r : std::ceil(v);
  return static_cast<std::size_t>(std::clamp(c, 1.0, static_cast<double>(n)));
}

inline std::size_t index_at_energy(const ScDos& dos, double e, std::size_t n) {
  return index_from_cdf(dos.cdf_at(e), n);
}

inline std::size_t index_at_energy(const DeformationSpectrum& spectrum, double e, std::size_t n,
                                   const RealAxisOptions& o = {}) {
  return index_from_cdf(cdf_at(spectrum, e, o), n);
}

struct QuantileShiftReport {
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double shift = 0.0;        // gamma_i(x1) - gamma_i(x2)
  double linear_term = 0.0;  // (x1 - x2) <A>
  double residual = 0.0;     // shift - linear_term
  double error_scale = 0.0;  // |dx| <Å²>^{1/2} + dx^2
};

inline QuantileShiftReport quantile_shift_check(const DeformationFamily& family, double x1, double x2,
                                                std::size_t i, std::size_t n, double c1 = 0.05,
                                                const RealAxisOptions& o = {}) {
  if (i < 1 || i > n) throw InputError("quantile_shift_check: index out of range");
  const double p = static_cast<double>(i) / static_cast<double>(n);
  const QuantilePoint q1 = quantile_at(*family.at(x1), p, o);
  const QuantilePoint q2 = quantile_at(*family.at(x2), p, o);
  if (q1.rho < c1 || q2.rho < c1) throw InputError("quantile_shift_check: index leaves the bulk");
  QuantileShiftReport r;
  r.gamma1 = q1.gamma;
  r.gamma2 = q2.gamma;
  r.shift = q1.gamma - q2.gamma;
  const double dx = x1 - x2;
  r.linear_term = dx * family.spec().mean_a();
  r.residual = r.shift - r.linear_term;
  r.error_scale = std::abs(dx) * std::sqrt(family.spec().traceless_a_sq()) + dx * dx;
  return r;
}

namespace detail {

inline bool spectra_share_basis(const DeformationSpectrum& a, const DeformationSpectrum& b) {
  return a.has_basis() && b.has_basis() && a.n == b.n && a.basis == b.basis;
}

// Per-mode values of M (conjugated when requested).
inline std::vector<Complex> mode_values(const MdeSolution& s, bool conj) {
  std::vector<Complex> v = s.mdiag();
  if (conj)
    for (auto& c : v) c = std::conj(c);
  return v;
}

inline Complex weighted_sum(const DeformationSpectrum& s, const std::vector<Complex>& v) {
  Complex acc = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) acc += s.weights[k] * v[k];
  return acc;
}

// <M1 M2 X> with X = obs (or identity when obs is null).
inline Complex trace_product(const MdeSolution& s1, const MdeSolution& s2, bool conj2,
                             const HermitianMatrix* obs) {
  const DeformationSpectrum& d1 = *s1.spectrum;
  const DeformationSpectrum& d2 = *s2.spectrum;
  const std::vector<Complex> a = mode_values(s1, false);
  const std::vector<Complex> b = mode_values(s2, conj2);
  const bool sc1 = d1.is_scalar(), sc2 = d2.is_scalar();
  const std::size_t dim = std::max(d1.n, d2.n);
  if (obs && dim != 0 && obs->n() != dim) throw InputError("m12_observable: observable dimension mismatch");
  if (d1.n != 0 && d2.n != 0 && d1.n != d2.n) throw InputError("stability_factor: dimension mismatch");

  // <M X> for a single solution, M = sum_k M_k u_k u_k^*
  auto single = [&](const DeformationSpectrum& d, const std::vector<Complex>& v) -> Complex {
    if (!obs) return weighted_sum(d, v);
    if (d.is_scalar()) return v.front() * obs->normalized_trace();
    if (!d.has_basis()) throw InputError("m12_observable: eigenbasis not tracked");
    Complex acc = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(d.columns[k]);
      const Complex diag = d.basis ? d.basis->col(c).dot(obs->dense() * d.basis->col(c))
                                   : (*obs)(d.columns[k], d.columns[k]);
      acc += v[k] * diag;
    }
    return acc / static_cast<double>(d.n);
  };

  if (sc1) return a.front() * single(d2, b);
  if (sc2) return b.front() * single(d1, a);
  if (!d1.has_basis() || !d2.has_basis())
    throw InputError("stability_factor: eigenbasis required for non-scalar deformations");

  const double inv_n = 1.0 / static_cast<double>(dim);
  if (spectra_share_basis(d1, d2)) {
    std::vector<std::size_t> mode2(dim);
    for (std::size_t l = 0; l < d2.columns.size(); ++l) mode2[d2.columns[l]] = l;
    Complex acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const std::size_t c = d1.columns[k];
      Complex x = 1.0;
      if (obs) {
        const auto cc = static_cast<Eigen::Index>(c);
        x = d1.basis ? d1.basis->col(cc).dot(obs->dense() * d1.basis->col(cc)) : (*obs)(c, c);
      }
      acc += a[k] * b[mode2[c]] * x;
    }
    return acc * inv_n;
  }

  // General: (1/N) sum_kl M1_k O_kl M2_l X_lk with O = U1^* U2, X = U2^* obs U1.
  const ComplexMatrix u1 = d1.mode_basis();
  const ComplexMatrix u2 = d2.mode_basis();
  const ComplexMatrix o = u1.adjoint() * u2;
  ComplexMatrix x;
  if (obs) x = u2.adjoint() * (obs->dense() * u1);
  Complex acc = 0.0;
  for (Eigen::Index l = 0; l < o.cols(); ++l)
    for (Eigen::Index k = 0; k < o.rows(); ++k) {
      const Complex xk = obs ? x(l, k) : std::conj(o(k, l));
      acc += a[static_cast<std::size_t>(k)] * o(k, l) * b[static_cast<std::size_t>(l)] * xk;
    }
  return acc * inv_n;
}

}  // namespace detail

/// <M1 M2> (or <M1 M2^*> when adjoint is set).
inline Complex mm_trace(const MdeSolution& s1, const MdeSolution& s2, bool adjoint) {
  if (!s1.spectrum || !s2.spectrum) throw InputError("stability_factor: solution without spectrum");
  return detail::trace_product(s1, s2, adjoint, nullptr);
}

/// |1 - <M1 M2^{(*)}>|.
inline double stability_factor(const MdeSolution& s1, const MdeSolution& s2, bool adjoint) {
  return std::abs(1.0 - mm_trace(s1, s2, adjoint));
}

inline constexpr double kStabilityThreshold = 1e-8;

/// <M12 obs> with M12 = M1 M2 / (1 - <M1 M2>).
inline Complex m12_observable(const MdeSolution& s1, const MdeSolution& s2, const HermitianMatrix& obs) {
  const Complex denom = 1.0 - mm_trace(s1, s2, false);
  if (std::abs(denom) <= kStabilityThreshold)
    throw SingularityError("m12_observable: stability factor below threshold");
  return detail::trace_product(s1, s2, false, &obs) / denom;
}

inline void write_scdos_csv(std::ostream& os, const ScDos& dos) {
  csv::header(os, {"E", "rho", "cdf"});
  for (std::size_t k = 0; k < dos.grid.size(); ++k) csv::row(os, {dos.grid[k], dos.rho[k], dos.cdf[k]});
}

inline void write_quantiles_csv(std::ostream& os, const QuantileTable& t) {
  csv::header(os, {"i", "gamma", "bulk_flag"});
  for (std::size_t i = 1; i <= t.n(); ++i)
    csv::row(os, {static_cast<long long>(i), t.at(i), static_cast<long long>(t.in_bulk(i) ? 1 : 0)});
}

}  // namespace rmtq
