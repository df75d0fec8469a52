#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <mutex>
#include <ostream>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <boost/numeric/odeint.hpp>

#include "rmtq/csv.hpp"
#include "rmtq/error.hpp"
#include "rmtq/random.hpp"

namespace rmtq {

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton on P_q).
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline GaussLegendre gauss_legendre(std::size_t q) {
  if (q < 1) throw InputError("gauss_legendre: order must be >= 1");
  GaussLegendre g;
  g.nodes.resize(q);
  g.weights.resize(q);
  const double n = static_cast<double>(q);
  for (std::size_t i = 0; i < (q + 1) / 2; ++i) {
    double x = std::cos(M_PI * (static_cast<double>(i) + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= q; ++k) {
        const double kk = static_cast<double>(k);
        const double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
        p0 = p1;
        p1 = p2;
      }
      if (q == 1) p0 = 1.0, p1 = x;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    g.nodes[i] = -x;
    g.nodes[q - 1 - i] = x;
    g.weights[i] = g.weights[q - 1 - i] = w;
  }
  if (q % 2 == 1) g.nodes[q / 2] = 0.0;
  return g;
}

struct SigmaOptions {
  double t0 = 1e-6;                 // series start
  double t_end = 5.0 * M_PI + 0.2;  // covers s <= 5
  double rel_tol = 1e-10;
  double abs_tol = 1e-14;
  double sample_step = 1e-3;
};

/// Solution of the sigma form of Painleve V for the sine kernel,
///   (t s'')^2 + 4 (t s' - s)(t s' - s + s'^2) = 0,  s(t) ~ -t/pi - t^2/pi^2,
/// tabulated with the running integrals I(t) = int_0^t s/t' and
/// J(t) = int_0^t sqrt(-(d/dt')(s/t')). The state carried by the integrator is
/// (sigma, u = t sigma' - sigma, I, J).
class SigmaSolution {
 public:
  struct Point {
    double sigma, dsigma, u, du, i, j;
  };

  double t0() const { return t0_; }
  double t_end() const { return times_.back(); }
  double min_radicand() const { return min_radicand_; }
  const std::vector<double>& times() const { return times_; }

  /// Values at t in (0, t_end]; below t0 the two-term series is used.
  Point at(double t) const {
    if (!(t > 0.0) || t > t_end() * (1.0 + 1e-12))
      throw InputError("SigmaSolution: t outside the integrated range");
    if (t <= t0_) return series(t);
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t k = static_cast<std::size_t>(it - times_.begin());
    if (k >= times_.size()) k = times_.size() - 1;
    const std::size_t a = k - 1;
    const double h = times_[k] - times_[a];
    const double x = (t - times_[a]) / h;
    const double h00 = (1 + 2 * x) * (1 - x) * (1 - x), h10 = x * (1 - x) * (1 - x);
    const double h01 = x * x * (3 - 2 * x), h11 = x * x * (x - 1);
    std::array<double, 4> y{};
    for (int c = 0; c < 4; ++c)
      y[c] = h00 * y_[a][c] + h10 * h * dy_[a][c] + h01 * y_[k][c] + h11 * h * dy_[k][c];
    return point(t, y);
  }

  static Point series(double t) {
    const double pi2 = M_PI * M_PI;
    std::array<double, 4> y{-t / M_PI - t * t / pi2, -t * t / pi2, -t / M_PI - t * t / (2 * pi2), t / M_PI};
    return point(t, y);
  }

  static std::array<double, 4> rhs(double t, const std::array<double, 4>& y, double* radicand = nullptr) {
    const double ds = (y[1] + y[0]) / t;
    const double rad = -y[1] * (y[1] + ds * ds);
    if (radicand) *radicand = rad;
    if (rad < -1e-12) throw IntegrationError("sigma: square-root argument negative (branch loss)", t);
    if (y[1] > 1e-12) throw IntegrationError("sigma: t sigma' - sigma became positive", t);
    return {ds, -2.0 * std::sqrt(std::max(rad, 0.0)), y[0] / t, std::sqrt(std::max(-y[1], 0.0)) / t};
  }

 private:
  friend SigmaSolution solve_sigma(const SigmaOptions&);

  static Point point(double t, const std::array<double, 4>& y) {
    const auto d = rhs(t, y);
    return {y[0], d[0], y[1], d[1], y[2], y[3]};
  }

  double t0_ = 0.0;
  double min_radicand_ = 0.0;
  std::vector<double> times_;
  std::vector<std::array<double, 4>> y_, dy_;
};

inline SigmaSolution solve_sigma(const SigmaOptions& o = {}) {
  if (!(o.t0 > 0.0 && o.t0 < 1e-2)) throw InputError("solve_sigma: t0 must lie in (0, 1e-2)");
  if (!(o.t_end > o.t0 && o.t_end <= 40.0)) throw InputError("solve_sigma: endpoint must lie in (t0, 40]");
  namespace ode = boost::numeric::odeint;
  using State = std::array<double, 4>;

  SigmaSolution sol;
  sol.t0_ = o.t0;
  std::vector<double> times{o.t0};
  for (std::size_t k = 1;; ++k) {
    const double t = static_cast<double>(k) * o.sample_step;
    if (t <= o.t0) continue;
    if (t >= o.t_end - 1e-12) break;
    times.push_back(t);
  }
  times.push_back(o.t_end);

  const double pi2 = M_PI * M_PI;
  State y{-o.t0 / M_PI - o.t0 * o.t0 / pi2, -o.t0 * o.t0 / pi2, -o.t0 / M_PI - o.t0 * o.t0 / (2 * pi2),
          o.t0 / M_PI};
  double min_rad = std::numeric_limits<double>::infinity();
  auto system = [](const State& x, State& dxdt, double t) { dxdt = SigmaSolution::rhs(t, x); };
  auto observer = [&](const State& x, double t) {
    double rad = 0.0;
    const State d = SigmaSolution::rhs(t, x, &rad);
    min_rad = std::min(min_rad, rad);
    sol.times_.push_back(t);
    sol.y_.push_back(x);
    sol.dy_.push_back(d);
  };
  auto stepper = ode::make_dense_output(o.abs_tol, o.rel_tol, ode::runge_kutta_dopri5<State>());
  ode::integrate_times(stepper, system, y, times.begin(), times.end(), o.sample_step * 0.1, observer);
  sol.min_radicand_ = min_rad;
  return sol;
}

enum class Provenance { Painleve, Fredholm, Surmise };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Painleve: return "painleve";
    case Provenance::Fredholm: return "fredholm";
    case Provenance::Surmise: return "surmise";
  }
  return "?";
}

/// Tabulated gap density p and CDF F on an increasing grid starting at 0.
struct GapReference {
  int beta = 2;
  Provenance provenance = Provenance::Painleve;
  std::vector<double> s;
  std::vector<double> p;
  std::vector<double> cdf;

  /// Cubic Hermite interpolation of the CDF with p as slopes; F = 0 below 0 and
  /// the last tabulated value beyond the grid.
  double cdf_at(double x) const {
    if (x <= s.front()) return x < s.front() ? 0.0 : cdf.front();
    if (x >= s.back()) return cdf.back();
    auto it = std::upper_bound(s.begin(), s.end(), x);
    const std::size_t k = static_cast<std::size_t>(it - s.begin()) - 1;
    const double h = s[k + 1] - s[k];
    const double t = (x - s[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    const double v = (2 * t3 - 3 * t2 + 1) * cdf[k] + (t3 - 2 * t2 + t) * h * p[k] +
                     (-2 * t3 + 3 * t2) * cdf[k + 1] + (t3 - t2) * h * p[k + 1];
    return std::clamp(v, 0.0, 1.0);
  }

  /// Composite Simpson moment int s^k p ds over the grid (uniform grids only).
  double moment(int k) const {
    const std::size_t n = s.size();
    if (n < 3 || (n - 1) % 2 != 0) throw InputError("GapReference: Simpson needs an odd point count");
    const double h = s[1] - s[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double f = std::pow(s[i], k) * p[i];
      const double c = (i == 0 || i + 1 == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      acc += c * f;
    }
    return acc * h / 3.0;
  }

  double mass() const { return moment(0); }
  double mean() const { return moment(1); }
};

/// Uniform grid 0, ds, ..., s_max.
inline std::vector<double> gap_grid(double s_max = 5.0, double ds = 1e-3) {
  if (!(s_max > 0.0 && ds > 0.0)) throw InputError("gap_grid: bad range");
  const auto n = static_cast<std::size_t>(std::llround(s_max / ds));
  std::vector<double> g(n + 1);
  for (std::size_t k = 0; k <= n; ++k) g[k] = static_cast<double>(k) * ds;
  return g;
}

namespace detail {

inline void check_sigma_range(const SigmaSolution& sig, const std::vector<double>& grid) {
  for (double s : grid)
    if (s < 0.0 || M_PI * s > sig.t_end() * (1.0 + 1e-12))
      throw InputError("gap reference: grid outside the sigma range");
}

}  // namespace detail

/// p2(s) = d^2/ds^2 exp(I(pi s)); F2(s) = 1 + d/ds exp(I(pi s)).
inline GapReference p2_from_sigma(const SigmaSolution& sig, const std::vector<double>& grid) {
  detail::check_sigma_range(sig, grid);
  GapReference r;
  r.beta = 2;
  r.s = grid;
  r.p.resize(grid.size());
  r.cdf.resize(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double s = grid[k];
    if (s == 0.0) {
      r.p[k] = 0.0;
      r.cdf[k] = 0.0;
      continue;
    }
    const double t = M_PI * s;
    const auto v = sig.at(t);
    const double f1 = M_PI * v.sigma / t;          // f'
    const double f2 = M_PI * M_PI * v.u / (t * t);  // f''
    const double e = std::exp(v.i);
    r.p[k] = std::max(e * (f2 + f1 * f1), 0.0);
    r.cdf[k] = std::clamp(1.0 + f1 * e, 0.0, 1.0);
  }
  return r;
}

/// p1(s) = d^2/ds^2 exp(g(s)), g(s) = (I(pi s) - J(pi s)) / 2.
inline GapReference p1_from_sigma(const SigmaSolution& sig, const std::vector<double>& grid) {
  detail::check_sigma_range(sig, grid);
  GapReference r;
  r.beta = 1;
  r.s = grid;
  r.p.resize(grid.size());
  r.cdf.resize(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double s = grid[k];
    if (s == 0.0) {
      r.p[k] = 0.0;
      r.cdf[k] = 0.0;
      continue;
    }
    const double t = M_PI * s;
    const auto v = sig.at(t);
    if (-v.u < -1e-12) throw IntegrationError("p1: negative radicand", t);
    const double root = std::sqrt(std::max(-v.u, 0.0)) / t;  // sqrt(-(d/dt)(sigma/t))
    // d/dt of root, using u' = t sigma'' from the ODE
    const double droot = (std::sqrt(std::max(v.u + v.dsigma * v.dsigma, 0.0)) - root) / t;
    const double g = 0.5 * (v.i - v.j);
    const double g1 = 0.5 * M_PI * (v.sigma / t - root);
    const double g2 = 0.5 * M_PI * M_PI * (v.u / (t * t) - droot);
    const double e = std::exp(g);
    r.p[k] = std::max(e * (g2 + g1 * g1), 0.0);
    r.cdf[k] = std::clamp(1.0 + g1 * e, 0.0, 1.0);
  }
  return r;
}

/// log det(I - K_s) for the sine kernel on [0, s] (Nystrom, q Gauss-Legendre
/// nodes). Negative s gives the analytic continuation log det(I + K_{|s|}).
inline double fredholm_log_gap(double s, std::size_t q = 40) {
  if (s == 0.0) return 0.0;
  const GaussLegendre gl = gauss_legendre(q);
  const double a = std::abs(s);
  const auto n = static_cast<Eigen::Index>(q);
  std::vector<double> x(q), sw(q);
  for (std::size_t i = 0; i < q; ++i) {
    x[i] = 0.5 * a * (gl.nodes[i] + 1.0);
    sw[i] = std::sqrt(0.5 * a * gl.weights[i]);
  }
  const double sign = s > 0.0 ? -1.0 : 1.0;
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)];
      const double k = i == j ? 1.0 : std::sin(M_PI * d) / (M_PI * d);
      m(i, j) = sign * sw[static_cast<std::size_t>(i)] * k * sw[static_cast<std::size_t>(j)];
    }
    m(i, i) += 1.0;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw SolverError("fredholm_log_gap: matrix not positive definite", s);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) acc += std::log(llt.matrixL()(i, i));
  return 2.0 * acc;
}

/// Gap probability E(s) = det(I - K_s).
inline double fredholm_gap_probability(double s, std::size_t q = 40) {
  return std::exp(fredholm_log_gap(s, q));
}

/// p2 = E'' by 5-point central differences at step h; F2 = 1 + E' (4th order).
inline GapReference fredholm_p2_oracle(const std::vector<double>& grid, std::size_t q = 40, double h = 1e-3) {
  if (q < 20) throw InputError("fredholm_p2_oracle: quadrature order must be >= 20");
  GapReference r;
  r.beta = 2;
  r.provenance = Provenance::Fredholm;
  r.s = grid;
  r.p.resize(grid.size());
  r.cdf.resize(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double s = grid[k];
    double e[5];
    for (int j = -2; j <= 2; ++j) e[j + 2] = fredholm_gap_probability(s + j * h, q);
    r.p[k] = (-e[4] + 16.0 * e[3] - 30.0 * e[2] + 16.0 * e[1] - e[0]) / (12.0 * h * h);
    r.cdf[k] = 1.0 + (-e[4] + 8.0 * e[3] - 8.0 * e[1] + e[0]) / (12.0 * h);
  }
  return r;
}

inline double surmise_density(int beta, double s) {
  if (s < 0.0) return 0.0;
  if (beta == 2) return 32.0 * s * s / (M_PI * M_PI) * std::exp(-4.0 * s * s / M_PI);
  if (beta == 1) return 0.5 * M_PI * s * std::exp(-0.25 * M_PI * s * s);
  throw InputError("surmise: beta must be 1 or 2");
}

inline double surmise_cdf(int beta, double s) {
  if (s <= 0.0) return 0.0;
  if (beta == 2) return std::erf(2.0 * s / std::sqrt(M_PI)) - 4.0 * s / M_PI * std::exp(-4.0 * s * s / M_PI);
  if (beta == 1) return -std::expm1(-0.25 * M_PI * s * s);
  throw InputError("surmise: beta must be 1 or 2");
}

inline GapReference wigner_surmise(int beta, const std::vector<double>& grid) {
  if (beta != 1 && beta != 2) throw InputError("wigner_surmise: beta must be 1 or 2");
  GapReference r;
  r.beta = beta;
  r.provenance = Provenance::Surmise;
  r.s = grid;
  for (double s : grid) {
    r.p.push_back(surmise_density(beta, s));
    r.cdf.push_back(surmise_cdf(beta, s));
  }
  return r;
}

/// Draw from the surmise: the spacing of a 2x2 GOE/GUE with unit mean.
inline double sample_surmise(int beta, RandomSource& rng) {
  if (beta == 2) {
    const double a = rng.normal(), b = rng.normal(), c = rng.normal();
    return std::sqrt(M_PI / 8.0) * std::sqrt(a * a + b * b + c * c);
  }
  if (beta == 1) {
    const double a = rng.normal(), b = rng.normal();
    return std::sqrt(2.0 / M_PI) * std::sqrt(a * a + b * b);
  }
  throw InputError("sample_surmise: beta must be 1 or 2");
}

/// Painleve-route reference on [0, s_max] with step ds.
inline GapReference gaudin_mehta(int beta, double s_max = 5.0, double ds = 1e-3) {
  if (beta != 1 && beta != 2) throw InputError("gaudin_mehta: beta must be 1 or 2");
  SigmaOptions o;
  o.t_end = M_PI * s_max + 0.2;
  const SigmaSolution sig = solve_sigma(o);
  const auto grid = gap_grid(s_max, ds);
  return beta == 2 ? p2_from_sigma(sig, grid) : p1_from_sigma(sig, grid);
}

/// Default-grid reference, computed once per process.
inline const GapReference& standard_reference(int beta) {
  static std::once_flag f1, f2;
  static GapReference r1, r2;
  if (beta == 1) {
    std::call_once(f1, [] { r1 = gaudin_mehta(1); });
    return r1;
  }
  if (beta == 2) {
    std::call_once(f2, [] { r2 = gaudin_mehta(2); });
    return r2;
  }
  throw InputError("standard_reference: beta must be 1 or 2");
}

/// sup_s |p_a - p_b| over a common grid.
inline double sup_distance(const GapReference& a, const GapReference& b) {
  if (a.s != b.s) throw InputError("sup_distance: grids differ");
  double m = 0.0;
  for (std::size_t k = 0; k < a.p.size(); ++k) m = std::max(m, std::abs(a.p[k] - b.p[k]));
  return m;
}

/// Right-continuous empirical CDF.
class EmpiricalCdf {
 public:
  explicit EmpiricalCdf(std::vector<double> values) : v_(std::move(values)) {
    for (double x : v_)
      if (std::isnan(x)) throw InputError("EmpiricalCdf: NaN sample");
    std::sort(v_.begin(), v_.end());
  }

  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  const std::vector<double>& sorted() const { return v_; }

  double operator()(double x) const {
    if (v_.empty()) return 0.0;
    const auto c = std::upper_bound(v_.begin(), v_.end(), x) - v_.begin();
    return static_cast<double>(c) / static_cast<double>(v_.size());
  }

 private:
  std::vector<double> v_;
};

/// sup |F_emp - F| for a continuous CDF F, exact over the jump points.
template <class Cdf>
double ks_distance_fn(const EmpiricalCdf& emp, Cdf&& cdf) {
  if (emp.empty()) throw InputError("ks_distance: empty sample");
  const auto& v = emp.sorted();
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = cdf(v[i]);
    d = std::max({d, std::abs(static_cast<double>(i + 1) / n - f), std::abs(static_cast<double>(i) / n - f)});
  }
  return d;
}

inline double ks_distance(const EmpiricalCdf& emp, const GapReference& ref) {
  return ks_distance_fn(emp, [&](double s) { return ref.cdf_at(s); });
}

/// Two-sample distance: both step functions evaluated after every jump.
inline double ks_distance(const EmpiricalCdf& a, const EmpiricalCdf& b) {
  if (a.empty() || b.empty()) throw InputError("ks_distance: empty sample");
  const auto& x = a.sorted();
  const auto& y = b.sorted();
  const double na = static_cast<double>(x.size()), nb = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() || j < y.size()) {
    double t;
    if (j >= y.size() || (i < x.size() && x[i] <= y[j]))
      t = x[i];
    else
      t = y[j];
    while (i < x.size() && x[i] <= t) ++i;
    while (j < y.size() && y[j] <= t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

inline void write_reference_csv(std::ostream& os, const GapReference& ref) {
  csv::header(os, {"s", "p", "cdf", "provenance"});
  const auto tag = to_string(ref.provenance);
  for (std::size_t k = 0; k < ref.s.size(); ++k) csv::row(os, {ref.s[k], ref.p[k], ref.cdf[k], tag});
}

}  // namespace rmtq
