#include "catch_amalgamated.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Eigenvalues>

#include "rmtq/ensembles.hpp"
#include "rmtq/mde.hpp"
#include "rmtq/spectral.hpp"

using namespace rmtq;
using Catch::Matchers::WithinAbs;

namespace {

// Two-point deformation D = diag(+a, -a) in equal proportion. With w = z + m the
// scalar equation becomes the cubic w^3 - z w^2 + (1 - a^2) w + a^2 z = 0; the
// root with Im m > 0 (Im m >= 0 on the real axis) is the Stieltjes transform.
Complex two_point_oracle(double a, Complex z) {
  Eigen::Matrix3cd c = Eigen::Matrix3cd::Zero();
  // companion matrix of w^3 + c2 w^2 + c1 w + c0
  const Complex c2 = -z, c1 = 1.0 - a * a, c0 = a * a * z;
  c(0, 2) = -c0;
  c(1, 0) = 1.0;
  c(1, 2) = -c1;
  c(2, 1) = 1.0;
  c(2, 2) = -c2;
  const Eigen::Vector3cd roots = Eigen::ComplexEigenSolver<Eigen::Matrix3cd>(c).eigenvalues();
  Complex best(0.0, -1.0);
  for (int k = 0; k < 3; ++k) {
    const Complex m = roots(k) - z;
    if (m.imag() > best.imag()) best = m;
  }
  return best;
}

DeformationSpectrum two_point(double a, std::size_t n = 2) {
  std::vector<double> d(n);
  for (std::size_t k = 0; k < n; ++k) d[k] = k % 2 == 0 ? a : -a;
  return DeformationSpectrum::from_values(d);
}

// Simpson integral of the semicircle density from -2 to x, independent of the closed form.
// Substituting x = -2 + u^2 removes the square-root edge.
double semicircle_mass_simpson(double x) {
  const int n = 20000;
  const double top = std::sqrt(x + 2.0), h = top / n;
  double acc = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    const double u = k * h;
    acc += w * semicircle_density(-2.0 + u * u) * 2.0 * u;
  }
  return acc * h / 3.0;
}

}  // namespace

TEST_CASE("semicircle closed-form values", "[mde]") {
  const DeformationSpectrum sc = DeformationSpectrum::semicircle();
  CHECK(std::abs(solve_mde(sc, Complex(0.0, 1.0)).m - Complex(0.0, (std::sqrt(5.0) - 1.0) / 2.0)) <= 1e-12);
  CHECK(std::abs(solve_mde(sc, Complex(0.0, 2.0)).m - Complex(0.0, std::sqrt(2.0) - 1.0)) <= 1e-12);
}

TEST_CASE("semicircle oracle on a 100-point grid", "[mde][property]") {
  const DeformationSpectrum sc = DeformationSpectrum::semicircle();
  double worst = 0.0, res = 0.0;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      const Complex z(-3.0 + 6.0 * i / 9.0, std::pow(10.0, -3.0 + 3.5 * j / 9.0));
      const MdeSolution s = solve_mde(sc, z);
      worst = std::max(worst, std::abs(s.m - semicircle_stieltjes(z)));
      res = std::max(res, s.residual);
    }
  CHECK(worst <= 1e-10);
  CHECK(res <= 1e-12);
}

TEST_CASE("scalar deformation shifts the semicircle", "[mde]") {
  for (double c : {-0.7, 0.3, 2.0}) {
    const DeformationSpectrum d = DeformationSpectrum::scalar(c);
    for (Complex z : {Complex(0.1, 0.05), Complex(c, 1e-3), Complex(-2.0, 0.5)})
      CHECK(std::abs(solve_mde(d, z).m - semicircle_stieltjes(z - c)) <= 1e-10);
  }
  // an N-mode D = cI behaves like the scalar one
  const DeformationSpectrum many = DeformationSpectrum::from_values(std::vector<double>(50, 0.4));
  CHECK(std::abs(solve_mde(many, Complex(0.2, 0.1)).m - semicircle_stieltjes(Complex(-0.2, 0.1))) <= 1e-10);
}

TEST_CASE("two-point deformation matches the cubic oracle", "[mde][property]") {
  for (double a : {0.5, 1.0, 1.5}) {
    const DeformationSpectrum d = two_point(a, 10);
    for (double e : {-2.5, -1.2, -0.3, 0.0, 0.8, 1.9})
      for (double eta : {1e-4, 1e-2, 0.3, 2.0}) {
        const Complex z(e, eta);
        const MdeSolution s = solve_mde(d, z);
        CHECK(std::abs(s.m - two_point_oracle(a, z)) <= 1e-10);
        CHECK(s.residual <= 1e-12);
      }
  }
}

TEST_CASE("Herglotz property and residual on random deformations", "[mde][property]") {
  RandomSource rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const HermitianMatrix b = 0.8 * sample_gue(40, rng);
    const auto spec = std::make_shared<const DeformationSpectrum>(DeformationSpectrum::from_matrix(b, false));
    for (int k = 0; k < 20; ++k) {
      const Complex z(rng.uniform(-4.0, 4.0), std::pow(10.0, rng.uniform(-4.0, 1.0)));
      const MdeSolution s = solve_mde(spec, z);
      CHECK(s.m.imag() > 0.0);
      CHECK(s.residual <= 1e-12);
      CHECK(detail::mde_residual(*spec, z, s.m) <= 1e-12);
      // M_k are the diagonal entries of the matrix solution
      Complex mean = 0.0;
      for (const Complex& v : s.mdiag()) mean += v;
      CHECK(std::abs(mean / 40.0 - s.m) <= 1e-12);
    }
  }
}

TEST_CASE("solve_mde errors", "[mde]") {
  const DeformationSpectrum sc = DeformationSpectrum::semicircle();
  CHECK_THROWS_AS(solve_mde(sc, Complex(0.0, 0.0)), InputError);
  CHECK_THROWS_AS(solve_mde(sc, Complex(0.0, -1.0)), InputError);
  MdeOptions tight;
  tight.max_iterations = 1;
  tight.tolerance = 0.0;
  try {
    solve_mde(two_point(1.0), Complex(0.3, 0.01), tight);
    FAIL("expected a solver error");
  } catch (const SolverError& e) {
    CHECK(std::isfinite(e.last_residual()));
  }
}

TEST_CASE("real-axis density", "[mde]") {
  const DeformationSpectrum sc = DeformationSpectrum::semicircle();
  CHECK_THAT(density_at(sc, 0.0), WithinAbs(1.0 / M_PI, 1e-9));
  CHECK(density_at(sc, 2.0) == 0.0);
  CHECK(density_at(sc, -2.0) == 0.0);
  CHECK(density_at(sc, 2.3) == 0.0);
  for (double e : {-1.8, -1.0, 0.4, 1.5})
    CHECK_THAT(density_at(sc, e), WithinAbs(semicircle_density(e), 1e-7));
  CHECK_THAT(cdf_at(sc, 0.0), WithinAbs(0.5, 1e-9));
  for (double e : {-1.5, 0.7}) CHECK_THAT(cdf_at(sc, e), WithinAbs(semicircle_cdf(e), 1e-8));

  const DeformationSpectrum tp = two_point(1.0);
  // a = 1 puts a cusp at E = 0, so stay away from it here
  for (double e : {-2.0, -1.0, 0.4, 1.3})
    CHECK_THAT(density_at(tp, e), WithinAbs(two_point_oracle(1.0, Complex(e, 0.0)).imag() / M_PI, 1e-7));
}

TEST_CASE("self-consistent density of states", "[mde][property]") {
  for (const DeformationSpectrum& d : {DeformationSpectrum::semicircle(), two_point(0.5), two_point(1.5)}) {
    const ScDos dos = scdos(d);
    CHECK_THAT(dos.total_mass(), WithinAbs(1.0, 1e-6));
    for (double r : dos.rho) CHECK(r >= 0.0);
    for (std::size_t k = 1; k < dos.cdf.size(); ++k) CHECK(dos.cdf[k] >= dos.cdf[k - 1]);
    CHECK(dos.support_lo < dos.support_hi);
    // smooth inside the support: second differences stay small away from edges
    for (std::size_t k = 1; k + 1 < dos.grid.size(); ++k) {
      const double e = dos.grid[k];
      if (dos.rho[k - 1] < 0.05 || dos.rho[k] < 0.05 || dos.rho[k + 1] < 0.05) continue;
      if (std::abs(dos.grid[k + 1] - e) < 1e-3 || std::abs(e - dos.grid[k - 1]) < 1e-3) continue;
      const double h1 = e - dos.grid[k - 1], h2 = dos.grid[k + 1] - e;
      const double slope_change = (dos.rho[k + 1] - dos.rho[k]) / h2 - (dos.rho[k] - dos.rho[k - 1]) / h1;
      CHECK(std::abs(slope_change) <= 0.5);
    }
  }
  const ScDos sc = scdos(DeformationSpectrum::semicircle());
  CHECK_THAT(sc.support_lo, WithinAbs(-2.0, 1e-8));
  CHECK_THAT(sc.support_hi, WithinAbs(2.0, 1e-8));
  // the two-point law splits into two bands when a is large
  const ScDos split = scdos(two_point(1.5));
  CHECK(split.rho_at(0.0) == 0.0);
  CHECK_THAT(split.cdf_at(0.0), WithinAbs(0.5, 1e-6));
}

TEST_CASE("scdos rejects a grid that misses the support", "[mde]") {
  CHECK_THROWS_AS(scdos(DeformationSpectrum::semicircle(), std::vector<double>{-1.0, 0.0, 1.0}), InputError);
  CHECK_THROWS_AS(scdos(DeformationSpectrum::semicircle(), std::vector<double>{1.0, 0.0}), InputError);
}

TEST_CASE("quantiles", "[mde]") {
  const ScDos dos = scdos(DeformationSpectrum::semicircle());
  const std::size_t n = 1000;
  const QuantileTable q = quantiles(dos, n);
  CHECK_THAT(q.at(n / 2), WithinAbs(0.0, 1e-9));
  CHECK_THAT(q.at(n), WithinAbs(2.0, 1e-5));
  // independent oracle: bisection on a Simpson integral of the density
  double lo = -2.0, hi = 0.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (semicircle_mass_simpson(mid) < 0.25 ? lo : hi) = mid;
  }
  CHECK_THAT(q.at(n / 4), WithinAbs(0.5 * (lo + hi), 1e-8));
  CHECK_THAT(q.at(n / 4), WithinAbs(-0.81, 0.01));
  for (std::size_t i = 1; i < n; ++i) {
    if (q.in_bulk(i) && q.in_bulk(i + 1)) CHECK(q.at(i) < q.at(i + 1));
    if (q.in_bulk(i)) {
      CHECK(std::abs(dos.cdf_at(q.at(i)) - static_cast<double>(i) / n) <= 1e-8);
      CHECK(std::abs(semicircle_cdf(q.at(i)) - static_cast<double>(i) / n) <= 1e-8);
    }
  }
  for (std::size_t i = 1; i <= n; ++i) CHECK(q.in_bulk(i) == (semicircle_density(q.at(i)) >= q.c1));
  CHECK_FALSE(q.in_bulk(n));
  CHECK(q.in_bulk(n / 2));
  CHECK_THROWS_AS(detail::invert_cdf(dos, 1.5), InputError);
}

TEST_CASE("quantile_at inverts the exact CDF", "[mde]") {
  for (double p : {0.01, 0.1, 0.25, 0.5, 0.9, 0.99})
    CHECK_THAT(quantile_at(DeformationSpectrum::semicircle(), p).gamma, WithinAbs(semicircle_quantile(p), 1e-8));
  const DeformationSpectrum tp = two_point(0.7);
  for (double p : {0.2, 0.5, 0.8}) {
    const QuantilePoint q = quantile_at(tp, p);
    CHECK_THAT(cdf_at(tp, q.gamma), WithinAbs(p, 1e-8));
  }
  CHECK_THROWS_AS(quantile_at(tp, 0.0), InputError);
}

TEST_CASE("index at energy", "[mde]") {
  const ScDos dos = scdos(DeformationSpectrum::semicircle());
  CHECK(index_at_energy(dos, 0.0, 1000) == 500);
  CHECK(index_at_energy(dos, 0.0, 999) == 500);
  CHECK(index_at_energy(dos, 2.0, 1000) == 1000);
  CHECK(index_at_energy(dos, -5.0, 1000) == 1);
  CHECK(index_from_cdf(0.25 + 1e-12, 100) == 25);
  CHECK(index_from_cdf(0.2501, 100) == 26);

  // A = I: i0(x, E) = i0(0, E - x)
  const std::size_t n = 300;
  const auto a = HermitianMatrix::identity(n, SymmetryClass::ComplexHermitian);
  const DeformationFamily fam = DeformationFamily::direction(a, false);
  const double x = 0.35;
  const ScDos shifted = scdos(*fam.at(x));
  for (double e = -1.6; e <= 2.2; e += 0.2)
    CHECK(index_at_energy(shifted, e, n) == index_at_energy(dos, e - x, n));
}

TEST_CASE("quantile shift", "[mde]") {
  const std::size_t n = 200;
  SECTION("A = I is a pure shift") {
    const auto fam = DeformationFamily::direction(HermitianMatrix::identity(n, SymmetryClass::ComplexHermitian), false);
    const QuantileShiftReport r = quantile_shift_check(fam, 0.3, 0.1, 80, n);
    CHECK_THAT(r.linear_term, WithinAbs(0.2, 1e-15));
    CHECK(std::abs(r.residual) <= 1e-10);
  }
  SECTION("traceless A: no linear term, shift within the error scale") {
    RealVector d(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < d.size(); ++k) d(k) = k % 2 ? 1.0 : -1.0;
    const auto fam = DeformationFamily::direction(HermitianMatrix::diagonal(d, SymmetryClass::ComplexHermitian), false);
    const QuantileShiftReport r = quantile_shift_check(fam, 0.12, 0.1, 60, n);
    CHECK(r.linear_term == 0.0);
    CHECK(std::abs(r.shift) <= r.error_scale);
  }
  SECTION("slope of the shift against dx matches <A>") {
    RealVector d(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < d.size(); ++k) d(k) = 1.0 + (k % 2 ? 0.5 : -0.5);
    const auto fam = DeformationFamily::direction(HermitianMatrix::diagonal(d, SymmetryClass::ComplexHermitian), false);
    const std::vector<double> dxs{0.02, 0.04, 0.08};
    double sxx = 0.0, sxy = 0.0, sx = 0.0, sy = 0.0;
    for (double dx : dxs) {
      const double y = quantile_shift_check(fam, 0.3 + dx, 0.3, 70, n).shift;
      sx += dx, sy += y, sxx += dx * dx, sxy += dx * y;
    }
    const double k = static_cast<double>(dxs.size());
    const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    CHECK_THAT(slope, WithinAbs(fam.spec().mean_a(), 0.1 * fam.spec().mean_a()));
  }
  SECTION("an index outside the bulk is rejected") {
    const auto fam = DeformationFamily::direction(HermitianMatrix::identity(n, SymmetryClass::ComplexHermitian), false);
    CHECK_THROWS_AS(quantile_shift_check(fam, 0.1, 0.0, n, n), InputError);
    CHECK_THROWS_AS(quantile_shift_check(fam, 0.1, 0.0, 0, n), InputError);
  }
}

TEST_CASE("deformation family", "[mde]") {
  RandomSource rng(5);
  const std::size_t n = 30;
  const HermitianMatrix a = sample_gue(n, rng);
  const HermitianMatrix b = 0.5 * sample_gue(n, rng);
  SECTION("shared basis values equal eig(xA) for both signs of x") {
    const DeformationFamily fam = DeformationFamily::direction(a);
    for (double x : {-0.7, 0.0, 1.3}) {
      const auto s = fam.at(x);
      const SpectralData sd = eigh(x * a, false);
      for (std::size_t k = 0; k < n; ++k) CHECK_THAT(s->values[k], WithinAbs(sd.lambda(k + 1), 1e-12));
      // tracked basis column is an eigenvector for the value
      const ComplexMatrix u = s->mode_basis();
      CHECK(((x * a).dense() * u - u * Eigen::Map<const RealVector>(s->values.data(), n).cast<Complex>().asDiagonal())
                .cwiseAbs()
                .maxCoeff() <= 1e-10);
    }
  }
  SECTION("general family equals eig(B + xA)") {
    const DeformationFamily fam(DeformationSpec(b, a));
    const auto s = fam.at(0.4);
    const SpectralData sd = eigh(b + 0.4 * a, false);
    for (std::size_t k = 0; k < n; ++k) CHECK_THAT(s->values[k], WithinAbs(sd.lambda(k + 1), 1e-12));
  }
}

TEST_CASE("stability factor", "[mde]") {
  const auto sc = std::make_shared<const DeformationSpectrum>(DeformationSpectrum::semicircle());
  SECTION("semicircle at z = i") {
    const MdeSolution s = solve_mde(sc, Complex(0.0, 1.0));
    CHECK_THAT(stability_factor(s, s, false), WithinAbs(1.0 + (3.0 - std::sqrt(5.0)) / 2.0, 1e-12));
  }
  SECTION("adjoint factor vanishes linearly in eta") {
    double prev = 0.0;
    for (double eta : {1e-2, 1e-3, 1e-4}) {
      const MdeSolution s = solve_mde(sc, Complex(0.3, eta));
      const double f = stability_factor(s, s, true);
      if (prev > 0.0) CHECK_THAT(prev / f, WithinAbs(10.0, 0.5));
      prev = f;
    }
  }
  SECTION("A = I: factor grows like |dE - dx|^2") {
    const std::size_t n = 50;
    const auto fam = DeformationFamily::direction(HermitianMatrix::identity(n, SymmetryClass::ComplexHermitian));
    for (double de : {0.02, 0.05, 0.1})
      for (double dx : {0.0, 0.03}) {
        const MdeSolution s1 = solve_mde_real_axis(fam.at(0.0), 0.1);
        const MdeSolution s2 = solve_mde_real_axis(fam.at(dx), 0.1 + de);
        const double gap = std::abs(de - dx);
        if (gap == 0.0) continue;
        CHECK(stability_factor(s1, s2, true) >= 0.1 * gap * gap);
      }
  }
  SECTION("lower bound on a bulk grid for a generic direction") {
    const std::size_t n = 80;
    RealVector d(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < d.size(); ++k) d(k) = 0.3 + std::sin(1.7 * static_cast<double>(k));
    const auto fam = DeformationFamily::direction(HermitianMatrix::diagonal(d, SymmetryClass::ComplexHermitian));
    const double mean_a = fam.spec().mean_a(), a2 = fam.spec().traceless_a_sq();
    for (double dx : {0.0, 0.05, 0.1})
      for (double de : {-0.1, 0.0, 0.05, 0.1}) {
        if (std::abs(dx) + std::abs(de) > 0.2 || (dx == 0.0 && de == 0.0)) continue;
        const MdeSolution s1 = solve_mde_real_axis(fam.at(0.2), 0.0);
        const MdeSolution s2 = solve_mde_real_axis(fam.at(0.2 + dx), de);
        const double bound = 0.1 * (std::pow(de - dx * mean_a, 2) + dx * dx * a2);
        CHECK(stability_factor(s1, s2, true) >= bound);
        CHECK(stability_factor(s1, s2, false) >= bound);
      }
  }
}

TEST_CASE("M12 observable", "[mde]") {
  const auto sc = std::make_shared<const DeformationSpectrum>(DeformationSpectrum::semicircle());
  const std::size_t n = 40;
  const auto id = HermitianMatrix::identity(n, SymmetryClass::ComplexHermitian);
  SECTION("semicircle at z = i") {
    const MdeSolution s = solve_mde(sc, Complex(0.0, 1.0));
    const Complex m = s.m;
    const Complex v = m12_observable(s, s, id);
    CHECK(std::abs(v - m * m / (1.0 - m * m)) <= 1e-12);
    CHECK_THAT(v.real(), WithinAbs(-0.276393, 1e-6));
    CHECK(std::abs(v.imag()) <= 1e-12);
  }
  SECTION("equal spectral parameters give dm/dz") {
    RandomSource rng(6);
    const HermitianMatrix b = 0.7 * sample_gue(n, rng);
    const auto spec = std::make_shared<const DeformationSpectrum>(DeformationSpectrum::from_matrix(b));
    const Complex z(0.25, 0.2);
    const MdeSolution s = solve_mde(spec, z);
    const double h = 1e-5;
    const Complex fd = (solve_mde(spec, z + h).m - solve_mde(spec, z - h).m) / (2.0 * h);
    CHECK(std::abs(m12_observable(s, s, id) - fd) <= 1e-7 * std::abs(fd));
  }
  SECTION("fast paths agree with a dense-matrix oracle") {
    RandomSource rng(7);
    const HermitianMatrix a = sample_gue(n, rng);
    const HermitianMatrix b = 0.5 * sample_gue(n, rng);
    const HermitianMatrix obs = sample_gue(n, rng);
    for (bool shared : {true, false}) {
      const DeformationFamily fam = shared ? DeformationFamily::direction(a) : DeformationFamily(DeformationSpec(b, a));
      const Complex z1(0.1, 0.05), z2(-0.2, -0.08);
      const MdeSolution s1 = solve_mde(fam.at(0.3), z1);
      MdeSolution s2 = solve_mde(fam.at(-0.2), std::conj(z2));
      s2.z = z2;
      s2.m = std::conj(s2.m);
      // dense M_r = (D_r - z_r - m_r)^{-1}
      const auto nn = static_cast<Eigen::Index>(n);
      const ComplexMatrix eye = ComplexMatrix::Identity(nn, nn);
      const HermitianMatrix d1 = shared ? 0.3 * a : b + 0.3 * a;
      const HermitianMatrix d2 = shared ? -0.2 * a : b + (-0.2) * a;
      const ComplexMatrix m1 = (d1.dense() - (z1 + s1.m) * eye).inverse();
      const ComplexMatrix m2 = (d2.dense() - (z2 + s2.m) * eye).inverse();
      const Complex mm = (m1 * m2).trace() / static_cast<double>(n);
      const Complex expected = (m1 * m2 * obs.dense()).trace() / static_cast<double>(n) / (1.0 - mm);
      CHECK(std::abs(m12_observable(s1, s2, obs) - expected) <= 1e-10 * std::max(1.0, std::abs(expected)));
      CHECK_THAT(stability_factor(s1, s2, false), WithinAbs(std::abs(1.0 - mm), 1e-10));
    }
  }
  SECTION("a vanishing stability factor is a singularity error") {
    const MdeSolution s = solve_mde_real_axis(sc, 0.0);
    MdeSolution conj = s;
    conj.m = std::conj(s.m);
    CHECK_THROWS_AS(m12_observable(s, conj, id), SingularityError);
  }
}

TEST_CASE("deformed Wigner eigenvalue histogram follows the MDE density", "[mde]") {
  const std::size_t n = 2000;
  RealVector d(static_cast<Eigen::Index>(n));
  for (Eigen::Index k = 0; k < d.size(); ++k) d(k) = k % 2 ? 1.0 : -1.0;
  const HermitianMatrix b = HermitianMatrix::diagonal(d, SymmetryClass::RealSymmetric);
  const ScDos dos = scdos(DeformationSpectrum::from_matrix(b, false));
  const double lo = dos.support_lo, hi = dos.support_hi, width = 0.1;
  const int bins = static_cast<int>((hi - lo) / width);
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  const int seeds = 50;
  for (int s = 0; s < seeds; ++s) {
    RandomSource rng(9000 + static_cast<std::uint64_t>(s));
    const SpectralData sd = eigh(sample_wigner(EnsembleSpec::wigner(n, SymmetryClass::RealSymmetric), rng) + b, false);
    for (std::size_t i = 1; i <= n; ++i) {
      const int k = static_cast<int>(std::floor((sd.lambda(i) - lo) / width));
      if (k >= 0 && k < bins) counts[static_cast<std::size_t>(k)] += 1.0;
    }
  }
  double worst = 0.0;
  for (int k = 0; k < bins; ++k) {
    const double a = lo + k * width, c = a + width;
    const double expected = (dos.cdf_at(c) - dos.cdf_at(a)) / width;
    if (dos.rho_at(a) < 0.05 || dos.rho_at(c) < 0.05) continue;  // bulk bins only
    worst = std::max(worst, std::abs(counts[static_cast<std::size_t>(k)] / (seeds * n * width) - expected));
  }
  CHECK(worst <= 0.03);
}

TEST_CASE("CSV export of density and quantile tables", "[mde]") {
  const ScDos dos = scdos(DeformationSpectrum::semicircle(), default_grid(DeformationSpectrum::semicircle(), 41));
  std::ostringstream a, b;
  write_scdos_csv(a, dos);
  write_quantiles_csv(b, quantiles(dos, 4));
  CHECK(a.str().rfind("E,rho,cdf\n", 0) == 0);
  CHECK(b.str().rfind("i,gamma,bulk_flag\n", 0) == 0);
  CHECK(b.str().find("\n2,") != std::string::npos);
}
