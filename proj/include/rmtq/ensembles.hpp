#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <string_view>
#include <variant>

#include <Eigen/Dense>

#include "rmtq/error.hpp"
#include "rmtq/random.hpp"

namespace rmtq {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using RealVector = Eigen::VectorXd;

enum class SymmetryClass { RealSymmetric = 1, ComplexHermitian = 2 };

/// Dyson index: 1 for real symmetric, 2 for complex Hermitian.
constexpr int beta_of(SymmetryClass sym) { return static_cast<int>(sym); }

inline std::string_view to_string(SymmetryClass sym) {
  return sym == SymmetryClass::RealSymmetric ? "real" : "complex";
}

enum class EntryLaw { Gaussian, Rademacher, UniformStandardized };

inline std::string_view to_string(EntryLaw law) {
  switch (law) {
    case EntryLaw::Gaussian: return "gaussian";
    case EntryLaw::Rademacher: return "rademacher";
    case EntryLaw::UniformStandardized: return "uniform";
  }
  return "?";
}

/// Dense Hermitian matrix that is exactly Hermitian at the bit level: every
/// constructor fills the lower triangle and mirrors it, and the diagonal is
/// forced real. Real symmetric matrices are stored with zero imaginary parts.
class HermitianMatrix {
 public:
  HermitianMatrix() = default;

  static HermitianMatrix zero(std::size_t n, SymmetryClass sym) {
    return HermitianMatrix(ComplexMatrix::Zero(as_index(n), as_index(n)), sym);
  }

  static HermitianMatrix identity(std::size_t n, SymmetryClass sym) {
    return HermitianMatrix(ComplexMatrix::Identity(as_index(n), as_index(n)), sym);
  }

  static HermitianMatrix diagonal(const RealVector& d, SymmetryClass sym) {
    return HermitianMatrix(d.cast<Complex>().asDiagonal().toDenseMatrix(), sym);
  }

  /// Builds from the lower triangle (and real part of the diagonal) of `m`.
  /// The strict upper triangle of `m` is ignored.
  static HermitianMatrix from_lower(ComplexMatrix m, SymmetryClass sym) {
    if (m.rows() != m.cols()) throw InputError("HermitianMatrix: matrix is not square");
    return HermitianMatrix(std::move(m), sym);
  }

  std::size_t n() const { return static_cast<std::size_t>(data_.rows()); }
  SymmetryClass symmetry() const { return sym_; }
  const ComplexMatrix& dense() const { return data_; }
  Complex operator()(std::size_t i, std::size_t j) const {
    return data_(as_index(i), as_index(j));
  }

  /// Real trace (Tr H is real for Hermitian H).
  double trace() const { return data_.diagonal().real().sum(); }

  /// Normalised trace <H> = Tr H / N.
  double normalized_trace() const { return trace() / static_cast<double>(n()); }

  /// Spectral norm ||H||, computed from the eigenvalues.
  double operator_norm() const {
    if (n() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(data_, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }

  bool is_exactly_hermitian() const {
    for (Eigen::Index j = 0; j < data_.cols(); ++j) {
      if (data_(j, j).imag() != 0.0) return false;
      for (Eigen::Index i = j + 1; i < data_.rows(); ++i)
        if (data_(j, i) != std::conj(data_(i, j))) return false;
    }
    if (sym_ == SymmetryClass::RealSymmetric)
      return (data_.imag().array() == 0.0).all();
    return true;
  }

  bool all_finite() const { return data_.allFinite(); }

  friend HermitianMatrix operator+(const HermitianMatrix& a, const HermitianMatrix& b) {
    check_compatible(a, b);
    return HermitianMatrix(a.data_ + b.data_, a.sym_);
  }
  friend HermitianMatrix operator-(const HermitianMatrix& a, const HermitianMatrix& b) {
    check_compatible(a, b);
    return HermitianMatrix(a.data_ - b.data_, a.sym_);
  }
  friend HermitianMatrix operator*(double s, const HermitianMatrix& a) {
    return HermitianMatrix(s * a.data_, a.sym_);
  }

  HermitianMatrix shifted(double c) const {
    ComplexMatrix m = data_;
    m.diagonal().array() += c;
    return HermitianMatrix(std::move(m), sym_);
  }

  static void check_compatible(const HermitianMatrix& a, const HermitianMatrix& b) {
    if (a.n() != b.n())
      throw InputError("HermitianMatrix: dimension mismatch (" + std::to_string(a.n()) +
                       " vs " + std::to_string(b.n()) + ")");
    if (a.sym_ != b.sym_) throw InputError("HermitianMatrix: symmetry class mismatch");
  }

 private:
  HermitianMatrix(ComplexMatrix m, SymmetryClass sym) : data_(std::move(m)), sym_(sym) {
    mirror_lower();
  }

  static Eigen::Index as_index(std::size_t n) { return static_cast<Eigen::Index>(n); }

  void mirror_lower() {
    const Eigen::Index n = data_.rows();
    for (Eigen::Index j = 0; j < n; ++j) {
      data_(j, j) = Complex(data_(j, j).real(), 0.0);
      if (sym_ == SymmetryClass::RealSymmetric)
        for (Eigen::Index i = j + 1; i < n; ++i) data_(i, j) = Complex(data_(i, j).real(), 0.0);
      for (Eigen::Index i = j + 1; i < n; ++i) data_(j, i) = std::conj(data_(i, j));
    }
  }

  ComplexMatrix data_;
  SymmetryClass sym_ = SymmetryClass::ComplexHermitian;
};

/// The fixed deformation B and direction A of H^x = W + B + xA, together with
/// the tracial data <A> and <Å²> (Å = A - <A>) derived from A.
class DeformationSpec {
 public:
  DeformationSpec() = default;

  DeformationSpec(HermitianMatrix b, HermitianMatrix a) : b_(std::move(b)), a_(std::move(a)) {
    HermitianMatrix::check_compatible(b_, a_);
    if (!b_.all_finite() || !a_.all_finite())
      throw InputError("DeformationSpec: non-finite entries");
    b_is_zero_ = b_.dense().isZero(0.0);
    if (b_is_zero_) norm_b_ = 0.0;
    else if (b_.dense().isDiagonal(0.0)) norm_b_ = b_.dense().diagonal().cwiseAbs().maxCoeff();
    else norm_b_ = b_.operator_norm();
    mean_a_ = a_.normalized_trace();
    const ComplexMatrix centered =
        a_.dense() - mean_a_ * ComplexMatrix::Identity(a_.dense().rows(), a_.dense().cols());
    traceless_a_sq_ = centered.squaredNorm() / static_cast<double>(a_.n());
  }

  /// B = 0 and A = 0.
  static DeformationSpec none(std::size_t n, SymmetryClass sym) {
    return {HermitianMatrix::zero(n, sym), HermitianMatrix::zero(n, sym)};
  }

  const HermitianMatrix& b() const { return b_; }
  const HermitianMatrix& a() const { return a_; }
  double norm_b() const { return norm_b_; }
  /// <A> = Tr A / N.
  double mean_a() const { return mean_a_; }
  /// <Å²> with Å = A - <A>.
  double traceless_a_sq() const { return traceless_a_sq_; }
  bool b_is_zero() const { return b_is_zero_; }
  std::size_t n() const { return a_.n(); }

 private:
  HermitianMatrix b_;
  HermitianMatrix a_;
  double norm_b_ = 0.0;
  double mean_a_ = 0.0;
  double traceless_a_sq_ = 0.0;
  bool b_is_zero_ = true;
};

struct UniformOnInterval {
  double lo = 0.0;
  double hi = 1.0;
};

/// Standard normal conditioned on |chi| <= cut (rejection sampling).
struct TruncatedGaussian {
  double cut = 10.0;
};

/// Law of the scalar parameter x = N^{-a} chi.
struct ParamLaw {
  double a = 0.0;
  std::variant<UniformOnInterval, TruncatedGaussian> chi = TruncatedGaussian{};

  void validate() const {
    if (!(a >= 0.0 && a < 1.0)) throw InputError("ParamLaw: exponent a must lie in [0,1)");
    if (const auto* u = std::get_if<UniformOnInterval>(&chi); u && !(u->lo <= u->hi))
      throw InputError("ParamLaw: uniform interval requires lo <= hi");
    if (const auto* g = std::get_if<TruncatedGaussian>(&chi); g && !(g->cut > 0.0))
      throw InputError("ParamLaw: truncation cut must be positive");
  }
};

inline constexpr std::size_t kDefaultMaxDimension = 4096;

struct EnsembleSpec {
  std::size_t n = 0;
  SymmetryClass sym = SymmetryClass::ComplexHermitian;
  EntryLaw entries = EntryLaw::Gaussian;
  DeformationSpec deform;
  ParamLaw param;

  void validate(std::size_t max_n = kDefaultMaxDimension) const {
    if (n < 1) throw InputError("EnsembleSpec: dimension must be >= 1");
    if (n > max_n)
      throw InputError("EnsembleSpec: dimension " + std::to_string(n) + " exceeds cap " +
                       std::to_string(max_n));
    if (deform.n() != n) throw InputError("EnsembleSpec: deformation dimension mismatch");
    if (deform.a().symmetry() != sym) throw InputError("EnsembleSpec: deformation symmetry mismatch");
    param.validate();
  }

  /// Plain Wigner ensemble (B = A = 0) of the given size and class.
  static EnsembleSpec wigner(std::size_t n, SymmetryClass sym, EntryLaw law = EntryLaw::Gaussian) {
    EnsembleSpec s;
    s.n = n;
    s.sym = sym;
    s.entries = law;
    s.deform = DeformationSpec::none(n, sym);
    return s;
  }
};

namespace detail {

// Standardised real draw: mean 0, variance 1.
inline double standard_real(EntryLaw law, RandomSource& rng) {
  switch (law) {
    case EntryLaw::Gaussian: return rng.normal();
    case EntryLaw::Rademacher: return rng.sign();
    case EntryLaw::UniformStandardized: {
      const double r = std::sqrt(3.0);
      return rng.uniform(-r, r);
    }
  }
  return 0.0;
}

// Off-diagonal chi_od: E|chi|^2 = 1, and E chi^2 = 0 in the complex class.
inline Complex off_diagonal(EntryLaw law, SymmetryClass sym, RandomSource& rng) {
  if (sym == SymmetryClass::RealSymmetric) return {standard_real(law, rng), 0.0};
  const double re = standard_real(law, rng);
  const double im = standard_real(law, rng);
  return Complex(re, im) * M_SQRT1_2;
}

// Diagonal chi_d: variance 2 (real) or 1 (complex), the GOE/GUE convention.
inline double diagonal(EntryLaw law, SymmetryClass sym, RandomSource& rng) {
  const double scale = sym == SymmetryClass::RealSymmetric ? M_SQRT2 : 1.0;
  return scale * standard_real(law, rng);
}

}  // namespace detail

/// Samples the Wigner part W of the ensemble: w_ab = chi_od / sqrt(N) for a < b,
/// w_aa = chi_d / sqrt(N). Entries are drawn column by column over the lower
/// triangle, so the output is a deterministic function of the rng state.
inline HermitianMatrix sample_wigner(const EnsembleSpec& spec, RandomSource& rng) {
  if (spec.n < 1) throw InputError("sample_wigner: dimension must be >= 1");
  const auto n = static_cast<Eigen::Index>(spec.n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.n));
  ComplexMatrix m(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    m(j, j) = scale * detail::diagonal(spec.entries, spec.sym, rng);
    for (Eigen::Index i = j + 1; i < n; ++i)
      m(i, j) = scale * detail::off_diagonal(spec.entries, spec.sym, rng);
  }
  return HermitianMatrix::from_lower(std::move(m), spec.sym);
}

/// Deformed Wigner matrix H = W + B.
inline HermitianMatrix sample_deformed(const EnsembleSpec& spec, RandomSource& rng) {
  HermitianMatrix w = sample_wigner(spec, rng);
  if (spec.deform.b_is_zero()) return w;
  return w + spec.deform.b();
}

inline HermitianMatrix sample_gue(std::size_t n, RandomSource& rng) {
  return sample_wigner(EnsembleSpec::wigner(n, SymmetryClass::ComplexHermitian), rng);
}

inline HermitianMatrix sample_goe(std::size_t n, RandomSource& rng) {
  return sample_wigner(EnsembleSpec::wigner(n, SymmetryClass::RealSymmetric), rng);
}

/// H^x = H + xA.
inline HermitianMatrix build_monoparametric(const HermitianMatrix& h, const HermitianMatrix& a_mat,
                                            double x) {
  HermitianMatrix::check_compatible(h, a_mat);
  if (x == 0.0) return h;
  return h + x * a_mat;
}

/// Draws x = N^{-a} chi.
inline double sample_x(const ParamLaw& law, std::size_t n, RandomSource& rng) {
  double chi = 0.0;
  if (const auto* u = std::get_if<UniformOnInterval>(&law.chi)) {
    chi = u->lo == u->hi ? u->lo : rng.uniform(u->lo, u->hi);
  } else {
    const double cut = std::get<TruncatedGaussian>(law.chi).cut;
    do {
      chi = rng.normal();
    } while (std::abs(chi) > cut);
  }
  if (law.a == 0.0) return chi;
  return std::pow(static_cast<double>(n), -law.a) * chi;
}

}  // namespace rmtq
