#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rmtq/gapref.hpp"
#include "rmtq/harness/config.hpp"
#include "rmtq/harness/experiments.hpp"
#include "rmtq/mde.hpp"
#include "rmtq/spectral.hpp"

namespace rmtq::harness {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

inline CheckResult check_mde_semicircle() {
  const DeformationSpectrum sc = DeformationSpectrum::semicircle();
  double m_err = 0.0, res = 0.0;
  for (double e = -3.0; e <= 3.0; e += 0.05)
    for (double eta : {1e-3, 1e-2, 0.1, 1.0}) {
      const Complex z(e, eta);
      const MdeSolution s = solve_mde(sc, z);
      m_err = std::max(m_err, std::abs(s.m - semicircle_stieltjes(z)));
      res = std::max(res, s.residual);
    }
  const ScDos dos = scdos(sc);
  double rho_err = 0.0;
  for (std::size_t k = 0; k < dos.grid.size(); ++k)
    rho_err = std::max(rho_err, std::abs(dos.rho[k] - semicircle_density(dos.grid[k])));
  double q_err = 0.0;
  for (double p = 0.05; p < 1.0; p += 0.05)
    q_err = std::max(q_err, std::abs(quantile_at(sc, p).gamma - semicircle_quantile(p)));
  const bool ok = m_err <= 1e-10 && res <= 1e-12 && q_err <= 1e-8;
  return {"mde_semicircle", ok,
          "|m - m_sc| " + fmt(m_err) + ", residual " + fmt(res) + ", quantile " + fmt(q_err) +
              ", real-axis density " + fmt(rho_err)};
}

inline CheckResult check_painleve_fredholm() {
  const GapReference& p = standard_reference(2);
  std::vector<double> grid;
  for (double s = 0.1; s <= 3.0 + 1e-12; s += 0.05) grid.push_back(s);
  const GapReference f = fredholm_p2_oracle(grid);
  double d = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto it = std::lower_bound(p.s.begin(), p.s.end(), grid[k] - 1e-9);
    d = std::max(d, std::abs(p.p[static_cast<std::size_t>(it - p.s.begin())] - f.p[k]));
  }
  return {"painleve_vs_fredholm", d <= 1e-6, "sup |p2 - p2_fredholm| on [0.1,3] = " + fmt(d)};
}

inline CheckResult check_normalisation() {
  bool ok = true;
  std::string d;
  for (int beta : {1, 2}) {
    const GapReference& r = standard_reference(beta);
    const double m0 = r.mass(), m1 = r.mean();
    ok = ok && std::abs(m0 - 1.0) <= 1e-4 && std::abs(m1 - 1.0) <= 1e-3;
    d += "beta=" + std::to_string(beta) + " mass " + fmt(m0) + " mean " + fmt(m1) + "; ";
  }
  return {"reference_normalisation", ok, d};
}

inline CheckResult check_surmise_distance() {
  const double d2 = sup_distance(standard_reference(2), wigner_surmise(2, standard_reference(2).s));
  const double d1 = sup_distance(standard_reference(1), wigner_surmise(1, standard_reference(1).s));
  const bool ok = d2 >= 0.003 && d2 <= 0.007 && d1 >= 0.012 && d1 <= 0.020;
  return {"surmise_distance", ok, "beta=2 " + fmt(d2) + ", beta=1 " + fmt(d1)};
}

inline CheckResult check_overlap_completeness() {
  RandomSource rng(7);
  const HermitianMatrix h = sample_gue(60, rng);
  const HermitianMatrix a = sample_gue(60, rng);
  const SpectralData s1 = eigh(h, true), s2 = eigh(h + 0.3 * a, true);
  const OverlapMatrix o = overlaps(s1, s2, IndexRange::all(60), IndexRange::all(60));
  const double dev = std::max((o.values.rowwise().sum().array() - 1.0).abs().maxCoeff(),
                              (o.values.colwise().sum().array() - 1.0).abs().maxCoeff());
  return {"overlap_completeness", dev <= 1e-10, "max |row/col sum - 1| = " + fmt(dev)};
}

inline CheckResult check_ward_identity() {
  RandomSource rng(11);
  const HermitianMatrix h = sample_gue(80, rng);
  const SpectralData sd = eigh(h, true);
  const Complex z(0.3, 0.05);
  const Complex lhs = resolvent_trace_product(sd, sd, z, std::conj(z), HermitianMatrix::identity(80, h.symmetry()));
  const double rhs = resolvent_trace(sd, z).imag() / z.imag();
  const double d = std::abs(lhs - rhs) / std::abs(rhs);
  return {"ward_identity", d <= 1e-10, "relative error " + fmt(d)};
}

inline CheckResult check_determinism() {
  ExperimentConfig c = parse_config(json{{"schema_version", 1}, {"experiment", "annealed_gap"}, {"sizes", {20}}, {"samples", 40}});
  const std::string a = run_experiment(c, 5, 1).csv_text();
  const std::string b = run_experiment(c, 5, 3).csv_text();
  return {"determinism", a == b, a == b ? "1 and 3 workers agree byte for byte" : "outputs differ"};
}

}  // namespace detail

/// Fast oracle suite behind `rmtq check`.
inline std::vector<CheckResult> run_checks() {
  std::vector<std::function<CheckResult()>> fns{detail::check_mde_semicircle,   detail::check_painleve_fredholm,
                                                detail::check_normalisation,     detail::check_surmise_distance,
                                                detail::check_overlap_completeness, detail::check_ward_identity,
                                                detail::check_determinism};
  std::vector<CheckResult> out;
  for (auto& f : fns) {
    try {
      out.push_back(f());
    } catch (const std::exception& e) {
      out.push_back({"?", false, e.what()});
    }
  }
  return out;
}

}  // namespace rmtq::harness
