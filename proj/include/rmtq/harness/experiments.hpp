#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rmtq/csv.hpp"
#include "rmtq/ensembles.hpp"
#include "rmtq/error.hpp"
#include "rmtq/gapref.hpp"
#include "rmtq/harness/config.hpp"
#include "rmtq/harness/parallel.hpp"
#include "rmtq/harness/substream.hpp"
#include "rmtq/mde.hpp"
#include "rmtq/spectral.hpp"

#ifndef RMTQ_GIT_DESCRIBE
#define RMTQ_GIT_DESCRIBE "unknown"
#endif

namespace rmtq::harness {

/// Rows of one run, already formatted, plus the accounting that goes into the
/// metadata file. emitted + skipped == scheduled.
struct ExperimentResult {
  ExperimentKind kind = ExperimentKind::AnnealedGap;
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  std::size_t scheduled = 0;
  std::size_t emitted = 0;
  std::size_t skipped = 0;
  std::map<std::string, std::size_t> skip_reasons;
  std::vector<std::string> log;  // aborted trials
  json summary = json::array();

  void write_csv(std::ostream& os) const {
    for (std::size_t k = 0; k < columns.size(); ++k) os << (k ? "," : "") << columns[k];
    os << '\n';
    for (const auto& r : rows) os << r << '\n';
  }

  std::string csv_text() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
  }
};

namespace detail {

inline std::string line(std::initializer_list<csv::Cell> cells) {
  std::string out;
  bool first = true;
  for (const auto& c : cells) {
    if (!first) out += ',';
    out += csv::cell_text(c);
    first = false;
  }
  return out;
}

inline long long ll(std::size_t v) { return static_cast<long long>(v); }

// Output of one parallel unit.
struct UnitOut {
  std::vector<std::string> rows;
  std::vector<double> values;  // per-row statistic used by the summary
  std::size_t scheduled = 0;
  std::vector<std::pair<std::string, std::string>> skips;  // (reason, message)
};

inline void absorb(ExperimentResult& r, UnitOut&& u) {
  r.scheduled += u.scheduled;
  r.emitted += u.rows.size();
  r.skipped += u.skips.size();
  for (auto& [reason, msg] : u.skips) {
    ++r.skip_reasons[reason];
    if (!msg.empty()) r.log.push_back(msg);
  }
  for (auto& row : u.rows) r.rows.push_back(std::move(row));
}

inline HermitianMatrix fixed_matrix(MatrixChoice c, std::size_t n, const ExperimentConfig& cfg, RandomSource& rng) {
  switch (c) {
    case MatrixChoice::Zero: return HermitianMatrix::zero(n, cfg.sym);
    case MatrixChoice::Identity: return HermitianMatrix::identity(n, cfg.sym);
    case MatrixChoice::Alternating: {
      RealVector d(static_cast<Eigen::Index>(n));
      for (Eigen::Index k = 0; k < d.size(); ++k) d(k) = k % 2 == 0 ? 1.0 : -1.0;
      return HermitianMatrix::diagonal(d, cfg.sym);
    }
    case MatrixChoice::Wigner: return sample_wigner(EnsembleSpec::wigner(n, cfg.sym, cfg.entries), rng);
  }
  return HermitianMatrix::zero(n, cfg.sym);
}

// B for size n; the same path in every experiment kind keeps B reproducible.
inline HermitianMatrix b_matrix(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& kind,
                                std::size_t n, std::optional<std::size_t> rep = std::nullopt) {
  RandomSource rng = rep ? derive_substream(seed, {kind, "n", n, "rep", *rep, "B"})
                         : derive_substream(seed, {kind, "n", n, "B"});
  return fixed_matrix(cfg.b, n, cfg, rng);
}

inline HermitianMatrix a_matrix(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& kind,
                                std::size_t n, std::optional<std::size_t> rep = std::nullopt) {
  RandomSource rng = rep ? derive_substream(seed, {kind, "n", n, "rep", *rep, "A"})
                         : derive_substream(seed, {kind, "n", n, "A"});
  return fixed_matrix(cfg.a, n, cfg, rng);
}

inline HermitianMatrix wigner_plus(const ExperimentConfig& cfg, std::size_t n, const HermitianMatrix& b,
                                   RandomSource& rng) {
  HermitianMatrix w = sample_wigner(EnsembleSpec::wigner(n, cfg.sym, cfg.entries), rng);
  return cfg.b == MatrixChoice::Zero ? w : w + b;
}

// Density of the deformed ensemble at an observed energy.
struct DensityAt {
  std::optional<DeformationSpectrum> spectrum;  // empty: semicircle
  double operator()(double e) const {
    return spectrum ? density_at(*spectrum, e) : semicircle_density(e);
  }
};

inline DensityAt density_for(const ExperimentConfig& cfg, const HermitianMatrix& b) {
  DensityAt d;
  if (cfg.b != MatrixChoice::Zero) d.spectrum = DeformationSpectrum::from_matrix(b, false);
  return d;
}

// Density at the i/N quantile of the undeformed (x = 0) reference.
inline double quantile_density(const ExperimentConfig& cfg, const HermitianMatrix& b, double p) {
  if (cfg.b == MatrixChoice::Zero) return semicircle_density(semicircle_quantile(p));
  return quantile_at(DeformationSpectrum::from_matrix(b, false), p).rho;
}

inline double ks_of(const std::vector<double>& s, int beta) {
  if (s.empty()) return std::nan("");
  return ks_distance(EmpiricalCdf(s), standard_reference(beta));
}

inline double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return std::nan("");
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// MDE solution at any non-real z; the lower half-plane uses m(conj z) = conj m(z).
inline MdeSolution solve_mde_any(std::shared_ptr<const DeformationSpectrum> s, Complex z) {
  if (z.imag() > 0.0) return solve_mde(std::move(s), z);
  MdeSolution sol = solve_mde(std::move(s), std::conj(z));
  sol.z = z;
  sol.m = std::conj(sol.m);
  return sol;
}

// ---------------------------------------------------------------------------

inline ExperimentResult run_annealed(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t threads) {
  const std::string kind = to_string(cfg.kind);
  ExperimentResult res;
  res.columns = {"n", "trial", "gap_index", "lambda", "raw_gap", "rho", "s"};
  for (std::size_t n : cfg.sizes) {
    const HermitianMatrix b = b_matrix(cfg, seed, kind, n);
    const DensityAt rho = density_for(cfg, b);
    const std::size_t i = std::max<std::size_t>(1, n / 2);
    auto units = parallel_map(cfg.samples, threads, [&](std::size_t t) {
      UnitOut u;
      u.scheduled = 1;
      RandomSource rng = derive_substream(seed, {kind, "n", n, "trial", t});
      const SpectralData sd = eigh(wigner_plus(cfg, n, b, rng), false);
      const auto g = rescaled_gap(sd, i, rho);
      if (!g) {
        u.skips.push_back({"density_vanishes", ""});
        return u;
      }
      u.rows.push_back(line({ll(n), ll(t), ll(i), sd.lambda(i), g->raw_gap, g->rho, g->rescaled}));
      u.values.push_back(g->rescaled);
      return u;
    });
    std::vector<double> s;
    for (auto& u : units) {
      s.insert(s.end(), u.values.begin(), u.values.end());
      absorb(res, std::move(u));
    }
    res.summary.push_back({{"n", n}, {"rows", s.size()}, {"ks", num(ks_of(s, cfg.beta()))}});
  }
  return res;
}

inline ExperimentResult run_quenched(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t threads) {
  const std::string kind = to_string(cfg.kind);
  ExperimentResult res;
  res.columns = {"n", "trial", "gap_index", "lambda", "raw_gap", "rho", "s"};
  auto units = parallel_map(cfg.sizes.size(), threads, [&](std::size_t k) {
    const std::size_t n = cfg.sizes[k];
    UnitOut u;
    const HermitianMatrix b = b_matrix(cfg, seed, kind, n);
    const DensityAt rho = density_for(cfg, b);
    RandomSource rng = derive_substream(seed, {kind, "n", n, "trial", std::uint64_t{0}});
    const SpectralData sd = eigh(wigner_plus(cfg, n, b, rng), false);
    const auto [lo, hi] = cfg.window_for(n);
    for (std::size_t i = lo; i <= std::min(hi, n - 1); ++i) {
      ++u.scheduled;
      if (cfg.interval && !(sd.lambda(i) >= cfg.interval->first && sd.lambda(i) <= cfg.interval->second)) {
        u.skips.push_back({"outside_interval", ""});
        continue;
      }
      const auto g = rescaled_gap(sd, i, rho);
      if (!g) {
        u.skips.push_back({"density_vanishes", ""});
        continue;
      }
      u.rows.push_back(line({ll(n), 0LL, ll(i), sd.lambda(i), g->raw_gap, g->rho, g->rescaled}));
      u.values.push_back(g->rescaled);
    }
    return u;
  });
  for (std::size_t k = 0; k < units.size(); ++k) {
    const std::vector<double> s = units[k].values;
    absorb(res, std::move(units[k]));
    res.summary.push_back({{"n", cfg.sizes[k]}, {"rows", s.size()}, {"ks", num(ks_of(s, cfg.beta()))}});
  }
  return res;
}

// Fixed H, A and the deformation family for one monoparametric realisation.
struct MonoSetup {
  std::size_t n = 0;
  HermitianMatrix b, h, a;
  std::optional<DeformationFamily> family;
};

inline MonoSetup mono_setup(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& kind, std::size_t n,
                            std::optional<std::size_t> rep) {
  MonoSetup m;
  m.n = n;
  m.b = b_matrix(cfg, seed, kind, n, rep);
  m.a = a_matrix(cfg, seed, kind, n, rep);
  RandomSource rng = rep ? derive_substream(seed, {kind, "n", n, "rep", *rep, "H"})
                         : derive_substream(seed, {kind, "n", n, "H"});
  m.h = wigner_plus(cfg, n, m.b, rng);
  if (cfg.rescaling == Rescaling::Mde) m.family.emplace(DeformationSpec(m.b, m.a), false);
  return m;
}

struct MonoGap {
  double x = 0.0;
  std::size_t i = 0;
  double raw_gap = 0.0;
  double rho = 0.0;
  double s = 0.0;
};

// One x draw: gap of H + xA at i = N/2, rescaled by the density at gamma_i(x).
inline std::optional<MonoGap> mono_gap(const ExperimentConfig& cfg, const MonoSetup& m, RandomSource& rng) {
  MonoGap g;
  g.x = sample_x(cfg.param, m.n, rng);
  g.i = std::max<std::size_t>(1, m.n / 2);
  const double p = static_cast<double>(g.i) / static_cast<double>(m.n);
  const SpectralData sd = eigh(build_monoparametric(m.h, m.a, g.x), false);
  g.raw_gap = std::max(sd.lambda(g.i + 1) - sd.lambda(g.i), 0.0);
  if (cfg.rescaling == Rescaling::Mde) {
    g.rho = quantile_at(*m.family->at(g.x), p).rho;
  } else {
    const double r = std::sqrt(1.0 + g.x * g.x);
    g.rho = semicircle_density(semicircle_quantile(p)) / r;
  }
  if (!(g.rho > 0.0)) return std::nullopt;
  g.s = static_cast<double>(m.n) * g.rho * g.raw_gap;
  return g;
}

inline std::optional<MonoGap> gue_gap(const ExperimentConfig& cfg, std::size_t n, const HermitianMatrix& b,
                                      double rho_ref, RandomSource& rng) {
  MonoGap g;
  g.x = std::nan("");
  g.i = std::max<std::size_t>(1, n / 2);
  const SpectralData sd = eigh(wigner_plus(cfg, n, b, rng), false);
  g.raw_gap = std::max(sd.lambda(g.i + 1) - sd.lambda(g.i), 0.0);
  g.rho = rho_ref;
  if (!(g.rho > 0.0)) return std::nullopt;
  g.s = static_cast<double>(n) * g.rho * g.raw_gap;
  return g;
}

inline ExperimentResult run_mono(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t threads) {
  const std::string kind = to_string(cfg.kind);
  ExperimentResult res;
  res.columns = {"n", "arm", "trial", "x", "gap_index", "raw_gap", "rho", "rescaling", "s"};
  const std::string resc = to_string(cfg.rescaling);
  for (std::size_t n : cfg.sizes) {
    const MonoSetup m = mono_setup(cfg, seed, kind, n, std::nullopt);
    const double p = static_cast<double>(std::max<std::size_t>(1, n / 2)) / static_cast<double>(n);
    for (Arm arm : cfg.arms) {
      const std::string an = to_string(arm);
      const double rho_ref = arm == Arm::Gue ? quantile_density(cfg, m.b, p) : 0.0;
      auto units = parallel_map(cfg.samples, threads, [&](std::size_t t) {
        UnitOut u;
        u.scheduled = 1;
        RandomSource rng = derive_substream(seed, {kind, "n", n, "arm", an, "trial", t});
        std::optional<MonoGap> g;
        try {
          g = arm == Arm::Mono ? mono_gap(cfg, m, rng) : gue_gap(cfg, n, m.b, rho_ref, rng);
        } catch (const SolverError& e) {
          u.skips.push_back({"mde_failure", "n=" + std::to_string(n) + " trial=" + std::to_string(t) + ": " + e.what()});
          return u;
        }
        if (!g) {
          u.skips.push_back({"density_vanishes", ""});
          return u;
        }
        u.rows.push_back(line({ll(n), std::string_view(an), ll(t), g->x, ll(g->i), g->raw_gap, g->rho,
                               std::string_view(arm == Arm::Mono ? resc : std::string("semicircle")), g->s}));
        u.values.push_back(g->s);
        return u;
      });
      std::vector<double> s;
      for (auto& u : units) {
        s.insert(s.end(), u.values.begin(), u.values.end());
        absorb(res, std::move(u));
      }
      res.summary.push_back({{"n", n}, {"arm", an}, {"rows", s.size()}, {"ks", num(ks_of(s, cfg.beta()))}});
    }
  }
  return res;
}

inline ExperimentResult run_ks(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t threads) {
  const std::string kind = to_string(cfg.kind);
  ExperimentResult res;
  res.columns = {"n", "arm", "repetition", "ks"};
  struct Unit {
    std::size_t n;
    Arm arm;
    std::size_t rep;
  };
  std::vector<Unit> plan;
  for (std::size_t n : cfg.sizes)
    for (Arm arm : cfg.arms)
      for (std::size_t r = 0; r < cfg.repetitions; ++r) plan.push_back({n, arm, r});
  std::map<std::pair<std::size_t, std::string>, std::vector<double>> by_cell;
  auto units = parallel_map(plan.size(), threads, [&](std::size_t k) {
    const Unit& un = plan[k];
    const std::string an = to_string(un.arm);
    UnitOut u;
    u.scheduled = 1;
    std::vector<double> s;
    std::size_t dropped = 0;
    if (un.arm == Arm::Mono) {
      const MonoSetup m = mono_setup(cfg, seed, kind, un.n, un.rep);
      for (std::size_t t = 0; t < cfg.samples; ++t) {
        RandomSource rng = derive_substream(seed, {kind, "n", un.n, "rep", un.rep, "arm", an, "trial", t});
        try {
          if (auto g = mono_gap(cfg, m, rng)) s.push_back(g->s);
          else ++dropped;
        } catch (const SolverError&) {
          ++dropped;
        }
      }
    } else {
      const HermitianMatrix b = b_matrix(cfg, seed, kind, un.n, un.rep);
      const double p = static_cast<double>(std::max<std::size_t>(1, un.n / 2)) / static_cast<double>(un.n);
      const double rho_ref = quantile_density(cfg, b, p);
      for (std::size_t t = 0; t < cfg.samples; ++t) {
        RandomSource rng = derive_substream(seed, {kind, "n", un.n, "rep", un.rep, "arm", an, "trial", t});
        if (auto g = gue_gap(cfg, un.n, b, rho_ref, rng)) s.push_back(g->s);
        else ++dropped;
      }
    }
    u.values.push_back(static_cast<double>(dropped));
    if (s.empty()) {
      u.skips.push_back({"no_samples", "n=" + std::to_string(un.n) + " arm=" + an + " repetition=" +
                                           std::to_string(un.rep) + ": every draw was dropped"});
      return u;
    }
    const double ks = ks_of(s, cfg.beta());
    u.rows.push_back(line({ll(un.n), std::string_view(an), ll(un.rep), ks}));
    u.values.push_back(ks);
    return u;
  });
  std::map<std::pair<std::size_t, std::string>, std::size_t> dropped_by_cell;
  for (std::size_t k = 0; k < units.size(); ++k) {
    dropped_by_cell[{plan[k].n, to_string(plan[k].arm)}] += static_cast<std::size_t>(units[k].values.front());
    if (units[k].values.size() > 1) by_cell[{plan[k].n, to_string(plan[k].arm)}].push_back(units[k].values[1]);
    absorb(res, std::move(units[k]));
  }
  for (std::size_t n : cfg.sizes)
    for (Arm arm : cfg.arms) {
      const auto& v = by_cell[{n, to_string(arm)}];
      res.summary.push_back({{"n", n},
                             {"arm", to_string(arm)},
                             {"repetitions", v.size()},
                             {"mean_ks", num(mean(v))},
                             {"std_ks", num(stddev(v))},
                             {"dropped_draws", dropped_by_cell[{n, to_string(arm)}]}});
    }
  return res;
}

/// max and mean of |<u_j1(x1), u_j2(x2)>|^2 over bulk pairs with |j1 - j2| <= N |x1 - x2|.
struct OverlapStats {
  std::size_t pairs = 0;
  double max = 0.0;
  double mean = 0.0;
};

inline OverlapStats bulk_overlap_stats(const SpectralData& sd1, const SpectralData& sd2, IndexRange window,
                                       double dx) {
  const OverlapMatrix o = overlaps(sd1, sd2, window, window);
  const double band = static_cast<double>(sd1.n()) * std::abs(dx);
  OverlapStats st;
  double acc = 0.0;
  for (std::size_t i = window.first; i <= window.last; ++i)
    for (std::size_t j = window.first; j <= window.last; ++j) {
      const double d = i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
      if (d > band) continue;
      const double v = o.at(i, j);
      st.max = std::max(st.max, v);
      acc += v;
      ++st.pairs;
    }
  st.mean = st.pairs ? acc / static_cast<double>(st.pairs) : std::nan("");
  return st;
}

inline ExperimentResult run_overlap(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t threads) {
  const std::string kind = to_string(cfg.kind);
  ExperimentResult res;
  res.columns = {"n", "seed", "x1", "x2", "pairs", "max_overlap2", "mean_overlap2"};
  for (std::size_t n : cfg.sizes) {
    auto units = parallel_map(cfg.seeds, threads, [&](std::size_t r) {
      UnitOut u;
      u.scheduled = 1;
      const HermitianMatrix b = b_matrix(cfg, seed, kind, n, r);
      const HermitianMatrix a = a_matrix(cfg, seed, kind, n, r);
      RandomSource rng = derive_substream(seed, {kind, "n", n, "rep", r, "H"});
      const HermitianMatrix h = wigner_plus(cfg, n, b, rng);
      const SpectralData sd1 = eigh(build_monoparametric(h, a, cfg.x1), true);
      const SpectralData sd2 = eigh(build_monoparametric(h, a, cfg.x2), true);
      const auto [lo, hi] = cfg.window_for(n);
      const OverlapStats st = bulk_overlap_stats(sd1, sd2, {lo, hi}, cfg.x1 - cfg.x2);
      u.rows.push_back(line({ll(n), ll(r), cfg.x1, cfg.x2, ll(st.pairs), st.max, st.mean}));
      u.values.push_back(st.max);
      u.values.push_back(st.mean);
      return u;
    });
    std::vector<double> mx, mn;
    for (auto& u : units) {
      mx.push_back(u.values[0]);
      mn.push_back(u.values[1]);
      absorb(res, std::move(u));
    }
    res.summary.push_back({{"n", n},
                           {"median_max_overlap2", num(median(mx))},
                           {"mean_mean_overlap2", num(mean(mn))}});
  }
  return res;
}

struct LocalLawRow {
  Complex g12a, m12a;
  double error = 0.0;
  double stability = 0.0;
  bool flagged = false;
};

/// <G1 G2 X> from one sample against <M12 X>, with X = A or the identity.
inline LocalLawRow local_law_row(const HermitianMatrix& h, const HermitianMatrix& b, const HermitianMatrix& a,
                                 double x1, double x2, Complex z1, Complex z2, bool identity_observable) {
  const HermitianMatrix obs = identity_observable ? HermitianMatrix::identity(h.n(), h.symmetry()) : a;
  const SpectralData sd1 = eigh(build_monoparametric(h, a, x1), true);
  const SpectralData sd2 = x1 == x2 ? sd1 : eigh(build_monoparametric(h, a, x2), true);
  LocalLawRow r;
  r.g12a = resolvent_trace_product(sd1, sd2, z1, z2, obs);
  const DeformationFamily family(DeformationSpec(b, a), true);
  const MdeSolution s1 = solve_mde_any(family.at(x1), z1);
  const MdeSolution s2 = solve_mde_any(family.at(x2), z2);
  r.stability = stability_factor(s1, s2, false);
  try {
    r.m12a = m12_observable(s1, s2, obs);
    r.error = std::abs(r.g12a - r.m12a);
  } catch (const SingularityError&) {
    r.flagged = true;
    r.m12a = Complex(std::nan(""), std::nan(""));
    r.error = std::nan("");
  }
  return r;
}

inline ExperimentResult run_local_law(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t threads) {
  const std::string kind = to_string(cfg.kind);
  ExperimentResult res;
  res.columns = {"n",       "seed",    "e",       "eta",   "x1",        "x2",     "re_g12a",
                 "im_g12a", "re_m12a", "im_m12a", "error", "stability", "flagged"};
  for (std::size_t n : cfg.sizes) {
    const double eta = std::pow(static_cast<double>(n), -cfg.eta_exponent);
    const Complex z1(cfg.energy, eta);
    const Complex z2 = cfg.conjugate_z2 ? std::conj(z1) : z1;
    auto units = parallel_map(cfg.seeds, threads, [&](std::size_t r) {
      UnitOut u;
      u.scheduled = 1;
      const HermitianMatrix b = b_matrix(cfg, seed, kind, n, r);
      const HermitianMatrix a = a_matrix(cfg, seed, kind, n, r);
      RandomSource rng = derive_substream(seed, {kind, "n", n, "rep", r, "H"});
      const HermitianMatrix h = wigner_plus(cfg, n, b, rng);
      LocalLawRow lr;
      try {
        lr = local_law_row(h, b, a, cfg.x1, cfg.x2, z1, z2, cfg.observable_identity);
      } catch (const SolverError& e) {
        u.skips.push_back({"mde_failure", "n=" + std::to_string(n) + " seed=" + std::to_string(r) + ": " + e.what()});
        return u;
      }
      u.rows.push_back(line({ll(n), ll(r), cfg.energy, eta, cfg.x1, cfg.x2, lr.g12a.real(), lr.g12a.imag(),
                             lr.m12a.real(), lr.m12a.imag(), lr.error, lr.stability, lr.flagged ? 1LL : 0LL}));
      u.values = {lr.error, lr.stability, lr.flagged ? 1.0 : 0.0};
      return u;
    });
    std::vector<double> err, stab;
    std::size_t flagged = 0;
    for (auto& u : units) {
      if (!u.values.empty()) {
        err.push_back(u.values[0]);
        stab.push_back(u.values[1]);
        flagged += u.values[2] > 0.0;
      }
      absorb(res, std::move(u));
    }
    res.summary.push_back({{"n", n},
                           {"eta", eta},
                           {"median_error", num(median(err))},
                           {"min_stability", num(stab.empty() ? std::nan("") : *std::min_element(stab.begin(), stab.end()))},
                           {"flagged", flagged}});
  }
  return res;
}

}  // namespace detail

/// Runs the configured experiment. Output is a function of (cfg, seed) only.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t threads = 1) {
  validate(cfg);
  ExperimentResult r;
  switch (cfg.kind) {
    case ExperimentKind::AnnealedGap: r = detail::run_annealed(cfg, seed, threads); break;
    case ExperimentKind::QuenchedBulkSampling: r = detail::run_quenched(cfg, seed, threads); break;
    case ExperimentKind::MonoparametricQuenched: r = detail::run_mono(cfg, seed, threads); break;
    case ExperimentKind::KsConvergence: r = detail::run_ks(cfg, seed, threads); break;
    case ExperimentKind::OverlapDecay: r = detail::run_overlap(cfg, seed, threads); break;
    case ExperimentKind::LocalLawCheck: r = detail::run_local_law(cfg, seed, threads); break;
  }
  r.kind = cfg.kind;
  return r;
}

inline ExperimentResult run_annealed_gap(const ExperimentConfig& c, std::uint64_t seed, std::size_t threads = 1) {
  if (c.kind != ExperimentKind::AnnealedGap) throw ConfigError("run_annealed_gap: kind mismatch");
  return run_experiment(c, seed, threads);
}
inline ExperimentResult run_quenched_bulk_sampling(const ExperimentConfig& c, std::uint64_t seed, std::size_t threads = 1) {
  if (c.kind != ExperimentKind::QuenchedBulkSampling) throw ConfigError("run_quenched_bulk_sampling: kind mismatch");
  return run_experiment(c, seed, threads);
}
inline ExperimentResult run_monoparametric_quenched(const ExperimentConfig& c, std::uint64_t seed,
                                                    std::size_t threads = 1) {
  if (c.kind != ExperimentKind::MonoparametricQuenched) throw ConfigError("run_monoparametric_quenched: kind mismatch");
  return run_experiment(c, seed, threads);
}
inline ExperimentResult run_ks_convergence(const ExperimentConfig& c, std::uint64_t seed, std::size_t threads = 1) {
  if (c.kind != ExperimentKind::KsConvergence) throw ConfigError("run_ks_convergence: kind mismatch");
  return run_experiment(c, seed, threads);
}
inline ExperimentResult run_overlap_decay(const ExperimentConfig& c, std::uint64_t seed, std::size_t threads = 1) {
  if (c.kind != ExperimentKind::OverlapDecay) throw ConfigError("run_overlap_decay: kind mismatch");
  return run_experiment(c, seed, threads);
}
inline ExperimentResult run_local_law_check(const ExperimentConfig& c, std::uint64_t seed, std::size_t threads = 1) {
  if (c.kind != ExperimentKind::LocalLawCheck) throw ConfigError("run_local_law_check: kind mismatch");
  return run_experiment(c, seed, threads);
}

/// Rows each size contributes, known before sampling.
inline std::size_t scheduled_rows(const ExperimentConfig& cfg, std::size_t n) {
  switch (cfg.kind) {
    case ExperimentKind::AnnealedGap: return cfg.samples;
    case ExperimentKind::QuenchedBulkSampling: {
      const auto [lo, hi] = cfg.window_for(n);
      const std::size_t last = std::min(hi, n - 1);
      return last >= lo ? last - lo + 1 : 0;
    }
    case ExperimentKind::MonoparametricQuenched: return cfg.samples * cfg.arms.size();
    case ExperimentKind::KsConvergence: return cfg.repetitions * cfg.arms.size();
    case ExperimentKind::OverlapDecay:
    case ExperimentKind::LocalLawCheck: return cfg.seeds;
  }
  return 0;
}

/// Human-readable schedule; no sampling happens.
inline std::string describe_schedule(const ExperimentConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::ostringstream os;
  os << "experiment " << to_string(cfg.kind) << "  seed " << seed << "  beta " << cfg.beta()
     << (cfg.paper_scale ? "  (paper scale)" : "") << '\n';
  std::size_t total = 0;
  for (std::size_t n : cfg.sizes) {
    const std::size_t rows = scheduled_rows(cfg, n);
    total += rows;
    os << "  N=" << n << ": " << rows << " rows";
    switch (cfg.kind) {
      case ExperimentKind::AnnealedGap: os << " (one matrix per row, gap index " << std::max<std::size_t>(1, n / 2) << ")"; break;
      case ExperimentKind::QuenchedBulkSampling: {
        const auto [lo, hi] = cfg.window_for(n);
        os << " (one matrix, gap indices " << lo << ".." << std::min(hi, n - 1) << ")";
        break;
      }
      case ExperimentKind::MonoparametricQuenched:
      case ExperimentKind::KsConvergence: {
        os << " (arms";
        for (Arm a : cfg.arms) os << ' ' << to_string(a);
        if (cfg.kind == ExperimentKind::KsConvergence) os << "; " << cfg.samples << " draws per repetition";
        os << "; rescaling " << to_string(cfg.rescaling) << ")";
        break;
      }
      case ExperimentKind::OverlapDecay: os << " (x1=" << cfg.x1 << ", x2=" << cfg.x2 << ")"; break;
      case ExperimentKind::LocalLawCheck:
        os << " (E=" << cfg.energy << ", eta=" << std::pow(static_cast<double>(n), -cfg.eta_exponent) << ")";
        break;
    }
    os << '\n';
  }
  os << "  total scheduled rows: " << total << '\n';
  return os.str();
}

/// Metadata written next to the CSV.
inline json metadata(const ExperimentResult& r, const ExperimentConfig& cfg, std::uint64_t seed) {
  json skips = json::object();
  for (const auto& [k, v] : r.skip_reasons) skips[k] = v;
  return json{{"schema_version", kSchemaVersion},
              {"experiment", to_string(cfg.kind)},
              {"seed", seed},
              {"paper_scale", cfg.paper_scale},
              {"git_describe", RMTQ_GIT_DESCRIBE},
              {"config", to_json(cfg)},
              {"columns", r.columns},
              {"rows", {{"scheduled", r.scheduled}, {"emitted", r.emitted}, {"skipped", r.skipped}, {"skip_reasons", skips}}},
              {"summary", r.summary},
              {"log", r.log}};
}

/// "<dir>/<stem>.meta.json" next to "<dir>/<stem>.csv".
inline std::filesystem::path meta_path(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".meta.json");
  return p;
}

inline void write_outputs(const ExperimentResult& r, const ExperimentConfig& cfg, std::uint64_t seed,
                          const std::filesystem::path& csv) {
  if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
  {
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + csv.string() + "'");
    r.write_csv(out);
  }
  std::ofstream meta(meta_path(csv), std::ios::binary);
  if (!meta) throw ConfigError("cannot write '" + meta_path(csv).string() + "'");
  meta << metadata(r, cfg, seed).dump(2) << '\n';
}

}  // namespace rmtq::harness
