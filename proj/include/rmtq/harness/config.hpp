#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "rmtq/ensembles.hpp"
#include "rmtq/error.hpp"

namespace rmtq::harness {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class ExperimentKind {
  AnnealedGap,
  QuenchedBulkSampling,
  MonoparametricQuenched,
  KsConvergence,
  OverlapDecay,
  LocalLawCheck
};

inline const std::vector<std::pair<ExperimentKind, std::string>>& kind_names() {
  static const std::vector<std::pair<ExperimentKind, std::string>> names{
      {ExperimentKind::AnnealedGap, "annealed_gap"},
      {ExperimentKind::QuenchedBulkSampling, "quenched_bulk_sampling"},
      {ExperimentKind::MonoparametricQuenched, "monoparametric_quenched"},
      {ExperimentKind::KsConvergence, "ks_convergence"},
      {ExperimentKind::OverlapDecay, "overlap_decay"},
      {ExperimentKind::LocalLawCheck, "local_law_check"}};
  return names;
}

inline std::string to_string(ExperimentKind k) {
  for (const auto& [kind, name] : kind_names())
    if (kind == k) return name;
  return "?";
}

/// Fixed matrices B and A are chosen by name; "wigner" draws one from the seed.
enum class MatrixChoice { Zero, Identity, Alternating, Wigner };
enum class Rescaling { Mde, Semicircle };
enum class Arm { Mono, Gue };

inline std::string to_string(MatrixChoice m) {
  switch (m) {
    case MatrixChoice::Zero: return "zero";
    case MatrixChoice::Identity: return "identity";
    case MatrixChoice::Alternating: return "alternating";
    case MatrixChoice::Wigner: return "wigner";
  }
  return "?";
}
inline std::string to_string(Rescaling r) { return r == Rescaling::Mde ? "mde" : "semicircle"; }
inline std::string to_string(Arm a) { return a == Arm::Mono ? "mono" : "gue"; }

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  ExperimentKind kind = ExperimentKind::AnnealedGap;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  SymmetryClass sym = SymmetryClass::ComplexHermitian;
  EntryLaw entries = EntryLaw::Gaussian;
  MatrixChoice b = MatrixChoice::Zero;
  MatrixChoice a = MatrixChoice::Wigner;
  ParamLaw param;
  std::vector<std::size_t> sizes;
  std::size_t samples = 1;
  std::size_t repetitions = 1;
  std::size_t seeds = 1;
  std::vector<Arm> arms;
  Rescaling rescaling = Rescaling::Mde;
  std::pair<double, double> window{0.1, 0.9};  // fractions of N
  std::optional<std::pair<double, double>> interval;
  double x1 = 0.0;
  double x2 = 0.5;
  double energy = 0.0;
  double eta_exponent = 0.4;
  bool conjugate_z2 = false;
  bool observable_identity = false;
  std::size_t max_dimension = kDefaultMaxDimension;
  bool paper_scale = false;

  int beta() const { return beta_of(sym); }

  /// Index window [floor(lo N), floor(hi N)] clipped to [1, N].
  std::pair<std::size_t, std::size_t> window_for(std::size_t n) const {
    const auto lo = static_cast<std::size_t>(window.first * static_cast<double>(n));
    const auto hi = static_cast<std::size_t>(window.second * static_cast<double>(n));
    return {std::max<std::size_t>(1, lo), std::min(std::max<std::size_t>(1, hi), n)};
  }
};

namespace detail {

template <class T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: key '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

inline std::size_t get_count(const json& j, const std::string& key) {
  if (!j.is_number_integer() || j.get<long long>() < 1)
    throw ConfigError("config: '" + key + "' must be an integer >= 1");
  return j.get<std::size_t>();
}

inline MatrixChoice parse_matrix(const json& j, const std::string& key) {
  const auto s = get_as<std::string>(j, key);
  if (s == "zero") return MatrixChoice::Zero;
  if (s == "identity") return MatrixChoice::Identity;
  if (s == "alternating") return MatrixChoice::Alternating;
  if (s == "wigner") return MatrixChoice::Wigner;
  throw ConfigError("config: '" + key + "' must be one of zero, identity, alternating, wigner");
}

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

inline ParamLaw parse_param(const json& j) {
  if (!j.is_object()) throw ConfigError("config: 'x_law' must be an object");
  reject_unknown(j, {"a", "chi", "cut", "lo", "hi"}, "x_law");
  ParamLaw law;
  if (j.contains("a")) law.a = get_as<double>(j.at("a"), "x_law.a");
  const std::string chi = j.contains("chi") ? get_as<std::string>(j.at("chi"), "x_law.chi") : "truncated_gaussian";
  if (chi == "truncated_gaussian") {
    TruncatedGaussian g;
    if (j.contains("cut")) g.cut = get_as<double>(j.at("cut"), "x_law.cut");
    if (j.contains("lo") || j.contains("hi")) throw ConfigError("config: lo/hi only apply to chi = uniform");
    law.chi = g;
  } else if (chi == "uniform") {
    if (!j.contains("lo") || !j.contains("hi")) throw ConfigError("config: uniform chi needs lo and hi");
    if (j.contains("cut")) throw ConfigError("config: cut only applies to chi = truncated_gaussian");
    law.chi = UniformOnInterval{get_as<double>(j.at("lo"), "x_law.lo"), get_as<double>(j.at("hi"), "x_law.hi")};
  } else {
    throw ConfigError("config: x_law.chi must be truncated_gaussian or uniform");
  }
  try {
    law.validate();
  } catch (const InputError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return law;
}

inline json param_to_json(const ParamLaw& p) {
  json j{{"a", p.a}};
  if (const auto* g = std::get_if<TruncatedGaussian>(&p.chi)) {
    j["chi"] = "truncated_gaussian";
    j["cut"] = g->cut;
  } else {
    const auto& u = std::get<UniformOnInterval>(p.chi);
    j["chi"] = "uniform";
    j["lo"] = u.lo;
    j["hi"] = u.hi;
  }
  return j;
}

inline std::pair<double, double> parse_pair(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("config: '" + key + "' must be a two-element array");
  const double a = get_as<double>(j[0], key), b = get_as<double>(j[1], key);
  if (!(a < b)) throw ConfigError("config: '" + key + "' must be increasing");
  return {a, b};
}

}  // namespace detail

/// Kind-specific defaults for keys the file leaves out.
inline void apply_defaults(ExperimentConfig& c, const json& j) {
  auto absent = [&](const char* k) { return !j.contains(k); };
  switch (c.kind) {
    case ExperimentKind::AnnealedGap:
      if (absent("sizes")) c.sizes = {100};
      if (absent("samples")) c.samples = 5000;
      break;
    case ExperimentKind::QuenchedBulkSampling:
      if (absent("sizes")) c.sizes = {2000};
      break;
    case ExperimentKind::MonoparametricQuenched:
      if (absent("sizes")) c.sizes = {2, 100, 1000};
      if (absent("samples")) c.samples = 2000;
      if (absent("arms")) c.arms = {Arm::Mono, Arm::Gue};
      break;
    case ExperimentKind::KsConvergence:
      if (absent("sizes")) c.sizes = {4, 16, 64, 256};
      if (absent("samples")) c.samples = 100;
      if (absent("repetitions")) c.repetitions = 25;
      if (absent("arms")) c.arms = {Arm::Mono, Arm::Gue};
      break;
    case ExperimentKind::OverlapDecay:
      if (absent("sizes")) c.sizes = {256, 512, 1024};
      if (absent("seeds")) c.seeds = 20;
      break;
    case ExperimentKind::LocalLawCheck:
      if (absent("sizes")) c.sizes = {250, 500, 1000};
      if (absent("seeds")) c.seeds = 20;
      if (absent("a_matrix")) c.a = MatrixChoice::Alternating;
      break;
  }
}

inline void validate(const ExperimentConfig& c) {
  if (c.sizes.empty()) throw ConfigError("config: 'sizes' must not be empty");
  for (auto n : c.sizes) {
    if (n < 2) throw ConfigError("config: every size must be >= 2");
    if (n > c.max_dimension)
      throw ConfigError("config: size " + std::to_string(n) + " exceeds max_dimension " +
                        std::to_string(c.max_dimension));
  }
  if (c.samples < 1 || c.repetitions < 1 || c.seeds < 1) throw ConfigError("config: counts must be >= 1");
  if (!(c.window.first >= 0.0 && c.window.second <= 1.0 && c.window.first < c.window.second))
    throw ConfigError("config: window fractions must satisfy 0 <= lo < hi <= 1");
  if ((c.kind == ExperimentKind::MonoparametricQuenched || c.kind == ExperimentKind::KsConvergence) &&
      c.arms.empty())
    throw ConfigError("config: 'arms' must not be empty");
  if (c.kind == ExperimentKind::LocalLawCheck && !(c.eta_exponent > 0.0 && c.eta_exponent < 1.0))
    throw ConfigError("config: eta_exponent must lie in (0,1)");
}

inline ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  detail::reject_unknown(j,
                         {"schema_version", "experiment", "seed", "output", "symmetry", "entries", "b_matrix",
                          "a_matrix", "x_law", "sizes", "samples", "repetitions", "seeds", "arms", "rescaling",
                          "window", "interval", "x1", "x2", "energy", "eta_exponent", "conjugate_z2",
                          "observable", "max_dimension"},
                         "top level");
  ExperimentConfig c;
  if (!j.contains("schema_version")) throw ConfigError("config: 'schema_version' is required");
  c.schema_version = detail::get_as<int>(j.at("schema_version"), "schema_version");
  if (c.schema_version != kSchemaVersion)
    throw ConfigError("config: unsupported schema_version " + std::to_string(c.schema_version));
  if (!j.contains("experiment")) throw ConfigError("config: 'experiment' is required");
  const auto kind = detail::get_as<std::string>(j.at("experiment"), "experiment");
  bool found = false;
  for (const auto& [k, name] : kind_names())
    if (name == kind) c.kind = k, found = true;
  if (!found) throw ConfigError("config: unknown experiment '" + kind + "'");

  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !(j.at("seed").is_number_integer() && j.at("seed").get<long long>() >= 0))
      throw ConfigError("config: 'seed' must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("output")) c.output = detail::get_as<std::string>(j.at("output"), "output");
  if (j.contains("symmetry")) {
    const auto s = detail::get_as<std::string>(j.at("symmetry"), "symmetry");
    if (s == "real") c.sym = SymmetryClass::RealSymmetric;
    else if (s == "complex") c.sym = SymmetryClass::ComplexHermitian;
    else throw ConfigError("config: symmetry must be real or complex");
  }
  if (j.contains("entries")) {
    const auto s = detail::get_as<std::string>(j.at("entries"), "entries");
    if (s == "gaussian") c.entries = EntryLaw::Gaussian;
    else if (s == "rademacher") c.entries = EntryLaw::Rademacher;
    else if (s == "uniform") c.entries = EntryLaw::UniformStandardized;
    else throw ConfigError("config: entries must be gaussian, rademacher or uniform");
  }
  if (j.contains("b_matrix")) c.b = detail::parse_matrix(j.at("b_matrix"), "b_matrix");
  if (j.contains("a_matrix")) c.a = detail::parse_matrix(j.at("a_matrix"), "a_matrix");
  if (j.contains("x_law")) c.param = detail::parse_param(j.at("x_law"));
  if (j.contains("sizes")) {
    const json& s = j.at("sizes");
    if (!s.is_array()) throw ConfigError("config: 'sizes' must be an array");
    for (const auto& v : s) c.sizes.push_back(detail::get_count(v, "sizes"));
  }
  if (j.contains("samples")) c.samples = detail::get_count(j.at("samples"), "samples");
  if (j.contains("repetitions")) c.repetitions = detail::get_count(j.at("repetitions"), "repetitions");
  if (j.contains("seeds")) c.seeds = detail::get_count(j.at("seeds"), "seeds");
  if (j.contains("arms")) {
    const json& s = j.at("arms");
    if (!s.is_array()) throw ConfigError("config: 'arms' must be an array");
    for (const auto& v : s) {
      const auto a = detail::get_as<std::string>(v, "arms");
      if (a == "mono") c.arms.push_back(Arm::Mono);
      else if (a == "gue") c.arms.push_back(Arm::Gue);
      else throw ConfigError("config: arms must be mono or gue");
    }
  }
  if (j.contains("rescaling")) {
    const auto s = detail::get_as<std::string>(j.at("rescaling"), "rescaling");
    if (s == "mde") c.rescaling = Rescaling::Mde;
    else if (s == "semicircle") c.rescaling = Rescaling::Semicircle;
    else throw ConfigError("config: rescaling must be mde or semicircle");
  }
  if (j.contains("window")) c.window = detail::parse_pair(j.at("window"), "window");
  if (j.contains("interval")) c.interval = detail::parse_pair(j.at("interval"), "interval");
  if (j.contains("x1")) c.x1 = detail::get_as<double>(j.at("x1"), "x1");
  if (j.contains("x2")) c.x2 = detail::get_as<double>(j.at("x2"), "x2");
  if (j.contains("energy")) c.energy = detail::get_as<double>(j.at("energy"), "energy");
  if (j.contains("eta_exponent")) c.eta_exponent = detail::get_as<double>(j.at("eta_exponent"), "eta_exponent");
  if (j.contains("conjugate_z2")) c.conjugate_z2 = detail::get_as<bool>(j.at("conjugate_z2"), "conjugate_z2");
  if (j.contains("observable")) {
    const auto s = detail::get_as<std::string>(j.at("observable"), "observable");
    if (s == "identity") c.observable_identity = true;
    else if (s == "a") c.observable_identity = false;
    else throw ConfigError("config: observable must be a or identity");
  }
  if (j.contains("max_dimension")) c.max_dimension = detail::get_count(j.at("max_dimension"), "max_dimension");
  apply_defaults(c, j);
  validate(c);
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Restores the full-size protocols: the single-matrix study at N = 5000
/// and 50 repetitions in the KS study.
inline void apply_paper_scale(ExperimentConfig& c) {
  c.paper_scale = true;
  if (c.kind == ExperimentKind::QuenchedBulkSampling) {
    for (auto& n : c.sizes)
      if (n == 2000) n = 5000;
  }
  if (c.kind == ExperimentKind::KsConvergence) c.repetitions = 50;
  c.max_dimension = std::max<std::size_t>(c.max_dimension, 5000);
  validate(c);
}

/// Normalised echo of every field, defaults included.
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["experiment"] = to_string(c.kind);
  if (c.seed) j["seed"] = *c.seed;
  if (c.output) j["output"] = *c.output;
  j["symmetry"] = std::string(rmtq::to_string(c.sym));
  j["entries"] = std::string(rmtq::to_string(c.entries));
  j["b_matrix"] = to_string(c.b);
  j["a_matrix"] = to_string(c.a);
  j["x_law"] = detail::param_to_json(c.param);
  j["sizes"] = c.sizes;
  j["samples"] = c.samples;
  j["repetitions"] = c.repetitions;
  j["seeds"] = c.seeds;
  json arms = json::array();
  for (auto a : c.arms) arms.push_back(to_string(a));
  j["arms"] = arms;
  j["rescaling"] = to_string(c.rescaling);
  j["window"] = {c.window.first, c.window.second};
  if (c.interval) j["interval"] = {c.interval->first, c.interval->second};
  j["x1"] = c.x1;
  j["x2"] = c.x2;
  j["energy"] = c.energy;
  j["eta_exponent"] = c.eta_exponent;
  j["conjugate_z2"] = c.conjugate_z2;
  j["observable"] = c.observable_identity ? "identity" : "a";
  j["max_dimension"] = c.max_dimension;
  return j;
}

}  // namespace rmtq::harness
