// rmtq: experiment runner, reference tables and oracle checks.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "rmtq/error.hpp"
#include "rmtq/gapref.hpp"
#include "rmtq/harness/checks.hpp"
#include "rmtq/harness/config.hpp"
#include "rmtq/harness/experiments.hpp"
#include "rmtq/harness/parallel.hpp"

namespace {

using namespace rmtq;
using namespace rmtq::harness;

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  bool paper_scale = false;
  bool dry_run = false;
};

int do_run(const RunArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  if (a.paper_scale) apply_paper_scale(cfg);
  const std::optional<std::uint64_t> seed = a.seed ? a.seed : cfg.seed;
  if (!seed) throw ConfigError("no seed: set 'seed' in the config or pass --seed");
  if (a.dry_run) {
    std::cout << describe_schedule(cfg, *seed);
    return 0;
  }
  const std::size_t threads = a.threads ? *a.threads : default_threads();
  const ExperimentResult r = run_experiment(cfg, *seed, threads);
  const std::optional<std::string> out = a.out ? a.out : cfg.output;
  if (out) {
    write_outputs(r, cfg, *seed, *out);
    std::cerr << "wrote " << *out << " (" << r.emitted << " rows, " << r.skipped << " skipped) and "
              << meta_path(*out).string() << '\n';
  } else {
    r.write_csv(std::cout);
    std::cerr << metadata(r, cfg, *seed).dump(2) << '\n';
  }
  return 0;
}

int do_ref(int beta, const std::string& provenance, const std::optional<std::string>& out, double s_max, double ds) {
  GapReference ref;
  if (provenance == "painleve") {
    ref = gaudin_mehta(beta, s_max, ds);
  } else if (provenance == "fredholm") {
    if (beta != 2) throw InputError("the Fredholm route is only available for beta = 2");
    ref = fredholm_p2_oracle(gap_grid(s_max, ds));
  } else {
    ref = wigner_surmise(beta, gap_grid(s_max, ds));
  }
  if (out) {
    std::ofstream f(*out, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + *out + "'");
    write_reference_csv(f, ref);
  } else {
    write_reference_csv(std::cout, ref);
  }
  return 0;
}

int do_check() {
  bool all = true;
  for (const CheckResult& c : run_checks()) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    all = all && c.passed;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rmtq: random-matrix gap statistics experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(RMTQ_GIT_DESCRIBE));

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "run an experiment described by a JSON config");
  run_cmd->add_option("config", run.config, "config file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run.seed, "master seed (overrides the config)");
  run_cmd->add_option("--out", run.out, "CSV output path; metadata goes to <stem>.meta.json");
  run_cmd->add_option("--threads", run.threads, "worker count (default: RMTQ_THREADS or hardware)")
      ->check(CLI::PositiveNumber);
  run_cmd->add_flag("--paper-scale", run.paper_scale, "full-size protocols");
  run_cmd->add_flag("--dry-run", run.dry_run, "validate and print the schedule only");

  int beta = 2;
  std::string provenance = "painleve";
  std::optional<std::string> ref_out;
  double s_max = 5.0, ds = 1e-3;
  auto* ref_cmd = app.add_subcommand("ref", "emit a gap reference table (s,p,cdf,provenance)");
  ref_cmd->add_option("--beta", beta, "symmetry index")->required()->check(CLI::IsMember({1, 2}));
  ref_cmd->add_option("--provenance", provenance, "painleve, fredholm or surmise")
      ->check(CLI::IsMember({"painleve", "fredholm", "surmise"}));
  ref_cmd->add_option("--out", ref_out, "output path (default stdout)");
  ref_cmd->add_option("--s-max", s_max, "grid end")->check(CLI::Range(0.01, 5.0));
  ref_cmd->add_option("--ds", ds, "grid step")->check(CLI::Range(1e-5, 0.1));

  auto* check_cmd = app.add_subcommand("check", "run the oracle suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return do_run(run);
    if (*ref_cmd) return do_ref(beta, provenance, ref_out, s_max, ds);
    if (*check_cmd) return do_check();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const rmtq::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
