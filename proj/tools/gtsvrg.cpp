// gtsvrg: simulate | theory | verify | compare

#include "experiment.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace gtsvrg;
using cli::ordered_json;

enum ExitCode : int {
  kOk = 0,
  kVerifyFailed = 1,
  kBadInput = 2,
  kDiverged = 3,
  kNumeric = 4,
  kInternal = 5,
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::topology:
    case ErrorKind::usage:
    case ErrorKind::precondition: return kBadInput;
    case ErrorKind::diverged: return kDiverged;
    case ErrorKind::numeric: return kNumeric;
    case ErrorKind::internal: return kInternal;
  }
  return kInternal;
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool json = false;
};

void print_theory_table(const TheoryTable& t) {
  const auto row = [](const char* name, const std::string& value) {
    std::printf("%-24s %s\n", name, value.c_str());
  };
  const auto num = [](double v) { return format_double(v); };
  row("sigma", num(t.sigma));
  row("mu", num(t.mu));
  row("ell", num(t.ell));
  row("Q", num(t.Q));
  row("M", num(t.M));
  row("max_step", num(t.max_step));
  row("recommended_step", num(t.recommended));
  row("rho_G", num(t.rho_G));
  row("rho_G_bound", num(t.rho_G_bound));
  row("perturbation_gain", num(t.perturbation_gain) + "  (ceiling " + num(kPerturbationGainCeiling) + ")");
  row("K", std::to_string(t.K) + "  (c = " + num(t.c) + ")");
  row("outer_rho", num(t.outer_rho));
  row("predicted_complexity", num(t.predicted_complexity) + "  (asymptotic, unit constant, epsilon = " +
                                  num(t.epsilon) + ")");
}

Config load_config(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  return Config::load(o.config);
}

int cmd_simulate(const Options& o) {
  const Config cfg = load_config(o);
  const cli::Experiment ex = cli::resolve(cfg, o.seed);
  const ordered_json summary = cli::simulate(ex);
  if (o.json) {
    std::cout << summary.dump() << '\n';
  } else {
    const auto& f = summary["final"];
    std::cout << ex.method << ": " << ex.T << " outer loops requested, " << summary["outer_loops"]
              << " run; alpha " << format_double(ex.alpha) << ", K " << ex.K << "\n"
              << "final ||xbar - x*|| = " << f["mean_dist_to_opt"] << ", grad_evals = " << f["grad_evals"]
              << "\nwrote " << (ex.out_dir / "trace.csv").string() << '\n';
  }
  return kOk;
}

struct TheoryArgs {
  std::optional<double> sigma, mu, ell, M;
  double epsilon = 1e-6;
  double c = 1.0;
};

int cmd_theory(const Options& o, const TheoryArgs& a) {
  double sigma = 0.0, mu = 1.0, ell = 1.0, M = 1.0, epsilon = a.epsilon, c = a.c;
  if (!o.config.empty()) {
    const Config cfg = load_config(o);
    const cli::Experiment ex = cli::resolve(cfg, o.seed);
    sigma = ex.network.sigma();
    mu = ex.problem.mu();
    ell = ex.problem.ell();
    M = ex.problem.constants().M_max;
    epsilon = cfg.get_double("theory.epsilon", epsilon);
    c = ex.c;
  }
  sigma = a.sigma.value_or(sigma);
  mu = a.mu.value_or(mu);
  ell = a.ell.value_or(ell);
  M = a.M.value_or(M);
  const TheoryTable t = theory_table(sigma, mu, ell, M, epsilon, c);
  if (o.json) {
    std::cout << cli::to_json(t).dump() << '\n';
  } else {
    print_theory_table(t);
  }
  return kOk;
}

int cmd_verify(const Options& o) {
  const Config cfg = load_config(o);
  const cli::Experiment ex = cli::resolve(cfg, o.seed);
  const cli::VerifyOutcome out = cli::verify(ex, cfg);
  for (const auto& line : out.lines) std::cout << line.dump() << '\n';
  return out.failed ? kVerifyFailed : kOk;
}

int cmd_compare(const Options& o) {
  const Config cfg = load_config(o);
  const cli::Experiment ex = cli::resolve(cfg, o.seed);
  const ordered_json summary =
      cli::compare(ex, cfg.get_list("compare.methods"), cfg.get_double("compare.target", 1e-6));
  if (o.json) {
    std::cout << summary.dump() << '\n';
  } else {
    for (const auto& m : summary["methods"]) {
      std::cout << m["method"].get<std::string>() << ": grad_evals_to_target " << m["grad_evals_to_target"]
                << ", final ||xbar - x*|| " << m["final_mean_dist_to_opt"] << '\n';
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized gradient tracking with SVRG: simulation, theory and verification"};
  app.require_subcommand(1);
  Options opt;
  TheoryArgs targs;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "experiment config file");
    sub->add_option("--seed", opt.seed, "override run.seed");
    sub->add_flag("--json", opt.json, "machine-readable output");
  };
  CLI::App* simulate = app.add_subcommand("simulate", "run one method and write trace.csv and summary.json");
  CLI::App* theory = app.add_subcommand("theory", "print step sizes, spectral radii and K");
  CLI::App* verify = app.add_subcommand("verify", "run the oracle suite, one JSON line per check");
  CLI::App* compare = app.add_subcommand("compare", "run several methods on one instance");
  for (CLI::App* sub : {simulate, theory, verify, compare}) common(sub);
  theory->add_option("--sigma", targs.sigma, "second singular value of W");
  theory->add_option("--mu", targs.mu, "strong convexity");
  theory->add_option("--ell", targs.ell, "smoothness");
  theory->add_option("--M", targs.M, "largest local sample count");
  theory->add_option("--epsilon", targs.epsilon, "target accuracy for the complexity estimate");
  theory->add_option("--c", targs.c, "norm-equivalence constant in K");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kBadInput;
  }

  try {
    if (*simulate) return cmd_simulate(opt);
    if (*theory) return cmd_theory(opt, targs);
    if (*verify) return cmd_verify(opt);
    if (*compare) return cmd_compare(opt);
  } catch (const Error& e) {
    std::cerr << "gtsvrg: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "gtsvrg: internal-error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
