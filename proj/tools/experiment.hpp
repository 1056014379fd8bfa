#pragma once

// Config resolution and the drivers behind the CLI subcommands.

#include "gtsvrg/algorithm.hpp"
#include "gtsvrg/baselines.hpp"
#include "gtsvrg/config.hpp"
#include "gtsvrg/objectives.hpp"
#include "gtsvrg/theory.hpp"
#include "gtsvrg/topology.hpp"
#include "gtsvrg/trace.hpp"
#include "gtsvrg/verify.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace gtsvrg::cli {

using nlohmann::ordered_json;

/// How a symbolic parameter became a number.
struct Resolution {
  std::string name;
  double value = 0.0;
  std::string formula;
  std::map<std::string, double> inputs;
};

struct Experiment {
  Problem problem;
  MixingMatrix network;
  std::string topology;
  std::string method = "gtsvrg";
  double alpha = 0.0;
  std::int64_t K = 1;
  std::int64_t T = 1;
  std::uint64_t seed = 0;
  std::uint64_t instance_seed = 0;
  std::int64_t record_every = 1;
  int threads = 1;
  std::optional<double> target;
  std::optional<Matrix> x0;
  double c = 1.0;
  std::vector<Resolution> resolutions;
  std::filesystem::path out_dir = "out";

  Experiment(Problem p, MixingMatrix w) : problem(std::move(p)), network(std::move(w)) {}

  RunConfig run_config() const {
    RunConfig cfg;
    cfg.alpha = alpha;
    cfg.K = K;
    cfg.T = T;
    cfg.seed = seed;
    cfg.x0 = x0;
    cfg.record_every = record_every;
    cfg.threads = threads;
    cfg.target = target;
    return cfg;
  }
};

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods{"gtsvrg", "gt", "dsgd"};
  return methods;
}

inline void check_method(const std::string& m) {
  for (const auto& k : known_methods())
    if (k == m) return;
  throw ConfigError("unknown method '" + m + "' (expected gtsvrg, gt or dsgd)");
}

namespace detail {

inline std::vector<int> parse_counts(const Config& cfg, int n) {
  const auto items = cfg.get_list("problem.m");
  if (items.empty()) throw ConfigError("missing required key 'problem.m'");
  std::vector<int> m;
  for (const auto& s : items) m.push_back(static_cast<int>(Config::to_int("problem.m", s)));
  if (m.size() == 1) m.assign(static_cast<std::size_t>(n), m.front());
  if (static_cast<int>(m.size()) != n) {
    throw ConfigError("problem.m lists " + std::to_string(m.size()) + " counts for " + std::to_string(n) +
                      " nodes");
  }
  return m;
}

inline MixingMatrix build_network(const Config& cfg, std::uint64_t seed, std::string& desc) {
  if (const auto path = cfg.get("topology.matrix")) {
    desc = "matrix:" + *path;
    return load_matrix(*path);
  }
  const TopologyKind kind = parse_topology_kind(cfg.get_string("topology.kind", "ring"));
  GraphParams params;
  params.rows = static_cast<int>(cfg.get_int("topology.rows", 0));
  params.cols = static_cast<int>(cfg.get_int("topology.cols", 0));
  params.prob = cfg.get_double("topology.prob", params.prob);
  params.max_retries = static_cast<int>(cfg.get_int("topology.max_retries", params.max_retries));
  std::int64_t n = cfg.get_int("topology.n", 0);
  if (n == 0 && kind == TopologyKind::grid2d) n = static_cast<std::int64_t>(params.rows) * params.cols;
  if (n < 1) throw ConfigError("topology.n must be >= 1");
  desc = std::string(to_string(kind)) + ":" + std::to_string(n);
  const std::string weights = cfg.get_string("topology.weights", "metropolis");
  if (weights == "uniform") {
    if (kind != TopologyKind::complete) throw ConfigError("uniform weights need topology.kind = complete");
    return uniform_complete(static_cast<int>(n));
  }
  if (weights != "metropolis") throw ConfigError("topology.weights must be metropolis or uniform");
  return metropolis_weights(build_graph(kind, static_cast<int>(n), params, seed));
}

inline Problem build_problem(const Config& cfg, int n, std::uint64_t seed) {
  if (const auto path = cfg.get("problem.file")) return load_problem(*path);
  const ProblemFamily family = parse_problem_family(cfg.get_string("problem.family", "quadratic"));
  const std::vector<int> m = parse_counts(cfg, n);
  const int p = static_cast<int>(cfg.get_int("problem.p", 1));
  if (family == ProblemFamily::quadratic) {
    const double mu = cfg.get_double("problem.mu", 1.0);
    const double ell = cfg.get_double("problem.ell", mu);
    return make_quadratic(n, m, p, mu, ell, seed);
  }
  return make_reglog(n, m, p, cfg.get_double("problem.lambda", 0.1), seed);
}

// "0.01", "recommended", "max", or "<factor>*recommended" / "<factor>*max".
inline double resolve_alpha(const std::string& text, const MixingMatrix& W, const Problem& P,
                            std::vector<Resolution>& log) {
  std::string name = text;
  double factor = 1.0;
  if (const auto star = text.find('*'); star != std::string::npos) {
    factor = Config::to_double("run.alpha", text.substr(0, star));
    name = text.substr(star + 1);
  }
  const double sigma = W.sigma();
  const double Q = P.ell() / P.mu();
  const std::map<std::string, double> inputs{{"sigma", sigma}, {"Q", Q}, {"ell", P.ell()}, {"factor", factor}};
  if (name == "recommended") {
    const double a = factor * recommended_step(sigma, Q, P.ell());
    log.push_back({"alpha", a, "factor * (1 - sigma^2)^2 / (200 Q ell)", inputs});
    return a;
  }
  if (name == "max") {
    const double a = factor * max_step_size(sigma, Q, P.ell());
    log.push_back({"alpha", a, "factor * (1 - sigma^2)^2 / (105 Q ell)", inputs});
    return a;
  }
  if (text.find('*') != std::string::npos) throw ConfigError("run.alpha: unknown symbol '" + name + "'");
  return Config::to_double("run.alpha", text);
}

}  // namespace detail

/// Resolves a config into concrete values. `seed_override` replaces run.seed.
/// GTSVRG_OUT, when set, replaces output.dir.
inline Experiment resolve(const Config& cfg, std::optional<std::uint64_t> seed_override = std::nullopt) {
  const std::uint64_t seed = seed_override.value_or(cfg.get_uint("run.seed", 0));
  const std::uint64_t instance_seed = cfg.get_uint("problem.seed", seed);
  std::string desc;
  MixingMatrix W = detail::build_network(cfg, instance_seed, desc);
  Problem P = detail::build_problem(cfg, W.size(), instance_seed);
  if (P.nodes() != W.size()) {
    throw ConfigError("problem has " + std::to_string(P.nodes()) + " nodes but the network has " +
                      std::to_string(W.size()));
  }

  Experiment ex(std::move(P), std::move(W));
  ex.topology = desc;
  ex.seed = seed;
  ex.instance_seed = instance_seed;
  ex.method = cfg.get_string("run.method", "gtsvrg");
  check_method(ex.method);
  ex.c = cfg.get_double("theory.c", 1.0);
  ex.alpha = detail::resolve_alpha(cfg.get_string("run.alpha", "recommended"), ex.network, ex.problem,
                                   ex.resolutions);

  const std::string k_text = cfg.get_string("run.K", "auto");
  if (k_text == "auto") {
    const double Q = ex.problem.ell() / ex.problem.mu();
    ex.K = inner_loop_length(ex.network.sigma(), Q, ex.c);
    ex.resolutions.push_back({"K", static_cast<double>(ex.K), "ceil(801 Q^2 / (1 - sigma^2)^2 * log(20 c))",
                              {{"sigma", ex.network.sigma()}, {"Q", Q}, {"c", ex.c}}});
  } else {
    ex.K = Config::to_int("run.K", k_text);
  }
  ex.T = cfg.get_int("run.T", 1);
  ex.record_every = cfg.get_int("run.record_every", 1);
  ex.threads = static_cast<int>(cfg.get_int("run.threads", 1));
  if (ex.threads < 1) throw ConfigError("run.threads must be >= 1");
  if (cfg.has("run.target")) ex.target = cfg.get_double("run.target", 0.0);
  // run.x0: one value for every entry, or one value per node (filling that row)
  if (cfg.has("run.x0")) {
    const auto values = cfg.get_list("run.x0");
    const int n = ex.problem.nodes();
    if (values.size() != 1 && values.size() != static_cast<std::size_t>(n)) {
      throw ConfigError("run.x0 needs 1 or " + std::to_string(n) + " values, got " + std::to_string(values.size()));
    }
    Matrix x0(n, ex.problem.dim());
    for (int i = 0; i < n; ++i) x0.row(i).setConstant(Config::to_double("run.x0", values[values.size() == 1 ? 0 : i]));
    ex.x0 = std::move(x0);
  }
  ex.out_dir = cfg.get_string("output.dir", "out");
  if (const char* env = std::getenv("GTSVRG_OUT"); env && *env) ex.out_dir = env;
  gtsvrg::detail::check_run_config(ex.run_config());
  return ex;
}

inline Trace run_method(const Experiment& ex, const std::string& method) {
  const RunConfig cfg = ex.run_config();
  if (method == "gtsvrg") return run(ex.problem, ex.network, cfg);
  if (method == "gt") return run_gt(ex.problem, ex.network, cfg);
  if (method == "dsgd") return run_dsgd(ex.problem, ex.network, cfg);
  check_method(method);
  return {};
}

// ---------------------------------------------------------------------------
// JSON

inline ordered_json number_or_null(double v) {
  return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr);
}

inline ordered_json to_json(const Resolution& r) {
  ordered_json inputs = ordered_json::object();
  for (const auto& [k, v] : r.inputs) inputs[k] = v;
  return {{"name", r.name}, {"value", r.value}, {"formula", r.formula}, {"inputs", inputs}};
}

inline ordered_json to_json(const TraceRecord& r) {
  return {{"t", r.t},
          {"k", r.k},
          {"consensus_sq", number_or_null(r.consensus_sq)},
          {"opt_gap_sq_scaled", number_or_null(r.opt_gap_sq_scaled)},
          {"tracking_sq", number_or_null(r.tracking_sq)},
          {"mean_dist_to_opt", number_or_null(r.mean_dist_to_opt)},
          {"grad_evals", r.grad_evals}};
}

inline ordered_json to_json(const OracleReport& r) {
  ordered_json j{{"id", r.id},
                 {"instances", r.instances},
                 {"max_violation", r.instances > 0 ? number_or_null(r.max_violation) : ordered_json(nullptr)},
                 {"tolerance", r.tolerance},
                 {"pass", r.status == OracleStatus::pass},
                 {"status", std::string(to_string(r.status))}};
  if (r.standard_error) j["standard_error"] = *r.standard_error;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

inline ordered_json to_json(const TheoryTable& t) {
  return {{"sigma", t.sigma},
          {"mu", t.mu},
          {"ell", t.ell},
          {"Q", t.Q},
          {"M", t.M},
          {"epsilon", t.epsilon},
          {"c", t.c},
          {"max_step", t.max_step},
          {"recommended_step", t.recommended},
          {"rho_G", t.rho_G},
          {"rho_G_bound", t.rho_G_bound},
          {"perturbation_gain", t.perturbation_gain},
          {"perturbation_gain_ceiling", kPerturbationGainCeiling},
          {"K", t.K},
          {"outer_rho", t.outer_rho},
          {"predicted_complexity", t.predicted_complexity},
          {"predicted_complexity_note", "asymptotic order, unit constant"}};
}

inline ordered_json experiment_json(const Experiment& ex) {
  ordered_json res = ordered_json::array();
  for (const auto& r : ex.resolutions) res.push_back(to_json(r));
  const ProblemConstants k = ex.problem.constants();
  return {{"method", ex.method},
          {"topology", ex.topology},
          {"n", ex.problem.nodes()},
          {"p", ex.problem.dim()},
          {"family", std::string(to_string(ex.problem.family()))},
          {"sigma", ex.network.sigma()},
          {"mu", k.mu},
          {"ell", k.ell},
          {"Q", k.Q},
          {"M_max", k.M_max},
          {"m_min", k.m_min},
          {"alpha", ex.alpha},
          {"K", ex.K},
          {"T", ex.T},
          {"seed", ex.seed},
          {"instance_seed", ex.instance_seed},
          {"resolved", res}};
}

inline void write_json(const std::filesystem::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

inline void prepare_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// Drivers

/// trace.csv, summary.json, problem.txt and matrix.txt under ex.out_dir.
inline ordered_json simulate(const Experiment& ex) {
  prepare_dir(ex.out_dir);
  save_problem(ex.problem, (ex.out_dir / "problem.txt").string());
  {
    std::ofstream m(ex.out_dir / "matrix.txt", std::ios::binary);
    if (!m) throw ConfigError("cannot write matrix.txt");
    write_matrix(m, ex.network.dense());
  }
  const Trace trace = run_method(ex, ex.method);
  write_trace_csv((ex.out_dir / "trace.csv").string(), trace);

  ordered_json summary = experiment_json(ex);
  summary["final"] = to_json(trace.last());
  summary["outer_loops"] = trace.outer_loops;
  summary["reached_target"] = trace.reached_target;
  if (ex.target) summary["target"] = *ex.target;
  ordered_json ratios = ordered_json::array();
  for (double r : trace.outer_ratios) ratios.push_back(number_or_null(r));
  summary["outer_ratios"] = ratios;
  summary["geometric_mean_ratio"] = number_or_null(trace.geometric_mean_ratio(1));
  summary["grad_evals"] = trace.last().grad_evals;
  write_json(ex.out_dir / "summary.json", summary);
  return summary;
}

/// Grad evaluations at the first record with ||xbar - x*|| <= target.
inline std::optional<std::uint64_t> evals_to_target(const Trace& trace, double target) {
  for (const auto& r : trace.records)
    if (r.mean_dist_to_opt <= target) return r.grad_evals;
  return std::nullopt;
}

/// Every listed method on the same instance; compare.csv and compare.json.
inline ordered_json compare(const Experiment& ex, const std::vector<std::string>& methods, double target) {
  if (methods.empty()) throw ConfigError("compare.methods is empty");
  for (const auto& m : methods) check_method(m);
  prepare_dir(ex.out_dir);
  std::ofstream csv(ex.out_dir / "compare.csv", std::ios::binary);
  if (!csv) throw ConfigError("cannot write compare.csv");
  csv << "method," << kTraceHeader << '\n';
  ordered_json summary = experiment_json(ex);
  summary.erase("method");
  summary["target"] = target;
  ordered_json per = ordered_json::array();
  for (const auto& m : methods) {
    const Trace trace = run_method(ex, m);
    for (const auto& r : trace.records) {
      csv << m << ',';
      write_trace_row(csv, r);
    }
    const auto evals = evals_to_target(trace, target);
    // Smallest residual over the last quarter of the records: a plateau
    // shows up as this staying well above zero.
    const std::size_t tail = trace.records.size() - std::max<std::size_t>(1, trace.records.size() / 4);
    double tail_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = tail; i < trace.records.size(); ++i)
      tail_min = std::min(tail_min, trace.records[i].mean_dist_to_opt);
    per.push_back({{"method", m},
                   {"grad_evals_to_target", evals ? ordered_json(*evals) : ordered_json(nullptr)},
                   {"final_mean_dist_to_opt", number_or_null(trace.last().mean_dist_to_opt)},
                   {"tail_min_mean_dist_to_opt", number_or_null(tail_min)},
                   {"grad_evals", trace.last().grad_evals}});
  }
  summary["methods"] = per;
  write_json(ex.out_dir / "compare.json", summary);
  return summary;
}

struct VerifyOutcome {
  std::vector<ordered_json> lines;
  bool failed = false;
};

/// The oracle suite on a fresh run, or the negative-control fixtures when
/// verify.fixture = corrupt (every line is then expected to fail).
inline VerifyOutcome verify(const Experiment& ex, const Config& cfg) {
  VerifyOutcome out;
  const std::string fixture = cfg.get_string("verify.fixture", "none");
  std::vector<OracleReport> reports;
  std::optional<OuterContraction> outer;
  if (fixture == "corrupt") {
    reports = negative_controls(ex.instance_seed);
  } else if (fixture == "none") {
    SuiteOptions opt;
    opt.alpha = ex.alpha;
    opt.K = ex.K;
    opt.T = ex.T;
    opt.seed = ex.seed;
    opt.target = ex.target;
    opt.max_states = cfg.get_int("verify.states", opt.max_states);
    opt.mc_trials = cfg.get_int("verify.mc_trials", opt.mc_trials);
    opt.random_samples = static_cast<int>(cfg.get_int("verify.samples", opt.random_samples));
    SuiteResult r = run_verify_suite(ex.problem, ex.network, opt);
    reports = std::move(r.reports);
    outer = std::move(r.outer);
  } else {
    throw ConfigError("verify.fixture must be none or corrupt");
  }
  for (const auto& r : reports) {
    ordered_json j = to_json(r);
    if (outer && r.id == "outer_contraction") {
      ordered_json ratios = ordered_json::array();
      for (double x : outer->ratios) ratios.push_back(number_or_null(x));
      j["ratios"] = ratios;
      j["geometric_mean_ratio"] = number_or_null(outer->geometric_mean);
      j["meets_0_9"] = outer->meets_point_nine;
    }
    out.failed = out.failed || r.failed();
    out.lines.push_back(std::move(j));
  }
  return out;
}

}  // namespace gtsvrg::cli
