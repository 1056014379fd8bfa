#include "catch_amalgamated.hpp"

#include "gtsvrg/verify.hpp"

#include <cmath>

using namespace gtsvrg;

namespace {

MixingMatrix lazy_pair() {
  Matrix w(2, 2);
  w << 0.7, 0.3, 0.3, 0.7;
  return MixingMatrix::from_dense(w);
}

// State points from the first `count` steps of a run started far from x*.
std::vector<StatePoint> mid_run_points(const Problem& P, const MixingMatrix& W, double alpha, int count,
                                       std::uint64_t seed, double spread = 3.0) {
  PhiloxEngine rng(seed, StreamDomain::oracle_states);
  const Matrix x0 = detail::gaussian_matrix(rng, P.nodes(), P.dim(), spread);
  const GtSvrg alg(P, W, alpha, seed);
  NetworkState S = alg.init(x0);
  std::vector<StatePoint> out;
  for (int k = 0; k < count; ++k) {
    if (k > 0 && k % 7 == 0) alg.refresh(S);
    out.push_back(state_point(S, W, alpha));
    S = alg.inner_step(S);
  }
  return out;
}

void require_pass(const OracleReport& r) {
  INFO(r.id << " max_violation " << r.max_violation << " tol " << r.tolerance << " note " << r.note);
  REQUIRE(r.status == OracleStatus::pass);
}

}  // namespace

TEST_CASE("report bookkeeping") {
  OracleReport r("x", 1e-9);
  CHECK(r.status == OracleStatus::skipped);
  r.add(-1.0);
  CHECK(r.status == OracleStatus::pass);
  r.add(std::nan(""));
  CHECK(r.failed());
  CHECK(std::isinf(r.max_violation));
  OracleReport unmet("y", 0.0);
  unmet.status = OracleStatus::precondition_unmet;
  OracleReport merged("y", 0.0);
  merged.merge(unmet);
  CHECK(merged.status == OracleStatus::precondition_unmet);
  CHECK(to_string(OracleStatus::precondition_unmet) == "precondition-unmet");
}

TEST_CASE("tracking identity") {
  const Problem P = make_quadratic(10, std::vector<int>(10, 6), 3, 1.0, 5.0, 2);
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::ring, 10));
  const GtSvrg alg(P, W, recommended_step(W.sigma(), 5.0, 5.0), 3);
  NetworkState S = alg.init(Matrix::Constant(10, 3, 2.0));
  CHECK(check_tracking_identity(S).max_violation == 0.0);
  OracleReport acc("tracking_identity", 1e-9);
  for (int k = 0; k < 1000; ++k) {
    S = alg.inner_step(S);
    if (S.k == 300) alg.refresh(S);
    acc.merge(check_tracking_identity(S));
  }
  require_pass(acc);
  CHECK(acc.instances == 1000);
  S.y(3, 1) += 0.5;
  CHECK(check_tracking_identity(S).failed());
}

TEST_CASE("unbiasedness") {
  const Problem one = make_quadratic(2, {1, 1}, 2, 1.0, 3.0, 5);
  StatePoint sp;
  sp.x = Matrix::Constant(2, 2, 0.4);
  sp.snapshot_x = Matrix::Constant(2, 2, -1.0);
  sp.snapshot_grad = one.stacked_local_grads(sp.snapshot_x);
  CHECK(unbiasedness_oracle(one, 0, sp).max_violation <= 1e-16);

  const QuadraticComponent c{(Matrix(2, 2) << 2, 0.5, 0.5, 1).finished(), Vector::Ones(2)};
  const Problem twins = Problem::quadratic({{c, c}});
  sp.x = Matrix::Constant(1, 2, 0.4);
  sp.snapshot_x = Matrix::Constant(1, 2, 3.0);
  sp.snapshot_grad = twins.stacked_local_grads(sp.snapshot_x);
  CHECK(unbiasedness_oracle(twins, 0, sp).max_violation <= 1e-15);

  const Problem P = make_quadratic(3, {8, 8, 8}, 3, 1.0, 6.0, 7);
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::path, 3));
  for (const auto& pt : mid_run_points(P, W, 0.01, 20, 4))
    for (int i = 0; i < 3; ++i) require_pass(unbiasedness_oracle(P, i, pt));
}

TEST_CASE("gradient consistency") {
  const Problem P = make_quadratic(5, std::vector<int>(5, 4), 2, 1.0, 8.0, 3);
  const AnalysisConstants c{P.mu(), P.ell(), 0.5};
  const Matrix consensus = Vector::Constant(2, 1.7).transpose().replicate(5, 1);
  const OracleReport at = check_gradient_consistency(P, consensus, c);
  CHECK(std::abs(at.max_violation) <= 1e-15);
  PhiloxEngine rng(11, StreamDomain::oracle_states);
  OracleReport acc("gradient_consistency", kInequalityTolerance);
  for (int s = 0; s < 1000; ++s) acc.merge(check_gradient_consistency(P, detail::gaussian_matrix(rng, 5, 2, 4.0), c));
  require_pass(acc);
  const Problem single = make_quadratic(1, {3}, 2, 1.0, 2.0, 1);
  CHECK(check_gradient_consistency(single, Matrix::Constant(1, 2, 5.0), c).max_violation == 0.0);
}

TEST_CASE("gradient-descent contraction") {
  const Problem P = make_quadratic(3, {4, 4, 4}, 3, 1.0, 10.0, 6);
  const AnalysisConstants c{P.mu(), P.ell(), 0.0};
  // the gradient at x* is zero only up to rounding
  CHECK(std::abs(check_gd_contraction(P, 1.0 / P.ell(), {P.minimizer()}, c).max_violation) <= 1e-15);

  const Problem half = Problem::quadratic({{{Matrix::Identity(1, 1), Vector::Zero(1)}}});
  const OracleReport exact = check_gd_contraction(half, 1.0, {Vector::Constant(1, 2.5)}, {1.0, 1.0, 0.0});
  CHECK(exact.max_violation == 0.0);

  PhiloxEngine rng(2, StreamDomain::oracle_states);
  std::vector<Vector> pts;
  for (int s = 0; s < 1000; ++s) pts.push_back(detail::gaussian_matrix(rng, 3, 1, 5.0).col(0));
  require_pass(check_gd_contraction(P, 1.0 / P.ell(), pts, c));
  CHECK(check_gd_contraction(P, 2.0 / P.ell(), pts, c).status == OracleStatus::precondition_unmet);
}

TEST_CASE("consensus inequality") {
  const Problem P = make_quadratic(6, std::vector<int>(6, 5), 2, 1.0, 4.0, 8);
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::ring, 6));
  const AnalysisConstants c = analysis_constants(P, W);

  NetworkState still;
  still.x = Matrix::Constant(6, 2, 1.0);
  still.y = Matrix::Zero(6, 2);
  NetworkState next = still;
  next.x = W.apply(still.x);
  CHECK(check_consensus_inequality(still, next, 0.1, c).max_violation <= 0.0);

  PhiloxEngine rng(1, StreamDomain::oracle_states);
  still.x = detail::gaussian_matrix(rng, 6, 2);
  still.y = detail::gaussian_matrix(rng, 6, 2);
  next.x = W.apply(still.x);
  require_pass(check_consensus_inequality(still, next, 0.0, c));
  require_pass(check_mixing_contraction(W, still.x, c));

  RunConfig cfg;
  cfg.alpha = recommended_step(c.sigma, c.ell / c.mu, c.ell);
  cfg.K = 200;
  cfg.T = 3;
  cfg.x0 = detail::gaussian_matrix(rng, 6, 2, 5.0);
  OracleReport acc("consensus_inequality", kInequalityTolerance);
  run(P, W, cfg, [&](const NetworkState& a, const NetworkState& b) {
    acc.merge(check_consensus_inequality(a, b, cfg.alpha, c));
  });
  require_pass(acc);
  CHECK(acc.instances == 600);
}

TEST_CASE("variance bound") {
  const Problem P = make_quadratic(2, {2, 2}, 1, 1.0, 3.0, 4);
  const MixingMatrix W = lazy_pair();
  const AnalysisConstants c = analysis_constants(P, W);

  StatePoint at_opt;
  at_opt.x = P.minimizer().transpose().replicate(2, 1);
  at_opt.snapshot_x = at_opt.x;
  at_opt.snapshot_grad = P.stacked_local_grads(at_opt.x);
  const OracleReport zero = variance_oracle(P, at_opt, c);
  CHECK(zero.max_violation <= 0.0);
  CHECK(zero.status == OracleStatus::pass);

  const Problem single = make_quadratic(3, {1, 1, 1}, 2, 1.0, 2.0, 9);
  StatePoint sp;
  sp.x = Matrix::Constant(3, 2, 4.0);
  sp.snapshot_x = Matrix::Zero(3, 2);
  sp.snapshot_grad = single.stacked_local_grads(sp.snapshot_x);
  CHECK(variance_oracle(single, sp, analysis_constants(single, W)).max_violation < 0.0);

  for (const auto& pt : mid_run_points(P, W, 0.02, 50, 5)) require_pass(variance_oracle(P, pt, c));
}

TEST_CASE("optimality step") {
  const Problem P = make_quadratic(2, {2, 2}, 1, 1.0, 3.0, 4);
  const MixingMatrix W = lazy_pair();
  const AnalysisConstants c = analysis_constants(P, W);
  const double boundary = c.mu / (8.0 * c.ell * c.ell);
  for (double alpha : {recommended_step(c.sigma, c.ell / c.mu, c.ell), boundary}) {
    for (const auto& pt : mid_run_points(P, W, alpha, 50, 6)) {
      const auto r = optimality_step_oracle(P, W, pt, alpha, c);
      require_pass(r.identity);
      require_pass(r.bound);
    }
  }
  CHECK(optimality_step_oracle(P, W, mid_run_points(P, W, 0.5, 1, 6)[0], 0.5, c).bound.status ==
        OracleStatus::precondition_unmet);

  // n = 1, m = 1: deterministic gradient descent
  const Problem gd = make_quadratic(1, {1}, 2, 2.0, 2.0, 3);
  const MixingMatrix one = MixingMatrix::from_dense(Matrix::Identity(1, 1));
  const AnalysisConstants c1 = analysis_constants(gd, one);
  for (const auto& pt : mid_run_points(gd, one, 1.0 / 16, 5, 2)) {
    const auto r = optimality_step_oracle(gd, one, pt, 1.0 / 16, c1);
    require_pass(r.identity);
    require_pass(r.bound);
  }

  const Problem wide = make_quadratic(7, std::vector<int>(7, 8), 1, 1.0, 2.0, 1);
  const MixingMatrix W7 = metropolis_weights(build_graph(TopologyKind::ring, 7));
  StatePoint sp;
  sp.x = sp.snapshot_x = sp.y_prev = sp.v_prev = Matrix::Zero(7, 1);
  sp.snapshot_grad = wide.stacked_local_grads(sp.x);
  const auto skipped = optimality_step_oracle(wide, W7, sp, 0.01, analysis_constants(wide, W7));
  CHECK(skipped.identity.status == OracleStatus::skipped);
  CHECK(skipped.bound.status == OracleStatus::skipped);
}

TEST_CASE("tracking error bound") {
  const Problem P = make_quadratic(2, {2, 2}, 1, 1.0, 3.0, 4);
  const MixingMatrix W = lazy_pair();
  const AnalysisConstants c = analysis_constants(P, W);
  const double alpha = c.mu / (6.0 * c.ell * c.ell);
  for (const auto& pt : mid_run_points(P, W, alpha, 20, 7)) require_pass(tracking_error_oracle(P, W, pt, alpha, c));

  const Problem single = make_quadratic(2, {1, 1}, 2, 1.0, 2.0, 3);
  StatePoint st;
  st.x = st.snapshot_x = single.minimizer().transpose().replicate(2, 1);
  st.snapshot_grad = st.v_prev = st.y_prev = single.stacked_local_grads(st.x);
  st.y_prev.rowwise() = node_mean(st.v_prev);
  const OracleReport still = tracking_error_oracle(single, W, st, 0.01, analysis_constants(single, W));
  CHECK(still.status == OracleStatus::pass);

  const auto pt = mid_run_points(P, W, alpha, 1, 7)[0];
  CHECK(tracking_error_oracle(P, W, pt, 1.01 * alpha, c).status == OracleStatus::precondition_unmet);
}

TEST_CASE("matrix recursion") {
  const Problem P = make_quadratic(2, {2, 2}, 1, 1.0, 3.0, 4);
  const MixingMatrix W = lazy_pair();
  const AnalysisConstants c = analysis_constants(P, W);
  const double alpha = c.mu / (8.0 * c.ell * c.ell);
  for (const auto& pt : mid_run_points(P, W, alpha, 20, 8)) {
    const OracleReport r = matrix_recursion_check(P, W, pt, alpha, c, 100, 1);
    require_pass(r);
    CHECK(!r.standard_error);
  }
  for (const auto& pt : mid_run_points(P, W, 0.0, 5, 8)) require_pass(matrix_recursion_check(P, W, pt, 0.0, c, 100, 1));
  CHECK_THROWS_AS(matrix_recursion_check(P, W, mid_run_points(P, W, alpha, 1, 8)[0], alpha, c, 1, 1, true),
                  ConfigError);
}

TEST_CASE("matrix recursion by sampling on a large instance") {
  const Problem P = make_quadratic(10, std::vector<int>(10, 20), 2, 1.0, 3.0, 12);
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::ring, 10));
  const AnalysisConstants c = analysis_constants(P, W);
  const double alpha = recommended_step(c.sigma, c.ell / c.mu, c.ell);
  const auto pts = mid_run_points(P, W, alpha, 3, 9);
  for (const auto& pt : pts) {
    const OracleReport r = matrix_recursion_check(P, W, pt, alpha, c, 10000, 5);
    require_pass(r);
    REQUIRE(r.standard_error);
    CHECK(*r.standard_error > 0.0);
  }
}

TEST_CASE("enumeration and sampling agree") {
  const Problem P = make_quadratic(2, {3, 2}, 2, 1.0, 3.0, 14);
  const MixingMatrix W = lazy_pair();
  const double alpha = 0.05;
  for (const auto& pt : mid_run_points(P, W, alpha, 3, 10)) {
    const auto exact = expected_two_step(P, W, pt, alpha);
    REQUIRE(exact);
    PhiloxEngine rng = monte_carlo_engine(3, pt);
    const int trials = 20000;
    Eigen::Vector4d sum = Eigen::Vector4d::Zero(), sum_sq = Eigen::Vector4d::Zero();
    for (int t = 0; t < trials; ++t) {
      const TwoStep s = sample_two_step(P, W, pt, alpha, rng);
      const Eigen::Vector4d r(s.next(0), s.next(1), s.next(2), s.tracking_now);
      sum += r;
      sum_sq += r.cwiseProduct(r);
    }
    const Eigen::Vector4d want(exact->next(0), exact->next(1), exact->next(2), exact->tracking_now);
    for (int j = 0; j < 4; ++j) {
      const double mean = sum(j) / trials;
      const double se = std::sqrt(std::max(0.0, sum_sq(j) / trials - mean * mean) / (trials - 1));
      INFO("component " << j << " exact " << want(j) << " sampled " << mean << " se " << se);
      CHECK(std::abs(mean - want(j)) <= 3.0 * se + 1e-12 * std::abs(want(j)));
    }
  }
  const Problem big = make_quadratic(4, {40, 40, 40, 40}, 1, 1.0, 2.0, 1);
  const MixingMatrix W4 = metropolis_weights(build_graph(TopologyKind::ring, 4));
  StatePoint sp;
  sp.x = sp.snapshot_x = sp.y_prev = sp.v_prev = Matrix::Zero(4, 1);
  sp.snapshot_grad = big.stacked_local_grads(sp.x);
  CHECK(!expected_two_step(big, W4, sp, 0.01));
}

TEST_CASE("outer contraction") {
  Trace empty;
  const OuterContraction none = outer_contraction_measure(empty);
  CHECK(none.ratios.empty());
  CHECK(none.report.status == OracleStatus::skipped);

  const Problem P = make_quadratic(4, {5, 5, 5, 5}, 2, 1.0, 2.0, 3);
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::ring, 4));
  RunConfig cfg;
  cfg.alpha = recommended_step(W.sigma(), 2.0, 2.0);
  cfg.K = inner_loop_length(W.sigma(), 2.0);
  cfg.T = 4;
  cfg.record_every = cfg.K;
  cfg.x0 = Matrix::Constant(4, 2, 3.0);
  const OuterContraction oc = outer_contraction_measure(run(P, W, cfg));
  CHECK(oc.ratios.size() == 4);
  require_pass(oc.report);
  for (std::size_t i = 1; i < oc.ratios.size(); ++i) CHECK(oc.ratios[i] < 1.0);
}

TEST_CASE("negative controls all fail") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto reports = negative_controls(seed);
    CHECK(reports.size() == 12);
    for (const auto& r : reports) {
      INFO("seed " << seed << " " << r.id << " violation " << r.max_violation);
      CHECK(r.status == OracleStatus::fail);
    }
  }
}

TEST_CASE("suite on a small instance") {
  const Problem P = make_quadratic(2, {2, 2}, 1, 1.0, 3.0, 4);
  const MixingMatrix W = lazy_pair();
  SuiteOptions opt;
  opt.alpha = recommended_step(W.sigma(), 3.0, 3.0);
  opt.K = 40;
  opt.T = 3;
  opt.seed = 2;
  opt.random_samples = 200;
  const SuiteResult res = run_verify_suite(P, W, opt);
  CHECK(res.reports.size() == 12);
  for (const auto& r : res.reports) {
    INFO(r.id << " " << to_string(r.status) << " " << r.max_violation << " " << r.note);
    CHECK(r.status == OracleStatus::pass);
  }
  opt.K = 1;
  for (const auto& r : run_verify_suite(P, W, opt).reports) CHECK(!r.failed());
}
