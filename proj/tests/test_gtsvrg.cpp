#include "catch_amalgamated.hpp"

#include "gtsvrg/algorithm.hpp"
#include "gtsvrg/topology.hpp"

#include <fstream>
#include <sstream>
#include <string>

using namespace gtsvrg;

namespace {

const std::string kGolden = GTSVRG_GOLDEN_DIR;

struct GoldenRow {
  std::int64_t t, k;
  double u[4];
  std::uint64_t grad_evals;
  int s[4];
};

std::vector<GoldenRow> read_golden(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  std::string line;
  std::getline(in, line);
  std::vector<GoldenRow> rows;
  while (std::getline(in, line)) {
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream ls(line);
    GoldenRow r{};
    ls >> r.t >> r.k >> r.u[0] >> r.u[1] >> r.u[2] >> r.u[3] >> r.grad_evals;
    for (int& s : r.s) ls >> s;
    REQUIRE(ls);
    rows.push_back(r);
  }
  return rows;
}

Problem small_problem(std::uint64_t seed = 3) { return make_quadratic(4, {3, 5, 2, 4}, 2, 1.0, 4.0, seed); }

}  // namespace

TEST_CASE("five steps match the independent trace") {
  const Problem P = load_problem(kGolden + "/ring4_problem.txt");
  const MixingMatrix W = load_matrix(kGolden + "/ring4_matrix.txt");
  const auto rows = read_golden(kGolden + "/ring4_5step.csv");
  REQUIRE(rows.size() == 6);
  const GtSvrg alg(P, W, 0.05, 7);
  NetworkState S = alg.init();
  for (const GoldenRow& g : rows) {
    if (g.k > 0) {
      for (int i = 0; i < 4; ++i) CHECK(static_cast<int>(alg.sample(i, 0, g.k)) == g.s[i]);
      S = alg.inner_step(S);
    }
    const TraceRecord r = make_record(S, P);
    CHECK(r.k == g.k);
    CHECK(r.grad_evals == g.grad_evals);
    const double got[4] = {r.consensus_sq, r.opt_gap_sq_scaled, r.tracking_sq, r.mean_dist_to_opt};
    for (int c = 0; c < 4; ++c) CHECK(got[c] == Catch::Approx(g.u[c]).epsilon(1e-12).margin(1e-15));
  }
}

TEST_CASE("initialization") {
  const Problem P = small_problem();
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::ring, 4));
  Matrix x0 = Matrix::Random(4, 2);
  const NetworkState S = GtSvrg(P, W, 0.01, 1).init(x0);
  CHECK(S.x == x0);
  CHECK(S.snapshot_x == x0);
  CHECK(S.y == P.stacked_local_grads(x0));
  CHECK(S.v == S.y);
  CHECK(S.snapshot_grad == S.y);
  CHECK(S.grad_evals == 14);
  CHECK(S.t == 0);
  CHECK(S.k == 0);
  CHECK_THROWS_AS(GtSvrg(P, W, 0.01, 1).init(Matrix::Zero(3, 2)), UsageError);
  const Problem bigger = make_quadratic(5, {1, 1, 1, 1, 1}, 2, 1.0, 2.0, 1);
  CHECK_THROWS_AS(GtSvrg(bigger, W, 0.01, 1), UsageError);
}

TEST_CASE("node means follow the tracker and the tracker follows v") {
  const Problem P = small_problem();
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::path, 4));
  const double alpha = 0.02;
  const GtSvrg alg(P, W, alpha, 9);
  NetworkState S = alg.init(Matrix::Constant(4, 2, 1.5));
  for (int step = 0; step < 40; ++step) {
    const NetworkState next = alg.inner_step(S);
    CHECK((node_mean(next.x) - (node_mean(S.x) - alpha * node_mean(S.y))).norm() <= 1e-13);
    CHECK((node_mean(next.y) - node_mean(next.v)).norm() <= 1e-12);
    S = next;
    if (S.k == 10) alg.refresh(S);
  }
}

TEST_CASE("a single node with one component is gradient descent") {
  const Problem P = make_quadratic(1, {1}, 3, 2.0, 2.0, 4);
  const MixingMatrix W = MixingMatrix::from_dense(Matrix::Identity(1, 1));
  const double alpha = 0.1;
  const GtSvrg alg(P, W, alpha, 5);
  NetworkState S = alg.init(Matrix::Ones(1, 3));
  Vector x = Vector::Ones(3);
  for (int step = 0; step < 20; ++step) {
    x -= alpha * P.global_grad(x);
    S = alg.inner_step(S);
    CHECK((S.x.row(0).transpose() - x).norm() <= 1e-13);
  }
}

TEST_CASE("zero step freezes x") {
  const Problem P = small_problem();
  const MixingMatrix W = uniform_complete(4);
  const Matrix x0 = Matrix::Constant(4, 2, -0.7);
  RunConfig cfg;
  cfg.alpha = 0.0;
  cfg.K = 5;
  cfg.T = 3;
  cfg.x0 = x0;
  const GtSvrg alg(P, W, 0.0, 2);
  NetworkState S = alg.init(x0);
  for (int t = 0; t < 3; ++t) S = alg.outer_step(S, 5);
  CHECK(S.x == x0);
  const Trace tr = run(P, W, cfg);
  CHECK(tr.last().opt_gap_sq_scaled == tr.records.front().opt_gap_sq_scaled);
}

TEST_CASE("run bookkeeping") {
  const Problem P = small_problem();
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::ring, 4));
  RunConfig cfg;
  cfg.alpha = recommended_step(W.sigma(), P.ell() / P.mu(), P.ell());
  cfg.K = 6;
  cfg.T = 0;
  Trace tr = run(P, W, cfg);
  REQUIRE(tr.records.size() == 1);
  CHECK(tr.records[0].grad_evals == 14);
  CHECK(tr.outer_ratios.empty());

  cfg.T = 4;
  cfg.record_every = 2;
  tr = run(P, W, cfg);
  // boundaries at k = 0 plus k = 2 and 4 inside each loop
  CHECK(tr.records.size() == 1 + 4 * 3);
  CHECK(tr.outer_loops == 4);
  CHECK(tr.outer_ratios.size() == 4);
  CHECK(tr.last().grad_evals == 14u * 5 + 2u * 4 * 6 * 4);
  CHECK(tr.last().t == 4);
  CHECK(tr.last().k == 0);

  cfg.K = 0;
  CHECK_THROWS_AS(run(P, W, cfg), ConfigError);
}

TEST_CASE("refresh keeps x, y and v") {
  const Problem P = small_problem();
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::path, 4));
  const GtSvrg alg(P, W, 0.03, 6);
  NetworkState S = alg.init();
  for (int k = 0; k < 7; ++k) S = alg.inner_step(S);
  NetworkState R = S;
  alg.refresh(R);
  CHECK(R.x == S.x);
  CHECK(R.y == S.y);
  CHECK(R.v == S.v);
  CHECK(R.snapshot_x == S.x);
  CHECK(R.snapshot_grad == P.stacked_local_grads(S.x));
  CHECK(R.grad_evals == S.grad_evals + 14);
  CHECK(R.t == 1);
  CHECK(R.k == 0);
}

TEST_CASE("threads do not change the result") {
  const Problem P = make_quadratic(9, std::vector<int>(9, 7), 3, 1.0, 5.0, 12);
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::grid2d, 9, {3, 3}));
  RunConfig cfg;
  cfg.alpha = 0.002;
  cfg.K = 50;
  cfg.T = 3;
  cfg.seed = 77;
  const Trace one = run(P, W, cfg);
  cfg.threads = 4;
  const Trace four = run(P, W, cfg);
  std::ostringstream a, b;
  write_trace_csv(a, one);
  write_trace_csv(b, four);
  CHECK(a.str() == b.str());
}

TEST_CASE("divergence is reported") {
  const Problem P = small_problem();
  const MixingMatrix W = metropolis_weights(build_graph(TopologyKind::ring, 4));
  RunConfig cfg;
  cfg.alpha = 50.0;
  cfg.K = 2000;
  cfg.T = 1;
  CHECK_THROWS_AS(run(P, W, cfg), DivergedError);
  try {
    run(P, W, cfg);
  } catch (const DivergedError& e) {
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("max_step_size"));
  }
}
