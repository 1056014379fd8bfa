#include "catch_amalgamated.hpp"

#include "gtsvrg/philox.hpp"
#include "gtsvrg/theory.hpp"

#include "golden/theory_values.inc"

#include <cmath>

using namespace gtsvrg;
using Catch::Approx;

namespace {

void check_matrix(const Matrix3& got, const Matrix3& want, double tol = 1e-15) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(got(i, j) == Approx(want(i, j)).epsilon(tol).margin(tol));
}

}  // namespace

TEST_CASE("G and H by substitution") {
  Matrix3 want;
  want << 0.5, 0, 2, 2, 0.5, 0, 100, 70, 40.5;
  check_matrix(build_G(1.0, 0.0, 1.0, 1.0), want);
  want << 0, 0, 0, 4, 4, 0, 60, 60, 0;
  check_matrix(build_H(1.0, 0.0, 1.0), want);

  const Matrix3 H0 = build_H(0.0, 0.6, 2.0);
  const double c = 60.0 * 4.0 / (1 - 0.36);
  want << 0, 0, 0, 0, 0, 0, c, c, 0;
  check_matrix(H0, want);

  const Matrix3 G0 = build_G(0.0, 0.6, 1.0, 2.0);
  CHECK(G0(1, 1) == 1.0);
  CHECK(G0(0, 2) == 0.0);
  CHECK(spectral_radius(G0) == Approx(1.0).margin(1e-12));

  const Matrix3 Gg = build_G(kGoldenAlpha, 0.5, 1.0, 10.0);
  CHECK(recommended_step(0.5, 10.0, 10.0) == Approx(kGoldenAlpha).epsilon(1e-15));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(Gg(i, j) == Approx(kGoldenG[i][j]).epsilon(1e-14));

  PhiloxEngine rng(3, StreamDomain::oracle_states);
  for (int trial = 0; trial < 50; ++trial) {
    // alpha <= 2/L keeps 1 - mu alpha / 2 nonnegative
    const double s = rng.uniform(0.0, 0.99), L = rng.uniform(0.1, 20.0), a = rng.uniform(0.0, 2.0 / L);
    const Matrix3 G = build_G(a, s, L * rng.uniform(0.01, 1.0), L);
    const Matrix3 H = build_H(a, s, L);
    CHECK(G(0, 1) == 0.0);
    CHECK(G(1, 2) == 0.0);
    CHECK(H.row(0).isZero());
    CHECK(H.col(2).isZero());
    CHECK((G.array() >= 0).all());
    CHECK((H.array() >= 0).all());
  }
  CHECK_THROWS_AS(build_G(0.1, 1.0, 1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(build_G(0.1, 0.5, 2.0, 1.0), ConfigError);
}

TEST_CASE("spectral radius") {
  CHECK(spectral_radius(Matrix3::Identity()) == Approx(1.0).margin(1e-12));
  Eigen::MatrixXd nil(2, 2);
  nil << 0, 1, 0, 0;
  CHECK(spectral_radius(nil) == Approx(0.0).margin(1e-10));
  CHECK(spectral_radius(Eigen::Vector3d(0.2, 0.9, 0.5).asDiagonal().toDenseMatrix()) ==
        Approx(0.9).margin(1e-12));
  Matrix3 A;
  A << 3, 0, 1e-9, 1e3, 2, 0, 1e6, 1e5, 1;
  CHECK(spectral_radius(A) == Approx(kBadlyScaledRho).epsilon(1e-10));
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(3, 3);
  bad(1, 2) = std::nan("");
  CHECK_THROWS(spectral_radius(bad));
}

TEST_CASE("step sizes") {
  CHECK(max_step_size(0.0, 1.0, 1.0) == Approx(1.0 / 105).epsilon(1e-15));
  CHECK(max_step_size(0.5, 10.0, 10.0) == Approx(5.357142857142857e-5).epsilon(1e-12));
  CHECK(recommended_step(0.0, 1.0, 1.0) == Approx(1.0 / 200).epsilon(1e-15));
  CHECK(recommended_step(0.4, 7.0, 3.0) / max_step_size(0.4, 7.0, 3.0) == Approx(105.0 / 200).epsilon(1e-14));
  CHECK(max_step_size(0.5, 2, 2) < max_step_size(0.4, 2, 2));
  CHECK(max_step_size(0.5, 3, 2) < max_step_size(0.5, 2, 2));
  CHECK(max_step_size(0.5, 2, 3) < max_step_size(0.5, 2, 2));
  CHECK(rho_G_bound(0.0, 1.0) == Approx(0.99875).epsilon(1e-15));
  CHECK(rho_G_bound(0.3, 1e4) > rho_G_bound(0.3, 1e2));
  CHECK_THROWS_AS(max_step_size(1.0, 1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(recommended_step(0.2, 0.5, 1.0), ConfigError);
}

TEST_CASE("rho(G) is below one up to the maximal step") {
  PhiloxEngine rng(8, StreamDomain::oracle_states);
  for (int trial = 0; trial < 40; ++trial) {
    const double s = rng.uniform(0.0, 0.95);
    const double Q = std::pow(10.0, rng.uniform(0.0, 2.0));
    const double L = std::pow(10.0, rng.uniform(-1.0, 1.0));
    const double amax = max_step_size(s, Q, L);
    for (double f = 1e-4; f <= 1.0; f *= std::sqrt(10.0)) {
      CHECK(spectral_radius(build_G(f * amax, s, L / Q, L)) < 1.0);
    }
    CHECK(spectral_radius(build_G(amax, s, L / Q, L)) < 1.0);
  }
}

TEST_CASE("grid against the high-precision reference") {
  for (const GridRow& row : kTheoryGrid) {
    INFO("sigma " << row.sigma << " Q " << row.Q);
    const double L = row.Q;
    const double a = recommended_step(row.sigma, row.Q, L);
    const Matrix3 G = build_G(a, row.sigma, 1.0, L);
    const Matrix3 H = build_H(a, row.sigma, L);
    const double rho = spectral_radius(G);
    CHECK(rho == Approx(row.rho_G).margin(1e-12));
    CHECK(rho <= rho_G_bound(row.sigma, row.Q) + 1e-9);
    const double gain = perturbation_gain(G, H);
    CHECK(gain == Approx(row.gain).epsilon(1e-8));
    CHECK(gain <= kPerturbationGainCeiling + 1e-6);
    const std::int64_t K = inner_loop_length(row.sigma, row.Q);
    CHECK(K == row.K);
    const OuterOperator op = outer_operator(G, H, K);
    CHECK(op.method == OuterMethod::closed_form);
    CHECK(op.rho == Approx(row.outer_rho).epsilon(1e-7));
    CHECK(op.rho < 1.0);
  }
  CHECK(perturbation_gain(build_G(1.0 / 200, 0.0, 1.0, 1.0), build_H(1.0 / 200, 0.0, 1.0)) ==
        Approx(kGainSigma0Q1).epsilon(1e-10));
}

TEST_CASE("perturbation gain edge cases") {
  const Matrix3 G = build_G(0.001, 0.2, 1.0, 2.0);
  CHECK(perturbation_gain(G, Matrix3::Zero()) == 0.0);
  CHECK_THROWS_AS(perturbation_gain(build_G(0.0, 0.2, 1.0, 2.0), Matrix3::Zero()), PreconditionError);
}

TEST_CASE("inner loop length") {
  CHECK(inner_loop_length(0.0, 1.0) == kK_sigma0_Q1);
  CHECK(inner_loop_length_raw(0.0, 1.0) == Approx(kLog20Times801).epsilon(1e-14));
  CHECK(inner_loop_length_raw(0.3, 10.0) / inner_loop_length_raw(0.3, 1.0) == Approx(100.0).epsilon(1e-14));
  CHECK(inner_loop_length(0.0, 1.0, 2.0) > inner_loop_length(0.0, 1.0));
  CHECK(inner_loop_length(0.999, 1.0) > inner_loop_length(0.99, 1.0));
  CHECK_THROWS_AS(inner_loop_length(1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(inner_loop_length(0.0, 1.0, 0.5), ConfigError);
}

TEST_CASE("outer operator") {
  const double a = recommended_step(0.3, 2.0, 2.0);
  const Matrix3 G = build_G(a, 0.3, 1.0, 2.0);
  const Matrix3 H = build_H(a, 0.3, 2.0);
  check_matrix(outer_operator(G, H, 1).M, G, 1e-12);
  const OuterOperator noH = outer_operator(G, Matrix3::Zero(), 37);
  CHECK(noH.rho == Approx(std::pow(spectral_radius(G), 37)).epsilon(1e-9));

  // closed form against plain summation for a small K
  Matrix3 power = Matrix3::Identity(), sum = Matrix3::Zero();
  for (int r = 1; r < 25; ++r) {
    power = power * G;
    sum += power * H;
  }
  const Matrix3 brute = power * G + sum;
  const Matrix3 closed = outer_operator(G, H, 25).M;
  const Matrix3 doubled = outer_operator(G, H, 25, true).M;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(closed(i, j) == Approx(brute(i, j)).epsilon(1e-9).margin(1e-300));
      CHECK(doubled(i, j) == Approx(brute(i, j)).epsilon(1e-12).margin(1e-300));
    }
  // above the stable step the doubling path takes over
  const Matrix3 Gbig = build_G(1.0, 0.3, 1.0, 2.0);
  CHECK(outer_operator(Gbig, H, 10).method == OuterMethod::doubling);
  CHECK_THROWS_AS(outer_operator(G, H, 0), ConfigError);
}

TEST_CASE("predicted complexity") {
  CHECK(predicted_complexity(100, 1.0, 0.0, std::exp(-1.0)) == Approx(101.0).epsilon(1e-14));
  const double one = predicted_complexity(10000, 1.0, 0.1, 1e-6);
  CHECK(predicted_complexity(20000, 1.0, 0.1, 1e-6) / one == Approx(2.0).epsilon(1e-3));
  CHECK(predicted_complexity(100, 2.0, 0.5, 1e-3) > predicted_complexity(100, 2.0, 0.4, 1e-3));
  CHECK_THROWS_AS(predicted_complexity(100, 1.0, 0.0, 1.5), ConfigError);
}

TEST_CASE("theory table") {
  const TheoryTable t = theory_table(0.0, 1.0, 1.0, 50, 1e-6);
  CHECK(t.K == 2400);
  CHECK(t.recommended == Approx(1.0 / 200));
  CHECK(t.outer_rho == Approx(kTheoryGrid[0].outer_rho).epsilon(1e-7));
  CHECK_THROWS_AS(theory_table(1.0, 1.0, 1.0, 50, 1e-6), ConfigError);
}
