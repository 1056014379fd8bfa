#pragma once

// The 3x3 linear-system view of the analysis: u(k+1) <= G u(k) + H u(0) with
// u = (consensus error, n * optimality gap, tracking error), and the step
// size, inner-loop length and complexity formulas built on it.

#include "gtsvrg/errors.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <utility>

namespace gtsvrg {

using Matrix3 = Eigen::Matrix3d;
using Vector3 = Eigen::Vector3d;

namespace detail {

inline void check_sigma(double sigma) {
  if (!(sigma >= 0.0 && sigma < 1.0)) {
    std::ostringstream os;
    os.precision(17);
    os << "sigma must lie in [0, 1), got " << sigma;
    throw ConfigError(os.str());
  }
}

inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value >= 0");
}

inline void check_constants(double mu, double ell) {
  if (!(mu > 0.0) || !(ell >= mu) || !std::isfinite(ell)) {
    throw ConfigError("need 0 < mu <= ell");
  }
}

inline void check_Q(double Q) {
  if (!(Q >= 1.0) || !std::isfinite(Q)) throw ConfigError("condition number Q must be >= 1");
}

}  // namespace detail

inline Matrix3 build_G(double alpha, double sigma, double mu, double ell) {
  detail::check_sigma(sigma);
  detail::check_alpha(alpha);
  detail::check_constants(mu, ell);
  const double gap = 1.0 - sigma * sigma;
  const double L2 = ell * ell;
  Matrix3 G;
  G << (1.0 + sigma * sigma) / 2.0, 0.0, 2.0 * alpha * alpha / gap,
      2.0 * L2 * alpha / mu, 1.0 - mu * alpha / 2.0, 0.0,
      100.0 * L2 / gap, 70.0 * L2 / gap, (1.0 + sigma * sigma) / 2.0 + 40.0 * L2 * alpha * alpha / gap;
  return G;
}

inline Matrix3 build_H(double alpha, double sigma, double ell) {
  detail::check_sigma(sigma);
  detail::check_alpha(alpha);
  if (!(ell > 0.0) || !std::isfinite(ell)) throw ConfigError("ell must be > 0");
  const double gap = 1.0 - sigma * sigma;
  const double L2 = ell * ell;
  const double a2 = 4.0 * L2 * alpha * alpha;
  Matrix3 H;
  H << 0.0, 0.0, 0.0,
      a2, a2, 0.0,
      60.0 * L2 / gap, 60.0 * L2 / gap, 0.0;
  return H;
}

/// Osborne balancing with power-of-two factors: returns d such that
/// diag(d)^-1 A diag(d) has comparable row and column norms. The similarity
/// is exact in floating point.
inline Eigen::VectorXd balancing_scales(const Eigen::MatrixXd& A) {
  const Eigen::Index n = A.rows();
  Eigen::VectorXd d = Eigen::VectorXd::Ones(n);
  Eigen::MatrixXd B = A;
  for (int sweep = 0; sweep < 200; ++sweep) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      double c = 0.0;
      double r = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        c += std::abs(B(j, i));
        r += std::abs(B(i, j));
      }
      if (c == 0.0 || r == 0.0) continue;
      const double s = c + r;
      double f = 1.0;
      while (c < r / 2.0) {
        f *= 2.0;
        c *= 4.0;
      }
      while (c > r * 2.0) {
        f /= 2.0;
        c /= 4.0;
      }
      if ((c + r) / f < 0.95 * s) {
        changed = true;
        d(i) *= f;
        B.row(i) /= f;
        B.col(i) *= f;
      }
    }
    if (!changed) break;
  }
  return d;
}

namespace detail {

// det(z I - A) and its derivative for 3x3 A.
inline std::pair<double, double> char_poly3(const Eigen::Matrix3d& A, double z) {
  const Eigen::Matrix3d M = z * Eigen::Matrix3d::Identity() - A;
  const double det = M.determinant();
  const double minors = (M(1, 1) * M(2, 2) - M(1, 2) * M(2, 1)) +
                        (M(0, 0) * M(2, 2) - M(0, 2) * M(2, 0)) +
                        (M(0, 0) * M(1, 1) - M(0, 1) * M(1, 0));
  return {det, minors};
}

}  // namespace detail

/// Largest |eigenvalue|. Eigenvalues of the balanced matrix come from Eigen's
/// real Schur form; for 3x3 nonnegative input the Perron root is then
/// polished by Newton on det(zI - A).
inline double spectral_radius(const Eigen::MatrixXd& A) {
  if (A.rows() != A.cols()) throw UsageError("spectral_radius needs a square matrix");
  if (!A.allFinite()) throw NumericError("spectral_radius: non-finite entries");
  const Eigen::Index n = A.rows();
  if (n == 0) return 0.0;
  if (n == 1) return std::abs(A(0, 0));
  const Eigen::VectorXd d = balancing_scales(A);
  const Eigen::MatrixXd B = d.cwiseInverse().asDiagonal() * A * d.asDiagonal();
  Eigen::EigenSolver<Eigen::MatrixXd> es(B, false);
  if (es.info() != Eigen::Success) throw NumericError("spectral_radius: eigenvalue iteration did not converge");
  const auto& ev = es.eigenvalues();
  double rho = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) rho = std::max(rho, std::abs(ev(i)));
  if (n != 3 || (B.array() < 0.0).any() || rho == 0.0) return rho;

  const Eigen::Matrix3d B3 = B;
  double z = rho;
  for (int iter = 0; iter < 60; ++iter) {
    const auto [f, df] = detail::char_poly3(B3, z);
    if (df == 0.0 || !std::isfinite(f / df)) break;
    const double step = f / df;
    z -= step;
    if (std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(z))) break;
  }
  // Keep the polish only if it stayed on the same root.
  if (std::isfinite(z) && std::abs(z - rho) <= 1e-6 * std::max(1.0, rho)) return std::abs(z);
  return rho;
}

/// Largest alpha for which rho(G) < 1 is guaranteed.
inline double max_step_size(double sigma, double Q, double ell) {
  detail::check_sigma(sigma);
  detail::check_Q(Q);
  if (!(ell > 0.0)) throw ConfigError("ell must be > 0");
  const double gap = 1.0 - sigma * sigma;
  return gap * gap / (105.0 * Q * ell);
}

/// The prescribed step size.
inline double recommended_step(double sigma, double Q, double ell) {
  detail::check_sigma(sigma);
  detail::check_Q(Q);
  if (!(ell > 0.0)) throw ConfigError("ell must be > 0");
  const double gap = 1.0 - sigma * sigma;
  return gap * gap / (200.0 * Q * ell);
}

/// Upper bound on rho(G) at the prescribed step size.
inline double rho_G_bound(double sigma, double Q) {
  detail::check_sigma(sigma);
  detail::check_Q(Q);
  const double gap = 1.0 - sigma * sigma;
  return 1.0 - gap * gap / (800.0 * Q * Q);
}

/// Ceiling of the bound on rho((I - G)^-1 H) at the prescribed step size.
inline constexpr double kPerturbationGainCeiling = 0.848;

/// rho((I - G)^-1 H), solved in balanced coordinates.
inline double perturbation_gain(const Matrix3& G, const Matrix3& H) {
  const double rho_g = spectral_radius(G);
  if (!(rho_g < 1.0)) {
    std::ostringstream os;
    os.precision(17);
    os << "perturbation_gain needs rho(G) < 1, got " << rho_g;
    throw PreconditionError(os.str());
  }
  const Eigen::Vector3d d = balancing_scales(G);
  const Matrix3 Gb = d.cwiseInverse().asDiagonal() * G * d.asDiagonal();
  const Matrix3 Hb = d.cwiseInverse().asDiagonal() * H * d.asDiagonal();
  const Matrix3 X = (Matrix3::Identity() - Gb).partialPivLu().solve(Hb);
  return spectral_radius(X);
}

/// K = ceil(801 Q^2 / (1 - sigma^2)^2 * log(20 c)) before rounding.
inline double inner_loop_length_raw(double sigma, double Q, double c = 1.0) {
  detail::check_sigma(sigma);
  detail::check_Q(Q);
  if (!(c >= 1.0) || !std::isfinite(c)) throw ConfigError("norm-equivalence constant c must be >= 1");
  const double gap = 1.0 - sigma * sigma;
  return 801.0 * Q * Q / (gap * gap) * std::log(20.0 * c);
}

inline std::int64_t inner_loop_length(double sigma, double Q, double c = 1.0) {
  const double raw = std::ceil(inner_loop_length_raw(sigma, Q, c));
  if (!(raw < 9.0e18)) throw NumericError("inner-loop length overflows a 64-bit count");
  return static_cast<std::int64_t>(raw);
}

enum class OuterMethod { closed_form, doubling };

struct OuterOperator {
  Matrix3 M;
  double rho = 0.0;
  OuterMethod method = OuterMethod::closed_form;
};

namespace detail {

// G^K + sum_{r=1}^{K-1} G^r H by binary doubling on (G^j, sum_{r=1}^{j} G^r).
// Only nonnegative products and sums, so no cancellation.
inline Matrix3 outer_by_doubling(const Matrix3& G, const Matrix3& H, std::int64_t K) {
  // power = G^j, sum = sum_{r=1}^{j} G^r for the current j.
  Matrix3 power = Matrix3::Identity();
  Matrix3 sum = Matrix3::Zero();
  const std::int64_t target = K - 1;
  Matrix3 step_pow = G;                // G^b
  Matrix3 step_sum = G;                // sum_{r=1}^{b} G^r
  for (std::int64_t bits = target; bits > 0; bits >>= 1) {
    if (bits & 1) {
      sum = sum + power * step_sum;
      power = power * step_pow;
    }
    if (bits > 1) {
      step_sum = step_sum + step_pow * step_sum;
      step_pow = step_pow * step_pow;
    }
  }
  // power = G^{K-1}
  return power * G + sum * H;
}

}  // namespace detail

/// G^K + sum_{r=1}^{K-1} G^r H and its spectral radius. With rho(G) < 1 the
/// geometric sum is (I - G)^-1 (G - G^K); otherwise it is summed directly.
inline OuterOperator outer_operator(const Matrix3& G, const Matrix3& H, std::int64_t K,
                                    bool force_doubling = false) {
  if (K < 1) throw ConfigError("outer_operator needs K >= 1");
  const Eigen::Vector3d d = balancing_scales(G);
  const Matrix3 Gb = d.cwiseInverse().asDiagonal() * G * d.asDiagonal();
  const Matrix3 Hb = d.cwiseInverse().asDiagonal() * H * d.asDiagonal();
  OuterOperator out;
  Matrix3 Mb;
  if (!force_doubling && spectral_radius(G) < 1.0) {
    Matrix3 GK = Matrix3::Identity();
    Matrix3 base = Gb;
    for (std::int64_t e = K; e > 0; e >>= 1) {
      if (e & 1) GK = GK * base;
      if (e > 1) base = base * base;
    }
    const Matrix3 geometric = (Matrix3::Identity() - Gb).partialPivLu().solve(Gb - GK);
    Mb = GK + geometric * Hb;
    out.method = OuterMethod::closed_form;
  } else {
    Mb = detail::outer_by_doubling(Gb, Hb, K);
    out.method = OuterMethod::doubling;
  }
  out.M = d.asDiagonal() * Mb * d.cwiseInverse().asDiagonal();
  out.rho = spectral_radius(Mb);
  return out;
}

/// (M + Q^2 / (1 - sigma)^2) log(1/epsilon): order of magnitude only, unit
/// constant.
inline double predicted_complexity(double M_data, double Q, double sigma, double epsilon) {
  detail::check_sigma(sigma);
  detail::check_Q(Q);
  if (!(M_data >= 1.0)) throw ConfigError("M must be >= 1");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
  return (M_data + Q * Q / ((1.0 - sigma) * (1.0 - sigma))) * std::log(1.0 / epsilon);
}

/// Weights (1, 8Q^2, 1350 Q^2 L^2 / (1 - sigma^2)^2) of the scaled max-norm.
inline Vector3 epsilon_weights(double sigma, double Q, double ell) {
  detail::check_sigma(sigma);
  detail::check_Q(Q);
  const double gap = 1.0 - sigma * sigma;
  return {1.0, 8.0 * Q * Q, 1350.0 * Q * Q * ell * ell / (gap * gap)};
}

/// max_i |u_i| / w_i.
inline double scaled_max_norm(const Vector3& u, const Vector3& w) {
  return u.cwiseAbs().cwiseQuotient(w).maxCoeff();
}

struct TheoryTable {
  double sigma = 0.0;
  double mu = 1.0;
  double ell = 1.0;
  double Q = 1.0;
  double M = 1.0;
  double epsilon = 1e-6;
  double c = 1.0;
  double max_step = 0.0;
  double recommended = 0.0;
  double rho_G = 0.0;
  double rho_G_bound = 0.0;
  double perturbation_gain = 0.0;
  std::int64_t K = 0;
  double outer_rho = 0.0;
  double predicted_complexity = 0.0;
};

inline TheoryTable theory_table(double sigma, double mu, double ell, double M, double epsilon,
                                double c = 1.0) {
  detail::check_sigma(sigma);
  detail::check_constants(mu, ell);
  TheoryTable t;
  t.sigma = sigma;
  t.mu = mu;
  t.ell = ell;
  t.Q = ell / mu;
  t.M = M;
  t.epsilon = epsilon;
  t.c = c;
  t.max_step = max_step_size(sigma, t.Q, ell);
  t.recommended = recommended_step(sigma, t.Q, ell);
  const Matrix3 G = build_G(t.recommended, sigma, mu, ell);
  const Matrix3 H = build_H(t.recommended, sigma, ell);
  t.rho_G = spectral_radius(G);
  t.rho_G_bound = rho_G_bound(sigma, t.Q);
  t.perturbation_gain = perturbation_gain(G, H);
  t.K = inner_loop_length(sigma, t.Q, c);
  t.outer_rho = outer_operator(G, H, t.K).rho;
  t.predicted_complexity = predicted_complexity(M, t.Q, sigma, epsilon);
  return t;
}

}  // namespace gtsvrg
