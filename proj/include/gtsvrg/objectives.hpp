#pragma once

// Finite-sum problems: node i holds f_i = (1/m_i) sum_j f_{i,j}, and the
// network objective is f = (1/n) sum_i f_i.

#include "gtsvrg/errors.hpp"
#include "gtsvrg/linalg.hpp"
#include "gtsvrg/philox.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gtsvrg {

enum class ProblemFamily { quadratic, reglog };

inline std::string_view to_string(ProblemFamily f) {
  return f == ProblemFamily::quadratic ? "quadratic" : "reglog";
}

inline ProblemFamily parse_problem_family(std::string_view name) {
  if (name == "quadratic") return ProblemFamily::quadratic;
  if (name == "reglog") return ProblemFamily::reglog;
  throw ConfigError("unknown problem family '" + std::string(name) + "'");
}

/// f(x) = 1/2 x^T A x + b^T x with symmetric A.
struct QuadraticComponent {
  Matrix A;
  Vector b;
};

/// f(x) = log(1 + exp(-label a.x)) + (lambda/2) ||x||^2, label in {-1, +1}.
struct LogisticComponent {
  Vector a;
  double label = 1.0;
};

struct ProblemConstants {
  double mu = 0.0;
  double ell = 0.0;
  double Q = 1.0;
  int M_max = 0;
  int m_min = 0;
};

namespace detail {

// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// 1 / (1 + exp(-z)) without overflow.
inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

class Problem {
 public:
  /// Certifies every A_{i,j} symmetric with spectrum in [mu, ell]. When the
  /// bounds are omitted they are taken as the extreme eigenvalues observed.
  static Problem quadratic(const std::vector<std::vector<QuadraticComponent>>& nodes,
                           std::optional<double> mu = std::nullopt,
                           std::optional<double> ell = std::nullopt) {
    Problem P;
    P.family_ = ProblemFamily::quadratic;
    P.init_shape(nodes);
    P.p_ = static_cast<int>(nodes.front().front().b.size());
    const auto pp = static_cast<std::size_t>(P.p_) * static_cast<std::size_t>(P.p_);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (std::size_t j = 0; j < nodes[i].size(); ++j) {
        const auto& c = nodes[i][j];
        if (c.A.rows() != P.p_ || c.A.cols() != P.p_ || c.b.size() != P.p_) {
          throw ConfigError("component (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") has inconsistent dimensions");
        }
        if (!c.A.allFinite() || !c.b.allFinite()) {
          throw NumericError("component (" + std::to_string(i) + ", " + std::to_string(j) +
                             ") has non-finite entries");
        }
        if ((c.A - c.A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, max_abs(c.A))) {
          throw ConfigError("component (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") has a non-symmetric A");
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(c.A),
                                                           Eigen::EigenvaluesOnly);
        lo = std::min(lo, eig.eigenvalues().minCoeff());
        hi = std::max(hi, eig.eigenvalues().maxCoeff());
        P.quad_A_.insert(P.quad_A_.end(), c.A.data(), c.A.data() + pp);
        P.vec_.insert(P.vec_.end(), c.b.data(), c.b.data() + P.p_);
      }
    }
    P.mu_ = mu.value_or(lo);
    P.ell_ = ell.value_or(hi);
    const double slack = 1e-10 * std::max(1.0, std::abs(P.ell_));
    if (!(P.mu_ > 0.0)) throw ConfigError("quadratic components are not strongly convex (mu <= 0)");
    if (P.ell_ < P.mu_) throw ConfigError("declared ell is below mu");
    if (lo < P.mu_ - slack || hi > P.ell_ + slack) {
      std::ostringstream os;
      os << std::setprecision(17) << "component spectra [" << lo << ", " << hi
         << "] fall outside the declared [mu, ell] = [" << P.mu_ << ", " << P.ell_ << "]";
      throw ConfigError(os.str());
    }
    P.x_star_ = P.solve_quadratic_minimizer();
    return P;
  }

  /// mu = lambda and ell = lambda + max ||a||^2 / 4 by construction.
  static Problem reglog(const std::vector<std::vector<LogisticComponent>>& nodes, double lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("reglog needs lambda > 0");
    Problem P;
    P.family_ = ProblemFamily::reglog;
    P.init_shape(nodes);
    P.p_ = static_cast<int>(nodes.front().front().a.size());
    P.lambda_ = lambda;
    double max_sq = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (std::size_t j = 0; j < nodes[i].size(); ++j) {
        const auto& c = nodes[i][j];
        if (c.a.size() != P.p_) {
          throw ConfigError("component (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") has inconsistent dimensions");
        }
        if (c.label != 1.0 && c.label != -1.0) {
          throw ConfigError("reglog labels must be -1 or +1");
        }
        if (!c.a.allFinite()) throw NumericError("non-finite reglog features");
        max_sq = std::max(max_sq, c.a.squaredNorm());
        P.vec_.insert(P.vec_.end(), c.a.data(), c.a.data() + P.p_);
        P.labels_.push_back(c.label);
      }
    }
    P.mu_ = lambda;
    P.ell_ = lambda + max_sq / 4.0;
    P.x_star_ = P.solve_reglog_minimizer();
    return P;
  }

  ProblemFamily family() const { return family_; }
  int nodes() const { return n_; }
  int dim() const { return p_; }
  int count(int i) const { return counts_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& counts() const { return counts_; }
  long long total_components() const { return static_cast<long long>(offsets_.back()); }
  double mu() const { return mu_; }
  double ell() const { return ell_; }
  double lambda() const { return lambda_; }
  const Vector& minimizer() const { return x_star_; }

  ProblemConstants constants() const {
    return {mu_, ell_, ell_ / mu_, *std::max_element(counts_.begin(), counts_.end()),
            *std::min_element(counts_.begin(), counts_.end())};
  }

  /// out = grad f_{i,j}(x); raw pointers, no checks. Used by the inner loop.
  void component_grad_into(int i, int j, const double* __restrict x, double* __restrict out) const {
    const std::size_t c = offsets_[static_cast<std::size_t>(i)] + static_cast<std::size_t>(j);
    const std::size_t p = static_cast<std::size_t>(p_);
    const double* __restrict v = vec_.data() + c * p;
    if (family_ == ProblemFamily::quadratic) {
      const double* A = quad_A_.data() + c * p * p;
      for (std::size_t r = 0; r < p; ++r) {
        double acc = v[r];
        const double* row = A + r * p;
        for (std::size_t s = 0; s < p; ++s) acc += row[s] * x[s];
        out[r] = acc;
      }
    } else {
      const double label = labels_[c];
      double dot = 0.0;
      for (std::size_t s = 0; s < p; ++s) dot += v[s] * x[s];
      const double coeff = -label * detail::logistic(-label * dot);
      for (std::size_t s = 0; s < p; ++s) out[s] = coeff * v[s] + lambda_ * x[s];
    }
  }

  Vector component_grad(int i, int j, const Vector& x) const {
    check_index(i, j, x);
    Vector out(p_);
    component_grad_into(i, j, x.data(), out.data());
    return out;
  }

  double component_value(int i, int j, const Vector& x) const {
    check_index(i, j, x);
    const std::size_t c = offsets_[static_cast<std::size_t>(i)] + static_cast<std::size_t>(j);
    const std::size_t p = static_cast<std::size_t>(p_);
    const Eigen::Map<const Vector> v(vec_.data() + c * p, p_);
    if (family_ == ProblemFamily::quadratic) {
      const Eigen::Map<const Matrix> A(quad_A_.data() + c * p * p, p_, p_);
      return 0.5 * x.dot(A * x) + v.dot(x);
    }
    return detail::softplus(-labels_[c] * v.dot(x)) + 0.5 * lambda_ * x.squaredNorm();
  }

  /// Sum over j in fixed order, then divided by m_i.
  Vector local_full_grad(int i, const Vector& x) const {
    check_node(i);
    check_dim(x);
    Vector acc = Vector::Zero(p_);
    Vector g(p_);
    for (int j = 0; j < count(i); ++j) {
      component_grad_into(i, j, x.data(), g.data());
      acc += g;
    }
    return acc / static_cast<double>(count(i));
  }

  double local_value(int i, const Vector& x) const {
    double acc = 0.0;
    for (int j = 0; j < count(i); ++j) acc += component_value(i, j, x);
    return acc / static_cast<double>(count(i));
  }

  Vector global_grad(const Vector& x) const {
    Vector acc = Vector::Zero(p_);
    for (int i = 0; i < n_; ++i) acc += local_full_grad(i, x);
    return acc / static_cast<double>(n_);
  }

  double global_value(const Vector& x) const {
    double acc = 0.0;
    for (int i = 0; i < n_; ++i) acc += local_value(i, x);
    return acc / static_cast<double>(n_);
  }

  /// Row i = grad f_i(x_i): the stacked local gradients of an n x p iterate.
  Matrix stacked_local_grads(const Matrix& x) const {
    Matrix out(n_, p_);
    for (int i = 0; i < n_; ++i) out.row(i) = local_full_grad(i, x.row(i).transpose()).transpose();
    return out;
  }

  /// h(x) = (1/n) sum_i grad f_i(x_i).
  Vector h(const Matrix& x) const {
    return stacked_local_grads(x).colwise().mean().transpose();
  }

  QuadraticComponent quadratic_component(int i, int j) const {
    check_index(i, j, Vector::Zero(p_));
    if (family_ != ProblemFamily::quadratic) throw UsageError("not a quadratic problem");
    const std::size_t c = offsets_[static_cast<std::size_t>(i)] + static_cast<std::size_t>(j);
    const std::size_t p = static_cast<std::size_t>(p_);
    return {Eigen::Map<const Matrix>(quad_A_.data() + c * p * p, p_, p_),
            Eigen::Map<const Vector>(vec_.data() + c * p, p_)};
  }

  LogisticComponent logistic_component(int i, int j) const {
    check_index(i, j, Vector::Zero(p_));
    if (family_ != ProblemFamily::reglog) throw UsageError("not a reglog problem");
    const std::size_t c = offsets_[static_cast<std::size_t>(i)] + static_cast<std::size_t>(j);
    const std::size_t p = static_cast<std::size_t>(p_);
    return {Eigen::Map<const Vector>(vec_.data() + c * p, p_), labels_[c]};
  }

  /// Self-describing text; 17 significant digits so a reload is bit-exact.
  void save(std::ostream& os) const {
    os << std::setprecision(17);
    os << "gtsvrg-problem 1\n";
    os << "family " << to_string(family_) << '\n';
    os << "nodes " << n_ << '\n' << "dim " << p_ << '\n' << "counts";
    for (int m : counts_) os << ' ' << m;
    os << '\n' << "mu " << mu_ << '\n' << "ell " << ell_ << '\n' << "lambda " << lambda_ << '\n';
    os << "x_star";
    for (Eigen::Index r = 0; r < x_star_.size(); ++r) os << ' ' << x_star_(r);
    os << '\n';
    const std::size_t p = static_cast<std::size_t>(p_);
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < count(i); ++j) {
        const std::size_t c = offsets_[static_cast<std::size_t>(i)] + static_cast<std::size_t>(j);
        os << "component " << i << ' ' << j;
        if (family_ == ProblemFamily::quadratic) {
          for (std::size_t e = 0; e < p * p; ++e) os << ' ' << quad_A_[c * p * p + e];
        } else {
          os << ' ' << labels_[c];
        }
        for (std::size_t e = 0; e < p; ++e) os << ' ' << vec_[c * p + e];
        os << '\n';
      }
    }
  }

  /// Inverse of save(). Stored constants and x_star are taken verbatim.
  static Problem load(std::istream& is) {
    auto expect = [&](std::string_view word) {
      std::string tok;
      if (!(is >> tok) || tok != word) {
        throw ConfigError("problem file: expected '" + std::string(word) + "', got '" + tok + "'");
      }
    };
    auto number = [&](auto& out, std::string_view what) {
      if (!(is >> out)) throw ConfigError("problem file: bad value for " + std::string(what));
    };
    Problem P;
    int version = 0;
    expect("gtsvrg-problem");
    number(version, "version");
    if (version != 1) throw ConfigError("problem file: unsupported version");
    std::string fam;
    expect("family");
    number(fam, "family");
    P.family_ = parse_problem_family(fam);
    expect("nodes");
    number(P.n_, "nodes");
    expect("dim");
    number(P.p_, "dim");
    if (P.n_ < 1 || P.p_ < 1) throw ConfigError("problem file: nodes and dim must be >= 1");
    expect("counts");
    P.counts_.resize(static_cast<std::size_t>(P.n_));
    for (auto& m : P.counts_) {
      number(m, "counts");
      if (m < 1) throw ConfigError("problem file: component counts must be >= 1");
    }
    P.build_offsets();
    expect("mu");
    number(P.mu_, "mu");
    expect("ell");
    number(P.ell_, "ell");
    expect("lambda");
    number(P.lambda_, "lambda");
    expect("x_star");
    P.x_star_.resize(P.p_);
    for (Eigen::Index r = 0; r < P.p_; ++r) number(P.x_star_(r), "x_star");
    const std::size_t p = static_cast<std::size_t>(P.p_);
    for (int i = 0; i < P.n_; ++i) {
      for (int j = 0; j < P.count(i); ++j) {
        int fi = -1;
        int fj = -1;
        expect("component");
        number(fi, "component node");
        number(fj, "component index");
        if (fi != i || fj != j) throw ConfigError("problem file: components out of order");
        if (P.family_ == ProblemFamily::quadratic) {
          for (std::size_t e = 0; e < p * p; ++e) {
            double a = 0.0;
            number(a, "A");
            P.quad_A_.push_back(a);
          }
        } else {
          double label = 0.0;
          number(label, "label");
          P.labels_.push_back(label);
        }
        for (std::size_t e = 0; e < p; ++e) {
          double b = 0.0;
          number(b, "vector");
          P.vec_.push_back(b);
        }
      }
    }
    if (!(P.mu_ > 0.0) || P.ell_ < P.mu_) throw ConfigError("problem file: invalid mu/ell");
    return P;
  }

  /// ||global_grad(x_star)||.
  double minimizer_residual() const { return global_grad(x_star_).norm(); }

 private:
  template <typename C>
  void init_shape(const std::vector<std::vector<C>>& nodes) {
    if (nodes.empty()) throw ConfigError("problem needs at least one node");
    n_ = static_cast<int>(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].empty()) {
        throw ConfigError("node " + std::to_string(i) + " has no components (m_i must be >= 1)");
      }
      counts_.push_back(static_cast<int>(nodes[i].size()));
    }
    build_offsets();
  }

  void build_offsets() {
    offsets_.assign(1, 0);
    for (int m : counts_) offsets_.push_back(offsets_.back() + static_cast<std::size_t>(m));
  }

  void check_node(int i) const {
    if (i < 0 || i >= n_) {
      throw UsageError("node index " + std::to_string(i) + " outside [0, " + std::to_string(n_) + ")");
    }
  }

  void check_dim(const Vector& x) const {
    if (x.size() != p_) {
      throw UsageError("point has dimension " + std::to_string(x.size()) + ", problem has " +
                       std::to_string(p_));
    }
  }

  void check_index(int i, int j, const Vector& x) const {
    check_node(i);
    if (j < 0 || j >= count(i)) {
      throw UsageError("component index " + std::to_string(j) + " outside [0, " +
                       std::to_string(count(i)) + ") at node " + std::to_string(i));
    }
    check_dim(x);
  }

  // The global objective weights node i's components by 1/(n m_i).
  Vector solve_quadratic_minimizer() const {
    const std::size_t p = static_cast<std::size_t>(p_);
    Matrix A = Matrix::Zero(p_, p_);
    Vector b = Vector::Zero(p_);
    for (int i = 0; i < n_; ++i) {
      const double w = 1.0 / (static_cast<double>(n_) * count(i));
      for (int j = 0; j < count(i); ++j) {
        const std::size_t c = offsets_[static_cast<std::size_t>(i)] + static_cast<std::size_t>(j);
        A += w * Eigen::Map<const Matrix>(quad_A_.data() + c * p * p, p_, p_);
        b += w * Eigen::Map<const Vector>(vec_.data() + c * p, p_);
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Eigen::MatrixXd(0.5 * (A + A.transpose())));
    if (llt.info() != Eigen::Success) throw InternalError("averaged Hessian is not SPD");
    Vector x = llt.solve(-b);
    // One step of iterative refinement.
    x += llt.solve(-b - A * x);
    return x;
  }

  Vector solve_reglog_minimizer() const {
    Vector x = Vector::Zero(p_);
    const double step = 1.0 / ell_;
    Vector g = global_grad(x);
    for (long iter = 0; iter < 1000000 && g.norm() > 1e-12; ++iter) {
      x -= step * g;
      g = global_grad(x);
    }
    if (!(g.norm() <= 1e-8)) {
      std::ostringstream os;
      os << std::setprecision(17) << "reglog minimizer did not converge: ||grad|| = " << g.norm();
      throw NumericError(os.str());
    }
    return x;
  }

  ProblemFamily family_ = ProblemFamily::quadratic;
  int n_ = 0;
  int p_ = 0;
  std::vector<int> counts_;
  std::vector<std::size_t> offsets_;
  std::vector<double> quad_A_;  // row-major p x p per component
  std::vector<double> vec_;     // b (quadratic) or a (reglog), p per component
  std::vector<double> labels_;
  double mu_ = 0.0;
  double ell_ = 0.0;
  double lambda_ = 0.0;
  Vector x_star_;
};

namespace detail {

inline void check_counts(int n, const std::vector<int>& m) {
  if (n < 1) throw ConfigError("problem needs n >= 1");
  if (static_cast<int>(m.size()) != n) {
    throw ConfigError("component counts list has " + std::to_string(m.size()) +
                      " entries for n = " + std::to_string(n));
  }
  for (int mi : m)
    if (mi < 1) throw ConfigError("every m_i must be >= 1");
}

inline Matrix random_orthogonal(PhiloxEngine& rng, int p) {
  Matrix g(p, p);
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < p; ++c) g(r, c) = rng.gaussian();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr{Eigen::MatrixXd(g)};
  Eigen::MatrixXd q = qr.householderQ();
  // Fix column signs so Q does not depend on the QR sign convention.
  const Eigen::MatrixXd rr = qr.matrixQR();
  for (int c = 0; c < p; ++c)
    if (rr(c, c) < 0.0) q.col(c) = -q.col(c);
  return q;
}

}  // namespace detail

/// Random quadratic components A = U^T diag(lambda) U, b Gaussian. Eigenvalues
/// are uniform in [mu, ell] except that the first eigenvalue slot of the
/// problem is pinned to mu and the last to ell, so the declared constants are
/// attained.
inline Problem make_quadratic(int n, const std::vector<int>& m, int p, double mu, double ell,
                              std::uint64_t seed) {
  detail::check_counts(n, m);
  if (p < 1) throw ConfigError("problem dimension p must be >= 1");
  if (!(mu > 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be > 0");
  if (!(ell >= mu) || !std::isfinite(ell)) throw ConfigError("ell must be >= mu");
  const long long slots = std::accumulate(m.begin(), m.end(), 0LL) * p;
  if (slots == 1 && ell > mu) {
    throw ConfigError("a single scalar component cannot attain both mu and ell; use mu == ell");
  }
  PhiloxEngine rng(seed, StreamDomain::problem);
  std::vector<std::vector<QuadraticComponent>> nodes(static_cast<std::size_t>(n));
  long long slot = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m[static_cast<std::size_t>(i)]; ++j) {
      const Matrix U = detail::random_orthogonal(rng, p);
      Vector lam(p);
      for (int r = 0; r < p; ++r, ++slot) {
        double value = rng.uniform(mu, ell);
        if (slot == 0) value = mu;
        if (slot == slots - 1) value = ell;
        lam(r) = value;
      }
      Matrix A = U.transpose() * lam.asDiagonal() * U;
      A = 0.5 * (A + A.transpose()).eval();
      Vector b(p);
      for (int r = 0; r < p; ++r) b(r) = rng.gaussian();
      nodes[static_cast<std::size_t>(i)].push_back({std::move(A), std::move(b)});
    }
  }
  return Problem::quadratic(nodes, mu, ell);
}

/// Features Gaussian / sqrt(p); labels from a planted Gaussian direction with
/// 10% flips.
inline Problem make_reglog(int n, const std::vector<int>& m, int p, double lambda,
                           std::uint64_t seed) {
  detail::check_counts(n, m);
  if (p < 1) throw ConfigError("problem dimension p must be >= 1");
  if (!(lambda > 0.0)) throw ConfigError("reglog needs lambda > 0");
  PhiloxEngine rng(seed, StreamDomain::problem);
  Vector planted(p);
  for (int r = 0; r < p; ++r) planted(r) = rng.gaussian();
  const double scale = 1.0 / std::sqrt(static_cast<double>(p));
  std::vector<std::vector<LogisticComponent>> nodes(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m[static_cast<std::size_t>(i)]; ++j) {
      Vector a(p);
      for (int r = 0; r < p; ++r) a(r) = scale * rng.gaussian();
      double label = a.dot(planted) >= 0.0 ? 1.0 : -1.0;
      if (rng.uniform() < 0.1) label = -label;
      nodes[static_cast<std::size_t>(i)].push_back({std::move(a), label});
    }
  }
  return Problem::reglog(nodes, lambda);
}

inline void save_problem(const Problem& P, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write problem file '" + path + "'");
  P.save(out);
}

inline Problem load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open problem file '" + path + "'");
  return Problem::load(in);
}

}  // namespace gtsvrg
