#pragma once

// Networks and their doubly-stochastic mixing matrices.

#include "gtsvrg/errors.hpp"
#include "gtsvrg/linalg.hpp"
#include "gtsvrg/philox.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gtsvrg {

enum class TopologyKind { ring, path, grid2d, complete, erdos_renyi };

inline std::string_view to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::ring: return "ring";
    case TopologyKind::path: return "path";
    case TopologyKind::grid2d: return "grid2d";
    case TopologyKind::complete: return "complete";
    case TopologyKind::erdos_renyi: return "erdos_renyi";
  }
  return "?";
}

inline TopologyKind parse_topology_kind(std::string_view name) {
  for (auto kind : {TopologyKind::ring, TopologyKind::path, TopologyKind::grid2d,
                    TopologyKind::complete, TopologyKind::erdos_renyi}) {
    if (name == to_string(kind)) return kind;
  }
  throw ConfigError("unknown topology kind '" + std::string(name) + "'");
}

using Edge = std::pair<int, int>;

/// Undirected simple graph; edges are stored once with first < second.
struct Graph {
  int n = 0;
  std::vector<Edge> edges;

  std::vector<int> degrees() const {
    std::vector<int> deg(static_cast<std::size_t>(n), 0);
    for (auto [a, b] : edges) {
      ++deg[static_cast<std::size_t>(a)];
      ++deg[static_cast<std::size_t>(b)];
    }
    return deg;
  }
};

inline bool is_connected(const Graph& g) {
  if (g.n <= 1) return g.n == 1;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(g.n));
  for (auto [a, b] : g.edges) {
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  std::vector<bool> seen(static_cast<std::size_t>(g.n), false);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = true;
  int reached = 1;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int w : adj[static_cast<std::size_t>(u)]) {
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = true;
        ++reached;
        frontier.push(w);
      }
    }
  }
  return reached == g.n;
}

struct GraphParams {
  int rows = 0;  // grid2d
  int cols = 0;  // grid2d
  double prob = 0.5;  // erdos_renyi edge probability
  int max_retries = 100;  // erdos_renyi resampling budget
};

namespace detail {

inline void add_edge(std::vector<Edge>& edges, int a, int b) {
  if (a == b) return;
  if (a > b) std::swap(a, b);
  edges.emplace_back(a, b);
}

inline void normalize_edges(std::vector<Edge>& edges) {
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

}  // namespace detail

/// Builds a connected graph of the requested family. Erdos-Renyi draws come
/// from the counter-based stream, attempt `a` using substream `a`, so the
/// result depends only on (n, prob, seed).
inline Graph build_graph(TopologyKind kind, int n, const GraphParams& params = {},
                         std::uint64_t seed = 0) {
  if (n < 1) throw ConfigError("topology needs n >= 1, got " + std::to_string(n));
  Graph g{n, {}};
  switch (kind) {
    case TopologyKind::ring:
      for (int i = 0; i < n; ++i) detail::add_edge(g.edges, i, (i + 1) % n);
      break;
    case TopologyKind::path:
      for (int i = 0; i + 1 < n; ++i) detail::add_edge(g.edges, i, i + 1);
      break;
    case TopologyKind::grid2d: {
      if (params.rows < 1 || params.cols < 1 || params.rows * params.cols != n) {
        throw ConfigError("grid2d requires rows*cols == n (rows=" + std::to_string(params.rows) +
                          ", cols=" + std::to_string(params.cols) + ", n=" + std::to_string(n) +
                          ")");
      }
      for (int r = 0; r < params.rows; ++r) {
        for (int c = 0; c < params.cols; ++c) {
          const int id = r * params.cols + c;
          if (c + 1 < params.cols) detail::add_edge(g.edges, id, id + 1);
          if (r + 1 < params.rows) detail::add_edge(g.edges, id, id + params.cols);
        }
      }
      break;
    }
    case TopologyKind::complete:
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) detail::add_edge(g.edges, i, j);
      break;
    case TopologyKind::erdos_renyi: {
      if (!(params.prob > 0.0 && params.prob <= 1.0)) {
        throw ConfigError("erdos_renyi edge probability must lie in (0, 1]");
      }
      if (params.max_retries < 1) throw ConfigError("erdos_renyi max_retries must be >= 1");
      for (int attempt = 0; attempt < params.max_retries; ++attempt) {
        PhiloxEngine rng(seed, StreamDomain::graph, static_cast<std::uint32_t>(attempt));
        g.edges.clear();
        for (int i = 0; i < n; ++i)
          for (int j = i + 1; j < n; ++j)
            if (rng.uniform() < params.prob) detail::add_edge(g.edges, i, j);
        if (is_connected(g)) break;
      }
      if (!is_connected(g)) {
        throw TopologyError("erdos_renyi graph still disconnected after " +
                            std::to_string(params.max_retries) + " draws");
      }
      break;
    }
  }
  detail::normalize_edges(g.edges);
  return g;
}

/// Row-sum and column-sum tolerance for a valid mixing matrix.
inline constexpr double kStochasticTolerance = 1e-12;
/// sigma within this distance of 1 is rejected.
inline constexpr double kSigmaRejectMargin = 1e-10;

namespace detail {

inline void require_square_finite(const Matrix& w) {
  if (w.rows() != w.cols()) {
    throw UsageError("mixing matrix must be square, got " + std::to_string(w.rows()) + "x" +
                     std::to_string(w.cols()));
  }
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      if (!std::isfinite(w(i, j))) {
        throw NumericError("non-finite entry at (" + std::to_string(i) + ", " +
                           std::to_string(j) + ")");
      }
}

inline bool is_symmetric(const Matrix& w) {
  const double scale = std::max(1.0, max_abs(w));
  return (w - w.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * scale;
}

inline bool is_doubly_stochastic(const Matrix& w, double tol) {
  const Eigen::Index n = w.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(w.row(i).sum() - 1.0) > tol) return false;
    if (std::abs(w.col(i).sum() - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace detail

/// Second largest singular value of W.
///
/// For doubly-stochastic W this equals ||W - (1/n) 1 1^T||_2; the symmetric
/// case uses the eigenvalues of that deflated matrix, the general case its
/// largest singular value. Matrices that are not doubly stochastic fall back
/// to a plain SVD of W.
inline double second_singular_value(const Matrix& w) {
  detail::require_square_finite(w);
  const Eigen::Index n = w.rows();
  if (n <= 1) return 0.0;
  if (detail::is_doubly_stochastic(w, 1e-9)) {
    const Matrix deflated = w - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
    if (detail::is_symmetric(w)) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
          0.5 * (deflated + deflated.transpose()), Eigen::EigenvaluesOnly);
      if (eig.info() != Eigen::Success) throw NumericError("eigensolver failed for W");
      return eig.eigenvalues().cwiseAbs().maxCoeff();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(deflated);
    return svd.singularValues()(0);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
  return svd.singularValues()(1);
}

/// A validated doubly-stochastic, nonnegative W with sigma < 1.
class MixingMatrix {
 public:
  /// Validates every invariant; errors name the offending row or column.
  static MixingMatrix from_dense(Matrix w) {
    detail::require_square_finite(w);
    const Eigen::Index n = w.rows();
    if (n < 1) throw ConfigError("mixing matrix must have n >= 1");
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (w(i, j) < 0.0) {
          throw TopologyError("nonnegativity violated: W(" + std::to_string(i) + ", " +
                              std::to_string(j) + ") = " + format(w(i, j)));
        }
    for (Eigen::Index i = 0; i < n; ++i) {
      const double rs = w.row(i).sum();
      if (std::abs(rs - 1.0) > kStochasticTolerance) {
        throw TopologyError("row-stochasticity violated: row " + std::to_string(i) +
                            " sums to " + format(rs));
      }
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double cs = w.col(j).sum();
      if (std::abs(cs - 1.0) > kStochasticTolerance) {
        throw TopologyError("column-stochasticity violated: column " + std::to_string(j) +
                            " sums to " + format(cs));
      }
    }
    const double sigma = second_singular_value(w);
    if (sigma >= 1.0 - kSigmaRejectMargin) {
      throw TopologyError("sigma = " + format(sigma) +
                          " is not < 1: W is not primitive (disconnected or periodic network)");
    }
    return MixingMatrix(std::move(w), sigma);
  }

  int size() const { return static_cast<int>(w_.rows()); }
  double sigma() const { return sigma_; }
  const Matrix& dense() const { return w_; }
  bool symmetric() const { return detail::is_symmetric(w_); }

  /// Nonzero entries of row i in increasing column order.
  const std::vector<std::pair<int, double>>& row_entries(int i) const {
    return rows_[static_cast<std::size_t>(i)];
  }

  /// out.row(i) = sum_r w_ir in.row(r), accumulated in fixed column order.
  template <typename Out>
  void mix_row(int i, const Matrix& in, Out&& out) const {
    out.setZero();
    for (const auto& [r, weight] : rows_[static_cast<std::size_t>(i)]) out += weight * in.row(r);
  }

  Matrix apply(const Matrix& in) const {
    Matrix out(in.rows(), in.cols());
    for (int i = 0; i < size(); ++i) mix_row(i, in, out.row(i));
    return out;
  }

 private:
  MixingMatrix(Matrix w, double sigma) : w_(std::move(w)), sigma_(sigma) {
    rows_.resize(static_cast<std::size_t>(w_.rows()));
    for (Eigen::Index i = 0; i < w_.rows(); ++i)
      for (Eigen::Index j = 0; j < w_.cols(); ++j)
        if (w_(i, j) != 0.0) rows_[static_cast<std::size_t>(i)].emplace_back(static_cast<int>(j), w_(i, j));
  }

  static std::string format(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  }

  Matrix w_;
  double sigma_;
  std::vector<std::vector<std::pair<int, double>>> rows_;
};

/// Metropolis-Hastings weights: w_ij = 1 / (1 + max(deg_i, deg_j)) on edges,
/// self-weight takes the remainder. Symmetric and doubly stochastic.
inline MixingMatrix metropolis_weights(const Graph& g) {
  if (!is_connected(g)) throw TopologyError("metropolis_weights needs a connected graph");
  const auto deg = g.degrees();
  Matrix w = Matrix::Zero(g.n, g.n);
  for (auto [a, b] : g.edges) {
    const double weight =
        1.0 / (1.0 + std::max(deg[static_cast<std::size_t>(a)], deg[static_cast<std::size_t>(b)]));
    w(a, b) = weight;
    w(b, a) = weight;
  }
  for (int i = 0; i < g.n; ++i) {
    double off = 0.0;
    for (int j = 0; j < g.n; ++j)
      if (j != i) off += w(i, j);
    w(i, i) = 1.0 - off;
  }
  return MixingMatrix::from_dense(std::move(w));
}

/// W = (1/n) 1 1^T, the exact averaging projector (sigma = 0).
inline MixingMatrix uniform_complete(int n) {
  if (n < 1) throw ConfigError("uniform_complete needs n >= 1");
  return MixingMatrix::from_dense(Matrix::Constant(n, n, 1.0 / static_cast<double>(n)));
}

struct ContractionCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool ok = true;
};

/// ||W x - W_inf x||_F against sigma ||x - W_inf x||_F.
inline ContractionCheck contraction_check(const MixingMatrix& w, const Matrix& x) {
  if (x.rows() != w.size()) {
    throw UsageError("contraction_check: x has " + std::to_string(x.rows()) +
                     " rows, W is " + std::to_string(w.size()) + "x" + std::to_string(w.size()));
  }
  const Matrix wx = w.apply(x);
  ContractionCheck out;
  out.lhs = std::sqrt(consensus_sq(wx));  // W_inf W x = W_inf x for doubly-stochastic W
  out.rhs = w.sigma() * std::sqrt(consensus_sq(x));
  out.ok = out.lhs <= out.rhs + 1e-9 * (1.0 + out.rhs);
  return out;
}

/// Plain-text matrix: first line n, then n rows of n decimals.
inline void write_matrix(std::ostream& os, const Matrix& w) {
  os << w.rows() << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) os << (j ? " " : "") << w(i, j);
    os << '\n';
  }
}

inline Matrix read_matrix(std::istream& is) {
  long long n = 0;
  if (!(is >> n) || n < 1) throw ConfigError("matrix file: first token must be n >= 1");
  Matrix w(n, n);
  for (long long i = 0; i < n; ++i)
    for (long long j = 0; j < n; ++j)
      if (!(is >> w(i, j))) {
        throw ConfigError("matrix file: row " + std::to_string(i) + " has fewer than " +
                          std::to_string(n) + " entries (failed at column " + std::to_string(j) + ")");
      }
  std::string extra;
  if (is >> extra) throw ConfigError("matrix file: trailing token '" + extra + "' after n rows");
  return w;
}

/// Reads and re-validates a user-supplied W.
inline MixingMatrix load_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open matrix file '" + path + "'");
  return MixingMatrix::from_dense(read_matrix(in));
}

}  // namespace gtsvrg
