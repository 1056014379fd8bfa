#pragma once

// Gradient tracking with local SVRG estimators over a synchronous network.
//
//   x+ = W x - alpha y
//   v+_i = grad f_{i,s}(x+_i) - grad f_{i,s}(snap_i) + full_grad_i(snap_i)
//   y+ = W y + v+ - v
//
// Every K inner steps the snapshots are refreshed; x, y and v carry over.

#include "gtsvrg/errors.hpp"
#include "gtsvrg/linalg.hpp"
#include "gtsvrg/node_pool.hpp"
#include "gtsvrg/objectives.hpp"
#include "gtsvrg/philox.hpp"
#include "gtsvrg/theory.hpp"
#include "gtsvrg/topology.hpp"
#include "gtsvrg/trace.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace gtsvrg {

struct RunConfig {
  double alpha = 0.0;
  std::int64_t K = 1;
  std::int64_t T = 1;
  std::uint64_t seed = 0;
  std::optional<Matrix> x0;  // default all-zero
  std::int64_t record_every = 1;
  int threads = 1;
  std::optional<double> target;  // stop at the first outer boundary with ||xbar - x*|| <= target
};

/// Called after every inner step with the states before and after it.
using StepObserver = std::function<void(const NetworkState&, const NetworkState&)>;

namespace detail {

inline void check_dimensions(const Problem& P, const MixingMatrix& W) {
  if (P.nodes() != W.size()) {
    throw UsageError("problem has " + std::to_string(P.nodes()) + " nodes but W is " +
                     std::to_string(W.size()) + "x" + std::to_string(W.size()));
  }
}

inline void check_run_config(const RunConfig& cfg) {
  if (!(cfg.alpha >= 0.0) || !std::isfinite(cfg.alpha)) throw ConfigError("alpha must be finite and >= 0");
  if (cfg.K < 1) throw ConfigError("K must be >= 1");
  if (cfg.T < 0) throw ConfigError("T must be >= 0");
  if (cfg.record_every < 1) throw ConfigError("record_every must be >= 1");
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
}

inline Matrix initial_point(const Problem& P, const std::optional<Matrix>& x0) {
  if (!x0) return Matrix::Zero(P.nodes(), P.dim());
  if (x0->rows() != P.nodes() || x0->cols() != P.dim()) {
    throw UsageError("x0 must be " + std::to_string(P.nodes()) + "x" + std::to_string(P.dim()));
  }
  if (!x0->allFinite()) throw ConfigError("x0 has non-finite entries");
  return *x0;
}

inline std::string divergence_message(const char* method, double alpha, double max_step,
                                      std::int64_t t, std::int64_t k) {
  std::ostringstream os;
  os.precision(6);
  os << method << " diverged: non-finite iterate at (t=" << t << ", k=" << k << ") with alpha = "
     << alpha << " (theory max_step_size = " << max_step << ", ratio " << alpha / max_step << ")";
  return os.str();
}

inline double theory_max_step(const Problem& P, const MixingMatrix& W) {
  return max_step_size(W.sigma(), P.ell() / P.mu(), P.ell());
}

inline std::uint64_t total_components(const Problem& P) {
  return static_cast<std::uint64_t>(P.total_components());
}

}  // namespace detail

class GtSvrg {
 public:
  GtSvrg(const Problem& P, const MixingMatrix& W, double alpha, std::uint64_t seed, int threads = 1)
      : P_(P), W_(W), alpha_(alpha), stream_(seed, StreamDomain::svrg_sample),
        max_step_(detail::theory_max_step(P, W)),
        scratch_(static_cast<std::size_t>(P.nodes()) * 2 * static_cast<std::size_t>(P.dim())) {
    detail::check_dimensions(P, W);
    if (threads > 1) pool_ = std::make_unique<NodePool>(threads);
  }

  /// y = v = snapshot_grad = local full gradients at x0.
  NetworkState init(const std::optional<Matrix>& x0 = std::nullopt) const {
    NetworkState S;
    S.x = detail::initial_point(P_, x0);
    S.snapshot_x = S.x;
    S.snapshot_grad = P_.stacked_local_grads(S.x);
    S.y = S.snapshot_grad;
    S.v = S.snapshot_grad;
    S.grad_evals = detail::total_components(P_);
    return S;
  }

  /// One synchronous round from S into out (out must not alias S).
  void inner_step(const NetworkState& S, NetworkState& out) const {
    const int n = P_.nodes();
    const int p = P_.dim();
    if (out.x.rows() != n || out.x.cols() != p) {
      out.x.resize(n, p);
      out.y.resize(n, p);
      out.v.resize(n, p);
    }
    out.snapshot_x = S.snapshot_x;
    out.snapshot_grad = S.snapshot_grad;
    auto body = [&](int begin, int end) {
      for (int i = begin; i < end; ++i) node_update(S, out, i);
    };
    if (pool_) {
      pool_->run(n, body);
    } else {
      body(0, n);
    }
    out.t = S.t;
    out.k = S.k + 1;
    out.grad_evals = S.grad_evals + 2 * static_cast<std::uint64_t>(n);
    if (!out.x.allFinite() || !out.y.allFinite() || !out.v.allFinite()) {
      throw DivergedError(detail::divergence_message("gtsvrg", alpha_, max_step_, out.t, out.k));
    }
  }

  NetworkState inner_step(const NetworkState& S) const {
    NetworkState out;
    inner_step(S, out);
    return out;
  }

  /// Outer boundary: snapshot = x, full local gradients recomputed; x, y, v kept.
  void refresh(NetworkState& S) const {
    S.snapshot_x = S.x;
    S.snapshot_grad = P_.stacked_local_grads(S.x);
    S.grad_evals += detail::total_components(P_);
    S.t += 1;
    S.k = 0;
  }

  /// K inner steps followed by the refresh.
  NetworkState outer_step(NetworkState S, std::int64_t K, const StepObserver& observer = {}) const {
    if (S.k != 0) throw UsageError("outer_step must start at k = 0");
    if (K < 1) throw ConfigError("K must be >= 1");
    NetworkState next;
    for (std::int64_t k = 0; k < K; ++k) {
      inner_step(S, next);
      if (observer) observer(S, next);
      std::swap(S, next);
    }
    refresh(S);
    return S;
  }

  double alpha() const { return alpha_; }
  double max_step() const { return max_step_; }

  /// The component index node i samples when producing v at (t, k).
  std::uint32_t sample(int i, std::int64_t t, std::int64_t k) const {
    return stream_.index(static_cast<std::uint32_t>(i), static_cast<std::uint64_t>(t),
                         static_cast<std::uint64_t>(k), static_cast<std::uint32_t>(P_.count(i)));
  }

 private:
  void node_update(const NetworkState& S, NetworkState& out, int i) const {
    const std::size_t p = static_cast<std::size_t>(P_.dim());
    const std::size_t off = static_cast<std::size_t>(i) * p;
    const double* __restrict x = S.x.data();
    const double* __restrict y = S.y.data();
    double* __restrict xo = out.x.data() + off;
    double* __restrict yo = out.y.data() + off;
    double* __restrict vo = out.v.data() + off;
    const auto& row = W_.row_entries(i);

    for (std::size_t e = 0; e < p; ++e) {
      xo[e] = 0.0;
      yo[e] = 0.0;
    }
    for (const auto& [r, w] : row) {
      const double* __restrict xr = x + static_cast<std::size_t>(r) * p;
      const double* __restrict yr = y + static_cast<std::size_t>(r) * p;
      for (std::size_t e = 0; e < p; ++e) {
        xo[e] += w * xr[e];
        yo[e] += w * yr[e];
      }
    }
    for (std::size_t e = 0; e < p; ++e) xo[e] -= alpha_ * y[off + e];

    const int s = static_cast<int>(sample(i, S.t, S.k + 1));
    double* __restrict g_new = scratch_.data() + 2 * off;
    double* __restrict g_old = g_new + p;
    P_.component_grad_into(i, s, xo, g_new);
    P_.component_grad_into(i, s, S.snapshot_x.data() + off, g_old);
    const double* __restrict sg = S.snapshot_grad.data() + off;
    const double* __restrict v = S.v.data() + off;
    for (std::size_t e = 0; e < p; ++e) {
      vo[e] = g_new[e] - g_old[e] + sg[e];
      yo[e] = yo[e] + vo[e] - v[e];
    }
  }

  const Problem& P_;
  const MixingMatrix& W_;
  double alpha_;
  SampleStream stream_;
  double max_step_;
  mutable std::vector<double> scratch_;  // two p-vectors per node, written only by that node
  std::unique_ptr<NodePool> pool_;
};

/// Free-function forms.
inline NetworkState init(const Problem& P, const MixingMatrix& W, const RunConfig& cfg) {
  detail::check_run_config(cfg);
  return GtSvrg(P, W, cfg.alpha, cfg.seed).init(cfg.x0);
}

inline NetworkState inner_step(const NetworkState& S, const Problem& P, const MixingMatrix& W,
                               double alpha, std::uint64_t seed) {
  return GtSvrg(P, W, alpha, seed).inner_step(S);
}

inline NetworkState outer_step(const NetworkState& S, const Problem& P, const MixingMatrix& W,
                               double alpha, std::int64_t K, std::uint64_t seed) {
  return GtSvrg(P, W, alpha, seed).outer_step(S, K);
}

/// Weights of the scaled max-norm used for outer contraction ratios.
inline Vector3 outer_norm_weights(const Problem& P, const MixingMatrix& W) {
  return epsilon_weights(W.sigma(), P.ell() / P.mu(), P.ell());
}

namespace detail {

// Shared bookkeeping for run(): inner records, boundary records, ratios.
class TraceBuilder {
 public:
  TraceBuilder(const Problem& P, const MixingMatrix& W, const RunConfig& cfg, bool has_tracker)
      : P_(P), cfg_(cfg), weights_(outer_norm_weights(P, W)), has_tracker_(has_tracker) {}

  void boundary(const NetworkState& S) {
    const TraceRecord r = make_record(S, P_, has_tracker_);
    trace.records.push_back(r);
    Vector3 u = r.u();
    if (!has_tracker_) u(2) = 0.0;
    if (!trace.boundary_u.empty()) {
      const double before = scaled_max_norm(trace.boundary_u.back(), weights_);
      const double after = scaled_max_norm(u, weights_);
      trace.outer_ratios.push_back(before > 0.0 ? after / before
                                                : (after > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
    }
    trace.boundary_u.push_back(u);
  }

  void inner(const NetworkState& S) {
    if (S.k >= 1 && S.k < cfg_.K && S.k % cfg_.record_every == 0) {
      trace.records.push_back(make_record(S, P_, has_tracker_));
    }
  }

  bool target_met() const {
    return cfg_.target && trace.records.back().mean_dist_to_opt <= *cfg_.target;
  }

  Trace trace;

 private:
  const Problem& P_;
  const RunConfig& cfg_;
  Vector3 weights_;
  bool has_tracker_;
};

}  // namespace detail

/// T outer loops (or fewer if cfg.target is met at a boundary).
inline Trace run(const Problem& P, const MixingMatrix& W, const RunConfig& cfg,
                 const StepObserver& observer = {}) {
  detail::check_run_config(cfg);
  detail::check_dimensions(P, W);
  GtSvrg alg(P, W, cfg.alpha, cfg.seed, cfg.threads);
  detail::TraceBuilder tb(P, W, cfg, true);
  NetworkState S = alg.init(cfg.x0);
  NetworkState next;
  tb.boundary(S);
  if (tb.target_met()) tb.trace.reached_target = true;
  for (std::int64_t t = 0; t < cfg.T && !tb.trace.reached_target; ++t) {
    for (std::int64_t k = 0; k < cfg.K; ++k) {
      alg.inner_step(S, next);
      if (observer) observer(S, next);
      std::swap(S, next);
      tb.inner(S);
    }
    alg.refresh(S);
    tb.boundary(S);
    tb.trace.outer_loops = t + 1;
    if (tb.target_met()) tb.trace.reached_target = true;
  }
  return std::move(tb.trace);
}

}  // namespace gtsvrg
