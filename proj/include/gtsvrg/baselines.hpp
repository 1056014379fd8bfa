#pragma once

// Comparison methods on the same state layout:
//   gt:   gradient tracking with exact local gradients (v holds grad f_i(x_i))
//   dsgd: x+ = W x - alpha g, g_i one sampled component gradient, no tracker

#include "gtsvrg/algorithm.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>

namespace gtsvrg {

inline NetworkState gt_init(const Problem& P, const std::optional<Matrix>& x0 = std::nullopt) {
  NetworkState S;
  S.x = detail::initial_point(P, x0);
  S.v = P.stacked_local_grads(S.x);
  S.y = S.v;
  S.grad_evals = detail::total_components(P);
  return S;
}

/// x+ = W x - alpha y; y+ = W y + grad f(x+) - grad f(x).
inline NetworkState gt_full_step(const NetworkState& S, const Problem& P, const MixingMatrix& W,
                                 double alpha) {
  detail::check_dimensions(P, W);
  NetworkState out;
  out.x = W.apply(S.x) - alpha * S.y;
  out.v = P.stacked_local_grads(out.x);
  out.y = W.apply(S.y) + out.v - S.v;
  out.t = S.t;
  out.k = S.k + 1;
  out.grad_evals = S.grad_evals + detail::total_components(P);
  if (!out.x.allFinite() || !out.y.allFinite()) {
    throw DivergedError(detail::divergence_message("gt", alpha, detail::theory_max_step(P, W), out.t, out.k));
  }
  return out;
}

inline NetworkState dsgd_init(const Problem& P, const std::optional<Matrix>& x0 = std::nullopt) {
  NetworkState S;
  S.x = detail::initial_point(P, x0);
  S.y = Matrix::Zero(S.x.rows(), S.x.cols());
  S.v = S.y;
  return S;
}

/// x+ = W x - alpha g with g_i = grad f_{i,s}(x_i). Draws are keyed like the
/// main method's but on their own stream domain.
inline NetworkState dsgd_step(const NetworkState& S, const Problem& P, const MixingMatrix& W,
                              double alpha, const SampleStream& stream) {
  detail::check_dimensions(P, W);
  NetworkState out;
  Matrix g(P.nodes(), P.dim());
  for (int i = 0; i < P.nodes(); ++i) {
    const auto s = stream.index(static_cast<std::uint32_t>(i), static_cast<std::uint64_t>(S.t),
                                static_cast<std::uint64_t>(S.k + 1),
                                static_cast<std::uint32_t>(P.count(i)));
    P.component_grad_into(i, static_cast<int>(s), S.x.data() + static_cast<std::size_t>(i) * P.dim(),
                          g.data() + static_cast<std::size_t>(i) * P.dim());
  }
  out.x = W.apply(S.x) - alpha * g;
  out.v = std::move(g);
  out.y = Matrix::Zero(S.x.rows(), S.x.cols());
  out.t = S.t;
  out.k = S.k + 1;
  out.grad_evals = S.grad_evals + static_cast<std::uint64_t>(P.nodes());
  if (!out.x.allFinite()) {
    throw DivergedError(detail::divergence_message("dsgd", alpha, detail::theory_max_step(P, W), out.t, out.k));
  }
  return out;
}

namespace detail {

// T*K plain steps, labelled t = step / K and k = step % K so rows line up
// with the main method's trace.
template <typename Step>
Trace run_flat(const Problem& P, const MixingMatrix& W, const RunConfig& cfg, NetworkState S,
               bool has_tracker, Step&& step) {
  check_run_config(cfg);
  check_dimensions(P, W);
  TraceBuilder tb(P, W, cfg, has_tracker);
  tb.boundary(S);
  if (tb.target_met()) tb.trace.reached_target = true;
  for (std::int64_t t = 0; t < cfg.T && !tb.trace.reached_target; ++t) {
    for (std::int64_t k = 0; k < cfg.K; ++k) {
      S = step(S);
      if (S.k == cfg.K) {
        S.t += 1;
        S.k = 0;
      } else {
        tb.inner(S);
      }
    }
    tb.boundary(S);
    tb.trace.outer_loops = t + 1;
    if (tb.target_met()) tb.trace.reached_target = true;
  }
  return std::move(tb.trace);
}

}  // namespace detail

inline Trace run_gt(const Problem& P, const MixingMatrix& W, const RunConfig& cfg) {
  return detail::run_flat(P, W, cfg, gt_init(P, cfg.x0), true,
                          [&](const NetworkState& S) { return gt_full_step(S, P, W, cfg.alpha); });
}

inline Trace run_dsgd(const Problem& P, const MixingMatrix& W, const RunConfig& cfg) {
  const SampleStream stream(cfg.seed, StreamDomain::dsgd_sample);
  return detail::run_flat(P, W, cfg, dsgd_init(P, cfg.x0), false, [&](const NetworkState& S) {
    return dsgd_step(S, P, W, cfg.alpha, stream);
  });
}

}  // namespace gtsvrg
