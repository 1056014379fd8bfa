#pragma once

// Per-step residual records and their CSV form.

#include "gtsvrg/linalg.hpp"
#include "gtsvrg/objectives.hpp"
#include "gtsvrg/theory.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace gtsvrg {

/// Algorithm state. The snapshot fields are unused by the baselines.
struct NetworkState {
  Matrix x;
  Matrix y;
  Matrix v;
  Matrix snapshot_x;
  Matrix snapshot_grad;
  std::int64_t t = 0;
  std::int64_t k = 0;
  std::uint64_t grad_evals = 0;
};

struct TraceRecord {
  std::int64_t t = 0;
  std::int64_t k = 0;
  double consensus_sq = 0.0;       // ||x - 1 xbar||^2
  double opt_gap_sq_scaled = 0.0;  // n ||xbar - x*||^2
  double tracking_sq = 0.0;        // ||y - 1 ybar||^2
  double mean_dist_to_opt = 0.0;   // ||xbar - x*||
  std::uint64_t grad_evals = 0;

  Vector3 u() const { return {consensus_sq, opt_gap_sq_scaled, tracking_sq}; }
};

/// Residual vector u of a state. Without a tracker the third entry is NaN.
inline TraceRecord make_record(const NetworkState& S, const Problem& P, bool has_tracker = true) {
  TraceRecord r;
  r.t = S.t;
  r.k = S.k;
  r.consensus_sq = consensus_sq(S.x);
  const RowVector gap = node_mean(S.x) - P.minimizer().transpose();
  r.mean_dist_to_opt = gap.norm();
  r.opt_gap_sq_scaled = static_cast<double>(S.x.rows()) * gap.squaredNorm();
  r.tracking_sq = has_tracker ? consensus_sq(S.y) : std::numeric_limits<double>::quiet_NaN();
  r.grad_evals = S.grad_evals;
  return r;
}

struct Trace {
  std::vector<TraceRecord> records;
  std::vector<Vector3> boundary_u;    // u at every (t, 0) reached, init first
  std::vector<double> outer_ratios;   // scaled max-norm ratio per outer loop
  std::int64_t outer_loops = 0;
  bool reached_target = false;

  const TraceRecord& last() const { return records.back(); }

  /// Geometric mean of the outer ratios after the first; NaN if there are none.
  double geometric_mean_ratio(std::size_t skip = 1) const {
    if (outer_ratios.size() <= skip) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (std::size_t i = skip; i < outer_ratios.size(); ++i) acc += std::log(outer_ratios[i]);
    return std::exp(acc / static_cast<double>(outer_ratios.size() - skip));
  }
};

inline constexpr const char* kTraceHeader =
    "t,k,consensus_sq,opt_gap_sq_scaled,tracking_sq,mean_dist_to_opt,grad_evals";

/// %.17g: round-trips every double, so equal traces give equal bytes.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_trace_row(std::ostream& os, const TraceRecord& r) {
  os << r.t << ',' << r.k << ',' << format_double(r.consensus_sq) << ','
     << format_double(r.opt_gap_sq_scaled) << ',' << format_double(r.tracking_sq) << ','
     << format_double(r.mean_dist_to_opt) << ',' << r.grad_evals << '\n';
}

inline void write_trace_csv(std::ostream& os, const Trace& trace) {
  os << kTraceHeader << '\n';
  for (const auto& r : trace.records) write_trace_row(os, r);
}

inline void write_trace_csv(const std::string& path, const Trace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write trace file '" + path + "'");
  write_trace_csv(out, trace);
}

}  // namespace gtsvrg
