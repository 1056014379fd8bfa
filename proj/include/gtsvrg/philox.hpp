#pragma once

// Counter-based random numbers (Philox4x32-10, Salmon et al., SC'11).
//
// Every draw the simulator makes is a pure function of (key, counter), so a
// node's sample at step (t, k) does not depend on how many other draws were
// made before it or on which thread computed it.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace gtsvrg {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

namespace detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

constexpr void philox_round(PhiloxCounter& ctr, const PhiloxKey& key) {
  const std::uint64_t p0 = std::uint64_t{kPhiloxM0} * ctr[0];
  const std::uint64_t p1 = std::uint64_t{kPhiloxM1} * ctr[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(p1);
  ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

}  // namespace detail

/// Philox4x32 with 10 rounds. Output is a bijection of the counter for a
/// fixed key.
constexpr PhiloxCounter philox4x32(PhiloxCounter ctr, PhiloxKey key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += detail::kPhiloxW0;
      key[1] += detail::kPhiloxW1;
    }
    detail::philox_round(ctr, key);
  }
  return ctr;
}

constexpr PhiloxKey key_from_seed(std::uint64_t seed) {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

/// Uniform double in [0, 1) from 53 random bits.
constexpr double to_unit_interval(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
  return static_cast<double>(bits) * 0x1.0p-53;
}

// Stream domains keep the different consumers of one master seed disjoint.
enum class StreamDomain : std::uint32_t {
  svrg_sample = 1,
  dsgd_sample = 2,
  monte_carlo = 3,
  problem = 4,
  graph = 5,
  oracle_states = 6,
};

/// Index draws keyed by (seed, node, outer t, inner k). Uniform over [0, m)
/// by Lemire's multiply-shift with rejection, so the distribution is exactly
/// uniform; `attempt` only advances on the (rare) rejected words.
class SampleStream {
 public:
  SampleStream(std::uint64_t seed, StreamDomain domain)
      : key_(key_from_seed(seed)), domain_(static_cast<std::uint32_t>(domain)) {}

  std::uint32_t index(std::uint32_t node, std::uint64_t t, std::uint64_t k,
                      std::uint32_t m) const {
    if (m <= 1) return 0;
    const std::uint32_t threshold = static_cast<std::uint32_t>(-m) % m;
    for (std::uint32_t attempt = 0;; ++attempt) {
      const PhiloxCounter block = philox4x32(
          {node, static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(t),
           (domain_ << 24) ^ (static_cast<std::uint32_t>(k >> 32) << 16) ^ attempt},
          key_);
      for (std::uint32_t word : block) {
        const std::uint64_t product = std::uint64_t{word} * m;
        if (static_cast<std::uint32_t>(product) >= threshold) {
          return static_cast<std::uint32_t>(product >> 32);
        }
      }
    }
  }

 private:
  PhiloxKey key_;
  std::uint32_t domain_;
};

/// Sequential engine over one Philox stream; satisfies
/// UniformRandomBitGenerator. Used for problem and graph construction where
/// draws happen in a fixed serial order.
class PhiloxEngine {
 public:
  using result_type = std::uint32_t;

  PhiloxEngine(std::uint64_t seed, StreamDomain domain, std::uint32_t substream = 0)
      : key_(key_from_seed(seed)),
        domain_(static_cast<std::uint32_t>(domain)),
        substream_(substream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (used_ == 4) refill();
    return buffer_[used_++];
  }

  /// Uniform in [0, 1).
  double uniform() {
    const std::uint32_t hi = (*this)();
    const std::uint32_t lo = (*this)();
    return to_unit_interval(hi, lo);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal by Box-Muller; written out so generated problems do not
  /// depend on the standard library's distribution implementation.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  void refill() {
    buffer_ = philox4x32({static_cast<std::uint32_t>(block_),
                          static_cast<std::uint32_t>(block_ >> 32), substream_, domain_},
                         key_);
    ++block_;
    used_ = 0;
  }

  PhiloxKey key_;
  std::uint32_t domain_;
  std::uint32_t substream_;
  std::uint64_t block_ = 0;
  PhiloxCounter buffer_{};
  int used_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gtsvrg
