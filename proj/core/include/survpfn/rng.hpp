#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace survpfn {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a, used for stream labels and file checksums.
constexpr std::uint64_t fnv1a64(std::string_view s,
                                std::uint64_t h = 0xCBF29CE484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_bytes(std::span<const unsigned char> bytes,
                            std::uint64_t h = 0xCBF29CE484222325ULL) noexcept;

/// Identifies an independent random sequence by (master seed, stream id).
///
/// Child streams are derived statelessly: `child(k)` depends only on the
/// parent's identity and `k`, never on how many numbers were drawn from the
/// parent. Output word `i` of a stream is
///
///     splitmix64(key + (i + 1) * 0x9E3779B97F4A7C15)
///
/// with `key = splitmix64(master ^ splitmix64(stream))`, i.e. a counter-mode
/// SplitMix64 generator.
struct RngStream {
  std::uint64_t master = 0;
  std::uint64_t stream = 0;

  [[nodiscard]] RngStream child(std::uint64_t id) const noexcept {
    return {master, splitmix64(stream ^ splitmix64(id + 0x632BE59BD9B4E019ULL))};
  }
  [[nodiscard]] RngStream child(std::string_view label) const noexcept {
    return child(fnv1a64(label));
  }
  [[nodiscard]] std::uint64_t key() const noexcept {
    return splitmix64(master ^ splitmix64(stream));
  }

  friend bool operator==(const RngStream&, const RngStream&) = default;
};

/// Stateful counter-mode engine reading one RngStream. Cheap to copy.
///
/// All distributions are implemented here rather than through <random> so
/// that sequences are identical across standard library implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(RngStream s) noexcept : key_(s.key()) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept {
    ++counter_;
    return splitmix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  /// Uniform on the open interval (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double log_uniform(double lo, double hi) noexcept;
  /// Standard normal via Box-Muller (one variate per call, no caching).
  double normal() noexcept;
  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  /// Index drawn proportional to nonnegative `weights` (sum must be > 0).
  std::size_t categorical(std::span<const double> weights) noexcept;

  [[nodiscard]] std::uint64_t draws() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace survpfn
