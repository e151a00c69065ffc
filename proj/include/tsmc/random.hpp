#ifndef TSMC_RANDOM_HPP
#define TSMC_RANDOM_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string_view>

namespace tsmc {

/// Counter-based random stream. Each draw hashes (key, counter), so streams can
/// be split by deriving sub-keys without any shared state. Draws are
/// bit-reproducible across platforms; no libstdc++ distributions are used.
///
/// Streams are cheap value types. Derive one per (problem, particle, step) and
/// the draw schedule becomes independent of thread interleaving.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : key_(mix(seed ^ kInit)) {}

  /// Child stream with an independent key; counter restarts at zero.
  RandomStream derive(std::uint64_t tag) const {
    return RandomStream(Raw{}, mix(key_ ^ mix(tag + kTagSalt)));
  }
  RandomStream derive(std::string_view tag) const { return derive(fnv1a(tag)); }

  std::uint64_t next_u64() { return mix(key_ + kGamma * ++counter_); }

  /// Uniform draw in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (fixed formula, reproducible everywhere).
  double next_gauss() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Index draw from an unnormalized nonnegative weight vector (CDF inversion,
  /// one uniform consumed). The caller guarantees sum > 0. Zero-weight entries
  /// are never selected, including on the rounding-slack fallback.
  int next_categorical(const Eigen::Ref<const Eigen::VectorXd>& weights) {
    const double total = weights.sum();
    double u = next_double() * total;
    const int n = static_cast<int>(weights.size());
    int last_positive = -1;
    for (int i = 0; i < n; ++i) {
      if (weights[i] <= 0.0) continue;
      last_positive = i;
      u -= weights[i];
      if (u < 0.0) return i;
    }
    return last_positive;
  }

  std::uint64_t key() const noexcept { return key_; }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  struct Raw {};
  RandomStream(Raw, std::uint64_t key) : key_(key) {}

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t kInit = 0x2545f4914f6cdd1dull;
  static constexpr std::uint64_t kTagSalt = 0x9e6c63d0876a9a47ull;
  static constexpr std::uint64_t kGamma = 0xd1342543de82ef95ull;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace tsmc

#endif
