#pragma once

#include <cstdint>
#include <cmath>

#include "beadspring/common.hpp"

namespace beadspring {

/// Counter-based random stream.  Every output is a pure function of
/// (key, counter); the key of a child stream is a pure function of the
/// parent key and the child id.  Ensembles hand stream i to trajectory i,
/// so results do not depend on evaluation order and reruns are
/// byte-identical for a fixed master seed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t master_seed) : key_(mix(master_seed + kGolden)) {}

  /// Derived stream for sub-task `id` (trajectory index, sampler slot, ...).
  RngStream child(std::uint64_t id) const {
    RngStream s(*this);
    s.key_ = mix(key_ ^ mix(id + kGolden));
    s.counter_ = 0;
    return s;
  }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGolden); }

  /// Stream identity; two streams with equal keys produce equal sequences.
  std::uint64_t key() const { return key_; }

  /// Uniform on (0, 1].
  double uniform() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes exactly two uniforms.
  double gaussian() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  Vec2 gaussian_vec2() {
    const double a = gaussian();
    const double b = gaussian();
    return Vec2(a, b);
  }

  VecX gaussian_vec(Eigen::Index n) {
    VecX v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
    return v;
  }

 private:
  // SplitMix64 finalizer; full-period bijection on 64-bit words.
  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
  }

  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace beadspring
