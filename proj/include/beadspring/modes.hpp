#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "beadspring/common.hpp"

namespace beadspring {

/// One retained Fourier mode: lattice direction k and noise weight sigma_k.
/// The pair {k, -k} drives the same forcing term, so only one representative
/// is stored (the lexicographically larger of the two).
struct Mode {
  int kx = 0;
  int ky = 0;
  double sigma = 1.0;
};

inline bool canonical_direction(int kx, int ky) { return kx > 0 || (kx == 0 && ky > 0); }

class ModeSet {
 public:
  /// Validates, canonicalizes representatives, and caches per-mode geometry.
  /// Order of `modes` is preserved.
  static ModeSet from_modes(std::vector<Mode> modes) {
    if (modes.empty()) throw std::invalid_argument("empty mode set");
    ModeSet ms;
    for (Mode m : modes) {
      if (m.kx == 0 && m.ky == 0) throw std::invalid_argument("mode set contains k = 0");
      if (!(m.sigma >= 0.0) || !std::isfinite(m.sigma))
        throw std::invalid_argument("mode weight sigma must be finite and >= 0");
      if (!canonical_direction(m.kx, m.ky)) {
        // sin(k.r) k_perp is even under k -> -k, so flipping the
        // representative leaves the dynamics identical.
        m.kx = -m.kx;
        m.ky = -m.ky;
      }
      for (const Mode& prev : ms.modes_)
        if (prev.kx == m.kx && prev.ky == m.ky)
          throw std::invalid_argument("duplicate mode (same k up to sign)");
      ms.modes_.push_back(m);
    }
    ms.finish();
    return ms;
  }

  std::size_t size() const { return modes_.size(); }
  const std::vector<Mode>& modes() const { return modes_; }
  const Mode& mode(std::size_t i) const { return modes_[i]; }

  /// |k_i|
  double knorm(std::size_t i) const { return knorm_[i]; }
  double knorm2(std::size_t i) const { return knorm2_[i]; }
  const Vec2& kvec(std::size_t i) const { return kvec_[i]; }
  /// k_perp / |k|, the (unit) direction of the velocity contribution.
  const Vec2& kperp_unit(std::size_t i) const { return kperp_unit_[i]; }
  double sigma(std::size_t i) const { return modes_[i].sigma; }

  /// Smallest |k| in the set.
  double kmin() const { return kmin_; }

  /// Number of pairwise linearly independent directions (parallel modes such
  /// as (1,0) and (2,0) count once).
  int pairwise_independent_count() const { return pairwise_independent_count_; }

 private:
  ModeSet() = default;

  void finish() {
    const std::size_t n = modes_.size();
    knorm_.resize(n);
    knorm2_.resize(n);
    kvec_.resize(n);
    kperp_unit_.resize(n);
    kmin_ = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      kvec_[i] = Vec2(modes_[i].kx, modes_[i].ky);
      knorm2_[i] = kvec_[i].squaredNorm();
      knorm_[i] = std::sqrt(knorm2_[i]);
      kperp_unit_[i] = perp(kvec_[i]) / knorm_[i];
      kmin_ = std::min(kmin_, knorm_[i]);
    }
    // Greedy class count; exact because parallelism of integer vectors is an
    // exact integer test.
    std::vector<std::size_t> reps;
    for (std::size_t i = 0; i < n; ++i) {
      bool parallel_to_rep = false;
      for (std::size_t r : reps) {
        const long cx = static_cast<long>(modes_[i].kx) * modes_[r].ky -
                        static_cast<long>(modes_[i].ky) * modes_[r].kx;
        if (cx == 0) {
          parallel_to_rep = true;
          break;
        }
      }
      if (!parallel_to_rep) reps.push_back(i);
    }
    pairwise_independent_count_ = static_cast<int>(reps.size());
  }

  std::vector<Mode> modes_;
  std::vector<double> knorm_, knorm2_;
  std::vector<Vec2> kvec_, kperp_unit_;
  double kmin_ = 0.0;
  int pairwise_independent_count_ = 0;
};

/// All lattice modes with 0 < |k| <= k_max, one representative per {k,-k},
/// weighted by shape(|k|).  Ordered by |k| ascending, then lexicographically
/// descending, so the result is reproducible.  `exclude` entries match either
/// sign of k.
inline ModeSet build_mode_set(int k_max, const std::function<double(double)>& shape,
                              const std::vector<std::pair<int, int>>& exclude = {}) {
  if (k_max < 1) throw std::invalid_argument("k_max must be >= 1");
  auto excluded = [&](int kx, int ky) {
    for (auto [ex, ey] : exclude)
      if ((ex == kx && ey == ky) || (ex == -kx && ey == -ky)) return true;
    return false;
  };
  std::vector<Mode> modes;
  for (int kx = -k_max; kx <= k_max; ++kx)
    for (int ky = -k_max; ky <= k_max; ++ky) {
      if (!canonical_direction(kx, ky)) continue;
      const double n2 = double(kx) * kx + double(ky) * ky;
      if (n2 > double(k_max) * k_max) continue;
      if (excluded(kx, ky)) continue;
      modes.push_back({kx, ky, shape(std::sqrt(n2))});
    }
  std::sort(modes.begin(), modes.end(), [](const Mode& a, const Mode& b) {
    const long na = long(a.kx) * a.kx + long(a.ky) * a.ky;
    const long nb = long(b.kx) * b.kx + long(b.ky) * b.ky;
    if (na != nb) return na < nb;
    if (a.kx != b.kx) return a.kx > b.kx;
    return a.ky > b.ky;
  });
  if (modes.empty()) throw std::invalid_argument("empty mode set");
  return ModeSet::from_modes(std::move(modes));
}

/// Sobolev-type weight norm: sqrt(sum_k sigma_k^2 |k|^(-2s)).
inline double sigma_norm(const ModeSet& ms, double s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < ms.size(); ++i)
    acc += ms.sigma(i) * ms.sigma(i) * std::pow(ms.knorm2(i), -s);
  return std::sqrt(acc);
}

/// Plain-text serialization, one "kx ky sigma" line per mode.  Weights are
/// emitted shortest-round-trip, so text -> parse -> text is the identity.
inline std::string mode_set_to_text(const ModeSet& ms) {
  std::string out;
  for (const Mode& m : ms.modes()) {
    out += std::to_string(m.kx);
    out += ' ';
    out += std::to_string(m.ky);
    out += ' ';
    out += format_double(m.sigma);
    out += '\n';
  }
  return out;
}

/// Inverse of mode_set_to_text.  '#' starts a comment; blank lines ignored.
inline ModeSet parse_mode_set(const std::string& text) {
  std::vector<Mode> modes;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string a, b, c, extra;
    if (!(ls >> a)) continue;  // blank
    if (!(ls >> b >> c) || (ls >> extra)) {
      throw std::invalid_argument("mode list line " + std::to_string(lineno) +
                                  ": expected 'kx ky sigma'");
    }
    Mode m;
    if (!parse_int(a, m.kx) || !parse_int(b, m.ky) || !parse_double(c, m.sigma))
      throw std::invalid_argument("mode list line " + std::to_string(lineno) +
                                  ": malformed number");
    modes.push_back(m);
  }
  if (modes.empty()) throw std::invalid_argument("empty mode set");
  return ModeSet::from_modes(std::move(modes));
}

}  // namespace beadspring
