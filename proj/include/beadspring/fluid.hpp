#pragma once

#include <vector>

#include "beadspring/common.hpp"
#include "beadspring/modes.hpp"
#include "beadspring/rng.hpp"

namespace beadspring {

struct FluidParams {
  double lambda = 1.0;  ///< wavenumber scale, 2*pi / period
  double nu = 1.0;      ///< viscosity
  double beta = 1.0;    ///< thermal scale multiplying the mode variances

  void validate() const {
    if (!(lambda > 0.0) || !(nu > 0.0) || !(beta > 0.0))
      throw std::invalid_argument("fluid parameters must be positive");
  }
};

/// Amplitudes of the spectral velocity field.  `z` (sine modes) always has
/// one entry per mode; `y` (cosine modes) is either empty or the same length.
/// Only the full-field and center-of-mass entry points need `y`.
struct FluidState {
  double time = 0.0;
  VecX z;
  VecX y;

  bool has_cosine() const { return y.size() == z.size() && z.size() > 0; }
};

/// Ornstein-Uhlenbeck relaxation rate of z_k: lambda^2 nu |k|^2.
inline double ou_rate(const FluidParams& fp, double knorm2) {
  return fp.lambda * fp.lambda * fp.nu * knorm2;
}

/// Stationary variance of z_k: beta sigma_k^2 / (lambda^2 |k|^2), i.e. the
/// diffusion constant 2 beta nu sigma_k^2 over twice the relaxation rate.
inline double stationary_variance(const FluidParams& fp, const ModeSet& ms, std::size_t i) {
  return fp.beta * ms.sigma(i) * ms.sigma(i) / (fp.lambda * fp.lambda * ms.knorm2(i));
}

/// Draw from the stationary law: each amplitude independent centered Gaussian
/// with the variance above.  `with_cosine` adds an independent y block.
inline FluidState stationary_sample(const ModeSet& ms, const FluidParams& fp, RngStream& rng,
                                    bool with_cosine = false) {
  fp.validate();
  FluidState fs;
  fs.z.resize(static_cast<Eigen::Index>(ms.size()));
  for (std::size_t i = 0; i < ms.size(); ++i)
    fs.z[static_cast<Eigen::Index>(i)] = std::sqrt(stationary_variance(fp, ms, i)) * rng.gaussian();
  if (with_cosine) {
    fs.y.resize(fs.z.size());
    for (std::size_t i = 0; i < ms.size(); ++i)
      fs.y[static_cast<Eigen::Index>(i)] = std::sqrt(stationary_variance(fp, ms, i)) * rng.gaussian();
  }
  return fs;
}

/// Precomputed exact one-step transition factors for a fixed dt: next mean is
/// z*decay, next noise stddev is noise_std.  Exact in distribution for any
/// dt >= 0; no time-discretization error.
struct OuTable {
  double dt = 0.0;
  std::vector<double> decay;
  std::vector<double> noise_std;
};

inline OuTable make_ou_table(const ModeSet& ms, const FluidParams& fp, double dt) {
  if (!(dt >= 0.0)) throw std::invalid_argument("dt must be >= 0");
  fp.validate();
  OuTable t;
  t.dt = dt;
  t.decay.resize(ms.size());
  t.noise_std.resize(ms.size());
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const double d = std::exp(-ou_rate(fp, ms.knorm2(i)) * dt);
    t.decay[i] = d;
    t.noise_std[i] = std::sqrt(stationary_variance(fp, ms, i) * (1.0 - d * d));
  }
  return t;
}

/// Apply one exact transition to z (and y when present).  dt == 0 leaves the
/// state untouched and consumes no randomness.
inline void ou_apply(const OuTable& t, FluidState& fs, RngStream& rng) {
  if (t.dt == 0.0) return;
  const auto n = fs.z.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    fs.z[i] *= t.decay[i];
    if (t.noise_std[i] > 0.0) fs.z[i] += t.noise_std[i] * rng.gaussian();
  }
  if (fs.has_cosine()) {
    for (Eigen::Index i = 0; i < n; ++i) {
      fs.y[i] *= t.decay[i];
      if (t.noise_std[i] > 0.0) fs.y[i] += t.noise_std[i] * rng.gaussian();
    }
  }
  fs.time += t.dt;
}

/// Exact transition over dt using the closed-form mean/variance.
inline void ou_step_exact(FluidState& fs, const FluidParams& fp, const ModeSet& ms, double dt,
                          RngStream& rng) {
  if (static_cast<std::size_t>(fs.z.size()) != ms.size())
    throw std::invalid_argument("fluid state size does not match mode set");
  ou_apply(make_ou_table(ms, fp, dt), fs, rng);
}

/// Difference-velocity forcing at separation r:
///   sum_k sin(lambda k.r) (k_perp/|k|) z_k.
inline Vec2 eval_velocity(const ModeSet& ms, const FluidState& fs, const FluidParams& fp,
                          const Vec2& r) {
  Vec2 u = Vec2::Zero();
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const double s = std::sin(fp.lambda * ms.kvec(i).dot(r));
    u += s * fs.z[static_cast<Eigen::Index>(i)] * ms.kperp_unit(i);
  }
  return u;
}

/// Difference-velocity forcing when the pair's midpoint m is tracked:
///   sum_k [cos(lambda k.m) z_k - sin(lambda k.m) y_k] sin(lambda k.r) k_perp/|k|.
/// Reduces to eval_velocity at m = 0.
inline Vec2 eval_velocity_cm(const ModeSet& ms, const FluidState& fs, const FluidParams& fp,
                             const Vec2& r, const Vec2& m) {
  if (!fs.has_cosine()) throw std::invalid_argument("cosine modes required");
  Vec2 u = Vec2::Zero();
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const double pm = fp.lambda * ms.kvec(i).dot(m);
    const double amp = std::cos(pm) * fs.z[static_cast<Eigen::Index>(i)] -
                       std::sin(pm) * fs.y[static_cast<Eigen::Index>(i)];
    u += std::sin(fp.lambda * ms.kvec(i).dot(r)) * amp * ms.kperp_unit(i);
  }
  return u;
}

/// Velocity of the pair midpoint (average of the two bead velocities):
///   sum_k cos(lambda k.r) [cos(lambda k.m) y_k + sin(lambda k.m) z_k] k_perp/|k|.
inline Vec2 eval_center_velocity(const ModeSet& ms, const FluidState& fs, const FluidParams& fp,
                                 const Vec2& r, const Vec2& m) {
  if (!fs.has_cosine()) throw std::invalid_argument("cosine modes required");
  Vec2 u = Vec2::Zero();
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const double pm = fp.lambda * ms.kvec(i).dot(m);
    const double amp = std::cos(pm) * fs.y[static_cast<Eigen::Index>(i)] +
                       std::sin(pm) * fs.z[static_cast<Eigen::Index>(i)];
    u += std::cos(fp.lambda * ms.kvec(i).dot(r)) * amp * ms.kperp_unit(i);
  }
  return u;
}

/// Full synthesized field at a point x (requires both mode blocks):
///   u(x) = sum_k (cos(lambda k.x) y_k + sin(lambda k.x) z_k) k_perp/|k|.
/// Divergence-free term by term since k_perp is orthogonal to k.
inline Vec2 eval_field(const ModeSet& ms, const FluidState& fs, const FluidParams& fp,
                       const Vec2& x) {
  if (!fs.has_cosine()) throw std::invalid_argument("cosine modes required");
  Vec2 u = Vec2::Zero();
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const double p = fp.lambda * ms.kvec(i).dot(x);
    u += (std::cos(p) * fs.y[static_cast<Eigen::Index>(i)] +
          std::sin(p) * fs.z[static_cast<Eigen::Index>(i)]) *
         ms.kperp_unit(i);
  }
  return u;
}

}  // namespace beadspring
