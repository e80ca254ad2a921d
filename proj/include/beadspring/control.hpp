#pragma once

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "beadspring/common.hpp"
#include "beadspring/fluid.hpp"
#include "beadspring/modes.hpp"
#include "beadspring/potentials.hpp"
#include "beadspring/rng.hpp"

namespace beadspring {

/// The 2xN matrix mapping mode amplitudes to the connector forcing: column j
/// is sin(lambda k_j . r) k_j_perp / |k_j|.  rank2 is decided from the two
/// singular values s1 >= s2 (computed exactly from the 2x2 Gram matrix):
/// s2 must clear both a relative cutoff 1e-10 * s1 and an absolute floor
/// 1e-14 (every entry is bounded by 1 in modulus, so an all-zero matrix with
/// roundoff-sized entries must not count as rank 2).
struct StokesMatrix {
  Mat2X entries;
  Vec2 r = Vec2::Zero();
  bool rank2 = false;
  double s1 = 0.0;
  double s2 = 0.0;
};

namespace detail {
inline void classify_rank(StokesMatrix& S) {
  // SVD of the matrix itself, not eigenvalues of the Gram: the Gram route
  // squares the condition number and cannot resolve s2/s1 near the cutoff.
  const Eigen::JacobiSVD<Mat2X> svd(S.entries);
  const auto& sv = svd.singularValues();
  S.s1 = sv.size() > 0 ? sv(0) : 0.0;
  S.s2 = sv.size() > 1 ? sv(1) : 0.0;
  S.rank2 = S.s2 > std::max(1e-10 * S.s1, 1e-14);
}
}  // namespace detail

inline StokesMatrix stokes_matrix(const ModeSet& ms, const FluidParams& fp, const Vec2& r) {
  StokesMatrix S;
  S.r = r;
  S.entries.resize(2, static_cast<Eigen::Index>(ms.size()));
  for (std::size_t j = 0; j < ms.size(); ++j)
    S.entries.col(static_cast<Eigen::Index>(j)) =
        std::sin(fp.lambda * ms.kvec(j).dot(r)) * ms.kperp_unit(j);
  detail::classify_rank(S);
  return S;
}

/// Wrap an arbitrary 2xN matrix (synthetic test route).
inline StokesMatrix stokes_from_entries(const Mat2X& entries) {
  StokesMatrix S;
  S.entries = entries;
  detail::classify_rank(S);
  return S;
}

/// (S S*)^-1 via the explicit 2x2 adjugate: with rows S1, S2,
///   [[|S2|^2, -S1.S2], [-S1.S2, |S1|^2]] / det(S S*).
inline Mat2 gram_inverse(const StokesMatrix& S) {
  if (!S.rank2) throw std::runtime_error("degenerate Stokes matrix");
  const double a = S.entries.row(0).squaredNorm();
  const double d = S.entries.row(1).squaredNorm();
  const double b = S.entries.row(0).dot(S.entries.row(1));
  const double det = a * d - b * b;
  Mat2 g;
  g << d, -b, -b, a;
  return g / det;
}

/// Minimal-norm solution of S z = b: z = S* (S S*)^-1 b, the Moore-Penrose
/// pseudoinverse applied to b.
inline VecX min_norm_solve(const StokesMatrix& S, const Vec2& b) {
  return S.entries.transpose() * (gram_inverse(S) * b);
}

/// A unit-speed piecewise-linear path inside the annulus eps1 <= |r| <=
/// sqrt(2) R0, at most two segments.  total_time equals the total arclength.
struct PathPlan {
  Vec2 start = Vec2::Zero();
  std::vector<std::pair<Vec2, Vec2>> segments;
  double total_time = 0.0;
  double eps1 = 0.0;
  double R0 = 0.0;
};

namespace detail {
inline double segment_min_dist_to_origin(const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double len2 = d.squaredNorm();
  if (len2 == 0.0) return a.norm();
  const double t = std::clamp(-a.dot(d) / len2, 0.0, 1.0);
  return (a + t * d).norm();
}
}  // namespace detail

/// Connect r0 to r_star inside the annulus: a single segment when it clears
/// the inner circle, otherwise two segments via a waypoint at radius
/// (eps1 + sqrt(2) R0)/2 on the angular bisector of the endpoints (rotated
/// 90 degrees from r0 when the endpoints are antipodal).  Throws when even
/// the two-segment detour leaves the annulus (possible for nearly antipodal
/// endpoints hugging the inner circle).
inline PathPlan plan_path(const Vec2& r0, const Vec2& r_star, double eps1, double R0) {
  const double outer = std::sqrt(2.0) * R0;
  if (!(eps1 > 0.0) || !(eps1 < outer))
    throw std::invalid_argument("annulus requires 0 < eps1 < sqrt(2) R0");
  auto in_annulus = [&](const Vec2& x) {
    const double s = x.norm();
    return s >= eps1 * (1.0 - 1e-12) && s <= outer * (1.0 + 1e-12);
  };
  if (!in_annulus(r0) || !in_annulus(r_star))
    throw std::invalid_argument("endpoint outside annulus");

  PathPlan plan;
  plan.start = r0;
  plan.eps1 = eps1;
  plan.R0 = R0;
  if ((r_star - r0).norm() == 0.0) return plan;

  if (detail::segment_min_dist_to_origin(r0, r_star) >= eps1) {
    plan.segments.emplace_back(r0, r_star);
    plan.total_time = (r_star - r0).norm();
    return plan;
  }

  Vec2 bisector = r0.normalized() + r_star.normalized();
  if (bisector.norm() < 1e-12) bisector = perp(r0.normalized());
  const Vec2 waypoint = 0.5 * (eps1 + outer) * bisector.normalized();
  if (detail::segment_min_dist_to_origin(r0, waypoint) < eps1 ||
      detail::segment_min_dist_to_origin(waypoint, r_star) < eps1)
    throw std::runtime_error("two-segment plan violates annulus");
  plan.segments.emplace_back(r0, waypoint);
  plan.segments.emplace_back(waypoint, r_star);
  plan.total_time = (waypoint - r0).norm() + (r_star - waypoint).norm();
  return plan;
}

/// Position on the plan at path time t (unit speed), clamped to the ends.
inline Vec2 plan_point(const PathPlan& plan, double t) {
  if (plan.segments.empty() || t <= 0.0) return plan.start;
  for (const auto& [a, b] : plan.segments) {
    const double len = (b - a).norm();
    if (t <= len) return a + (t / len) * (b - a);
    t -= len;
  }
  return plan.segments.back().second;
}

/// Unit tangent of the active segment (right-continuous at the junction).
inline Vec2 plan_velocity(const PathPlan& plan, double t) {
  if (plan.segments.empty()) return Vec2::Zero();
  if (t < 0.0) t = 0.0;
  for (const auto& [a, b] : plan.segments) {
    const double len = (b - a).norm();
    if (t < len) return (b - a) / len;
    t -= len;
  }
  const auto& [a, b] = plan.segments.back();
  return (b - a) / (b - a).norm();
}

/// Sampled open-loop control, piecewise-linear in t.  Junction knots are
/// duplicated (same time, the amplitudes of either segment) and control_value
/// is right-continuous there.  sup_norm is compared against the configured
/// good-set cap M = N^3 (1 + max |grad Phi| on the annulus); an excess is a
/// surfaced warning, not an error.
struct ControlSignal {
  std::vector<double> times;
  std::vector<VecX> zs;
  double sup_norm = 0.0;
  double bound_M = 0.0;
  bool exceeds_bound = false;
};

/// max |Phi'(s)| over the annulus radii, scanned on a dense grid.
inline double annulus_grad_bound(const PotentialSpec& spec, double eps1, double R0,
                                 int grid_n = 4096) {
  const double outer = std::sqrt(2.0) * R0;
  double worst = 0.0;
  for (int i = 0; i < grid_n; ++i) {
    const double s = eps1 + (outer - eps1) * i / double(grid_n - 1);
    worst = std::max(worst, std::abs(dphi_radial(spec, s)));
  }
  return worst;
}

using GradFn = std::function<Vec2(const Vec2&)>;

/// Core synthesis against an arbitrary gradient field: sample
/// z(t) = S(Gamma(t))^dagger (Gamma'(t) + grad(Gamma(t))) along the plan.
inline ControlSignal synthesize_control_grad(const PathPlan& plan, const GradFn& grad,
                                             const ModeSet& ms, const FluidParams& fp,
                                             int samples_per_unit = 256, double bound_M = 0.0) {
  if (samples_per_unit < 1) throw std::invalid_argument("samples_per_unit must be >= 1");
  ControlSignal sig;
  sig.bound_M = bound_M;

  auto emit = [&](double t, const Vec2& gamma, const Vec2& gamma_dot) {
    const StokesMatrix S = stokes_matrix(ms, fp, gamma);
    if (!S.rank2)
      throw std::runtime_error("degenerate Stokes matrix at t=" + format_double(t));
    const Vec2 b = gamma_dot + grad(gamma);
    VecX z = min_norm_solve(S, b);
    sig.sup_norm = std::max(sig.sup_norm, z.norm());
    sig.times.push_back(t);
    sig.zs.push_back(std::move(z));
  };

  if (plan.segments.empty()) {
    emit(0.0, plan.start, Vec2::Zero());
  } else {
    double t0 = 0.0;
    for (const auto& [a, b] : plan.segments) {
      const double len = (b - a).norm();
      const Vec2 dir = (b - a) / len;
      const int n = std::max(1, static_cast<int>(std::ceil(len * samples_per_unit)));
      for (int i = 0; i <= n; ++i) {
        const double s = len * i / double(n);
        emit(t0 + s, a + s * dir, dir);
      }
      t0 += len;
    }
  }
  sig.exceeds_bound = sig.bound_M > 0.0 && sig.sup_norm > sig.bound_M;
  return sig;
}

inline ControlSignal synthesize_control(const PathPlan& plan, const PotentialSpec& spec,
                                        const ModeSet& ms, const FluidParams& fp,
                                        int samples_per_unit = 256) {
  const double n = static_cast<double>(ms.size());
  const double M = n * n * n * (1.0 + annulus_grad_bound(spec, plan.eps1, plan.R0));
  return synthesize_control_grad(
      plan, [&spec](const Vec2& x) { return grad_phi(spec, x); }, ms, fp, samples_per_unit, M);
}

/// Piecewise-linear interpolation, right-continuous at duplicated knots,
/// clamped outside the sampled range.
inline VecX control_value(const ControlSignal& sig, double t) {
  if (sig.times.empty()) throw std::invalid_argument("empty control signal");
  if (t <= sig.times.front()) return sig.zs.front();
  if (t >= sig.times.back()) return sig.zs.back();
  // First knot with time > t; the knot before it governs the interval.
  const auto it = std::upper_bound(sig.times.begin(), sig.times.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - sig.times.begin());
  const std::size_t lo = hi - 1;
  const double t0 = sig.times[lo], t1 = sig.times[hi];
  if (t1 == t0) return sig.zs[hi];
  const double w = (t - t0) / (t1 - t0);
  return (1.0 - w) * sig.zs[lo] + w * sig.zs[hi];
}

/// Replay the control through the deterministic connector ODE
///   dr/dt = -grad Phi(r) + S(r) (z(t) + delta z(t)),
/// with a perturbation delta z of sup norm tube_eps (piecewise-linear
/// interpolation of random unit directions drawn at the knots; convexity
/// keeps the interpolant inside the tube).  Returns the sup over knots of
/// |Gamma(t) - r(t)|.  With the same stream, halving tube_eps halves the
/// perturbation path exactly, which is what the linearity check exploits.
inline double verify_tracking(const ControlSignal& sig, const PathPlan& plan,
                              const PotentialSpec& spec, const ModeSet& ms,
                              const FluidParams& fp, double tube_eps, RngStream rng) {
  if (sig.times.empty()) throw std::invalid_argument("empty control signal");
  const Eigen::Index nz = sig.zs.front().size();

  std::vector<VecX> units(sig.times.size());
  for (auto& u : units) {
    u = rng.gaussian_vec(static_cast<std::size_t>(nz));
    const double s = u.norm();
    if (s > 0.0) u /= s;
  }

  // Interval-local interpolation: within knot interval j the control (and
  // the tube perturbation) is the line between that interval's own knots.
  // Evaluating a global right-continuous lookup at a junction time would
  // feed the *next* segment's amplitudes to the last stage of the previous
  // interval and degrade the replay to first order in the knot spacing.
  auto deriv = [&](std::size_t j, double t, const Vec2& r) -> Vec2 {
    const double t0 = sig.times[j], t1 = sig.times[j + 1];
    const double w = (t - t0) / (t1 - t0);
    VecX z = (1.0 - w) * sig.zs[j] + w * sig.zs[j + 1];
    if (tube_eps > 0.0) z += tube_eps * ((1.0 - w) * units[j] + w * units[j + 1]);
    return -grad_phi(spec, r) + stokes_matrix(ms, fp, r).entries * z;
  };

  // Local Lipschitz estimate of the right-hand side at knot j: the radial
  // Hessian eigenvalues |Phi''| and |Phi'|/s (Phi'' by central difference)
  // plus the spectral term's r-derivative bound lambda sum |k||z_k|.
  auto stiffness = [&](std::size_t j) {
    const double s = std::max(plan_point(plan, sig.times[j]).norm(), 1e-12);
    const double d = 1e-4 * s;
    const double ddphi = (dphi_radial(spec, s + d) - dphi_radial(spec, s - d)) / (2.0 * d);
    double lip = std::abs(ddphi) + std::abs(dphi_radial(spec, s)) / s;
    for (std::size_t k = 0; k < ms.size(); ++k)
      lip += fp.lambda * ms.knorm(k) * std::abs(sig.zs[j][static_cast<Eigen::Index>(k)]);
    return lip;
  };

  Vec2 r = plan.start;
  double sup_err = (r - plan_point(plan, sig.times.front())).norm();
  for (std::size_t j = 0; j + 1 < sig.times.size(); ++j) {
    const double ta = sig.times[j], tb = sig.times[j + 1];
    if (tb <= ta) continue;
    // RK4 substeps sized so h * Lipschitz stays well inside the stability
    // region even when the potential is stiff near the annulus edge.
    const double lip = std::max(stiffness(j), stiffness(j + 1));
    const int n_sub = std::clamp(static_cast<int>(std::ceil((tb - ta) * lip / 0.5)), 2, 4096);
    const double h = (tb - ta) / n_sub;
    double t = ta;
    for (int sub = 0; sub < n_sub; ++sub) {
      const Vec2 k1 = deriv(j, t, r);
      const Vec2 k2 = deriv(j, t + 0.5 * h, r + 0.5 * h * k1);
      const Vec2 k3 = deriv(j, t + 0.5 * h, r + 0.5 * h * k2);
      const Vec2 k4 = deriv(j, t + h, r + h * k3);
      r += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += h;
    }
    sup_err = std::max(sup_err, (r - plan_point(plan, tb)).norm());
  }
  return sup_err;
}

}  // namespace beadspring
