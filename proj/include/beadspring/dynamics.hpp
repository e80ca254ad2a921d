#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "beadspring/common.hpp"
#include "beadspring/fluid.hpp"
#include "beadspring/modes.hpp"
#include "beadspring/potentials.hpp"
#include "beadspring/rng.hpp"

namespace beadspring {

struct SimParams {
  PotentialSpec potential;
  FluidParams fluid;
  double dt = 1e-3;
  double kappa = 0.0;         ///< optional additive noise on r, covariance 2 kappa^2 dt I
  double r_min_guard = 1e-6;  ///< origin guard radius for singular potentials
  int record_stride = 10;     ///< sampling cadence in steps
  bool track_center = false;  ///< evolve the pair midpoint m alongside r

  // Connector substep tuning.  The substep is RK4 with recursive bisection:
  // a step is bisected when it would cross the origin guard (at most
  // max_guard_halvings times) or when the step-doubling error estimate
  // exceeds substep_rel_tol (needed for starts arbitrarily close to a
  // repulsive singularity, where the force varies over many decades within
  // one dt).
  double substep_rel_tol = 1e-7;
  int max_guard_halvings = 20;
  int max_bisect_depth = 400;

  void validate() const {
    fluid.validate();
    if (!(dt >= 0.0)) throw std::invalid_argument("dt must be >= 0");
    if (!(kappa >= 0.0)) throw std::invalid_argument("kappa must be >= 0");
    if (!(r_min_guard > 0.0)) throw std::invalid_argument("r_min_guard must be > 0");
    if (record_stride < 1) throw std::invalid_argument("record_stride must be >= 1");
    if (!(substep_rel_tol > 0.0)) throw std::invalid_argument("substep_rel_tol must be > 0");
  }
};

struct SystemState {
  double time = 0.0;
  Vec2 r = Vec2::Zero();
  Vec2 m = Vec2::Zero();  ///< pair midpoint; meaningful only when tracked
  FluidState fluid;
};

/// Right-hand side of the connector equation at the current fluid state:
/// -grad Phi(r) plus the spectral forcing (midpoint-dependent form when the
/// center of mass is tracked and cosine modes are present).
inline Vec2 drift_r(const SystemState& st, const SimParams& p, const ModeSet& ms) {
  const Vec2 u = (p.track_center && st.fluid.has_cosine())
                     ? eval_velocity_cm(ms, st.fluid, p.fluid, st.r, st.m)
                     : eval_velocity(ms, st.fluid, p.fluid, st.r);
  return -grad_phi(p.potential, st.r) + u;
}

namespace detail {

/// Deterministic substep state: connector r and (optionally) midpoint m.
struct RmState {
  Vec2 r;
  Vec2 m;
};

struct RmDeriv {
  Vec2 dr;
  Vec2 dm;
};

struct SubstepCtx {
  const SimParams* p;
  const ModeSet* ms;
  const FluidState* fs;  // frozen during the substep
  bool track;
  bool singular;
  double guard;
  long evals = 0;
};

inline RmDeriv rm_drift(const SubstepCtx& c, const RmState& x) {
  RmDeriv d;
  const double s2 = x.r.squaredNorm();
  // Out-of-domain stage values (pole, or an overshoot past the FENE
  // extensibility radius) are reported as infinite so the caller bisects
  // instead of throwing mid-stage.
  bool out_of_domain = c.singular && s2 == 0.0;
  if (c.p->potential.kind == PotentialSpec::Kind::fene_repulsive &&
      s2 >= c.p->potential.R * c.p->potential.R)
    out_of_domain = true;
  if (out_of_domain) {
    d.dr = Vec2(std::numeric_limits<double>::infinity(), 0.0);
    d.dm = Vec2::Zero();
    return d;
  }
  d.dr = -grad_phi(c.p->potential, x.r);
  if (c.track) {
    d.dr += eval_velocity_cm(*c.ms, *c.fs, c.p->fluid, x.r, x.m);
    d.dm = eval_center_velocity(*c.ms, *c.fs, c.p->fluid, x.r, x.m);
  } else {
    d.dr += eval_velocity(*c.ms, *c.fs, c.p->fluid, x.r);
    d.dm = Vec2::Zero();
  }
  return d;
}

struct StepProbe {
  double vmax = 0.0;       // max stage speed, for the cheap accuracy gate
  double rmin = 0.0;       // min |r| over stages and endpoint
  bool finite = true;
};

inline RmState rk4(SubstepCtx& c, const RmState& x, double h, StepProbe& probe) {
  auto absorb = [&](const RmState& s, const RmDeriv& d) {
    probe.vmax = std::max(probe.vmax, std::max(d.dr.norm(), d.dm.norm()));
    probe.rmin = std::min(probe.rmin, s.r.norm());
    probe.finite = probe.finite && finite(d.dr) && finite(d.dm);
  };
  probe.vmax = 0.0;
  probe.rmin = x.r.norm();
  probe.finite = true;
  c.evals += 4;

  const RmDeriv k1 = rm_drift(c, x);
  absorb(x, k1);
  RmState s2{x.r + 0.5 * h * k1.dr, x.m + 0.5 * h * k1.dm};
  const RmDeriv k2 = rm_drift(c, s2);
  absorb(s2, k2);
  RmState s3{x.r + 0.5 * h * k2.dr, x.m + 0.5 * h * k2.dm};
  const RmDeriv k3 = rm_drift(c, s3);
  absorb(s3, k3);
  RmState s4{x.r + h * k3.dr, x.m + h * k3.dm};
  const RmDeriv k4 = rm_drift(c, s4);
  absorb(s4, k4);

  RmState out;
  out.r = x.r + (h / 6.0) * (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr);
  out.m = x.m + (h / 6.0) * (k1.dm + 2.0 * k2.dm + 2.0 * k3.dm + k4.dm);
  probe.rmin = std::min(probe.rmin, out.r.norm());
  probe.finite = probe.finite && finite(out.r) && finite(out.m);
  return out;
}

/// Advance over [0, h]; bisect on guard crossings or accuracy failures.
inline RmState bisect_step(SubstepCtx& c, const RmState& x, double h, int guard_depth,
                           int depth) {
  if (c.evals > 2'000'000 || !(h > 0.0))
    throw std::runtime_error("step size control exhausted");

  const bool start_above_guard = x.r.norm() >= c.guard;
  const double scale = x.r.norm() + 1.0;

  StepProbe probe;
  const RmState one = rk4(c, x, h, probe);
  const bool guard_ok = !c.singular || !start_above_guard || probe.rmin >= c.guard;

  // Fast path: motion small relative to state scale, nothing suspicious.
  // Single-step RK4 relative error is then below (motion/scale)^5/120, far
  // under substep_rel_tol, so the doubling estimate is skipped.
  if (probe.finite && guard_ok && probe.vmax * h <= 0.05 * scale) return one;

  StepProbe probe_a, probe_b;
  const RmState mid = rk4(c, x, 0.5 * h, probe_a);
  const RmState two = rk4(c, mid, 0.5 * h, probe_b);
  const bool guard_ok2 =
      !c.singular || !start_above_guard ||
      (probe.rmin >= c.guard && probe_a.rmin >= c.guard && probe_b.rmin >= c.guard);
  const bool fin = probe.finite && probe_a.finite && probe_b.finite;
  const double err = ((one.r - two.r).norm() + (one.m - two.m).norm()) / scale;

  if (fin && guard_ok2 && err <= c.p->substep_rel_tol) return two;

  if (fin && guard_ok2) {
    // Pure accuracy bisection.
    if (depth >= c.p->max_bisect_depth)
      throw std::runtime_error("step size control exhausted");
  } else if (!fin) {
    if (depth >= c.p->max_bisect_depth)
      throw std::runtime_error("step size control exhausted");
  } else {
    // Guard crossing: retry with halved internal step, bounded count.
    if (guard_depth >= c.p->max_guard_halvings)
      throw std::runtime_error("origin guard exhausted");
    ++guard_depth;
  }
  const RmState left = bisect_step(c, x, 0.5 * h, guard_depth, depth + 1);
  return bisect_step(c, left, 0.5 * h, guard_depth, depth + 1);
}

}  // namespace detail

/// Per-dt cached factors so the hot loop does not recompute exponentials.
struct StepWorkspace {
  double dt = 0.0;
  OuTable half;       // exact OU transition over dt/2
  double kick_std = 0.0;
};

inline StepWorkspace make_step_workspace(const SimParams& p, const ModeSet& ms, double dt) {
  StepWorkspace ws;
  ws.dt = dt;
  ws.half = make_ou_table(ms, p.fluid, 0.5 * dt);
  ws.kick_std = p.kappa > 0.0 ? std::sqrt(2.0 * p.kappa * p.kappa * dt) : 0.0;
  return ws;
}

/// One Strang step of length ws.dt: exact OU half-step on the mode block,
/// RK4 (with guard/accuracy bisection) on (r, m) with the modes frozen at
/// their half-step values, optional additive Gaussian kick on r, exact OU
/// half-step.  dt == 0 leaves the state unchanged.
inline void step_ws(SystemState& st, const StepWorkspace& ws, const SimParams& p,
                    const ModeSet& ms, RngStream& rng) {
  if (ws.dt == 0.0) return;
  if (static_cast<std::size_t>(st.fluid.z.size()) != ms.size())
    throw std::invalid_argument("fluid state size does not match mode set");
  const bool track = p.track_center;
  if (track && !st.fluid.has_cosine()) throw std::invalid_argument("cosine modes required");

  ou_apply(ws.half, st.fluid, rng);

  detail::SubstepCtx ctx;
  ctx.p = &p;
  ctx.ms = &ms;
  ctx.fs = &st.fluid;
  ctx.track = track;
  ctx.singular = p.potential.is_singular();
  ctx.guard = p.r_min_guard;
  detail::RmState x{st.r, st.m};
  x = detail::bisect_step(ctx, x, ws.dt, 0, 0);
  st.r = x.r;
  st.m = x.m;

  if (ws.kick_std > 0.0) st.r += ws.kick_std * rng.gaussian_vec2();

  ou_apply(ws.half, st.fluid, rng);
  st.time += ws.dt;
  st.fluid.time = st.time;
}

/// Convenience single step at p.dt.
inline void step(SystemState& st, const SimParams& p, const ModeSet& ms, RngStream& rng) {
  p.validate();
  step_ws(st, make_step_workspace(p, ms, p.dt), p, ms, rng);
}

struct Trajectory {
  std::vector<double> times;
  std::vector<SystemState> states;  ///< at the sampled times
  double min_r = std::numeric_limits<double>::infinity();  ///< over every step endpoint
  std::uint64_t seed = 0;           ///< key of the driving stream
};

/// Integrate from x0 for `horizon` time units at p.dt (final step shortened
/// to land exactly on the horizon).  Records every record_stride-th step plus
/// the first and last states.  horizon == 0 yields the single initial record.
inline Trajectory simulate(const SystemState& x0, const SimParams& p, const ModeSet& ms,
                           double horizon, RngStream rng) {
  p.validate();
  if (!(horizon >= 0.0)) throw std::invalid_argument("horizon must be >= 0");
  if (static_cast<std::size_t>(x0.fluid.z.size()) != ms.size())
    throw std::invalid_argument("fluid state size does not match mode set");
  if (p.track_center && !x0.fluid.has_cosine())
    throw std::invalid_argument("cosine modes required");

  Trajectory traj;
  traj.seed = rng.key();
  SystemState st = x0;
  traj.min_r = st.r.norm();
  traj.times.push_back(st.time);
  traj.states.push_back(st);
  if (horizon == 0.0 || p.dt == 0.0) return traj;

  const long n_full = static_cast<long>(std::floor(horizon / p.dt + 1e-9));
  const double rem = horizon - static_cast<double>(n_full) * p.dt;
  const StepWorkspace ws = make_step_workspace(p, ms, p.dt);

  for (long i = 1; i <= n_full; ++i) {
    step_ws(st, ws, p, ms, rng);
    traj.min_r = std::min(traj.min_r, st.r.norm());
    if (i % p.record_stride == 0 && !(i == n_full && rem <= 1e-12 * p.dt)) {
      traj.times.push_back(st.time);
      traj.states.push_back(st);
    }
  }
  if (rem > 1e-12 * p.dt) {
    const StepWorkspace ws_rem = make_step_workspace(p, ms, rem);
    step_ws(st, ws_rem, p, ms, rng);
    traj.min_r = std::min(traj.min_r, st.r.norm());
  }
  traj.times.push_back(st.time);
  traj.states.push_back(st);
  return traj;
}

struct TrajectorySummary {
  int index = 0;
  std::uint64_t seed = 0;
  double final_time = 0.0;
  Vec2 final_r = Vec2::Zero();
  double final_r_norm = 0.0;
  double final_z_norm = 0.0;
  double min_r = 0.0;
  double mean_r_norm2 = 0.0;  ///< average |r|^2 over the recorded samples
};

using InitialSampler = std::function<SystemState(RngStream&)>;

/// Independent trajectories i = 0..n-1, each driven by the child stream
/// master.child(i) (initial-state draws included), so the result does not
/// depend on execution order and reruns are byte-identical.
inline std::vector<TrajectorySummary> run_ensemble(const InitialSampler& sample_initial,
                                                   const SimParams& p, const ModeSet& ms,
                                                   double horizon, std::uint64_t master_seed,
                                                   int n) {
  if (n < 1) throw std::invalid_argument("ensemble size must be >= 1");
  RngStream master(master_seed);
  std::vector<TrajectorySummary> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    RngStream stream = master.child(static_cast<std::uint64_t>(i));
    const SystemState x0 = sample_initial(stream);
    const Trajectory traj = simulate(x0, p, ms, horizon, stream);
    TrajectorySummary s;
    s.index = i;
    s.seed = traj.seed;
    const SystemState& last = traj.states.back();
    s.final_time = last.time;
    s.final_r = last.r;
    s.final_r_norm = last.r.norm();
    s.final_z_norm = last.fluid.z.norm();
    s.min_r = traj.min_r;
    double acc = 0.0;
    for (const SystemState& rec : traj.states) acc += rec.r.squaredNorm();
    s.mean_r_norm2 = acc / static_cast<double>(traj.states.size());
    out[static_cast<std::size_t>(i)] = s;
  }
  return out;
}

inline std::vector<TrajectorySummary> run_ensemble(const SystemState& x0, const SimParams& p,
                                                   const ModeSet& ms, double horizon,
                                                   std::uint64_t master_seed, int n) {
  return run_ensemble([&x0](RngStream&) { return x0; }, p, ms, horizon, master_seed, n);
}

}  // namespace beadspring
