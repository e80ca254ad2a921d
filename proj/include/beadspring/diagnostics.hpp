#pragma once

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "beadspring/control.hpp"
#include "beadspring/dynamics.hpp"

namespace beadspring {

/// Constants of the quadratic-with-floor Lyapunov function
///   V(r, z) = |r|^2 v R0^2 + eta ||z||^2
/// and of its expected-drift envelope  E V(t) <= e^(-a t) V(0) + C2/a.
struct LyapunovParams {
  double R0 = 0.0;
  double eta = 0.0;
  double delta = 0.0;
  double a = 0.0;
  double C1 = 0.0;
  double C2 = 0.0;
  double k_min = 0.0;
  double gamma = 0.0;  ///< coercivity constant the envelope was derived for
};

/// eta is the minimal admissible z-weight for coercivity constant gamma:
///   eta = [gamma (1 - delta) (lambda^2 nu k_min^2 - delta gamma)]^-1,
/// requiring delta < min(1, nu k_min^2 lambda^2 / gamma).  The decay rate is
/// a = min(delta gamma, 2 lambda^2 nu k_min^2) and the offsets are
/// C1 = eta beta nu lambda^2 ||sigma||_0^2, C2 = 2 lambda^2 nu k_min^2 R0^2 + C1.
inline LyapunovParams choose_lyapunov_params(double gamma, const FluidParams& fp,
                                             const ModeSet& ms, double R0, double delta) {
  fp.validate();
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
  if (!(R0 > 0.0)) throw std::invalid_argument("R0 must be > 0");
  const double k2 = ms.kmin() * ms.kmin();
  const double bound = std::min(1.0, fp.nu * k2 * fp.lambda * fp.lambda / gamma);
  if (!(delta > 0.0) || !(delta < bound))
    throw std::invalid_argument("delta must lie in (0, " + format_double(bound) +
                                "), the admissible range for these parameters");
  LyapunovParams lp;
  lp.R0 = R0;
  lp.delta = delta;
  lp.gamma = gamma;
  lp.k_min = ms.kmin();
  const double rate2 = fp.lambda * fp.lambda * fp.nu * k2;
  lp.eta = 1.0 / (gamma * (1.0 - delta) * (rate2 - delta * gamma));
  lp.a = std::min(delta * gamma, 2.0 * rate2);
  const double s0 = sigma_norm(ms, 0.0);
  lp.C1 = lp.eta * fp.beta * fp.nu * fp.lambda * fp.lambda * s0 * s0;
  lp.C2 = 2.0 * rate2 * R0 * R0 + lp.C1;
  return lp;
}

inline double lyapunov_value(const SystemState& st, const LyapunovParams& lp) {
  double z2 = st.fluid.z.squaredNorm();
  if (st.fluid.has_cosine()) z2 += st.fluid.y.squaredNorm();
  return std::max(st.r.squaredNorm(), lp.R0 * lp.R0) + lp.eta * z2;
}

// ---------------------------------------------------------------------------
// Expected-drift estimation
// ---------------------------------------------------------------------------

struct DriftRecord {
  double v0 = 0.0;        ///< V at the initial state
  double ev_hat = 0.0;    ///< Monte Carlo estimate of E[V(X(t))]
  double se = 0.0;        ///< standard error of ev_hat
  double envelope = 0.0;  ///< e^(-a t) v0 + (C2/a)(1 - e^(-a t))
  bool violates_envelope = false;  ///< ev_hat > envelope + 3 se
  bool in_fit = false;             ///< used by the affine regression
};

struct DriftReport {
  double c0_hat = 0.0;
  double c1_hat = 0.0;
  double se_c0 = 0.0;
  double t = 0.0;
  int n = 0;
  int envelope_violations = 0;
  std::vector<DriftRecord> records;
};

/// Estimates E[V(X(t))] from each initial state by n-trajectory Monte Carlo
/// and fits the affine envelope E[V] ~ c0 V(0) + c1 by least squares.  Only
/// initials with V(0) > 2 C2/a enter the fit (identifiability); every initial
/// is checked against the integrated proof envelope.
inline DriftReport estimate_drift(const std::vector<SystemState>& initials, const SimParams& p,
                                  const ModeSet& ms, const LyapunovParams& lp, double t, int n,
                                  std::uint64_t master_seed) {
  if (initials.size() < 2) throw std::invalid_argument("need at least two initial states");
  if (n < 1) throw std::invalid_argument("need n >= 1 trajectories per initial");
  if (!(t >= 0.0)) throw std::invalid_argument("t must be >= 0");

  DriftReport rep;
  rep.t = t;
  rep.n = n;
  RngStream master(master_seed);
  const double decay = std::exp(-lp.a * t);

  for (std::size_t i = 0; i < initials.size(); ++i) {
    RngStream per_initial = master.child(i);
    DriftRecord rec;
    rec.v0 = lyapunov_value(initials[i], lp);
    // Welford's update: the running mean of a constant sequence is exact,
    // which makes the t=0 identity (c0=1, c1=0) hold to the bit.
    double mean = 0.0, m2 = 0.0;
    for (int j = 0; j < n; ++j) {
      const Trajectory traj =
          simulate(initials[i], p, ms, t, per_initial.child(static_cast<std::uint64_t>(j)));
      const double v = lyapunov_value(traj.states.back(), lp);
      const double d = v - mean;
      mean += d / (j + 1);
      m2 += d * (v - mean);
    }
    rec.ev_hat = mean;
    rec.se = n > 1 ? std::sqrt(std::max(0.0, m2) / n / (n - 1.0)) : 0.0;
    rec.envelope = decay * rec.v0 + (lp.C2 / lp.a) * (1.0 - decay);
    rec.violates_envelope = rec.ev_hat > rec.envelope + 3.0 * rec.se;
    if (rec.violates_envelope) ++rep.envelope_violations;
    rec.in_fit = rec.v0 > 2.0 * lp.C2 / lp.a;
    rep.records.push_back(rec);
  }

  double sx = 0, sy = 0;
  int m = 0;
  for (const auto& r : rep.records)
    if (r.in_fit) {
      sx += r.v0;
      sy += r.ev_hat;
      ++m;
    }
  if (m < 2)
    throw std::invalid_argument("need at least two initials with V > 2 C2/a for the fit");
  const double xbar = sx / m, ybar = sy / m;
  double sxx = 0, sxy = 0;
  for (const auto& r : rep.records)
    if (r.in_fit) {
      sxx += (r.v0 - xbar) * (r.v0 - xbar);
      sxy += (r.v0 - xbar) * (r.ev_hat - ybar);
    }
  rep.c0_hat = sxy / sxx;
  rep.c1_hat = ybar - rep.c0_hat * xbar;
  double ss_res = 0;
  for (const auto& r : rep.records)
    if (r.in_fit) {
      const double resid = r.ev_hat - (rep.c0_hat * r.v0 + rep.c1_hat);
      ss_res += resid * resid;
    }
  rep.se_c0 = m > 2 ? std::sqrt(ss_res / (m - 2.0) / sxx) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Hookean collapse
// ---------------------------------------------------------------------------

struct HookeanDecayReport {
  double empirical_rate = 0.0;   ///< ensemble median of log |r(T)|^2 / T
  double lln_threshold = 0.0;    ///< -2 gamma + 2 lambda sqrt(beta) ||sigma||_0
  bool envelope_ok = true;       ///< pathwise bound held on every trajectory
  double worst_envelope_ratio = 0.0;  ///< max over runs/times of |r|^2 / envelope
  double max_final_ratio = 0.0;  ///< max over runs of |r(T)| / |r(0)|
  int n = 0;
  double horizon = 0.0;
};

/// Simulates n Hookean trajectories and checks the proof's pathwise envelope
///   |r(t)|^2 <= |r(0)|^2 exp(-2 gamma t + 2 lambda Int_0^t Sum_k |k||z_k|)
/// at every step (trapezoid integral of the recorded mode path, relative
/// slack 1e-6).  The envelope is an exact pathwise bound, not a statistic:
/// one violating step on one run fails the check.
inline HookeanDecayReport hookean_decay_test(double gamma, const ModeSet& ms,
                                             const FluidParams& fp, double horizon, int n,
                                             std::uint64_t seed, double dt = 1e-3,
                                             double r0_norm = 1.0) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
  if (!(horizon > 0.0) || !(dt > 0.0)) throw std::invalid_argument("need horizon, dt > 0");
  if (n < 1) throw std::invalid_argument("need n >= 1");

  SimParams p;
  p.potential = PotentialSpec::hookean(gamma);
  p.fluid = fp;
  p.dt = dt;
  p.validate();

  HookeanDecayReport rep;
  rep.n = n;
  rep.horizon = horizon;
  const double s0 = sigma_norm(ms, 0.0);
  rep.lln_threshold = -2.0 * gamma + 2.0 * fp.lambda * std::sqrt(fp.beta) * s0;

  auto weighted_z_sum = [&](const VecX& z) {
    double acc = 0.0;
    for (std::size_t k = 0; k < ms.size(); ++k)
      acc += ms.knorm(k) * std::abs(z[static_cast<Eigen::Index>(k)]);
    return acc;
  };

  const long steps = static_cast<long>(std::floor(horizon / dt + 1e-9));
  RngStream master(seed);
  std::vector<double> rates(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    RngStream rng = master.child(static_cast<std::uint64_t>(i));
    SystemState st;
    st.r = Vec2(r0_norm, 0.0);
    st.fluid = stationary_sample(ms, fp, rng);
    const double log_r02 = 2.0 * std::log(r0_norm);

    const StepWorkspace ws = make_step_workspace(p, ms, dt);
    double integral = 0.0;
    double prev_f = weighted_z_sum(st.fluid.z);
    auto advance = [&](const StepWorkspace& w, double h) {
      step_ws(st, w, p, ms, rng);
      const double f = weighted_z_sum(st.fluid.z);
      integral += 0.5 * h * (prev_f + f);
      prev_f = f;
      // Compare in log space; both sides underflow in tandem otherwise.
      const double log_env = log_r02 - 2.0 * gamma * st.time + 2.0 * fp.lambda * integral;
      const double log_r2 = 2.0 * std::log(st.r.norm());
      const double ratio = std::exp(log_r2 - log_env);
      rep.worst_envelope_ratio = std::max(rep.worst_envelope_ratio, ratio);
      if (ratio > 1.0 + 1e-6) rep.envelope_ok = false;
    };
    for (long step_i = 1; step_i <= steps; ++step_i) advance(ws, dt);
    const double rem = horizon - static_cast<double>(steps) * dt;
    if (rem > 1e-12 * dt) advance(make_step_workspace(p, ms, rem), rem);
    rates[static_cast<std::size_t>(i)] = 2.0 * std::log(st.r.norm()) / st.time;
    rep.max_final_ratio = std::max(rep.max_final_ratio, st.r.norm() / r0_norm);
  }
  std::sort(rates.begin(), rates.end());
  rep.empirical_rate = rates[static_cast<std::size_t>(n) / 2];
  return rep;
}

// ---------------------------------------------------------------------------
// Escape from the repulsive core
// ---------------------------------------------------------------------------

struct EscapeStats {
  double eps = 0.0;
  double M = 0.0;        ///< initial-fluid cap: ||z(0)|| < M
  double M_tilde = 0.0;  ///< settled-fluid threshold in the escape event
  int n = 0;
  double p_escape_unit_time = 0.0;  ///< fraction with tau <= 1
  double se_p = 0.0;
  double wilson_lower = 0.0;  ///< 95% Wilson lower bound on the fraction
  double max_escape_time = 0.0;
  double max_ball_exit_time = 0.0;
  bool all_escaped = true;  ///< every run left the eps-ball by the horizon
  bool all_joint = true;    ///< every run achieved the joint event too
  double min_r_overall = 0.0;
};

/// Monte Carlo escape statistics from the repulsive core: initial radii are
/// log-uniform in [1e-4 eps, eps], the initial fluid state is stationary
/// conditioned on ||z|| < M, and tau is the first step time with |r| >= eps
/// and ||z|| < M_tilde.  The potential must certify small-r repulsion with
/// eps inside the certified range.
inline EscapeStats escape_time_stats(const PotentialSpec& spec, const ModeSet& ms,
                                     const FluidParams& fp, double eps, double M,
                                     double M_tilde, int n, std::uint64_t seed,
                                     double horizon = 10.0, double dt = 1e-3) {
  if (!(eps > 0.0) || !(M > 0.0) || !(M_tilde > 0.0))
    throw std::invalid_argument("eps, M, M_tilde must be > 0");
  if (n < 1) throw std::invalid_argument("need n >= 1");
  const double probe = spec.kind == PotentialSpec::Kind::fene_repulsive
                           ? 0.95 * spec.R
                           : std::max(1.0, 2.0 * eps);
  const PotentialCertificate cert = verify_assumptions(spec, probe);
  if (!cert.passed_small_r || eps > cert.eps0 * (1.0 + 1e-9))
    throw std::invalid_argument("eps exceeds the certified repulsion radius eps0 = " +
                                format_double(cert.eps0));

  SimParams p;
  p.potential = spec;
  p.fluid = fp;
  p.dt = dt;
  p.validate();

  EscapeStats st;
  st.eps = eps;
  st.M = M;
  st.M_tilde = M_tilde;
  st.n = n;
  st.min_r_overall = std::numeric_limits<double>::infinity();

  RngStream master(seed);
  const long steps = static_cast<long>(std::floor(horizon / dt + 1e-9));
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    RngStream rng = master.child(static_cast<std::uint64_t>(i));
    SystemState x;
    const double u = rng.uniform();
    const double s0 = 1e-4 * eps * std::pow(1e4, u);  // log-uniform in [1e-4 eps, eps]
    const double ang = kTwoPi * rng.uniform();
    x.r = Vec2(s0 * std::cos(ang), s0 * std::sin(ang));
    int tries = 0;
    do {
      x.fluid = stationary_sample(ms, fp, rng);
      if (++tries > 10000)
        throw std::runtime_error("could not sample a stationary fluid state below M");
    } while (x.fluid.z.norm() >= M);

    double tau = -1.0, ball_exit = -1.0;
    double min_r = x.r.norm();
    const StepWorkspace ws = make_step_workspace(p, ms, dt);
    if (x.r.norm() >= eps) ball_exit = 0.0;
    if (ball_exit == 0.0 && x.fluid.z.norm() < M_tilde) tau = 0.0;
    for (long k = 1; k <= steps && tau < 0.0; ++k) {
      step_ws(x, ws, p, ms, rng);
      min_r = std::min(min_r, x.r.norm());
      if (x.r.norm() >= eps) {
        if (ball_exit < 0.0) ball_exit = x.time;
        if (x.fluid.z.norm() < M_tilde) tau = x.time;
      }
    }
    st.min_r_overall = std::min(st.min_r_overall, min_r);
    if (ball_exit < 0.0) st.all_escaped = false;
    if (tau < 0.0)
      st.all_joint = false;
    else {
      st.max_escape_time = std::max(st.max_escape_time, tau);
      if (tau <= 1.0) ++hits;
    }
    if (ball_exit >= 0.0) st.max_ball_exit_time = std::max(st.max_ball_exit_time, ball_exit);
  }

  const double phat = double(hits) / n;
  st.p_escape_unit_time = phat;
  st.se_p = std::sqrt(phat * (1.0 - phat) / n);
  const double z = 1.96;
  st.wilson_lower = (phat + z * z / (2.0 * n) -
                     z * std::sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * double(n) * n))) /
                    (1.0 + z * z / n);
  if (st.wilson_lower < 0.0) st.wilson_lower = 0.0;
  return st;
}

/// Bad-set radius estimate: the largest candidate eps whose unit-time escape
/// probability is resolvably positive at the reference thresholds M = R0,
/// M_tilde = sqrt(2) R0 / eta.
inline double estimate_eps1(const PotentialSpec& spec, const ModeSet& ms, const FluidParams& fp,
                            const LyapunovParams& lp, const std::vector<double>& candidates,
                            int n, std::uint64_t seed) {
  const double M = lp.R0;
  const double M_tilde = std::sqrt(2.0) * lp.R0 / lp.eta;
  double best = -1.0;
  for (double eps : candidates) {
    const EscapeStats st = escape_time_stats(spec, ms, fp, eps, M, M_tilde, n, seed);
    if (st.wilson_lower > 0.0) best = std::max(best, eps);
  }
  if (best < 0.0) throw std::runtime_error("no candidate eps passed the unit-time criterion");
  return best;
}

// ---------------------------------------------------------------------------
// Hypoellipticity rank
// ---------------------------------------------------------------------------

struct RankReport {
  int rank = 0;
  bool full = false;
};

/// Spans the constant noise directions B_k = e_(2+k) together with the first
/// brackets [A, B_k] = (sin(lambda k.r) k_perp/|k|, -lambda^2 nu |k|^2 e_k)
/// and returns the numerical rank (cutoff 1e-10 relative, 1e-14 absolute).
/// Full rank 2+N at a point implies a smooth transition density there.
inline RankReport hormander_rank_check(const ModeSet& ms, const FluidParams& fp,
                                       const PotentialSpec& /*spec: absent from brackets*/,
                                       const Vec2& r) {
  const Eigen::Index n = static_cast<Eigen::Index>(ms.size());
  MatX span = MatX::Zero(2 + n, 2 * n);
  for (Eigen::Index j = 0; j < n; ++j) {
    span(2 + j, j) = 1.0;  // B_j
    const std::size_t k = static_cast<std::size_t>(j);
    span.block<2, 1>(0, n + j) =
        std::sin(fp.lambda * ms.kvec(k).dot(r)) * ms.kperp_unit(k);
    span(2 + j, n + j) = -fp.lambda * fp.lambda * fp.nu * ms.knorm2(k);
  }
  const Eigen::JacobiSVD<MatX> svd(span);
  const auto& sv = svd.singularValues();
  RankReport rep;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > std::max(1e-10 * sv(0), 1e-14)) ++rep.rank;
  rep.full = rep.rank == 2 + static_cast<int>(n);
  return rep;
}

// ---------------------------------------------------------------------------
// Convergence of laws
// ---------------------------------------------------------------------------

struct ErgodicityReport {
  std::vector<double> times;
  std::vector<double> distances;     ///< two-sample KS of the |r| marginals
  std::vector<double> noise_floors;  ///< split-half same-law KS per time
  double fitted_rate = 0.0;          ///< decay rate of the fitted exponential
  double fitted_prefactor = 0.0;
  int fit_points = 0;  ///< times above the noise floor used by the fit
};

namespace detail {
inline double ks_distance(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t na = a.size(), nb = b.size();
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < na && j < nb) {
    const double x = std::min(a[i], b[j]);
    while (i < na && a[i] <= x) ++i;
    while (j < nb && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / na - double(j) / nb));
  }
  return d;
}
}  // namespace detail

/// Evolves two n-ensembles from initA and initB, recording |r| at the given
/// times, and reports the Kolmogorov-Smirnov distance between the marginals
/// (a computable surrogate for the weighted-total-variation metric).  The
/// statistical noise floor per time is the larger of the two same-law
/// split-half distances; log-distance is fitted against time over the points
/// above twice their floor.
inline ErgodicityReport ergodic_convergence(const SystemState& initA, const SystemState& initB,
                                            const SimParams& p, const ModeSet& ms,
                                            std::vector<double> times, int n,
                                            std::uint64_t seedA, std::uint64_t seedB) {
  if (times.empty()) throw std::invalid_argument("need at least one time");
  std::sort(times.begin(), times.end());
  if (!(times.front() >= 0.0)) throw std::invalid_argument("times must be >= 0");
  if (n < 4) throw std::invalid_argument("need n >= 4");
  p.validate();

  const std::size_t nt = times.size();
  auto run_ensemble_marginals = [&](const SystemState& x0, std::uint64_t seed) {
    std::vector<std::vector<double>> marg(nt, std::vector<double>(static_cast<std::size_t>(n)));
    RngStream master(seed);
    for (int i = 0; i < n; ++i) {
      RngStream rng = master.child(static_cast<std::uint64_t>(i));
      SystemState st = x0;
      const StepWorkspace ws = make_step_workspace(p, ms, p.dt);
      for (std::size_t ti = 0; ti < nt; ++ti) {
        const double target = times[ti];
        while (st.time + p.dt <= target * (1.0 + 1e-12)) step_ws(st, ws, p, ms, rng);
        const double rem = target - st.time;
        if (rem > 1e-12 * p.dt) {
          const StepWorkspace wr = make_step_workspace(p, ms, rem);
          step_ws(st, wr, p, ms, rng);
        }
        marg[ti][static_cast<std::size_t>(i)] = st.r.norm();
      }
    }
    return marg;
  };

  const auto margA = run_ensemble_marginals(initA, seedA);
  const auto margB = run_ensemble_marginals(initB, seedB);

  ErgodicityReport rep;
  rep.times = times;
  auto halves = [&](const std::vector<double>& v) {
    const std::size_t h = v.size() / 2;
    return std::make_pair(std::vector<double>(v.begin(), v.begin() + h),
                          std::vector<double>(v.begin() + h, v.end()));
  };
  for (std::size_t ti = 0; ti < nt; ++ti) {
    rep.distances.push_back(detail::ks_distance(margA[ti], margB[ti]));
    const auto [a1, a2] = halves(margA[ti]);
    const auto [b1, b2] = halves(margB[ti]);
    rep.noise_floors.push_back(
        std::max(detail::ks_distance(a1, a2), detail::ks_distance(b1, b2)));
  }

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t ti = 0; ti < nt; ++ti) {
    if (!(rep.distances[ti] > 2.0 * rep.noise_floors[ti]) || rep.distances[ti] <= 0.0) continue;
    const double x = times[ti], y = std::log(rep.distances[ti]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++rep.fit_points;
  }
  if (rep.fit_points >= 2) {
    const double m = rep.fit_points;
    const double slope = (sxy - sx * sy / m) / (sxx - sx * sx / m);
    rep.fitted_rate = -slope;
    rep.fitted_prefactor = std::exp(sy / m + slope * sx / m);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Tube occupancy of the driving modes
// ---------------------------------------------------------------------------

struct TubeReport {
  double probability = 0.0;
  int hits = 0;
  int n = 0;
};

/// Monte Carlo estimate of the probability that a free Ornstein-Uhlenbeck
/// path started at the control's initial amplitudes stays within tube_eps of
/// the reference control at every sample time.
inline TubeReport tube_occupancy(const ModeSet& ms, const FluidParams& fp,
                                 const ControlSignal& ref, double tube_eps, int n,
                                 std::uint64_t seed) {
  if (!(tube_eps > 0.0)) throw std::invalid_argument("tube_eps must be > 0");
  if (n < 1) throw std::invalid_argument("need n >= 1");
  if (ref.times.empty()) throw std::invalid_argument("empty control signal");

  // Cache one transition table per distinct knot spacing.
  std::map<double, OuTable> tables;
  auto table_for = [&](double dt) -> const OuTable& {
    auto it = tables.find(dt);
    if (it == tables.end()) it = tables.emplace(dt, make_ou_table(ms, fp, dt)).first;
    return it->second;
  };

  RngStream master(seed);
  TubeReport rep;
  rep.n = n;
  for (int i = 0; i < n; ++i) {
    RngStream rng = master.child(static_cast<std::uint64_t>(i));
    FluidState fs;
    fs.z = ref.zs.front();
    bool inside = true;
    for (std::size_t j = 1; j < ref.times.size() && inside; ++j) {
      const double dt = ref.times[j] - ref.times[j - 1];
      if (dt > 0.0) ou_apply(table_for(dt), fs, rng);
      inside = (fs.z - ref.zs[j]).norm() < tube_eps;
    }
    if (inside) ++rep.hits;
  }
  rep.probability = double(rep.hits) / n;
  return rep;
}

}  // namespace beadspring
