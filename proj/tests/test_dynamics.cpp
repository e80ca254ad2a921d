#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "beadspring/dynamics.hpp"

using namespace beadspring;

namespace {

ModeSet default_modes(double sigma = 1.0) {
  return ModeSet::from_modes({{1, 0, sigma}, {0, 1, sigma}, {1, 1, sigma}});
}

FluidState zero_fluid(const ModeSet& ms, bool with_cosine = false) {
  FluidState fs;
  fs.z = VecX::Zero(static_cast<Eigen::Index>(ms.size()));
  if (with_cosine) fs.y = VecX::Zero(static_cast<Eigen::Index>(ms.size()));
  return fs;
}

SimParams quiet_params(const PotentialSpec& pot) {
  SimParams p;
  p.potential = pot;
  return p;
}

}  // namespace

TEST_CASE("drift_r: frozen example and recomposition oracle") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::hookean(1.0));

  SystemState st;
  st.r = Vec2(1, 0);
  st.fluid = zero_fluid(ms);
  REQUIRE((drift_r(st, p, ms) - Vec2(-1, 0)).norm() < 1e-15);

  RngStream rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    st.r = Vec2(2.0 * rng.gaussian(), 2.0 * rng.gaussian());
    if (st.r.norm() < 0.1) continue;
    st.fluid.z = rng.gaussian_vec(ms.size());
    const Vec2 expect = -grad_phi(p.potential, st.r) + eval_velocity(ms, st.fluid, p.fluid, st.r);
    REQUIRE((drift_r(st, p, ms) - expect).norm() <= 1e-14 * (1.0 + expect.norm()));
  }
}

TEST_CASE("drift_r: midpoint form at m=0 equals the midpoint-free forcing") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::hookean(1.0));
  SystemState st;
  st.r = Vec2(0.7, -0.4);
  st.fluid = zero_fluid(ms, true);
  RngStream rng(5);
  st.fluid.z = rng.gaussian_vec(ms.size());
  st.fluid.y = rng.gaussian_vec(ms.size());  // arbitrary: cos(0) kills y
  st.m = Vec2::Zero();

  SimParams p_cm = p;
  p_cm.track_center = true;
  REQUIRE((drift_r(st, p_cm, ms) - drift_r(st, p, ms)).norm() == 0.0);
}

TEST_CASE("drift_r: singular potential rejects the origin") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::power_law(1.0, 12.0));
  SystemState st;
  st.r = Vec2::Zero();
  st.fluid = zero_fluid(ms);
  REQUIRE_THROWS_WITH(drift_r(st, p, ms), Catch::Matchers::ContainsSubstring("singular point"));
}

TEST_CASE("step: dt=0 leaves the state untouched") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::hookean(1.0));
  p.dt = 0.0;
  SystemState st;
  st.r = Vec2(0.3, 0.8);
  st.fluid = zero_fluid(ms);
  st.fluid.z << 1.0, -2.0, 0.5;
  const SystemState before = st;
  RngStream rng(1);
  step(st, p, ms, rng);
  REQUIRE(st.time == before.time);
  REQUIRE((st.r - before.r).norm() == 0.0);
  REQUIRE((st.fluid.z - before.fluid.z).norm() == 0.0);
}

TEST_CASE("step: parameter validation") {
  SimParams p = quiet_params(PotentialSpec::hookean(1.0));
  p.dt = -1.0;
  REQUIRE_THROWS(p.validate());
  p.dt = 1e-3;
  p.kappa = -0.1;
  REQUIRE_THROWS(p.validate());
  p.kappa = 0.0;
  p.record_stride = 0;
  REQUIRE_THROWS(p.validate());
}

TEST_CASE("deterministic hookean relaxation hits the analytic solution") {
  const ModeSet ms = default_modes(0.0);  // sigma = 0: no noise
  SimParams p = quiet_params(PotentialSpec::hookean(1.0));
  p.dt = 1e-3;
  p.record_stride = 1000;
  SystemState x0;
  x0.r = Vec2(1, 0);
  x0.fluid = zero_fluid(ms);

  const Trajectory traj = simulate(x0, p, ms, 1.0, RngStream(3));
  const SystemState& last = traj.states.back();
  const Vec2 exact(std::exp(-last.time), 0.0);
  REQUIRE((last.r - exact).norm() <= 1e-8 * exact.norm());
  REQUIRE(last.time == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("deterministic substep converges at fourth order") {
  // Nonlinear relaxation in the repulsive power-law well; no noise, so the
  // connector substep is the only error source.  Errors on a dt-halving
  // ladder against a fine-dt reference must shrink 16x per halving.
  const ModeSet ms = default_modes(0.0);
  SimParams p = quiet_params(PotentialSpec::power_law(1.0, 12.0));
  p.record_stride = 1 << 20;  // endpoints only
  SystemState x0;
  x0.r = Vec2(1.5, 0);
  x0.fluid = zero_fluid(ms);
  const double T = 0.5;

  auto endpoint = [&](double dt) {
    SimParams pp = p;
    pp.dt = dt;
    return simulate(x0, pp, ms, T, RngStream(9)).states.back().r;
  };
  const Vec2 ref = endpoint(1.0 / 4096.0);
  const double e1 = (endpoint(1.0 / 32.0) - ref).norm();
  const double e2 = (endpoint(1.0 / 64.0) - ref).norm();
  const double e3 = (endpoint(1.0 / 128.0) - ref).norm();
  REQUIRE(e2 > 0.0);
  REQUIRE(e3 > 0.0);
  const double order12 = std::log2(e1 / e2);
  const double order23 = std::log2(e2 / e3);
  REQUIRE(order12 >= 3.9);
  REQUIRE(order12 <= 4.8);
  REQUIRE(order23 >= 3.9);
  REQUIRE(order23 <= 4.8);
}

TEST_CASE("mode half-steps compose to the exact transition across a run") {
  // With sigma = 0 the mode amplitudes decay deterministically; after the
  // whole run z must equal z0 * exp(-rate * T) regardless of dt.
  const ModeSet ms = default_modes(0.0);
  SimParams p = quiet_params(PotentialSpec::hookean(1.0));
  p.fluid.lambda = 1.3;
  p.fluid.nu = 0.7;
  p.dt = 1e-3;
  p.record_stride = 1 << 20;
  SystemState x0;
  x0.r = Vec2(1, 0);
  x0.fluid = zero_fluid(ms);
  x0.fluid.z << 1.0, -2.0, 0.5;

  const double T = 1.0;
  const Trajectory traj = simulate(x0, p, ms, T, RngStream(4));
  const VecX zT = traj.states.back().fluid.z;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const double expect =
        x0.fluid.z[static_cast<Eigen::Index>(i)] * std::exp(-ou_rate(p.fluid, ms.knorm2(i)) * T);
    REQUIRE(zT[static_cast<Eigen::Index>(i)] == Catch::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("recording: stride, shortened final step, strictly increasing times") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::hookean(1.0));
  p.dt = 0.1;
  p.record_stride = 5;
  SystemState x0;
  x0.r = Vec2(1, 0);
  x0.fluid = zero_fluid(ms);

  SECTION("horizon lands on a step boundary: no duplicate final record") {
    const Trajectory traj = simulate(x0, p, ms, 1.0, RngStream(11));
    REQUIRE(traj.times.size() == 3);  // t = 0, 0.5, 1.0
    REQUIRE(traj.times[1] == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(traj.times[2] == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("fractional final step lands exactly on the horizon") {
    const Trajectory traj = simulate(x0, p, ms, 0.55, RngStream(11));
    REQUIRE(traj.times.back() == Catch::Approx(0.55).margin(1e-12));
    REQUIRE(traj.states.back().time == traj.times.back());
  }
  SECTION("horizon 0 yields the single initial record") {
    const Trajectory traj = simulate(x0, p, ms, 0.0, RngStream(11));
    REQUIRE(traj.times.size() == 1);
    REQUIRE(traj.states.size() == 1);
    REQUIRE(traj.times[0] == 0.0);
  }
  SECTION("times strictly increase") {
    p.record_stride = 3;
    const Trajectory traj = simulate(x0, p, ms, 0.95, RngStream(2));
    for (std::size_t i = 1; i < traj.times.size(); ++i)
      REQUIRE(traj.times[i] > traj.times[i - 1]);
  }
}

TEST_CASE("recording stride does not influence the dynamics") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::hookean(1.0));
  p.dt = 0.01;
  SystemState x0;
  x0.r = Vec2(1, 0);
  x0.fluid = zero_fluid(ms);

  SimParams p1 = p;
  p1.record_stride = 1;
  SimParams p2 = p;
  p2.record_stride = 7;
  const Trajectory a = simulate(x0, p1, ms, 2.0, RngStream(123));
  const Trajectory b = simulate(x0, p2, ms, 2.0, RngStream(123));
  REQUIRE((a.states.back().r - b.states.back().r).norm() == 0.0);
  REQUIRE((a.states.back().fluid.z - b.states.back().fluid.z).norm() == 0.0);
  REQUIRE(a.min_r == b.min_r);
}

TEST_CASE("trajectories are reproducible and seed-sensitive") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::power_law(1.0, 12.0));
  SystemState x0;
  x0.r = Vec2(1, 0);
  x0.fluid = zero_fluid(ms);

  const Trajectory a = simulate(x0, p, ms, 1.0, RngStream(42));
  const Trajectory b = simulate(x0, p, ms, 1.0, RngStream(42));
  const Trajectory c = simulate(x0, p, ms, 1.0, RngStream(43));
  REQUIRE((a.states.back().r - b.states.back().r).norm() == 0.0);
  REQUIRE((a.states.back().fluid.z - b.states.back().fluid.z).norm() == 0.0);
  REQUIRE(a.min_r == b.min_r);
  REQUIRE(a.seed == b.seed);
  REQUIRE((a.states.back().r - c.states.back().r).norm() > 0.0);
}

TEST_CASE("midpoint tracking with zero midpoint reduces to the plain model") {
  const ModeSet ms = default_modes(0.0);
  SimParams plain = quiet_params(PotentialSpec::power_law(1.0, 12.0));
  plain.dt = 1e-2;
  SimParams tracked = plain;
  tracked.track_center = true;

  SystemState a;
  a.r = Vec2(1.2, 0.4);
  a.fluid = zero_fluid(ms);
  a.fluid.z << 0.8, -1.1, 0.3;
  SystemState b = a;
  b.fluid.y = VecX::Zero(3);  // carries cosine modes, frozen at 0
  b.m = Vec2::Zero();

  RngStream ra(6), rb(6);
  const StepWorkspace wa = make_step_workspace(plain, ms, plain.dt);
  const StepWorkspace wb = make_step_workspace(tracked, ms, tracked.dt);
  for (int i = 0; i < 100; ++i) {
    step_ws(a, wa, plain, ms, ra);
    step_ws(b, wb, tracked, ms, rb);
  }
  REQUIRE((a.r - b.r).norm() <= 1e-14 * a.r.norm());
  REQUIRE(b.m.norm() == 0.0);
}

TEST_CASE("midpoint tracking requires cosine modes") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::hookean(1.0));
  p.track_center = true;
  SystemState x0;
  x0.r = Vec2(1, 0);
  x0.fluid = zero_fluid(ms);  // no y block
  REQUIRE_THROWS_WITH(simulate(x0, p, ms, 1.0, RngStream(1)),
                      Catch::Matchers::ContainsSubstring("cosine modes required"));
}

TEST_CASE("additive kick has the advertised covariance") {
  const ModeSet ms = default_modes(0.0);
  SimParams p = quiet_params(PotentialSpec::hookean(1e-12));  // negligible force
  p.dt = 1e-2;
  p.kappa = 2.0;
  const double var_expect = 2.0 * p.kappa * p.kappa * p.dt;

  RngStream master(314);
  const int n = 20000;
  double sx = 0, sxx = 0, sy = 0, syy = 0;
  const StepWorkspace ws = make_step_workspace(p, ms, p.dt);
  for (int i = 0; i < n; ++i) {
    SystemState st;
    st.r = Vec2(5, -3);
    st.fluid = zero_fluid(ms);
    RngStream rng = master.child(static_cast<std::uint64_t>(i));
    step_ws(st, ws, p, ms, rng);
    const Vec2 d = st.r - Vec2(5, -3);
    sx += d.x();
    sxx += d.x() * d.x();
    sy += d.y();
    syy += d.y() * d.y();
  }
  const double vx = sxx / n - (sx / n) * (sx / n);
  const double vy = syy / n - (sy / n) * (sy / n);
  const double se = var_expect * std::sqrt(2.0 / (n - 1.0));
  REQUIRE(std::abs(vx - var_expect) <= 3.0 * se);
  REQUIRE(std::abs(vy - var_expect) <= 3.0 * se);
}

TEST_CASE("repulsive singularity is never reached over a long noisy run") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::power_law(1.0, 12.0));
  p.record_stride = 1000;
  SystemState x0;
  x0.r = Vec2(1, 0);
  RngStream rng(2024);
  x0.fluid = stationary_sample(ms, p.fluid, rng);

  const Trajectory traj = simulate(x0, p, ms, 100.0, rng);
  REQUIRE(traj.min_r > p.r_min_guard);
  REQUIRE(std::isfinite(traj.states.back().r.norm()));
}

TEST_CASE("a start just above the guard is blasted outward, not lost") {
  const ModeSet ms = default_modes(0.0);
  SimParams p = quiet_params(PotentialSpec::power_law(1.0, 12.0));
  SystemState x0;
  x0.r = Vec2(2e-6, 0);  // force magnitude ~ 1e74 here
  x0.fluid = zero_fluid(ms);
  const Trajectory traj = simulate(x0, p, ms, 1.0, RngStream(8));
  REQUIRE(traj.min_r >= 2e-6);
  REQUIRE(traj.states.back().r.norm() == Catch::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("strong hookean spring contracts the connector fast") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::hookean(20.0));
  SystemState x0;
  x0.r = Vec2(1, 0);
  RngStream rng(99);
  x0.fluid = stationary_sample(ms, p.fluid, rng);
  const Trajectory traj = simulate(x0, p, ms, 1.0, rng);
  REQUIRE(traj.states.back().r.norm() < 1e-4);
}

TEST_CASE("origin guard exhausts when the flow genuinely crosses it") {
  // Pure shear flow pulling inward along the diagonal, strong enough to beat
  // the repulsion well inside the (deliberately huge) guard radius.  The
  // guard halvings cannot rescue a genuine crossing.
  const ModeSet ms = ModeSet::from_modes({{1, 0, 0.0}, {0, 1, 0.0}});
  SimParams p = quiet_params(PotentialSpec::power_law(1.0, 12.0));
  p.r_min_guard = 0.45;
  SystemState st;
  const double t0 = 0.6 / std::sqrt(2.0);
  st.r = Vec2(t0, t0);
  st.fluid.z = VecX(2);
  st.fluid.z << -1e6, 1e6;
  RngStream rng(1);
  REQUIRE_THROWS_WITH(step(st, p, ms, rng),
                      Catch::Matchers::ContainsSubstring("origin guard exhausted"));
}

TEST_CASE("absurd step sizes exhaust the accuracy control") {
  const ModeSet ms = default_modes(0.0);
  SimParams p = quiet_params(PotentialSpec::power_law(1.0, 12.0));
  p.dt = 1e6;
  p.max_bisect_depth = 12;
  SystemState st;
  st.r = Vec2(2, 0);
  st.fluid = zero_fluid(ms);
  RngStream rng(1);
  REQUIRE_THROWS_WITH(step(st, p, ms, rng),
                      Catch::Matchers::ContainsSubstring("step size control exhausted"));
}

TEST_CASE("ensemble runs are order-independent prefixes of longer runs") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::power_law(1.0, 12.0));
  p.dt = 5e-3;
  SystemState x0;
  x0.r = Vec2(1, 0);
  x0.fluid = zero_fluid(ms);

  const auto small = run_ensemble(x0, p, ms, 0.5, 7777, 3);
  const auto big = run_ensemble(x0, p, ms, 0.5, 7777, 7);
  REQUIRE(small.size() == 3);
  REQUIRE(big.size() == 7);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(small[i].seed == big[i].seed);
    REQUIRE((small[i].final_r - big[i].final_r).norm() == 0.0);
    REQUIRE(small[i].min_r == big[i].min_r);
    REQUIRE(small[i].mean_r_norm2 == big[i].mean_r_norm2);
  }
  // Distinct trajectories actually differ.
  REQUIRE((big[0].final_r - big[1].final_r).norm() > 0.0);
  REQUIRE_THROWS(run_ensemble(x0, p, ms, 0.5, 7777, 0));
}

TEST_CASE("ensemble mode statistics match the stationary law") {
  const ModeSet ms = default_modes();
  SimParams p = quiet_params(PotentialSpec::hookean(1.0));
  p.dt = 1e-2;
  p.record_stride = 1 << 20;

  double v_total = 0.0;
  for (std::size_t i = 0; i < ms.size(); ++i) v_total += stationary_variance(p.fluid, ms, i);

  const InitialSampler sampler = [&](RngStream& rng) {
    SystemState st;
    st.r = Vec2(1, 0);
    st.fluid = stationary_sample(ms, p.fluid, rng);
    return st;
  };
  const auto sums = run_ensemble(sampler, p, ms, 0.5, 1234, 10000);
  double mean = 0.0, mean2 = 0.0;
  for (const auto& s : sums) {
    const double zz = s.final_z_norm * s.final_z_norm;
    mean += zz;
    mean2 += zz * zz;
  }
  mean /= static_cast<double>(sums.size());
  mean2 /= static_cast<double>(sums.size());
  const double se = std::sqrt((mean2 - mean * mean) / static_cast<double>(sums.size()));
  REQUIRE(std::abs(mean - v_total) <= 3.0 * se);
}
