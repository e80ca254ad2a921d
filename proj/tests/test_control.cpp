#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "beadspring/control.hpp"

using namespace beadspring;

namespace {

ModeSet default_modes() { return ModeSet::from_modes({{1, 0, 1.0}, {0, 1, 1.0}, {1, 1, 1.0}}); }

Vec2 annulus_point(RngStream& rng, double lo, double hi) {
  const double s = lo + (hi - lo) * rng.uniform();
  const double ang = kTwoPi * rng.uniform();
  return Vec2(s * std::cos(ang), s * std::sin(ang));
}

Mat2X random_rank2(RngStream& rng, int n) {
  // The adjugate pseudoinverse loses ~cond^2 digits in its determinant, so
  // a 1e-10 oracle match is only an honest contract on decently conditioned
  // inputs; gaussian draws rarely need the redraw.
  while (true) {
    Mat2X m(2, n);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = rng.gaussian();
    const StokesMatrix probe = stokes_from_entries(m);
    if (probe.s2 > 1e-2 * probe.s1) return m;
  }
}

}  // namespace

TEST_CASE("stokes_matrix: columns, lattice degeneracy, single mode") {
  const ModeSet ms = default_modes();
  FluidParams fp;

  SECTION("columns match the defining formula") {
    RngStream rng(31);
    for (int trial = 0; trial < 50; ++trial) {
      const Vec2 r = annulus_point(rng, 0.5, 3.0);
      const StokesMatrix S = stokes_matrix(ms, fp, r);
      for (std::size_t j = 0; j < ms.size(); ++j) {
        const Vec2 expect = std::sin(fp.lambda * ms.kvec(j).dot(r)) * ms.kperp_unit(j);
        REQUIRE((S.entries.col(static_cast<Eigen::Index>(j)) - expect).norm() <= 1e-15);
      }
    }
  }
  SECTION("all sines vanish on the pi-lattice") {
    const double pi = std::acos(-1.0);
    const StokesMatrix S = stokes_matrix(ms, fp, Vec2(pi, pi));
    REQUIRE_FALSE(S.rank2);
    REQUIRE(S.entries.norm() < 1e-14);
  }
  SECTION("generic annulus points give rank 2") {
    const StokesMatrix S = stokes_matrix(ms, fp, Vec2(1.2, 0.4));
    REQUIRE(S.rank2);
  }
  SECTION("a single mode never has rank 2") {
    const ModeSet one = ModeSet::from_modes({{1, 0, 1.0}});
    RngStream rng(32);
    for (int trial = 0; trial < 20; ++trial)
      REQUIRE_FALSE(stokes_matrix(one, fp, annulus_point(rng, 0.5, 3.0)).rank2);
  }
}

TEST_CASE("rank cutoff: relative 1e-10 with an absolute floor") {
  Mat2X m(2, 3);
  m << 1, 0, 0, 0, 1e-9, 0;
  REQUIRE(stokes_from_entries(m).rank2);  // condition 1e9: still rank 2
  m(1, 1) = 1e-11;
  REQUIRE_FALSE(stokes_from_entries(m).rank2);  // below the relative cutoff
  m << 1e-15, 0, 0, 0, 1e-15, 0;
  REQUIRE_FALSE(stokes_from_entries(m).rank2);  // below the absolute floor
}

TEST_CASE("gram_inverse: identity case, inversion oracle, degeneracy error") {
  SECTION("orthonormal rows give the identity") {
    Mat2X m(2, 3);
    m << 1, 0, 0, 0, 1, 0;
    const Mat2 g = gram_inverse(stokes_from_entries(m));
    REQUIRE((g - Mat2::Identity()).norm() < 1e-15);
  }
  SECTION("adjugate formula matches generic inversion and inverts the Gram") {
    RngStream rng(33);
    for (int trial = 0; trial < 200; ++trial) {
      const int n = 3 + int(rng.next_u64() % 6);
      const StokesMatrix S = stokes_from_entries(random_rank2(rng, n));
      const Mat2 gram = S.entries * S.entries.transpose();
      const Mat2 g = gram_inverse(S);
      REQUIRE((gram * g - Mat2::Identity()).norm() <= 1e-12 * gram.norm() * g.norm());
      REQUIRE((g - Mat2(gram.inverse())).norm() <= 1e-12 * g.norm());
    }
  }
  SECTION("rank-deficient input is rejected") {
    Mat2X m(2, 3);
    m << 1, 2, 3, 2, 4, 6;  // parallel rows
    REQUIRE_THROWS_WITH(gram_inverse(stokes_from_entries(m)),
                        Catch::Matchers::ContainsSubstring("degenerate Stokes matrix"));
    REQUIRE_THROWS(min_norm_solve(stokes_from_entries(m), Vec2(1, 0)));
  }
}

TEST_CASE("min_norm_solve: frozen cases and the dense least-squares oracle") {
  SECTION("identity system returns b itself") {
    Mat2X m(2, 2);
    m << 1, 0, 0, 1;
    const VecX z = min_norm_solve(stokes_from_entries(m), Vec2(3, 4));
    REQUIRE(z.size() == 2);
    REQUIRE((z - Eigen::Vector2d(3, 4)).norm() < 1e-14);
  }
  SECTION("zero target gives the zero control") {
    RngStream rng(34);
    const VecX z = min_norm_solve(stokes_from_entries(random_rank2(rng, 5)), Vec2::Zero());
    REQUIRE(z.norm() == 0.0);
  }
  SECTION("matches the complete-orthogonal-decomposition minimal-norm solution") {
    RngStream rng(35);
    for (int trial = 0; trial < 300; ++trial) {
      const int n = 3 + int(rng.next_u64() % 6);
      const StokesMatrix S = stokes_from_entries(random_rank2(rng, n));
      const Vec2 b(rng.gaussian(), rng.gaussian());
      const VecX z = min_norm_solve(S, b);

      Eigen::CompleteOrthogonalDecomposition<MatX> cod(MatX(S.entries));
      const VecX oracle = cod.solve(b);
      REQUIRE((z - oracle).norm() <= 1e-10 * (1.0 + oracle.norm()));
      REQUIRE((S.entries * z - b).norm() <= 1e-10 * (1.0 + b.norm()));

      Eigen::FullPivLU<MatX> lu(MatX(S.entries));
      const MatX kernel = lu.kernel();
      for (Eigen::Index c = 0; c < kernel.cols(); ++c)
        REQUIRE(std::abs(z.dot(kernel.col(c))) <=
                1e-10 * (1.0 + z.norm() * kernel.col(c).norm()));
    }
  }
}

TEST_CASE("rank condition on the good annulus, parallel-mode negative control") {
  const ModeSet ms = default_modes();
  FluidParams fp;
  RngStream rng(36);
  for (int trial = 0; trial < 10000; ++trial)
    REQUIRE(stokes_matrix(ms, fp, annulus_point(rng, 1.0, std::sqrt(2.0) * 2.0)).rank2);

  const ModeSet parallel = ModeSet::from_modes({{1, 0, 1.0}, {2, 0, 1.0}});
  for (int trial = 0; trial < 100; ++trial)
    REQUIRE_FALSE(stokes_matrix(parallel, fp, annulus_point(rng, 0.5, 3.0)).rank2);
}

TEST_CASE("plan_path geometry") {
  SECTION("coincident endpoints give the empty plan") {
    const PathPlan plan = plan_path(Vec2(1, 0), Vec2(1, 0), 0.5, 2.0);
    REQUIRE(plan.segments.empty());
    REQUIRE(plan.total_time == 0.0);
    REQUIRE((plan_point(plan, 0.0) - Vec2(1, 0)).norm() == 0.0);
    REQUIRE((plan_point(plan, 3.0) - Vec2(1, 0)).norm() == 0.0);
    REQUIRE(plan_velocity(plan, 0.0).norm() == 0.0);
  }
  SECTION("a chord clearing the inner circle stays a single segment") {
    const PathPlan plan = plan_path(Vec2(1, 0), Vec2(0, 1), 0.1, 2.0);
    REQUIRE(plan.segments.size() == 1);
    REQUIRE(plan.total_time == Catch::Approx(std::sqrt(2.0)));
    REQUIRE((plan_point(plan, plan.total_time) - Vec2(0, 1)).norm() < 1e-15);
  }
  SECTION("antipodal endpoints detour through the mid-radius waypoint") {
    const PathPlan plan = plan_path(Vec2(1, 0), Vec2(-1, 0), 0.5, 2.0);
    REQUIRE(plan.segments.size() == 2);
    const Vec2 w = plan.segments[0].second;
    REQUIRE((plan.segments[1].first - w).norm() == 0.0);  // endpoints chain
    REQUIRE(w.norm() == Catch::Approx(0.5 * (0.5 + std::sqrt(2.0) * 2.0)));
    REQUIRE(std::abs(w.x()) < 1e-15);  // perpendicular tie-break for antipodes
    REQUIRE(plan.total_time ==
            Catch::Approx((w - Vec2(1, 0)).norm() + (Vec2(-1, 0) - w).norm()));
  }
  SECTION("unit-speed parametrization") {
    const PathPlan plan = plan_path(Vec2(1, 0), Vec2(-1, 0), 0.5, 2.0);
    const double d = 1e-6;
    for (double t : {0.3, 1.0, plan.total_time - 0.3}) {
      const double speed = (plan_point(plan, t + d) - plan_point(plan, t)).norm() / d;
      REQUIRE(speed == Catch::Approx(1.0).epsilon(1e-6));
      REQUIRE(plan_velocity(plan, t).norm() == Catch::Approx(1.0));
    }
  }
  SECTION("endpoints outside the annulus are rejected") {
    REQUIRE_THROWS_WITH(plan_path(Vec2(0.1, 0), Vec2(1, 0), 0.5, 2.0),
                        Catch::Matchers::ContainsSubstring("outside annulus"));
    REQUIRE_THROWS_WITH(plan_path(Vec2(1, 0), Vec2(5, 0), 0.5, 2.0),
                        Catch::Matchers::ContainsSubstring("outside annulus"));
  }
  SECTION("antipodes hugging the inner circle are honestly infeasible") {
    REQUIRE_THROWS_WITH(plan_path(Vec2(1, 0), Vec2(-1, 0), 1.0, 2.0),
                        Catch::Matchers::ContainsSubstring("two-segment plan violates annulus"));
  }
  SECTION("every sampled point of random feasible plans is in the annulus") {
    RngStream rng(37);
    const double eps1 = 1.0, R0 = 2.0, outer = std::sqrt(2.0) * 2.0;
    int feasible = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Vec2 a = annulus_point(rng, eps1, outer);
      const Vec2 b = annulus_point(rng, eps1, outer);
      PathPlan plan;
      try {
        plan = plan_path(a, b, eps1, R0);
      } catch (const std::runtime_error&) {
        continue;  // near-antipodal inner pairs may be infeasible by design
      }
      ++feasible;
      for (int i = 0; i <= 50; ++i) {
        const double s = plan_point(plan, plan.total_time * i / 50.0).norm();
        REQUIRE(s >= eps1 * (1.0 - 1e-9));
        REQUIRE(s <= outer * (1.0 + 1e-9));
      }
    }
    REQUIRE(feasible >= 90);  // infeasible pairs are a thin set
  }
}

TEST_CASE("synthesize_control: zero target, junction continuity, sup-norm cap") {
  const ModeSet ms = default_modes();
  FluidParams fp;
  const PotentialSpec pot = PotentialSpec::power_law(1.0, 12.0);

  SECTION("a gradient cancelling the tangent yields the zero control") {
    const PathPlan plan = plan_path(Vec2(1, 0), Vec2(2, 0), 0.5, 2.0);
    const GradFn cancel = [](const Vec2&) { return Vec2(-1, 0); };
    const ControlSignal sig = synthesize_control_grad(plan, cancel, ms, fp, 64);
    REQUIRE(sig.sup_norm == 0.0);
    for (const VecX& z : sig.zs) REQUIRE(z.norm() == 0.0);
  }
  SECTION("junction knots are duplicated and interpolation is right-continuous") {
    const PathPlan plan = plan_path(Vec2(1, 0), Vec2(-1, 0), 0.5, 2.0);
    const ControlSignal sig = synthesize_control(plan, pot, ms, fp, 32);
    const double tj = (plan.segments[0].second - plan.segments[0].first).norm();
    int dup = 0;
    for (std::size_t i = 0; i + 1 < sig.times.size(); ++i) {
      REQUIRE(sig.times[i] <= sig.times[i + 1]);
      if (sig.times[i] == sig.times[i + 1]) {
        ++dup;
        REQUIRE(sig.times[i] == Catch::Approx(tj).margin(1e-12));
        REQUIRE((control_value(sig, sig.times[i]) - sig.zs[i + 1]).norm() == 0.0);
      }
    }
    REQUIRE(dup == 1);
  }
  SECTION("samples solve the pointwise control equation") {
    const PathPlan plan = plan_path(Vec2(1.2, 0.3), Vec2(0.4, 2.1), 1.0, 2.0);
    const ControlSignal sig = synthesize_control(plan, pot, ms, fp, 64);
    for (std::size_t i = 0; i < sig.times.size(); ++i) {
      const Vec2 gamma = plan_point(plan, sig.times[i]);
      const Vec2 want = plan_velocity(plan, sig.times[i]) + grad_phi(pot, gamma);
      const Vec2 got = stokes_matrix(ms, fp, gamma).entries * sig.zs[i];
      REQUIRE((got - want).norm() <= 1e-10 * (1.0 + want.norm()));
    }
  }
  SECTION("sup norm stays under the configured cubic cap on random plans") {
    RngStream rng(38);
    const double eps1 = 1.0, R0 = 2.0, outer = std::sqrt(2.0) * R0;
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Vec2 a = annulus_point(rng, eps1, outer);
      const Vec2 b = annulus_point(rng, eps1, outer);
      PathPlan plan;
      try {
        plan = plan_path(a, b, eps1, R0);
      } catch (const std::runtime_error&) {
        continue;
      }
      const ControlSignal sig = synthesize_control(plan, pot, ms, fp, 64);
      REQUIRE(sig.bound_M > 0.0);
      REQUIRE(sig.sup_norm <= sig.bound_M);
      REQUIRE_FALSE(sig.exceeds_bound);
      ++checked;
    }
    REQUIRE(checked >= 90);
  }
  SECTION("degenerate sample points are reported with their path time") {
    // A plan whose start sits on the pi-lattice where every sine vanishes.
    const double pi = std::acos(-1.0);
    PathPlan plan;
    plan.start = Vec2(pi, pi);
    plan.segments.emplace_back(Vec2(pi, pi), Vec2(1, 0));
    plan.total_time = (Vec2(pi, pi) - Vec2(1, 0)).norm();
    plan.eps1 = 0.5;
    plan.R0 = 3.0;
    REQUIRE_THROWS_WITH(synthesize_control(plan, pot, ms, fp, 16),
                        Catch::Matchers::ContainsSubstring("degenerate Stokes matrix at t=0"));
  }
}

TEST_CASE("annulus_grad_bound scans the radial force") {
  const double bound = annulus_grad_bound(PotentialSpec::hookean(2.0), 1.0, 2.0);
  REQUIRE(bound == Catch::Approx(2.0 * std::sqrt(2.0) * 2.0).epsilon(1e-3));
}

TEST_CASE("verify_tracking: exact replay, tube linearity, determinism") {
  const ModeSet ms = default_modes();
  FluidParams fp;
  const PotentialSpec pot = PotentialSpec::power_law(1.0, 12.0);
  const PathPlan plan = plan_path(Vec2(1.1, 0.2), Vec2(0.3, 1.9), 1.0, 2.0);

  SECTION("zero tube and dense sampling track to integrator tolerance") {
    const ControlSignal sig = synthesize_control(plan, pot, ms, fp, 4096);
    const double err = verify_tracking(sig, plan, pot, ms, fp, 0.0, RngStream(1));
    REQUIRE(err <= 1e-6);
  }
  SECTION("halving the tube roughly halves the tracking error") {
    const ControlSignal sig = synthesize_control(plan, pot, ms, fp, 1024);
    const double e1 = verify_tracking(sig, plan, pot, ms, fp, 0.05, RngStream(7));
    const double e2 = verify_tracking(sig, plan, pot, ms, fp, 0.025, RngStream(7));
    REQUIRE(e1 > 0.0);
    const double ratio = e2 / e1;
    REQUIRE(ratio >= 0.3);
    REQUIRE(ratio <= 0.7);
  }
  SECTION("replay is deterministic in the stream") {
    const ControlSignal sig = synthesize_control(plan, pot, ms, fp, 256);
    const double a = verify_tracking(sig, plan, pot, ms, fp, 0.1, RngStream(2));
    const double b = verify_tracking(sig, plan, pot, ms, fp, 0.1, RngStream(2));
    const double c = verify_tracking(sig, plan, pot, ms, fp, 0.1, RngStream(3));
    REQUIRE(a == b);
    REQUIRE(a != c);
  }
}
