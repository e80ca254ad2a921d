#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "beadspring/config.hpp"
#include "beadspring/control.hpp"
#include "beadspring/diagnostics.hpp"

namespace beadspring {

using Json = nlohmann::ordered_json;

/// Write-to-temp plus atomic rename: readers never observe a partial file,
/// and a failed run leaves any previous artifact intact.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline Json vec2_json(const Vec2& v) { return Json::array({v.x(), v.y()}); }

// ---------------------------------------------------------------------------
// CSV builders.  Column layouts are part of the stable interface.
// ---------------------------------------------------------------------------

/// Columns: t,rx,ry,r_norm,V,z_1..z_N and, when the midpoint is tracked,
/// mx,my last.
inline std::string trajectory_csv(const Trajectory& traj, const ModeSet& ms,
                                  const LyapunovParams& lp, bool track_center) {
  std::string out = "t,rx,ry,r_norm,V";
  for (std::size_t k = 1; k <= ms.size(); ++k) out += ",z_" + std::to_string(k);
  if (track_center) out += ",mx,my";
  out += "\n";
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    const SystemState& st = traj.states[i];
    out += format_double(traj.times[i]);
    out += "," + format_double(st.r.x()) + "," + format_double(st.r.y());
    out += "," + format_double(st.r.norm());
    out += "," + format_double(lyapunov_value(st, lp));
    for (Eigen::Index k = 0; k < st.fluid.z.size(); ++k)
      out += "," + format_double(st.fluid.z[k]);
    if (track_center) out += "," + format_double(st.m.x()) + "," + format_double(st.m.y());
    out += "\n";
  }
  return out;
}

/// Columns: t,z_1..z_N (the piecewise-linear control knots).
inline std::string control_csv(const ControlSignal& sig) {
  std::string out = "t";
  const std::size_t n = sig.zs.empty() ? 0 : static_cast<std::size_t>(sig.zs.front().size());
  for (std::size_t k = 1; k <= n; ++k) out += ",z_" + std::to_string(k);
  out += "\n";
  for (std::size_t i = 0; i < sig.times.size(); ++i) {
    out += format_double(sig.times[i]);
    for (Eigen::Index k = 0; k < sig.zs[i].size(); ++k)
      out += "," + format_double(sig.zs[i][k]);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

struct DispatchResult {
  std::vector<std::string> artifacts;  ///< paths written, in write order
};

namespace detail {

inline std::string manifest_text(const std::string& invocation, const RunConfig& cfg) {
  std::string out = "# beadspring run manifest\n";
  out += "invocation = " + invocation + "\n";
  out += "defaults_version = 1\n\n";
  out += echo_config(cfg);
  return out;
}

inline bool wants(const RunConfig& cfg, const char* fmt) {
  return cfg.formats.find(fmt) != std::string::npos;
}

inline SystemState initial_state(const RunConfig& cfg, RngStream& rng) {
  SystemState x0;
  x0.r = cfg.r0;
  if (cfg.z0 == "stationary") {
    x0.fluid = stationary_sample(cfg.modes, cfg.fluid, rng, cfg.sim.track_center);
  } else {
    x0.fluid.z = VecX::Zero(static_cast<Eigen::Index>(cfg.modes.size()));
    if (cfg.sim.track_center) x0.fluid.y = VecX::Zero(x0.fluid.z.size());
  }
  return x0;
}

inline Json escape_json(const EscapeStats& st) {
  Json j;
  j["eps"] = st.eps;
  j["M"] = st.M;
  j["M_tilde"] = st.M_tilde;
  j["n"] = st.n;
  j["p_escape_unit_time"] = st.p_escape_unit_time;
  j["se_p"] = st.se_p;
  j["wilson_lower"] = st.wilson_lower;
  j["max_escape_time"] = st.max_escape_time;
  j["max_ball_exit_time"] = st.max_ball_exit_time;
  j["all_escaped"] = st.all_escaped;
  j["all_joint"] = st.all_joint;
  j["min_r_overall"] = st.min_r_overall;
  return j;
}

inline Json lyapunov_json(const LyapunovParams& lp) {
  Json j;
  j["R0"] = lp.R0;
  j["eta"] = lp.eta;
  j["delta"] = lp.delta;
  j["a"] = lp.a;
  j["C1"] = lp.C1;
  j["C2"] = lp.C2;
  j["k_min"] = lp.k_min;
  j["gamma"] = lp.gamma;
  return j;
}

}  // namespace detail

/// Runs one subcommand against a validated config and writes its artifacts
/// under cfg.out_dir (or out_override when nonempty).  `which` overrides
/// cfg.which for `diagnose`.  The manifest records the config as parsed, so
/// it is byte-identical wherever the artifacts land.  Throws on any failure;
/// nothing is partially written.
inline DispatchResult dispatch(const std::string& subcommand, const RunConfig& cfg,
                               std::string which = "", const std::string& out_override = "") {
  namespace fs = std::filesystem;
  DispatchResult res;
  const fs::path dir = out_override.empty() ? cfg.out_dir : out_override;
  auto emit = [&](const std::string& name, const std::string& content) {
    const fs::path p = dir / name;
    atomic_write(p, content);
    res.artifacts.push_back(p.string());
  };
  auto emit_json = [&](const std::string& name, const Json& j) { emit(name, j.dump(2) + "\n"); };

  const ModeSet& ms = cfg.modes;
  const FluidParams& fp = cfg.fluid;
  const LyapunovParams lp =
      choose_lyapunov_params(cfg.lyap_gamma, fp, ms, cfg.lyap_R0, cfg.lyap_delta);
  std::string invocation = subcommand;

  if (subcommand == "simulate") {
    RngStream master(cfg.seed);
    RngStream init_stream = master.child(0);
    const SystemState x0 = detail::initial_state(cfg, init_stream);
    const Trajectory traj = simulate(x0, cfg.sim, ms, cfg.horizon, master.child(1));
    emit("trajectory.csv", trajectory_csv(traj, ms, lp, cfg.sim.track_center));
    if (detail::wants(cfg, "json")) {
      Json j;
      j["seed"] = cfg.seed;
      j["horizon"] = cfg.horizon;
      j["records"] = traj.times.size();
      j["min_r"] = traj.min_r;
      j["final_r"] = vec2_json(traj.states.back().r);
      j["final_time"] = traj.times.back();
      emit_json("trajectory.json", j);
    }
  } else if (subcommand == "ensemble") {
    auto sampler = [&cfg](RngStream& rng) { return detail::initial_state(cfg, rng); };
    const std::vector<TrajectorySummary> sums =
        run_ensemble(sampler, cfg.sim, ms, cfg.horizon, cfg.seed, cfg.n);
    Json j;
    j["n"] = cfg.n;
    j["seed"] = cfg.seed;
    j["horizon"] = cfg.horizon;
    Json arr = Json::array();
    for (const auto& s : sums) {
      Json e;
      e["index"] = s.index;
      e["seed"] = s.seed;
      e["final_time"] = s.final_time;
      e["final_r"] = vec2_json(s.final_r);
      e["final_r_norm"] = s.final_r_norm;
      e["final_z_norm"] = s.final_z_norm;
      e["min_r"] = s.min_r;
      e["mean_r_norm2"] = s.mean_r_norm2;
      arr.push_back(e);
    }
    j["trajectories"] = arr;
    emit_json("ensemble.json", j);
  } else if (subcommand == "control") {
    const PathPlan plan = plan_path(cfg.r0, cfg.target, cfg.eps1, cfg.lyap_R0);
    const ControlSignal sig =
        synthesize_control(plan, cfg.potential, ms, fp, cfg.samples_per_unit);
    const double sup_err =
        verify_tracking(sig, plan, cfg.potential, ms, fp, cfg.tube_eps, RngStream(cfg.seed));
    Json pj;
    pj["start"] = vec2_json(plan.start);
    Json segs = Json::array();
    for (const auto& [a, b] : plan.segments)
      segs.push_back(Json::array({vec2_json(a), vec2_json(b)}));
    pj["segments"] = segs;
    pj["total_time"] = plan.total_time;
    pj["eps1"] = plan.eps1;
    pj["R0"] = plan.R0;
    emit_json("plan.json", pj);
    emit("control.csv", control_csv(sig));
    Json tj;
    tj["sup_tracking_error"] = sup_err;
    tj["tube_eps"] = cfg.tube_eps;
    tj["sup_norm"] = sig.sup_norm;
    tj["bound_M"] = sig.bound_M;
    tj["exceeds_bound"] = sig.exceeds_bound;
    tj["samples_per_unit"] = cfg.samples_per_unit;
    tj["knots"] = sig.times.size();
    emit_json("tracking.json", tj);
  } else if (subcommand == "diagnose") {
    if (which.empty()) which = cfg.which;
    invocation += " " + which;
    if (which == "hormander") {
      RngStream rng(cfg.seed);
      const double lo = cfg.eps1, hi = std::sqrt(2.0) * cfg.lyap_R0;
      const int dim = 2 + static_cast<int>(ms.size());
      int full_count = 0, min_rank = dim;
      for (int i = 0; i < cfg.r_points; ++i) {
        const double s = std::sqrt(lo * lo + (hi * hi - lo * lo) * rng.uniform());
        const double a = kTwoPi * rng.uniform();
        const RankReport rep =
            hormander_rank_check(ms, fp, cfg.potential, Vec2(s * std::cos(a), s * std::sin(a)));
        full_count += rep.full ? 1 : 0;
        min_rank = std::min(min_rank, rep.rank);
      }
      Json j;
      j["points"] = cfg.r_points;
      j["dim"] = dim;
      j["full_count"] = full_count;
      j["all_full"] = full_count == cfg.r_points;
      j["min_rank"] = min_rank;
      j["rank"] = min_rank;
      j["full"] = full_count == cfg.r_points;
      j["rank_at_origin"] = hormander_rank_check(ms, fp, cfg.potential, Vec2(0, 0)).rank;
      emit_json("hormander.json", j);
    } else if (which == "hookean") {
      const double s0 = sigma_norm(ms, 0.0);
      const double gamma = cfg.hookean_gamma > 0.0
                               ? cfg.hookean_gamma
                               : 10.0 * fp.lambda * std::sqrt(fp.beta) * s0;
      const double rate_bound = 2.0 * gamma - 2.0 * fp.lambda * std::sqrt(fp.beta) * s0;
      double horizon = cfg.diag_horizon;
      if (rate_bound > 0.0)
        horizon = std::min(horizon, 5.0 * std::log(1e6) / rate_bound);
      const HookeanDecayReport rep =
          hookean_decay_test(gamma, ms, fp, horizon, cfg.diag_n, cfg.seed, cfg.sim.dt);
      Json j;
      j["gamma"] = gamma;
      j["horizon"] = horizon;
      j["n"] = rep.n;
      j["empirical_rate"] = rep.empirical_rate;
      j["lln_threshold"] = rep.lln_threshold;
      j["envelope_ok"] = rep.envelope_ok;
      j["worst_envelope_ratio"] = rep.worst_envelope_ratio;
      j["max_final_ratio"] = rep.max_final_ratio;
      emit_json("hookean.json", j);
    } else if (which == "escape") {
      const double M = lp.R0;
      const double M_tilde = std::sqrt(2.0) * lp.R0 / lp.eta;
      const EscapeStats st = escape_time_stats(cfg.potential, ms, fp, cfg.diag_eps, M, M_tilde,
                                               cfg.diag_n, cfg.seed, cfg.diag_horizon,
                                               cfg.sim.dt);
      Json j = detail::escape_json(st);
      j["lyapunov"] = detail::lyapunov_json(lp);
      emit_json("escape.json", j);
    } else if (which == "drift") {
      if (cfg.initials < 2) throw std::invalid_argument("'initials' must be >= 2 for drift");
      const double v_lo = 2.2 * (2.0 * lp.C2 / lp.a);
      std::vector<SystemState> xs;
      for (int i = 0; i < cfg.initials; ++i) {
        const double v = v_lo * std::pow(100.0, double(i) / double(cfg.initials - 1));
        SystemState x;
        x.r = Vec2(std::sqrt(v), 0.0);
        x.fluid.z = VecX::Zero(static_cast<Eigen::Index>(ms.size()));
        xs.push_back(x);
      }
      const DriftReport rep =
          estimate_drift(xs, cfg.sim, ms, lp, cfg.diag_t, cfg.diag_n, cfg.seed);
      Json j;
      j["t"] = rep.t;
      j["n"] = rep.n;
      j["c0_hat"] = rep.c0_hat;
      j["c1_hat"] = rep.c1_hat;
      j["se_c0"] = rep.se_c0;
      j["envelope_violations"] = rep.envelope_violations;
      j["lyapunov"] = detail::lyapunov_json(lp);
      Json arr = Json::array();
      for (const auto& r : rep.records) {
        Json e;
        e["v0"] = r.v0;
        e["ev_hat"] = r.ev_hat;
        e["se"] = r.se;
        e["envelope"] = r.envelope;
        e["violates_envelope"] = r.violates_envelope;
        e["in_fit"] = r.in_fit;
        arr.push_back(e);
      }
      j["records"] = arr;
      emit_json("drift.json", j);
      if (detail::wants(cfg, "csv")) {
        std::string csv = "v0,ev_hat,se,envelope\n";
        for (const auto& r : rep.records)
          csv += format_double(r.v0) + "," + format_double(r.ev_hat) + "," +
                 format_double(r.se) + "," + format_double(r.envelope) + "\n";
        emit("drift.csv", csv);
      }
    } else if (which == "converge") {
      SystemState a, b;
      a.r = Vec2(cfg.eps1, 0.0);
      b.r = Vec2(std::sqrt(2.0) * cfg.lyap_R0, 0.0);
      a.fluid.z = VecX::Zero(static_cast<Eigen::Index>(ms.size()));
      b.fluid.z = a.fluid.z;
      const std::uint64_t seedB = cfg.seed ^ 0x9e3779b97f4a7c15ull;
      const ErgodicityReport rep =
          ergodic_convergence(a, b, cfg.sim, ms, cfg.times, cfg.diag_n, cfg.seed, seedB);
      Json j;
      j["n"] = cfg.diag_n;
      j["times"] = rep.times;
      j["distances"] = rep.distances;
      j["noise_floors"] = rep.noise_floors;
      j["fitted_rate"] = rep.fitted_rate;
      j["fitted_prefactor"] = rep.fitted_prefactor;
      j["fit_points"] = rep.fit_points;
      emit_json("converge.json", j);
      if (detail::wants(cfg, "csv")) {
        std::string csv = "time,distance,noise_floor\n";
        for (std::size_t i = 0; i < rep.times.size(); ++i)
          csv += format_double(rep.times[i]) + "," + format_double(rep.distances[i]) + "," +
                 format_double(rep.noise_floors[i]) + "\n";
        emit("converge.csv", csv);
      }
    } else if (which == "tube") {
      if (!(cfg.tube_eps > 0.0))
        throw std::invalid_argument("diagnose tube requires [control] tube_eps > 0");
      const PathPlan plan = plan_path(cfg.r0, cfg.target, cfg.eps1, cfg.lyap_R0);
      const ControlSignal sig =
          synthesize_control(plan, cfg.potential, ms, fp, cfg.samples_per_unit);
      const TubeReport rep = tube_occupancy(ms, fp, sig, cfg.tube_eps, cfg.diag_n, cfg.seed);
      Json j;
      j["tube_eps"] = cfg.tube_eps;
      j["n"] = rep.n;
      j["hits"] = rep.hits;
      j["probability"] = rep.probability;
      j["control_knots"] = sig.times.size();
      j["control_duration"] = plan.total_time;
      emit_json("tube.json", j);
    } else {
      throw std::invalid_argument(
          "unknown diagnostic '" + which +
          "' (expected hookean|escape|drift|hormander|converge|tube)");
    }
  } else {
    throw std::invalid_argument("unknown subcommand '" + subcommand +
                                "' (expected simulate|ensemble|control|diagnose)");
  }

  emit("manifest.txt", detail::manifest_text(invocation, cfg));
  return res;
}

}  // namespace beadspring
