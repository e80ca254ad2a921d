#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "beadspring/diagnostics.hpp"
#include "beadspring/dynamics.hpp"
#include "beadspring/potentials.hpp"

namespace beadspring {

/// Everything a run needs, resolved and validated.  `echo_config` emits an
/// equivalent document with every default made explicit; feeding that echo
/// back through `parse_config` reproduces the same RunConfig, which is how
/// manifests guarantee byte-identical reruns.
struct RunConfig {
  FluidParams fluid;
  ModeSet modes = ModeSet::from_modes({{1, 0, 1.0}, {0, 1, 1.0}, {1, 1, 1.0}});
  PotentialSpec potential;
  SimParams sim;  ///< potential and fluid mirrored in during parse

  // [run]
  std::uint64_t seed = 1;
  double horizon = 10.0;
  Vec2 r0 = Vec2(1.0, 0.0);
  std::string z0 = "zero";  ///< "zero" | "stationary"
  int n = 100;
  std::string out_dir = "out";
  bool out_dir_set = false;  ///< explicit in the config (vs defaultable by env)
  std::string formats = "csv,json";

  // [lyapunov]
  double lyap_gamma = 0.5;
  double lyap_delta = 0.25;
  double lyap_R0 = 2.0;

  // [control]
  Vec2 target = Vec2(1.5, 0.5);
  double eps1 = 0.5;
  int samples_per_unit = 256;
  double tube_eps = 0.0;

  // [diagnose]
  std::string which = "hormander";
  int diag_n = 200;
  double diag_horizon = 10.0;
  double diag_t = 1.0;
  double diag_eps = 0.5;
  int initials = 10;
  int r_points = 1000;
  std::vector<double> times = {5.0, 10.0, 20.0, 50.0};
  double hookean_gamma = 0.0;  ///< 0 = choose 10 lambda sqrt(beta) |sigma| at dispatch
};

namespace detail {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] inline void fail(int line, const std::string& msg) {
  throw ConfigError("line " + std::to_string(line) + ": " + msg);
}

struct KeyedValue {
  std::string value;
  int line = 0;
};

/// Raw parse pass: sections of unique keys, with line numbers retained for
/// the constraint diagnostics that run after all values are known.
struct RawConfig {
  std::map<std::string, std::map<std::string, KeyedValue>> sections;

  bool has(const std::string& sec, const std::string& key) const {
    auto s = sections.find(sec);
    return s != sections.end() && s->second.count(key) > 0;
  }
  const KeyedValue& at(const std::string& sec, const std::string& key) const {
    return sections.at(sec).at(key);
  }
};

inline RawConfig raw_parse(const std::string& text,
                           const std::map<std::string, std::set<std::string>>& schema) {
  RawConfig raw;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail(lineno, "malformed section header '" + t + "'");
      section = t.substr(1, t.size() - 2);
      if (schema.find(section) == schema.end())
        fail(lineno, "unknown section [" + section + "]");
      raw.sections[section];  // a section may legitimately be empty
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(lineno, "expected 'key = value', got '" + t + "'");
    if (section.empty()) fail(lineno, "key outside any [section]");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) fail(lineno, "empty key");
    const auto& allowed = schema.at(section);
    if (allowed.find(key) == allowed.end())
      fail(lineno, "unknown key '" + key + "' in [" + section + "]");
    auto [it, inserted] = raw.sections[section].emplace(key, KeyedValue{value, lineno});
    if (!inserted)
      fail(lineno, "duplicate key '" + key + "' in [" + section + "] (first at line " +
                       std::to_string(it->second.line) + ")");
  }
  return raw;
}

inline double want_double(const RawConfig& raw, const std::string& sec, const std::string& key,
                          double fallback) {
  if (!raw.has(sec, key)) return fallback;
  const auto& kv = raw.at(sec, key);
  double out = 0.0;
  if (!parse_double(kv.value, out))
    fail(kv.line, "key '" + key + "' expects a real number, got '" + kv.value + "'");
  return out;
}

inline int want_int(const RawConfig& raw, const std::string& sec, const std::string& key,
                    int fallback) {
  if (!raw.has(sec, key)) return fallback;
  const auto& kv = raw.at(sec, key);
  int out = 0;
  if (!parse_int(kv.value, out))
    fail(kv.line, "key '" + key + "' expects an integer, got '" + kv.value + "'");
  return out;
}

inline bool want_bool(const RawConfig& raw, const std::string& sec, const std::string& key,
                      bool fallback) {
  if (!raw.has(sec, key)) return fallback;
  const auto& kv = raw.at(sec, key);
  if (kv.value == "true") return true;
  if (kv.value == "false") return false;
  fail(kv.line, "key '" + key + "' expects true or false, got '" + kv.value + "'");
}

inline std::string want_string(const RawConfig& raw, const std::string& sec,
                               const std::string& key, const std::string& fallback) {
  if (!raw.has(sec, key)) return fallback;
  return raw.at(sec, key).value;
}

inline Vec2 want_vec2(const RawConfig& raw, const std::string& sec, const std::string& key,
                      const Vec2& fallback) {
  if (!raw.has(sec, key)) return fallback;
  const auto& kv = raw.at(sec, key);
  std::istringstream in(kv.value);
  std::string a, b, extra;
  double x = 0, y = 0;
  if (!(in >> a >> b) || (in >> extra) || !parse_double(a, x) || !parse_double(b, y))
    fail(kv.line, "key '" + key + "' expects two reals, got '" + kv.value + "'");
  return Vec2(x, y);
}

inline std::vector<double> want_double_list(const RawConfig& raw, const std::string& sec,
                                            const std::string& key,
                                            const std::vector<double>& fallback) {
  if (!raw.has(sec, key)) return fallback;
  const auto& kv = raw.at(sec, key);
  std::istringstream in(kv.value);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    double x = 0;
    if (!parse_double(tok, x))
      fail(kv.line, "key '" + key + "' expects reals, got token '" + tok + "'");
    out.push_back(x);
  }
  if (out.empty()) fail(kv.line, "key '" + key + "' expects at least one real");
  return out;
}

/// Semicolon-separated "kx ky sigma" triples.
inline ModeSet parse_mode_list(const KeyedValue& kv) {
  std::vector<Mode> modes;
  std::string chunk;
  std::istringstream groups(kv.value);
  while (std::getline(groups, chunk, ';')) {
    const std::string t = trim(chunk);
    if (t.empty()) continue;
    std::istringstream in(t);
    std::string a, b, c, extra;
    Mode m;
    if (!(in >> a >> b >> c) || (in >> extra) || !parse_int(a, m.kx) || !parse_int(b, m.ky) ||
        !parse_double(c, m.sigma))
      fail(kv.line, "mode entry expects 'kx ky sigma', got '" + t + "'");
    modes.push_back(m);
  }
  if (modes.empty()) fail(kv.line, "key 'set' lists no modes");
  try {
    return ModeSet::from_modes(std::move(modes));
  } catch (const std::exception& e) {
    fail(kv.line, std::string("invalid mode set: ") + e.what());
  }
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  using detail::fail;
  static const std::map<std::string, std::set<std::string>> schema = {
      {"fluid", {"lambda", "nu", "beta"}},
      {"modes", {"set", "kmax", "amplitude", "decay"}},
      {"potential", {"spec"}},
      {"sim",
       {"dt", "kappa", "r_min_guard", "record_stride", "track_center", "substep_rel_tol"}},
      {"run", {"seed", "horizon", "r0", "z0", "n", "out_dir", "formats"}},
      {"lyapunov", {"gamma", "delta", "R0"}},
      {"control", {"target", "eps1", "samples_per_unit", "tube_eps"}},
      {"diagnose",
       {"which", "n", "horizon", "t", "eps", "initials", "r_points", "times", "hookean_gamma"}},
  };
  const detail::RawConfig raw = detail::raw_parse(text, schema);

  RunConfig cfg;
  cfg.fluid.lambda = detail::want_double(raw, "fluid", "lambda", cfg.fluid.lambda);
  cfg.fluid.nu = detail::want_double(raw, "fluid", "nu", cfg.fluid.nu);
  cfg.fluid.beta = detail::want_double(raw, "fluid", "beta", cfg.fluid.beta);
  try {
    cfg.fluid.validate();
  } catch (const std::exception& e) {
    throw detail::ConfigError(std::string("[fluid]: ") + e.what());
  }

  // Modes: an explicit list, or a lattice ball with a power-law weight.
  const bool has_set = raw.has("modes", "set");
  const bool has_kmax = raw.has("modes", "kmax");
  if (has_set && has_kmax)
    fail(raw.at("modes", "kmax").line, "give either 'set' or 'kmax', not both");
  if (has_set) {
    if (raw.has("modes", "amplitude") || raw.has("modes", "decay"))
      fail(raw.at("modes", "set").line, "'amplitude'/'decay' apply only with 'kmax'");
    cfg.modes = detail::parse_mode_list(raw.at("modes", "set"));
  } else if (has_kmax) {
    const int kmax = detail::want_int(raw, "modes", "kmax", 1);
    const double amp = detail::want_double(raw, "modes", "amplitude", 1.0);
    const double decay = detail::want_double(raw, "modes", "decay", 0.0);
    if (kmax < 1) fail(raw.at("modes", "kmax").line, "'kmax' must be >= 1");
    cfg.modes = build_mode_set(kmax, [&](double k) { return amp * std::pow(k, -decay); });
  } else {
    throw detail::ConfigError("[modes]: required ('set' or 'kmax')");
  }

  if (!raw.has("potential", "spec")) throw detail::ConfigError("[potential]: 'spec' required");
  {
    const auto& kv = raw.at("potential", "spec");
    try {
      cfg.potential = parse_potential(kv.value);
    } catch (const std::exception& e) {
      fail(kv.line, std::string("invalid potential: ") + e.what());
    }
  }

  cfg.sim.potential = cfg.potential;
  cfg.sim.fluid = cfg.fluid;
  cfg.sim.dt = detail::want_double(raw, "sim", "dt", cfg.sim.dt);
  cfg.sim.kappa = detail::want_double(raw, "sim", "kappa", cfg.sim.kappa);
  cfg.sim.r_min_guard = detail::want_double(raw, "sim", "r_min_guard", cfg.sim.r_min_guard);
  cfg.sim.record_stride = detail::want_int(raw, "sim", "record_stride", cfg.sim.record_stride);
  cfg.sim.track_center = detail::want_bool(raw, "sim", "track_center", cfg.sim.track_center);
  cfg.sim.substep_rel_tol =
      detail::want_double(raw, "sim", "substep_rel_tol", cfg.sim.substep_rel_tol);
  try {
    cfg.sim.validate();
  } catch (const std::exception& e) {
    throw detail::ConfigError(std::string("[sim]: ") + e.what());
  }

  if (raw.has("run", "seed")) {
    const auto& kv = raw.at("run", "seed");
    try {
      std::size_t used = 0;
      cfg.seed = std::stoull(kv.value, &used);
      if (used != kv.value.size() || kv.value.front() == '-') throw std::invalid_argument("");
    } catch (...) {
      fail(kv.line, "key 'seed' expects a nonnegative integer, got '" + kv.value + "'");
    }
  }
  cfg.horizon = detail::want_double(raw, "run", "horizon", cfg.horizon);
  cfg.r0 = detail::want_vec2(raw, "run", "r0", cfg.r0);
  cfg.z0 = detail::want_string(raw, "run", "z0", cfg.z0);
  if (cfg.z0 != "zero" && cfg.z0 != "stationary") {
    if (raw.has("run", "z0"))
      fail(raw.at("run", "z0").line, "key 'z0' expects zero or stationary, got '" + cfg.z0 + "'");
  }
  cfg.n = detail::want_int(raw, "run", "n", cfg.n);
  cfg.out_dir = detail::want_string(raw, "run", "out_dir", cfg.out_dir);
  cfg.out_dir_set = raw.has("run", "out_dir");
  cfg.formats = detail::want_string(raw, "run", "formats", cfg.formats);
  if (!(cfg.horizon >= 0.0)) {
    if (raw.has("run", "horizon")) fail(raw.at("run", "horizon").line, "'horizon' must be >= 0");
  }
  if (cfg.n < 1) {
    if (raw.has("run", "n")) fail(raw.at("run", "n").line, "'n' must be >= 1");
  }
  if (cfg.formats != "csv,json" && cfg.formats != "csv" && cfg.formats != "json") {
    if (raw.has("run", "formats"))
      fail(raw.at("run", "formats").line,
           "key 'formats' expects csv, json, or csv,json; got '" + cfg.formats + "'");
  }

  cfg.lyap_gamma = detail::want_double(raw, "lyapunov", "gamma", cfg.lyap_gamma);
  cfg.lyap_delta = detail::want_double(raw, "lyapunov", "delta", cfg.lyap_delta);
  cfg.lyap_R0 = detail::want_double(raw, "lyapunov", "R0", cfg.lyap_R0);
  // Admissibility is a parse-time constraint: the error names the bound.
  try {
    choose_lyapunov_params(cfg.lyap_gamma, cfg.fluid, cfg.modes, cfg.lyap_R0, cfg.lyap_delta);
  } catch (const std::exception& e) {
    const int line = raw.has("lyapunov", "delta") ? raw.at("lyapunov", "delta").line
                     : raw.has("lyapunov", "gamma") ? raw.at("lyapunov", "gamma").line
                                                    : 0;
    if (line > 0) fail(line, std::string("[lyapunov]: ") + e.what());
    throw detail::ConfigError(std::string("[lyapunov]: ") + e.what());
  }

  cfg.target = detail::want_vec2(raw, "control", "target", cfg.target);
  cfg.eps1 = detail::want_double(raw, "control", "eps1", cfg.eps1);
  cfg.samples_per_unit =
      detail::want_int(raw, "control", "samples_per_unit", cfg.samples_per_unit);
  cfg.tube_eps = detail::want_double(raw, "control", "tube_eps", cfg.tube_eps);
  if (cfg.samples_per_unit < 1) {
    if (raw.has("control", "samples_per_unit"))
      fail(raw.at("control", "samples_per_unit").line, "'samples_per_unit' must be >= 1");
  }
  if (!(cfg.tube_eps >= 0.0)) {
    if (raw.has("control", "tube_eps"))
      fail(raw.at("control", "tube_eps").line, "'tube_eps' must be >= 0");
  }

  cfg.which = detail::want_string(raw, "diagnose", "which", cfg.which);
  {
    static const std::set<std::string> kinds = {"hookean", "escape",   "drift",
                                                "hormander", "converge", "tube"};
    if (kinds.find(cfg.which) == kinds.end() && raw.has("diagnose", "which"))
      fail(raw.at("diagnose", "which").line,
           "key 'which' expects one of hookean|escape|drift|hormander|converge|tube, got '" +
               cfg.which + "'");
  }
  cfg.diag_n = detail::want_int(raw, "diagnose", "n", cfg.diag_n);
  cfg.diag_horizon = detail::want_double(raw, "diagnose", "horizon", cfg.diag_horizon);
  cfg.diag_t = detail::want_double(raw, "diagnose", "t", cfg.diag_t);
  cfg.diag_eps = detail::want_double(raw, "diagnose", "eps", cfg.diag_eps);
  cfg.initials = detail::want_int(raw, "diagnose", "initials", cfg.initials);
  cfg.r_points = detail::want_int(raw, "diagnose", "r_points", cfg.r_points);
  cfg.times = detail::want_double_list(raw, "diagnose", "times", cfg.times);
  cfg.hookean_gamma = detail::want_double(raw, "diagnose", "hookean_gamma", cfg.hookean_gamma);

  // Cross-validation: a requested escape radius must sit inside the
  // potential's certified repulsion range when the user pinned it.
  if (raw.has("diagnose", "eps")) {
    const auto& kv = raw.at("diagnose", "eps");
    if (!(cfg.diag_eps > 0.0)) fail(kv.line, "'eps' must be > 0");
    const double probe = cfg.potential.kind == PotentialSpec::Kind::fene_repulsive
                             ? 0.95 * cfg.potential.R
                             : std::max(1.0, 2.0 * cfg.diag_eps);
    const PotentialCertificate cert = verify_assumptions(cfg.potential, probe);
    if (cert.passed_small_r && cfg.diag_eps > cert.eps0 * (1.0 + 1e-9))
      fail(kv.line, "'eps' = " + format_double(cfg.diag_eps) +
                        " exceeds the certified repulsion radius eps0 = " +
                        format_double(cert.eps0));
  }
  return cfg;
}

/// The canonical echo: an equivalent document with every default explicit.
/// parse_config(echo_config(cfg)) reproduces cfg, and the echo is the
/// manifest's config-of-record.
inline std::string echo_config(const RunConfig& cfg) {
  std::string out;
  auto kv = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  auto kd = [&](const std::string& k, double v) { kv(k, format_double(v)); };
  auto ki = [&](const std::string& k, long long v) { kv(k, std::to_string(v)); };

  out += "[fluid]\n";
  kd("lambda", cfg.fluid.lambda);
  kd("nu", cfg.fluid.nu);
  kd("beta", cfg.fluid.beta);

  out += "\n[modes]\n";
  {
    std::string set;
    for (std::size_t i = 0; i < cfg.modes.size(); ++i) {
      const Mode& m = cfg.modes.modes()[i];
      if (i) set += "; ";
      set += std::to_string(m.kx) + " " + std::to_string(m.ky) + " " + format_double(m.sigma);
    }
    kv("set", set);
  }

  out += "\n[potential]\n";
  kv("spec", potential_to_string(cfg.potential));

  out += "\n[sim]\n";
  kd("dt", cfg.sim.dt);
  kd("kappa", cfg.sim.kappa);
  kd("r_min_guard", cfg.sim.r_min_guard);
  ki("record_stride", cfg.sim.record_stride);
  kv("track_center", cfg.sim.track_center ? "true" : "false");
  kd("substep_rel_tol", cfg.sim.substep_rel_tol);

  out += "\n[run]\n";
  kv("seed", std::to_string(cfg.seed));
  kd("horizon", cfg.horizon);
  kv("r0", format_double(cfg.r0.x()) + " " + format_double(cfg.r0.y()));
  kv("z0", cfg.z0);
  ki("n", cfg.n);
  kv("out_dir", cfg.out_dir);
  kv("formats", cfg.formats);

  out += "\n[lyapunov]\n";
  kd("gamma", cfg.lyap_gamma);
  kd("delta", cfg.lyap_delta);
  kd("R0", cfg.lyap_R0);

  out += "\n[control]\n";
  kv("target", format_double(cfg.target.x()) + " " + format_double(cfg.target.y()));
  kd("eps1", cfg.eps1);
  ki("samples_per_unit", cfg.samples_per_unit);
  kd("tube_eps", cfg.tube_eps);

  out += "\n[diagnose]\n";
  kv("which", cfg.which);
  ki("n", cfg.diag_n);
  kd("horizon", cfg.diag_horizon);
  kd("t", cfg.diag_t);
  kd("eps", cfg.diag_eps);
  ki("initials", cfg.initials);
  ki("r_points", cfg.r_points);
  {
    std::string ts;
    for (std::size_t i = 0; i < cfg.times.size(); ++i) {
      if (i) ts += " ";
      ts += format_double(cfg.times[i]);
    }
    kv("times", ts);
  }
  kd("hookean_gamma", cfg.hookean_gamma);
  return out;
}

}  // namespace beadspring
