#pragma once

#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "beadspring/common.hpp"

namespace beadspring {

/// Radial interaction potentials Phi(|r|) for the connector vector.
/// Variants:
///   hookean:        gamma |r|^2 / 2
///   linear_rest:    gamma (|r| - R)^2 / 2
///   power_law:      |r|^(2q) / (2q) + |r|^(-alpha) / alpha
///   fene_repulsive: -gamma_f R^2 log(1 - |r|^2/R^2) / 2 + |r|^(-alpha) / alpha
struct PotentialSpec {
  enum class Kind { hookean, linear_rest, power_law, fene_repulsive };

  Kind kind = Kind::hookean;
  double gamma = 1.0;  // spring constant (hookean, linear_rest, fene_repulsive)
  double R = 1.0;      // rest length (linear_rest) or maximal extension (fene)
  double q = 1.0;      // growth exponent (power_law)
  double alpha = 12.0; // repulsion exponent (power_law, fene_repulsive)

  static PotentialSpec hookean(double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("hookean: gamma must be > 0");
    PotentialSpec p;
    p.kind = Kind::hookean;
    p.gamma = gamma;
    return p;
  }
  static PotentialSpec linear_rest(double gamma, double R) {
    if (!(gamma > 0.0) || !(R > 0.0))
      throw std::invalid_argument("linear_rest: gamma and R must be > 0");
    PotentialSpec p;
    p.kind = Kind::linear_rest;
    p.gamma = gamma;
    p.R = R;
    return p;
  }
  static PotentialSpec power_law(double q, double alpha) {
    if (!(q >= 1.0)) throw std::invalid_argument("power_law: q must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("power_law: alpha must be > 0");
    PotentialSpec p;
    p.kind = Kind::power_law;
    p.q = q;
    p.alpha = alpha;
    return p;
  }
  static PotentialSpec fene_repulsive(double gamma_f, double R, double alpha) {
    if (!(gamma_f > 0.0) || !(R > 0.0) || !(alpha > 0.0))
      throw std::invalid_argument("fene_repulsive: parameters must be > 0");
    PotentialSpec p;
    p.kind = Kind::fene_repulsive;
    p.gamma = gamma_f;
    p.R = R;
    p.alpha = alpha;
    return p;
  }

  /// True when Phi blows up at |r| = 0 (needs the origin guard).
  bool is_singular() const {
    return kind == Kind::power_law || kind == Kind::fene_repulsive;
  }
};

/// Phi as a function of the radius s = |r|.
inline double phi_radial(const PotentialSpec& p, double s) {
  switch (p.kind) {
    case PotentialSpec::Kind::hookean:
      return 0.5 * p.gamma * s * s;
    case PotentialSpec::Kind::linear_rest: {
      const double d = s - p.R;
      return 0.5 * p.gamma * d * d;
    }
    case PotentialSpec::Kind::power_law:
      if (s <= 0.0) throw std::domain_error("singular point");
      return std::pow(s, 2.0 * p.q) / (2.0 * p.q) + std::pow(s, -p.alpha) / p.alpha;
    case PotentialSpec::Kind::fene_repulsive: {
      if (s <= 0.0) throw std::domain_error("singular point");
      if (s >= p.R) throw std::domain_error("beyond extensibility");
      const double x = s / p.R;
      return -0.5 * p.gamma * p.R * p.R * std::log1p(-x * x) +
             std::pow(s, -p.alpha) / p.alpha;
    }
  }
  throw std::logic_error("unreachable");
}

/// dPhi/ds.
inline double dphi_radial(const PotentialSpec& p, double s) {
  switch (p.kind) {
    case PotentialSpec::Kind::hookean:
      return p.gamma * s;
    case PotentialSpec::Kind::linear_rest:
      return p.gamma * (s - p.R);
    case PotentialSpec::Kind::power_law:
      if (s <= 0.0) throw std::domain_error("singular point");
      return std::pow(s, 2.0 * p.q - 1.0) - std::pow(s, -p.alpha - 1.0);
    case PotentialSpec::Kind::fene_repulsive: {
      if (s <= 0.0) throw std::domain_error("singular point");
      if (s >= p.R) throw std::domain_error("beyond extensibility");
      const double x = s / p.R;
      return p.gamma * s / (1.0 - x * x) - std::pow(s, -p.alpha - 1.0);
    }
  }
  throw std::logic_error("unreachable");
}

inline double phi(const PotentialSpec& p, const Vec2& r) { return phi_radial(p, r.norm()); }

/// grad Phi = Phi'(|r|) r/|r|, radial by construction.  For the two
/// non-singular variants the value at r = 0 is the zero vector (hookean has
/// gradient zero there; linear_rest has no limit, and we pick the symmetric
/// value on that measure-zero point).
inline Vec2 grad_phi(const PotentialSpec& p, const Vec2& r) {
  const double s = r.norm();
  switch (p.kind) {
    case PotentialSpec::Kind::hookean:
      return p.gamma * r;
    case PotentialSpec::Kind::linear_rest:
      if (s == 0.0) return Vec2::Zero();
      return (p.gamma * (s - p.R) / s) * r;
    case PotentialSpec::Kind::power_law: {
      if (s <= 0.0) throw std::domain_error("singular point");
      const double radial = std::pow(s, 2.0 * p.q - 2.0) - std::pow(s, -p.alpha - 2.0);
      return radial * r;
    }
    case PotentialSpec::Kind::fene_repulsive: {
      if (s <= 0.0) throw std::domain_error("singular point");
      if (s >= p.R) throw std::domain_error("beyond extensibility");
      const double x = s / p.R;
      const double radial = p.gamma / (1.0 - x * x) - std::pow(s, -p.alpha - 2.0);
      return radial * r;
    }
  }
  throw std::logic_error("unreachable");
}

/// Result of scanning the coercivity / repulsion inequalities on a log grid.
/// passed_* means the stated inequality holds at every scanned point; the
/// reported constants are honest infima over the scan, not extrapolations
/// below r_floor.
struct PotentialCertificate {
  bool passed_large_r = false;  ///< grad Phi . r >= gamma |r|^2 on [R0, R_probe]
  double R0 = 0.0;
  double gamma = 0.0;
  bool passed_small_r = false;  ///< -grad Phi . r >= c on [r_floor, eps0]
  double eps0 = 0.0;
  double c = 0.0;
  double r_floor = 0.0;
  double R_probe = 0.0;
  int grid_n = 0;
};

namespace detail {
/// grad Phi . r evaluated on the ray, as a function of s = |r|.
inline double radial_flux(const PotentialSpec& p, double s) { return dphi_radial(p, s) * s; }

inline std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> g(n);
  const double ratio = std::log(hi / lo);
  for (int i = 0; i < n; ++i) g[i] = lo * std::exp(ratio * i / double(n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}
}  // namespace detail

/// Direct check of the large-r inequality grad Phi . r >= gamma |r|^2 on a
/// log grid over [R0, R_probe].
inline bool check_spring_large_r(const PotentialSpec& p, double R0, double gamma, double R_probe,
                                 int grid_n = 20000) {
  for (double s : detail::log_grid(R0, R_probe, grid_n))
    if (detail::radial_flux(p, s) < gamma * s * s) return false;
  return true;
}

/// Direct check of the small-r inequality -grad Phi . r >= c on a log grid
/// over [r_floor, eps0].
inline bool check_spring_small_r(const PotentialSpec& p, double r_floor, double eps0, double c,
                                 int grid_n = 20000) {
  for (double s : detail::log_grid(r_floor, eps0, grid_n))
    if (-detail::radial_flux(p, s) < c) return false;
  return true;
}

/// Scan [r_floor, R_probe] on a log grid and report certified constants:
///  - R0: smallest grid point from which grad Phi . r / |r|^2 stays positive
///    up to R_probe; gamma: the infimum of that ratio on [R0, R_probe].
///  - eps0: largest grid point below which -grad Phi . r stays positive down
///    to r_floor; c: the infimum of that flux on [r_floor, eps0].
/// The trailing grid point below r_floor is never extrapolated; a variant
/// whose repulsion degenerates in the limit (linear_rest) reports a small
/// honest c rather than failing.
inline PotentialCertificate verify_assumptions(const PotentialSpec& p, double R_probe,
                                               double r_floor = 1e-4, int grid_n = 4000) {
  if (!(r_floor > 0.0) || !(R_probe > r_floor))
    throw std::invalid_argument("verify_assumptions: need 0 < r_floor < R_probe");
  if (p.kind == PotentialSpec::Kind::fene_repulsive && R_probe >= p.R)
    throw std::domain_error("beyond extensibility");
  if (grid_n < 16) throw std::invalid_argument("verify_assumptions: grid too coarse");

  PotentialCertificate cert;
  cert.r_floor = r_floor;
  cert.R_probe = R_probe;
  cert.grid_n = grid_n;

  const auto grid = detail::log_grid(r_floor, R_probe, grid_n);
  std::vector<double> flux(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) flux[i] = detail::radial_flux(p, grid[i]);

  // Large-r: suffix infimum of flux/s^2.
  {
    double inf_ratio = std::numeric_limits<double>::infinity();
    int best = -1;
    double best_gamma = 0.0;
    for (int i = static_cast<int>(grid.size()) - 1; i >= 0; --i) {
      const double ratio = flux[i] / (grid[i] * grid[i]);
      inf_ratio = std::min(inf_ratio, ratio);
      if (inf_ratio > 0.0) {
        best = i;
        best_gamma = inf_ratio;
      }
    }
    if (best >= 0) {
      cert.passed_large_r = true;
      cert.R0 = grid[best];
      cert.gamma = best_gamma;
    }
  }

  // Small-r: prefix infimum of -flux.
  {
    double inf_neg = std::numeric_limits<double>::infinity();
    int best = -1;
    double best_c = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      inf_neg = std::min(inf_neg, -flux[i]);
      if (inf_neg > 0.0) {
        best = static_cast<int>(i);
        best_c = inf_neg;
      } else {
        break;
      }
    }
    if (best >= 0) {
      cert.passed_small_r = true;
      cert.eps0 = grid[best];
      cert.c = best_c;
    }
  }
  return cert;
}

/// Parse "hookean gamma=1", "power_law q=1 alpha=12", etc.
inline PotentialSpec parse_potential(const std::string& text) {
  std::istringstream in(text);
  std::string name;
  if (!(in >> name)) throw std::invalid_argument("potential: empty specification");
  double gamma = 1.0, R = 1.0, q = 1.0, alpha = 12.0;
  bool saw_gamma = false, saw_R = false, saw_q = false, saw_alpha = false;
  std::string kv;
  while (in >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("potential: expected key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    double val;
    if (!parse_double(kv.substr(eq + 1), val))
      throw std::invalid_argument("potential: malformed number in '" + kv + "'");
    if (key == "gamma") gamma = val, saw_gamma = true;
    else if (key == "R") R = val, saw_R = true;
    else if (key == "q") q = val, saw_q = true;
    else if (key == "alpha") alpha = val, saw_alpha = true;
    else throw std::invalid_argument("potential: unknown key '" + key + "'");
  }
  auto forbid = [&](bool saw, const char* key) {
    if (saw)
      throw std::invalid_argument(std::string("potential: key '") + key +
                                  "' not valid for variant " + name);
  };
  if (name == "hookean") {
    forbid(saw_R, "R"), forbid(saw_q, "q"), forbid(saw_alpha, "alpha");
    return PotentialSpec::hookean(gamma);
  }
  if (name == "linear_rest") {
    forbid(saw_q, "q"), forbid(saw_alpha, "alpha");
    return PotentialSpec::linear_rest(gamma, R);
  }
  if (name == "power_law") {
    forbid(saw_gamma, "gamma"), forbid(saw_R, "R");
    return PotentialSpec::power_law(q, alpha);
  }
  if (name == "fene_repulsive") {
    forbid(saw_q, "q");
    return PotentialSpec::fene_repulsive(gamma, R, alpha);
  }
  throw std::invalid_argument("potential: unknown variant '" + name + "'");
}

inline std::string potential_to_string(const PotentialSpec& p) {
  switch (p.kind) {
    case PotentialSpec::Kind::hookean:
      return "hookean gamma=" + format_double(p.gamma);
    case PotentialSpec::Kind::linear_rest:
      return "linear_rest gamma=" + format_double(p.gamma) + " R=" + format_double(p.R);
    case PotentialSpec::Kind::power_law:
      return "power_law q=" + format_double(p.q) + " alpha=" + format_double(p.alpha);
    case PotentialSpec::Kind::fene_repulsive:
      return "fene_repulsive gamma=" + format_double(p.gamma) + " R=" + format_double(p.R) +
             " alpha=" + format_double(p.alpha);
  }
  throw std::logic_error("unreachable");
}

}  // namespace beadspring
