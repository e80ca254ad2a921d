#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace beadspring {

using Vec2 = Eigen::Vector2d;
using VecX = Eigen::VectorXd;
using Mat2 = Eigen::Matrix2d;
using Mat2X = Eigen::Matrix2Xd;
using MatX = Eigen::MatrixXd;

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Rotate a lattice direction by +90 degrees: (k1,k2) -> (-k2,k1).
inline Vec2 perp(const Vec2& k) { return Vec2(-k.y(), k.x()); }

inline bool finite(const Vec2& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); }

/// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

/// Strict double parse: the whole token must be consumed.
inline bool parse_double(std::string_view tok, double& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc{} && res.ptr == tok.data() + tok.size();
}

inline bool parse_int(std::string_view tok, int& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc{} && res.ptr == tok.data() + tok.size();
}

}  // namespace beadspring
