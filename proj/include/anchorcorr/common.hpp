#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace anchorcorr {

// Normalized image coordinate. u runs along image columns (x), v along rows (y).
// The whole library maps pixel (row r, col c) of an HxW image to
// (u, v) = (c/(W-1), r/(H-1)), matching the align-corners sampling convention.
struct Vec2 {
  double u = 0.0;
  double v = 0.0;
};

inline bool in_unit_square(const Vec2& p) {
  return p.u >= 0.0 && p.u <= 1.0 && p.v >= 0.0 && p.v <= 1.0;
}

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

inline Vec2 clamp_unit(const Vec2& p) { return {clamp01(p.u), clamp01(p.v)}; }

inline double pixel_to_norm(int i, int n) {
  return n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
}

// distance between two normalized points measured in pixels of an HxW image
inline double norm_dist_px(const Vec2& a, const Vec2& b, int height, int width) {
  const double du = (a.u - b.u) * static_cast<double>(width - 1);
  const double dv = (a.v - b.v) * static_cast<double>(height - 1);
  return std::sqrt(du * du + dv * dv);
}

struct EmptyAnchorError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InsufficientDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ResolutionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PairingError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace anchorcorr
