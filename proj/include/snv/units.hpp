#pragma once

#include <cmath>
#include <numbers>

namespace snv {

[[nodiscard]] constexpr double deg_to_rad(double deg) noexcept {
  return deg * std::numbers::pi / 180.0;
}

[[nodiscard]] constexpr double rad_to_deg(double rad) noexcept {
  return rad * 180.0 / std::numbers::pi;
}

// Reduce an angle in degrees to [0, 360).
[[nodiscard]] inline double wrap_degrees(double deg) noexcept {
  double w = std::fmod(deg, 360.0);
  if (w < 0.0) w += 360.0;
  if (w >= 360.0) w -= 360.0;
  return w;
}

// cos/sin of an angle in degrees, exact at multiples of 90 degrees so that
// a field nominally perpendicular to the axis has b_par == 0.
[[nodiscard]] inline double cos_deg(double deg) noexcept {
  const double w = wrap_degrees(deg);
  if (w == 0.0) return 1.0;
  if (w == 90.0 || w == 270.0) return 0.0;
  if (w == 180.0) return -1.0;
  return std::cos(deg_to_rad(w));
}

[[nodiscard]] inline double sin_deg(double deg) noexcept {
  const double w = wrap_degrees(deg);
  if (w == 0.0 || w == 180.0) return 0.0;
  if (w == 90.0) return 1.0;
  if (w == 270.0) return -1.0;
  return std::sin(deg_to_rad(w));
}

}  // namespace snv
