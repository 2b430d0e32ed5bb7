#pragma once

// Spectroscopic observables derived from the manifold spectra, the analytic
// limits used as independent oracles, lab-frame field conversion and
// field-rotation maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "snv/error.hpp"
#include "snv/hamiltonian.hpp"
#include "snv/model.hpp"
#include "snv/units.hpp"

namespace snv {

struct TransitionObservables {
  double qubit = 0.0;            // GHz, E2 - E1 of the ground manifold
  double allowed_split = 0.0;    // GHz, signed: dGround - dExcited
  double forbidden_split = 0.0;  // GHz: dGround + dExcited
};

[[nodiscard]] inline TransitionObservables observables(const SnVModel& model,
                                                       const FieldSnV& field,
                                                       const PhysicalConstants& c = {}) {
  const double dg = manifold_energies_so(model.ground, field, c).lower_split();
  const double du = manifold_energies_so(model.excited, field, c).lower_split();
  return {dg, dg - du, dg + du};
}

// Qubit splitting only; skips the excited manifold.
[[nodiscard]] inline double qubit_splitting(const SnVModel& model, const FieldSnV& field,
                                            const PhysicalConstants& c = {}) {
  return manifold_energies_so(model.ground, field, c).lower_split();
}

// Ground-state doublet separation as seen in PL (C-D line spacing).
[[nodiscard]] inline double pl_doublet_separation(const SnVModel& model, const FieldSnV& field,
                                                  const PhysicalConstants& c = {}) {
  return manifold_energies_so(model.ground, field, c).doublet_separation();
}

[[nodiscard]] inline double ground_splitting(double lambda, double upsilon) {
  require(lambda > 0.0, "lambda must be > 0");
  require(upsilon >= 0.0, "upsilon must be >= 0");
  return std::sqrt(lambda * lambda + 4.0 * upsilon * upsilon);
}

enum class ClosedFormRegime {
  qubit_parallel_nostrain,
  allowed_parallel_nostrain,
  qubit_perpendicular,
  allowed_perpendicular,
  qubit_parallel_strained,
};

[[nodiscard]] constexpr std::string_view to_string(ClosedFormRegime r) noexcept {
  switch (r) {
    case ClosedFormRegime::qubit_parallel_nostrain: return "qubit_parallel_nostrain";
    case ClosedFormRegime::allowed_parallel_nostrain: return "allowed_parallel_nostrain";
    case ClosedFormRegime::qubit_perpendicular: return "qubit_perpendicular";
    case ClosedFormRegime::allowed_perpendicular: return "allowed_perpendicular";
    case ClosedFormRegime::qubit_parallel_strained: return "qubit_parallel_strained";
  }
  return "unknown";
}

namespace detail {

inline constexpr double kOrientationTol = 1e-12;

inline void require_parallel(const FieldSnV& f, ClosedFormRegime r) {
  if (std::abs(f.b_perp) > kOrientationTol * std::max(1.0, f.magnitude))
    fail(ErrorKind::invalid_argument,
         std::string(to_string(r)) + " needs a field parallel to the axis (b_perp = 0), got b_perp = " +
             std::to_string(f.b_perp) + " T");
}

inline void require_perpendicular(const FieldSnV& f, ClosedFormRegime r) {
  if (std::abs(f.b_par) > kOrientationTol * std::max(1.0, f.magnitude))
    fail(ErrorKind::invalid_argument,
         std::string(to_string(r)) + " needs a field perpendicular to the axis (b_par = 0), got b_par = " +
             std::to_string(f.b_par) + " T");
}

inline void require_unstrained(const ManifoldParams& p, std::string_view which, ClosedFormRegime r) {
  if (p.upsilon != 0.0)
    fail(ErrorKind::invalid_argument, std::string(to_string(r)) + " assumes zero strain, but " +
                                          std::string(which) + " upsilon = " + std::to_string(p.upsilon));
}

// Half the difference of the two perpendicular-field branches. Equals minus
// the lower-doublet splitting of a manifold at b_par = 0.
inline double perpendicular_branch_difference(double gamma_s, double b_perp, double alpha,
                                              double lambda) {
  const double zs = gamma_s * b_perp;
  return 0.5 * (std::sqrt((zs - 2 * alpha) * (zs - 2 * alpha) + lambda * lambda) -
                std::sqrt((zs + 2 * alpha) * (zs + 2 * alpha) + lambda * lambda));
}

}  // namespace detail

// Analytic transition expressions in their limiting regimes. The
// perpendicular and strained-parallel qubit forms
// come out as E1 - E2 (negative); compare their magnitudes with observables().
[[nodiscard]] inline double closed_form(ClosedFormRegime regime, const SnVModel& m,
                                        const FieldSnV& f, const PhysicalConstants& c = {}) {
  const double gl = c.gamma_l;
  const double gs = c.gamma_s;
  switch (regime) {
    case ClosedFormRegime::qubit_parallel_nostrain:
      detail::require_parallel(f, regime);
      detail::require_unstrained(m.ground, "ground", regime);
      return f.b_par * (2.0 * m.ground.f_32 * gl + gs);
    case ClosedFormRegime::allowed_parallel_nostrain:
      detail::require_parallel(f, regime);
      detail::require_unstrained(m.ground, "ground", regime);
      detail::require_unstrained(m.excited, "excited", regime);
      return 2.0 * f.b_par * (m.ground.f_32 - m.excited.f_32) * gl;
    case ClosedFormRegime::qubit_perpendicular:
      detail::require_perpendicular(f, regime);
      return detail::perpendicular_branch_difference(gs, f.b_perp, m.ground.upsilon, m.ground.lambda);
    case ClosedFormRegime::allowed_perpendicular:
      detail::require_perpendicular(f, regime);
      return detail::perpendicular_branch_difference(gs, f.b_perp, m.excited.upsilon,
                                                     m.excited.lambda) -
             detail::perpendicular_branch_difference(gs, f.b_perp, m.ground.upsilon,
                                                     m.ground.lambda);
    case ClosedFormRegime::qubit_parallel_strained: {
      detail::require_parallel(f, regime);
      const auto& g = m.ground;
      const double orb = gl * f.b_par * (g.f_12 + g.f_32);
      const double a2 = 4.0 * g.upsilon * g.upsilon;
      return 0.5 * (std::sqrt((g.lambda - orb) * (g.lambda - orb) + a2) -
                    std::sqrt((g.lambda + orb) * (g.lambda + orb) + a2) +
                    2.0 * gl * f.b_par * (g.f_12 - g.f_32) - 2.0 * f.b_par * gs);
    }
  }
  fail(ErrorKind::invalid_argument, "unknown closed-form regime");
}

// ---------------------------------------------------------------------------
// Lab frame

using Vec3 = std::array<double, 3>;

[[nodiscard]] inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

[[nodiscard]] inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

struct LabFrameCalibration {
  Vec3 coil_gains{-45.7, 61.5, 133.5};  // mT/A for coils X, Y, Z
  std::map<std::string, Vec3> snv_axes;  // unit vectors, lab coordinates

  // Normalizes and stores an axis; three-digit reference axes are only
  // unit-norm to ~1e-4.
  void set_axis(const std::string& emitter, const Vec3& axis) {
    const double n = norm(axis);
    require(std::isfinite(n) && n > 0.0, "SnV axis of emitter " + emitter + " has zero norm");
    snv_axes[emitter] = {axis[0] / n, axis[1] / n, axis[2] / n};
  }

  [[nodiscard]] static LabFrameCalibration table_two() {
    LabFrameCalibration cal;
    cal.set_axis("A", {-0.081, 0.834, -0.546});
    cal.set_axis("B", {0.011, 0.722, 0.692});
    cal.set_axis("C", {-0.015, 0.883, -0.468});
    return cal;
  }

  [[nodiscard]] const Vec3& axis(const std::string& emitter) const {
    const auto it = snv_axes.find(emitter);
    if (it == snv_axes.end()) fail(ErrorKind::invalid_argument, "unknown emitter label '" + emitter + "'");
    require(norm(it->second) > 0.0, "SnV axis of emitter " + emitter + " has zero norm");
    return it->second;
  }
};

// Coil currents (A) to lab-frame field (T).
[[nodiscard]] inline Vec3 lab_field_from_currents(const Vec3& currents_a,
                                                  const LabFrameCalibration& cal) {
  return {currents_a[0] * cal.coil_gains[0] * 1e-3, currents_a[1] * cal.coil_gains[1] * 1e-3,
          currents_a[2] * cal.coil_gains[2] * 1e-3};
}

[[nodiscard]] inline FieldSnV field_in_snv_frame(const Vec3& b_lab, const LabFrameCalibration& cal,
                                                 const std::string& emitter) {
  const Vec3& n = cal.axis(emitter);
  const double nn = norm(n);
  const Vec3 u{n[0] / nn, n[1] / nn, n[2] / nn};
  const double par = dot(b_lab, u);
  const Vec3 perp{b_lab[0] - par * u[0], b_lab[1] - par * u[1], b_lab[2] - par * u[2]};
  FieldSnV f = FieldSnV::from_components(par, norm(perp));
  f.magnitude = norm(b_lab);
  return f;
}

[[nodiscard]] inline FieldSnV field_from_currents(const Vec3& currents_a,
                                                  const LabFrameCalibration& cal,
                                                  const std::string& emitter) {
  return field_in_snv_frame(lab_field_from_currents(currents_a, cal), cal, emitter);
}

// ---------------------------------------------------------------------------
// Rotation maps

enum class RotationPlane { xy, yz };

[[nodiscard]] constexpr std::string_view to_string(RotationPlane p) noexcept {
  return p == RotationPlane::xy ? "xy" : "yz";
}

[[nodiscard]] inline RotationPlane parse_plane(std::string_view s) {
  if (s == "xy") return RotationPlane::xy;
  if (s == "yz") return RotationPlane::yz;
  fail(ErrorKind::invalid_argument, "plane must be 'xy' or 'yz', got '" + std::string(s) + "'");
}

struct RotationMapPoint {
  double theta = 0.0;  // deg
  double phi = 0.0;    // deg
  TransitionObservables observables;
};

// Field for one sweep angle. In the yz plane the angle is the nominal polar
// angle and the true polar angle is angle - delta_theta, so features that sit
// at 90 deg in the defect frame appear at 90 + delta_theta in the sweep. The
// two amplitudes allow separately calibrated parallel and transverse fields.
[[nodiscard]] inline FieldSnV field_on_plane(RotationPlane plane, double angle_deg,
                                             double b_par_amp, double b_perp_amp,
                                             double delta_theta_deg) {
  if (plane == RotationPlane::xy) {
    FieldSnV f = FieldSnV::from_components(0.0, b_perp_amp, angle_deg);
    f.theta = 90.0;
    return f;
  }
  const double t = angle_deg - delta_theta_deg;
  FieldSnV f = FieldSnV::from_components(b_par_amp * cos_deg(t), b_perp_amp * std::abs(sin_deg(t)), 90.0);
  return f;
}

[[nodiscard]] inline std::vector<double> default_theta_grid(double step_deg = 2.0) {
  require(step_deg > 0.0, "grid step must be > 0");
  std::vector<double> grid;
  for (int k = 0;; ++k) {
    const double t = k * step_deg;
    if (t >= 360.0 - 1e-9) break;
    grid.push_back(t);
  }
  return grid;
}

namespace detail {

// Runs fn(i) for i in [0, n) on up to `jobs` threads; each index is written
// by exactly one thread, so output order does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  // Per-worker exception slots; the lowest failing worker's error is rethrown.
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (unsigned w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

[[nodiscard]] inline std::vector<RotationMapPoint> rotation_map(const SnVModel& model,
                                                                double magnitude,
                                                                RotationPlane plane,
                                                                std::span<const double> grid,
                                                                const PhysicalConstants& c = {},
                                                                unsigned jobs = 1) {
  require(magnitude > 0.0, "rotation map magnitude must be > 0");
  require(!grid.empty(), "rotation map grid must not be empty");
  std::vector<RotationMapPoint> out(grid.size());
  detail::parallel_for(grid.size(), jobs, [&](std::size_t i) {
    const FieldSnV f = field_on_plane(plane, grid[i], magnitude, magnitude, model.delta_theta);
    RotationMapPoint& p = out[i];
    if (plane == RotationPlane::xy) {
      p.theta = 90.0;
      p.phi = wrap_degrees(grid[i]);
    } else {
      p.theta = wrap_degrees(grid[i]);
      p.phi = 90.0;
    }
    p.observables = observables(model, f, c);
  });
  return out;
}

}  // namespace snv
