#pragma once

#include <cmath>
#include <string>

#include "snv/error.hpp"
#include "snv/hamiltonian.hpp"

namespace snv {

inline constexpr double kExcitedLambda = 3000.0;  // GHz, held fixed in all fits
inline constexpr double kMaxMisalignmentDeg = 5.0;

// Full parameter set of one emitter. Manifold parameters lambda and f are
// shared between emitters of one sample; strain, calibrated field amplitudes
// and the misalignment are per emitter.
struct SnVModel {
  std::string emitter;
  ManifoldParams ground{};
  ManifoldParams excited{kExcitedLambda, 0.0, 0.0, 0.0};
  double b_parallel_cal = 0.0;  // T, calibrated amplitude along the axis (0: use nominal)
  double b_perp_cal = 0.0;      // T, calibrated amplitude transverse to the axis
  double delta_theta = 0.0;     // deg

  void validate() const {
    ground.validate();
    excited.validate();
    require(b_parallel_cal >= 0.0 && b_perp_cal >= 0.0,
            "calibrated field amplitudes must be >= 0");
    require(std::isfinite(delta_theta) && std::abs(delta_theta) < kMaxMisalignmentDeg,
            "|delta_theta| must be below 5 degrees (mis-assigned data?)");
  }

  friend bool operator==(const SnVModel&, const SnVModel&) = default;
};

// Reference parameter sets of the four characterised emitters. SnV-D is the
// unstrained emitter that fixes lambda_g. The quenching factors are shared.
namespace table_one {

inline constexpr double lambda_g = 822.0;
inline constexpr double f32_g = 0.268;
inline constexpr double f32_u = 0.251;
inline constexpr double f12_g = 0.486;
inline constexpr double f12_u = 0.500;

[[nodiscard]] inline SnVModel shared(std::string emitter) {
  SnVModel m;
  m.emitter = std::move(emitter);
  m.ground = {lambda_g, f12_g, f32_g, 0.0};
  m.excited = {kExcitedLambda, f12_u, f32_u, 0.0};
  return m;
}

[[nodiscard]] inline SnVModel snv_a() {
  SnVModel m = shared("A");
  m.ground.upsilon = 35.0;
  m.excited.upsilon = 60.0;
  m.b_parallel_cal = 0.19344;
  m.b_perp_cal = 0.19348;
  m.delta_theta = -0.08;
  return m;
}

[[nodiscard]] inline SnVModel snv_b() {
  SnVModel m = shared("B");
  m.ground.upsilon = 577.3;
  m.excited.upsilon = 961.9;
  m.b_parallel_cal = 0.19346;
  m.b_perp_cal = 0.18903;
  m.delta_theta = -0.54;
  return m;
}

[[nodiscard]] inline SnVModel snv_c() {
  SnVModel m = shared("C");
  m.ground.upsilon = 530.0;
  m.excited.upsilon = 921.4;
  m.b_parallel_cal = 0.19347;
  m.b_perp_cal = 0.19345;
  m.delta_theta = -0.46;
  return m;
}

[[nodiscard]] inline SnVModel snv_d() { return shared("D"); }

}  // namespace table_one

}  // namespace snv
