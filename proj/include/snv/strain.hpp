#pragma once

// Projection of lab-frame strain tensors onto the four <111> defect
// orientations: symmetry-adapted components, ground-state splitting from the
// spin-degenerate strain Hamiltonian, and the ZPL shift.
//
// Lab frame: x || [110], y || [-110], z || [001] (membrane normal). The four
// defect axes all have z >= 0 in this frame and are mapped onto each other by
// 90 degree turns about z, which leave any strain response unchanged (the
// combination with inversion is a lattice symmetry and strain is even).

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "snv/error.hpp"
#include "snv/transitions.hpp"
#include "snv/units.hpp"

namespace snv {

struct StrainTensor {
  double xx = 0.0, yy = 0.0, zz = 0.0;
  double xy = 0.0, yz = 0.0, zx = 0.0;

  [[nodiscard]] static StrainTensor from_matrix(const Eigen::Matrix3d& m) {
    return {m(0, 0), m(1, 1), m(2, 2), 0.5 * (m(0, 1) + m(1, 0)), 0.5 * (m(1, 2) + m(2, 1)),
            0.5 * (m(2, 0) + m(0, 2))};
  }

  [[nodiscard]] Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d m;
    // clang-format off
    m << xx, xy, zx,
         xy, yy, yz,
         zx, yz, zz;
    // clang-format on
    return m;
  }

  [[nodiscard]] double trace() const { return xx + yy + zz; }
  [[nodiscard]] double frobenius_norm() const { return matrix().norm(); }
  [[nodiscard]] bool finite() const { return matrix().allFinite(); }
};

struct StrainSusceptibilities {
  double d = 0.8e6;        // GHz per unit strain
  double f = -0.56e6;
  double t_par = -1.7e6;
  double t_perp = 0.078e6;
};

struct SymmetryComponents {
  double eps_a1 = 0.0;  // GHz
  double eps_ex = 0.0;
  double eps_ey = 0.0;
};

[[nodiscard]] inline Eigen::Matrix3d rotation_z(double deg) {
  const double c = cos_deg(deg), s = sin_deg(deg);
  Eigen::Matrix3d r;
  // clang-format off
  r << c, -s, 0,
       s,  c, 0,
       0,  0, 1;
  // clang-format on
  return r;
}

[[nodiscard]] inline Eigen::Matrix3d rotation_y(double deg) {
  const double c = cos_deg(deg), s = sin_deg(deg);
  Eigen::Matrix3d r;
  // clang-format off
  r <<  c, 0, s,
        0, 1, 0,
       -s, 0, c;
  // clang-format on
  return r;
}

inline constexpr double kReferenceTheta = 90.0;
inline constexpr double kReferencePhi = 54.0;

// eps -> R eps R^T with R = Rz(theta) Ry(phi).
[[nodiscard]] inline StrainTensor rotate_strain(const StrainTensor& eps, double theta_deg = kReferenceTheta,
                                                double phi_deg = kReferencePhi) {
  require(eps.finite(), "strain tensor must be finite");
  const Eigen::Matrix3d r = rotation_z(theta_deg) * rotation_y(phi_deg);
  return StrainTensor::from_matrix(r * eps.matrix() * r.transpose());
}

[[nodiscard]] inline SymmetryComponents symmetry_components(const StrainTensor& e,
                                                            const StrainSusceptibilities& chi = {}) {
  return {chi.t_perp * (e.xx + e.yy) + chi.t_par * e.zz, chi.d * (e.xx - e.yy) + chi.f * e.zx,
          -2.0 * chi.d * e.xy - chi.f * e.yz};
}

// 2x2 orbital strain block tensored with the spin identity.
[[nodiscard]] inline Eigen::Matrix4d strain_hamiltonian(const SymmetryComponents& s) {
  Eigen::Matrix2d orb;
  orb << s.eps_a1 - s.eps_ex, s.eps_ey, s.eps_ey, s.eps_a1 + s.eps_ex;
  Eigen::Matrix4d h = Eigen::Matrix4d::Zero();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      h(2 * i, 2 * j) = orb(i, j);
      h(2 * i + 1, 2 * j + 1) = orb(i, j);
    }
  return h;
}

[[nodiscard]] inline double analytic_splitting(const SymmetryComponents& s) {
  return 2.0 * std::hypot(s.eps_ex, s.eps_ey);
}

// Rows are the defect x, y, z axes in lab coordinates, so a lab tensor maps
// to the defect frame as F eps F^T.
struct DefectFrame {
  Eigen::Matrix3d rows = Eigen::Matrix3d::Identity();

  [[nodiscard]] Vec3 axis() const { return {rows(2, 0), rows(2, 1), rows(2, 2)}; }
};

enum class Orientation { o_m1m11, o_1m11, o_111, o_m111 };

inline constexpr std::array kAllOrientations{Orientation::o_111, Orientation::o_m111, Orientation::o_1m11,
                                             Orientation::o_m1m11};

[[nodiscard]] constexpr std::string_view to_string(Orientation o) noexcept {
  switch (o) {
    case Orientation::o_111: return "111";
    case Orientation::o_m111: return "-111";
    case Orientation::o_1m11: return "1-11";
    case Orientation::o_m1m11: return "-1-11";
  }
  return "unknown";
}

// Accepts each axis and its inverse, e.g. "1-1-1" for "-111".
[[nodiscard]] inline Orientation parse_orientation_label(std::string_view s) {
  std::string t(s);
  std::erase_if(t, [](char c) { return c == '[' || c == ']' || c == ' '; });
  if (t == "111" || t == "-1-1-1") return Orientation::o_111;
  if (t == "-111" || t == "1-1-1") return Orientation::o_m111;
  if (t == "1-11" || t == "-11-1") return Orientation::o_1m11;
  if (t == "-1-11" || t == "11-1") return Orientation::o_m1m11;
  fail(ErrorKind::invalid_argument, "unknown orientation label '" + std::string(s) + "'");
}

inline const double kMagicAngleDeg = rad_to_deg(std::acos(1.0 / std::sqrt(3.0)));

// The [-1-11] frame is Rz(90) Ry(magic angle); the others follow by turning
// the lab frame in 90 degree steps about [001].
[[nodiscard]] inline DefectFrame defect_frame(Orientation o) {
  const auto k = static_cast<int>(o);
  return {rotation_z(kReferenceTheta) * rotation_y(kMagicAngleDeg) * rotation_z(-90.0 * k)};
}

[[nodiscard]] inline StrainTensor to_defect_frame(const StrainTensor& eps_lab, const DefectFrame& f) {
  return StrainTensor::from_matrix(f.rows * eps_lab.matrix() * f.rows.transpose());
}

struct SplittingZpl {
  double gs_splitting = 0.0;  // GHz, eigenvalue difference of the strain Hamiltonian
  double zpl_shift = 0.0;     // GHz
  SymmetryComponents components;
};

[[nodiscard]] inline SplittingZpl splitting_and_zpl(const StrainTensor& eps_lab, const DefectFrame& frame,
                                                    const StrainSusceptibilities& chi = {}) {
  require(eps_lab.finite(), "strain tensor must be finite");
  const SymmetryComponents s = symmetry_components(to_defect_frame(eps_lab, frame), chi);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> solver(strain_hamiltonian(s), Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();  // ascending, pairwise degenerate
  return {std::max(0.0, 0.5 * (ev(2) + ev(3)) - 0.5 * (ev(0) + ev(1))), s.eps_a1, s};
}

[[nodiscard]] inline SplittingZpl splitting_and_zpl(const StrainTensor& eps_lab, Orientation o,
                                                    const StrainSusceptibilities& chi = {}) {
  return splitting_and_zpl(eps_lab, defect_frame(o), chi);
}

struct StrainGridPoint {
  double x_um = 0.0;
  double y_um = 0.0;
  StrainTensor eps;
};

struct StrainMapRow {
  double x_um = 0.0;
  double y_um = 0.0;
  Orientation orientation = Orientation::o_111;
  double gs_splitting = 0.0;  // GHz
  double zpl_shift = 0.0;     // GHz
};

// One row per grid point and orientation, grid order outermost.
[[nodiscard]] inline std::vector<StrainMapRow> strain_map(const std::vector<StrainGridPoint>& grid,
                                                          const StrainSusceptibilities& chi = {},
                                                          unsigned jobs = 1) {
  require(!grid.empty(), "strain grid is empty", ErrorKind::dataset);
  std::vector<StrainMapRow> rows(grid.size() * kAllOrientations.size());
  detail::parallel_for(grid.size(), jobs, [&](std::size_t i) {
    const auto& g = grid[i];
    require(std::isfinite(g.x_um) && std::isfinite(g.y_um) && g.eps.finite(),
            "strain grid row " + std::to_string(i) + " is not finite", ErrorKind::dataset);
    for (std::size_t k = 0; k < kAllOrientations.size(); ++k) {
      const auto r = splitting_and_zpl(g.eps, kAllOrientations[k], chi);
      rows[i * kAllOrientations.size() + k] = {g.x_um, g.y_um, kAllOrientations[k], r.gs_splitting, r.zpl_shift};
    }
  });
  return rows;
}

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kZplWavelengthNm = 619.0;

// Magnitude of the wavelength change for a frequency shift, to first order.
[[nodiscard]] inline double ghz_to_nm(double shift_ghz, double wavelength_nm = kZplWavelengthNm) {
  return std::abs(shift_ghz) * 1e9 * (wavelength_nm * 1e-9) * (wavelength_nm * 1e-9) / kSpeedOfLight * 1e9;
}

[[nodiscard]] inline double nm_to_ghz(double shift_nm, double wavelength_nm = kZplWavelengthNm) {
  return std::abs(shift_nm) * 1e-9 * kSpeedOfLight / ((wavelength_nm * 1e-9) * (wavelength_nm * 1e-9)) * 1e-9;
}

}  // namespace snv
