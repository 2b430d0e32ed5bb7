#pragma once

// Effective 4x4 electron-spin Hamiltonian of one SnV manifold (ground or
// excited). Basis ordering in the {xy} basis is |orbital, spin> with index
// 2*orbital + spin, orbital in {e_x, e_y} and spin in {up, down}. The
// spin-orbit ({so}) basis is reached with the unitary transform `T` returned
// by build_component_matrices.
//
// Units: energies in GHz, fields in tesla, gyromagnetic ratios in GHz/T.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <string>

#include <Eigen/Dense>

#include "snv/error.hpp"
#include "snv/units.hpp"

namespace snv {

using Complex = std::complex<double>;
using Matrix4c = Eigen::Matrix<Complex, 4, 4>;
using Matrix4r = Eigen::Matrix<double, 4, 4>;

struct PhysicalConstants {
  double gamma_l = 14.0;       // orbital, GHz/T
  double gamma_s = 28.0;       // electron spin, GHz/T
  double gamma_c13 = 10.7084;  // 13C nuclear spin, MHz/T

  void validate() const {
    require(gamma_l > 0.0 && gamma_s > 0.0 && gamma_c13 > 0.0,
            "physical constants must be strictly positive");
  }
};

// Parameters of one manifold. `upsilon` is the diagonalised strain coupling
// (the alpha of the matrix representation).
struct ManifoldParams {
  double lambda = 0.0;   // spin-orbit splitting, GHz
  double f_12 = 0.0;     // orbital quenching of the m_j = +-1/2 doublet
  double f_32 = 0.0;     // orbital quenching of the m_j = +-3/2 doublet
  double upsilon = 0.0;  // strain, GHz

  void validate() const {
    require(std::isfinite(lambda) && lambda >= 0.0, "lambda must be >= 0");
    require(std::isfinite(upsilon) && upsilon >= 0.0, "upsilon must be >= 0");
    require(f_12 >= 0.0 && f_12 <= 1.0, "f_12 must lie in [0, 1]");
    require(f_32 >= 0.0 && f_32 <= 1.0, "f_32 must lie in [0, 1]");
  }

  friend bool operator==(const ManifoldParams&, const ManifoldParams&) = default;
};

// Magnetic field in the defect frame. Only b_par and b_perp enter the
// Hamiltonian; theta, phi and magnitude are kept for sweep bookkeeping.
struct FieldSnV {
  double b_par = 0.0;      // T, along the quantization axis
  double b_perp = 0.0;     // T, transverse magnitude, >= 0
  double theta = 0.0;      // deg, polar angle in [0, 180]
  double phi = 0.0;        // deg
  double magnitude = 0.0;  // T

  // Polar angles outside [0, 180] are folded back (theta -> 360 - theta,
  // phi -> phi + 180) so that b_perp stays non-negative.
  [[nodiscard]] static FieldSnV from_polar(double magnitude, double theta_deg,
                                           double phi_deg = 0.0) {
    require(std::isfinite(magnitude) && magnitude >= 0.0,
            "field magnitude must be finite and >= 0");
    double theta = wrap_degrees(theta_deg);
    double phi = phi_deg;
    if (theta > 180.0) {
      theta = 360.0 - theta;
      phi = wrap_degrees(phi + 180.0);
    }
    FieldSnV f;
    f.magnitude = magnitude;
    f.theta = theta;
    f.phi = phi;
    f.b_par = magnitude * cos_deg(theta);
    f.b_perp = magnitude * sin_deg(theta);
    return f;
  }

  [[nodiscard]] static FieldSnV from_components(double b_par, double b_perp,
                                                double phi_deg = 0.0) {
    require(std::isfinite(b_par) && std::isfinite(b_perp),
            "field components must be finite");
    require(b_perp >= 0.0, "b_perp must be >= 0");
    FieldSnV f;
    f.b_par = b_par;
    f.b_perp = b_perp;
    f.magnitude = std::hypot(b_par, b_perp);
    f.theta = f.magnitude > 0.0 ? rad_to_deg(std::atan2(b_perp, b_par)) : 0.0;
    f.phi = phi_deg;
    return f;
  }

  [[nodiscard]] static FieldSnV zero() { return {}; }
};

class HermitianMatrix4 {
 public:
  HermitianMatrix4() : m_(Matrix4c::Zero()) {}

  explicit HermitianMatrix4(const Matrix4c& m) : m_(m) {
    require(hermiticity_defect() <= 1e-12 * std::max(1.0, m_.cwiseAbs().maxCoeff()),
            "matrix is not Hermitian");
  }

  [[nodiscard]] const Matrix4c& matrix() const noexcept { return m_; }
  [[nodiscard]] Complex operator()(int i, int j) const { return m_(i, j); }

  // max |H_ij - conj(H_ji)|
  [[nodiscard]] double hermiticity_defect() const {
    return (m_ - m_.adjoint()).cwiseAbs().maxCoeff();
  }

  [[nodiscard]] Complex trace() const { return m_.trace(); }

  friend HermitianMatrix4 operator+(const HermitianMatrix4& a, const HermitianMatrix4& b) {
    HermitianMatrix4 out;
    out.m_ = a.m_ + b.m_;
    return out;
  }

 private:
  Matrix4c m_;
};

struct LevelEnergies {
  std::array<double, 4> energies{};  // GHz, ascending

  [[nodiscard]] double operator[](std::size_t i) const { return energies[i]; }
  [[nodiscard]] double sum() const {
    return energies[0] + energies[1] + energies[2] + energies[3];
  }
  // Splitting of the lower doublet, E2 - E1.
  [[nodiscard]] double lower_split() const { return energies[1] - energies[0]; }
  // Centre-to-centre separation of the two doublets.
  [[nodiscard]] double doublet_separation() const {
    return 0.5 * (energies[2] + energies[3]) - 0.5 * (energies[0] + energies[1]);
  }
};

struct ComponentMatrices {
  HermitianMatrix4 spin_orbit;      // -lambda L_z S_z
  HermitianMatrix4 spin_zeeman;     // gamma_s S.B
  HermitianMatrix4 orbital_zeeman;  // quenched orbital Zeeman, {xy} basis
  HermitianMatrix4 strain;          // diag(a, a, -a, -a)
  Matrix4c transform;               // unitary T: T^dagger H_so^xy T is diagonal
};

enum class Basis { xy, so };

namespace detail {

inline Matrix4c so_transform() {
  const Complex i{0.0, 1.0};
  Matrix4c t;
  // clang-format off
  t << i,   0.0, -i,  0.0,
       0.0, -i,  0.0, i,
       1.0, 0.0, 1.0, 0.0,
       0.0, 1.0, 0.0, 1.0;
  // clang-format on
  return t / std::sqrt(2.0);
}

}  // namespace detail

[[nodiscard]] inline ComponentMatrices build_component_matrices(
    const ManifoldParams& p, const FieldSnV& field, const PhysicalConstants& c = {}) {
  const Complex i{0.0, 1.0};
  const double half_lambda = 0.5 * p.lambda;
  const double bz = field.b_par;
  const double bx = field.b_perp;

  Matrix4c so = Matrix4c::Zero();
  so(0, 2) = -i * half_lambda;
  so(1, 3) = i * half_lambda;
  so(2, 0) = i * half_lambda;
  so(3, 1) = -i * half_lambda;

  Matrix4c ze = Matrix4c::Zero();
  const double hs = 0.5 * c.gamma_s;
  ze(0, 0) = hs * bz;
  ze(0, 1) = hs * bx;
  ze(1, 0) = hs * bx;
  ze(1, 1) = -hs * bz;
  ze(2, 2) = hs * bz;
  ze(2, 3) = hs * bx;
  ze(3, 2) = hs * bx;
  ze(3, 3) = -hs * bz;

  Matrix4c zl = Matrix4c::Zero();
  const double hl = 0.5 * c.gamma_l * bz;
  const double diff = p.f_32 - p.f_12;
  const double sum = p.f_12 + p.f_32;
  zl(0, 0) = hl * diff;
  zl(1, 1) = -hl * diff;
  zl(2, 2) = hl * diff;
  zl(3, 3) = -hl * diff;
  zl(0, 2) = i * hl * sum;
  zl(1, 3) = i * hl * sum;
  zl(2, 0) = -i * hl * sum;
  zl(3, 1) = -i * hl * sum;

  Matrix4c st = Matrix4c::Zero();
  st(0, 0) = p.upsilon;
  st(1, 1) = p.upsilon;
  st(2, 2) = -p.upsilon;
  st(3, 3) = -p.upsilon;

  return ComponentMatrices{HermitianMatrix4(so), HermitianMatrix4(ze),
                           HermitianMatrix4(zl), HermitianMatrix4(st),
                           detail::so_transform()};
}

// Full Hamiltonian in the spin-orbit eigenbasis. Real symmetric.
[[nodiscard]] inline Matrix4r so_basis_matrix(const ManifoldParams& p, const FieldSnV& field,
                                              const PhysicalConstants& c = {}) {
  const double bz = field.b_par;
  const double bx = field.b_perp;
  const double gl = c.gamma_l;
  const double gs = c.gamma_s;
  const double a = p.upsilon;
  const double t = 0.5 * gs * bx;
  Matrix4r h;
  // clang-format off
  h << 0.5 * ((2 * p.f_32 * gl + gs) * bz - p.lambda), 0.0, -a, t,
       0.0, 0.5 * ((-2 * p.f_32 * gl - gs) * bz - p.lambda), t, -a,
       -a, t, 0.5 * ((-2 * p.f_12 * gl + gs) * bz + p.lambda), 0.0,
       t, -a, 0.0, 0.5 * ((2 * p.f_12 * gl - gs) * bz + p.lambda);
  // clang-format on
  return h;
}

[[nodiscard]] inline HermitianMatrix4 build_full_hamiltonian(const ManifoldParams& p,
                                                             const FieldSnV& field, Basis basis,
                                                             const PhysicalConstants& c = {}) {
  if (basis == Basis::so) {
    return HermitianMatrix4(so_basis_matrix(p, field, c).cast<Complex>());
  }
  const auto parts = build_component_matrices(p, field, c);
  return parts.spin_orbit + parts.spin_zeeman + parts.orbital_zeeman + parts.strain;
}

[[nodiscard]] inline LevelEnergies spectrum(const HermitianMatrix4& h) {
  Eigen::SelfAdjointEigenSolver<Matrix4c> solver(h.matrix(), Eigen::EigenvaluesOnly);
  LevelEnergies out;
  for (int k = 0; k < 4; ++k) out.energies[static_cast<std::size_t>(k)] = solver.eigenvalues()(k);
  std::sort(out.energies.begin(), out.energies.end());
  return out;
}

// Sorted eigenvalues of the {xy}-basis Hamiltonian.
[[nodiscard]] inline LevelEnergies manifold_energies(const ManifoldParams& p,
                                                     const FieldSnV& field,
                                                     const PhysicalConstants& c = {}) {
  return spectrum(build_full_hamiltonian(p, field, Basis::xy, c));
}

// Same spectrum as manifold_energies, computed from the real symmetric
// {so}-basis form. Used on the hot path of fits and rotation maps.
[[nodiscard]] inline LevelEnergies manifold_energies_so(const ManifoldParams& p,
                                                        const FieldSnV& field,
                                                        const PhysicalConstants& c = {}) {
  Eigen::SelfAdjointEigenSolver<Matrix4r> solver(so_basis_matrix(p, field, c),
                                                 Eigen::EigenvaluesOnly);
  LevelEnergies out;
  for (int k = 0; k < 4; ++k) out.energies[static_cast<std::size_t>(k)] = solver.eigenvalues()(k);
  std::sort(out.energies.begin(), out.energies.end());
  return out;
}

}  // namespace snv
