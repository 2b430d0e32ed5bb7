#include "catch_amalgamated.hpp"

#include <random>

#include "snv/strain.hpp"
#include "snv/synthetic.hpp"

using namespace snv;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

StrainTensor random_tensor(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1e-3, 1e-3);
  return {u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

}  // namespace

TEST_CASE("symmetry components match the oracle") {
  const StrainTensor iso{1.0, 1.0, 1.0, 0.0, 0.0, 0.0};
  const auto s = symmetry_components(iso);
  CHECK_THAT(s.eps_a1, WithinRel(-1544000.0, 1e-15));
  CHECK(s.eps_ex == 0.0);
  CHECK(s.eps_ey == 0.0);
  const auto shear = symmetry_components({0.0, 0.0, 0.0, 1.0, 0.0, 0.0});
  CHECK_THAT(shear.eps_ey, WithinRel(-1600000.0, 1e-15));
  CHECK(shear.eps_a1 == 0.0);
  CHECK(shear.eps_ex == 0.0);
  const auto zero = symmetry_components({});
  CHECK((zero.eps_a1 == 0.0 && zero.eps_ex == 0.0 && zero.eps_ey == 0.0));
}

TEST_CASE("splitting of the strain Hamiltonian") {
  const SymmetryComponents s{0.0, 3.0, 4.0};
  CHECK_THAT(analytic_splitting(s), WithinRel(10.0, 1e-15));
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(strain_hamiltonian(s));
  CHECK_THAT(es.eigenvalues()(3) - es.eigenvalues()(0), WithinRel(10.0, 1e-12));

  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    const StrainTensor e = random_tensor(rng);
    for (Orientation o : kAllOrientations) {
      const auto r = splitting_and_zpl(e, o);
      CHECK(r.gs_splitting >= 0.0);
      CHECK_THAT(r.gs_splitting, WithinRel(analytic_splitting(r.components), 1e-10));
    }
  }
}

TEST_CASE("isotropic strain does not split any orientation") {
  const StrainTensor iso{2e-4, 2e-4, 2e-4, 0.0, 0.0, 0.0};
  for (Orientation o : kAllOrientations) {
    const auto r = splitting_and_zpl(iso, o);
    CHECK_THAT(r.gs_splitting, WithinAbs(0.0, 1e-9));
    CHECK_THAT(r.zpl_shift, WithinRel(-1544000.0 * 2e-4, 1e-12));
  }
}

TEST_CASE("rotation preserves trace and norm") {
  const StrainTensor e{1e-3, -2e-4, 5e-4, 3e-4, -1e-4, 2e-4};
  const auto same = rotate_strain(e, 0.0, 0.0);
  CHECK(same.matrix().isApprox(e.matrix(), 1e-15));
  const StrainTensor iso{3e-4, 3e-4, 3e-4, 0.0, 0.0, 0.0};
  CHECK(rotate_strain(iso, 33.0, 71.0).matrix().isApprox(iso.matrix(), 1e-12));

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> ang(-180.0, 180.0);
  for (int i = 0; i < 200; ++i) {
    const StrainTensor t = random_tensor(rng);
    const StrainTensor r = rotate_strain(t, ang(rng), ang(rng));
    CHECK_THAT(r.trace(), WithinAbs(t.trace(), 1e-12 * std::max(1.0, t.frobenius_norm())));
    CHECK_THAT(r.frobenius_norm(), WithinRel(t.frobenius_norm(), 1e-12));
  }
  CHECK_THROWS_AS(rotate_strain({std::numeric_limits<double>::quiet_NaN()}), Error);
}

TEST_CASE("reference rotation angles are pinned") {
  // default rotation Rz(90) Ry(54): a pure zz strain picks up these entries
  const StrainTensor zz{0.0, 0.0, 1.0, 0.0, 0.0, 0.0};
  const auto r = rotate_strain(zz);
  const double s = std::sin(54.0 * std::numbers::pi / 180.0), c = std::cos(54.0 * std::numbers::pi / 180.0);
  CHECK_THAT(r.yy, WithinRel(s * s, 1e-12));
  CHECK_THAT(r.zz, WithinRel(c * c, 1e-12));
  CHECK_THAT(r.yz, WithinRel(s * c, 1e-12));
  CHECK_THAT(r.xx, WithinAbs(0.0, 1e-15));
}

TEST_CASE("defect frames point along the four <111> axes") {
  for (Orientation o : kAllOrientations) {
    const auto f = defect_frame(o);
    CHECK((f.rows * f.rows.transpose()).isApprox(Eigen::Matrix3d::Identity(), 1e-14));
    const Vec3 a = f.axis();
    // lab z is [001]: every <111> axis makes the magic angle with it
    CHECK_THAT(a[2], WithinRel(1.0 / std::sqrt(3.0), 1e-14));
    CHECK_THAT(std::hypot(a[0], a[1]), WithinRel(std::sqrt(2.0 / 3.0), 1e-14));
  }
  CHECK(parse_orientation_label("[1-1-1]") == Orientation::o_m111);
  CHECK(parse_orientation_label("111") == Orientation::o_111);
  CHECK_THROWS_AS(parse_orientation_label("110"), Error);
}

TEST_CASE("splitting and ZPL are invariant under a common rotation") {
  std::mt19937_64 rng(29);
  for (int i = 0; i < 100; ++i) {
    const StrainTensor e = random_tensor(rng);
    const Eigen::Matrix3d rot = random_rotation(rng);
    const StrainTensor e_rot = StrainTensor::from_matrix(rot * e.matrix() * rot.transpose());
    for (Orientation o : kAllOrientations) {
      const DefectFrame f = defect_frame(o);
      const DefectFrame f_rot{f.rows * rot.transpose()};
      const auto a = splitting_and_zpl(e, f);
      const auto b = splitting_and_zpl(e_rot, f_rot);
      CHECK_THAT(b.gs_splitting, WithinAbs(a.gs_splitting, 1e-9 * std::max(1.0, a.gs_splitting)));
      CHECK_THAT(b.zpl_shift, WithinAbs(a.zpl_shift, 1e-9 * std::max(1.0, std::abs(a.zpl_shift))));
    }
  }
}

TEST_CASE("membrane cut: ZPL shift is the same for all orientations and reaches about 1 nm") {
  const auto cut = synthetic::membrane_cut();
  const auto rows = strain_map(cut);
  REQUIRE(rows.size() == 4 * cut.size());
  double centre = 0.0;
  for (std::size_t i = 0; i < cut.size(); ++i) {
    for (std::size_t k = 1; k < 4; ++k)
      CHECK_THAT(rows[4 * i + k].zpl_shift, WithinAbs(rows[4 * i].zpl_shift, 1e-9 * std::max(1.0, std::abs(rows[4 * i].zpl_shift))));
    centre = std::max(centre, std::abs(rows[4 * i].zpl_shift));
  }
  CHECK_THAT(rows.front().zpl_shift, WithinAbs(0.0, 1e-12));
  CHECK_THAT(ghz_to_nm(centre), WithinAbs(1.0, 0.05));
}

TEST_CASE("frequency and wavelength shifts convert at 619 nm") {
  CHECK_THAT(nm_to_ghz(1.0), WithinRel(782.4190301204976, 1e-12));
  CHECK_THAT(ghz_to_nm(782.4190301204976), WithinRel(1.0, 1e-12));
}

TEST_CASE("strain maps") {
  SECTION("uniform grid gives constant maps") {
    std::vector<StrainGridPoint> g;
    for (int i = 0; i < 5; ++i) g.push_back({1.0 * i, 0.0, {1e-4, -2e-4, 3e-5, 1e-5, 0.0, 2e-5}});
    const auto rows = strain_map(g, {}, 3);
    for (std::size_t i = 4; i < rows.size(); ++i) {
      CHECK(rows[i].gs_splitting == rows[i % 4].gs_splitting);
      CHECK(rows[i].zpl_shift == rows[i % 4].zpl_shift);
    }
  }
  SECTION("single point gives four rows") {
    CHECK(strain_map({{0.0, 0.0, {}}}).size() == 4);
  }
  SECTION("malformed input") {
    CHECK_THROWS_AS(strain_map({}), Error);
    std::vector<StrainGridPoint> g(8);
    g[5].eps.xy = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(strain_map(g, {}, 4), Error);
  }
}
