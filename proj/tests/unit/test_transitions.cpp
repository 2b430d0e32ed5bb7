#include "catch_amalgamated.hpp"

#include <random>

#include "snv/selftest.hpp"
#include "snv/transitions.hpp"

using namespace snv;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SnVModel reference_b() { return table_one::snv_b(); }

}  // namespace

TEST_CASE("closed forms evaluate to the frozen oracle values") {
  SnVModel m = table_one::shared("A");
  const auto par = FieldSnV::from_components(0.19344, 0.0);
  CHECK_THAT(closed_form(ClosedFormRegime::qubit_parallel_nostrain, m, par), WithinRel(6.86789376, 1e-12));
  CHECK_THAT(closed_form(ClosedFormRegime::allowed_parallel_nostrain, m, par),
             WithinRel(0.0920774400000001, 1e-12));

  m.ground.upsilon = 35.0;
  const auto perp = FieldSnV::from_components(0.0, 0.19348);
  CHECK_THAT(closed_form(ClosedFormRegime::qubit_perpendicular, m, perp), WithinRel(-0.459665581538559, 1e-12));
  CHECK_THAT(qubit_splitting(m, perp), WithinRel(0.459665581538502, 1e-12));
}

TEST_CASE("allowed splitting in the unstrained parallel limit equals the closed form") {
  SnVModel m = table_one::shared("A");
  const auto f = FieldSnV::from_components(0.19344, 0.0);
  CHECK_THAT(observables(m, f).allowed_split, WithinRel(0.0920774400000001, 1e-9));
}

TEST_CASE("closed forms reject fields outside their regime") {
  SnVModel m = table_one::shared("A");
  const auto tilted = FieldSnV::from_polar(0.19, 30.0);
  CHECK_THROWS_AS(closed_form(ClosedFormRegime::qubit_parallel_nostrain, m, tilted), Error);
  CHECK_THROWS_AS(closed_form(ClosedFormRegime::qubit_perpendicular, m, tilted), Error);
  m.ground.upsilon = 10.0;
  CHECK_THROWS_AS(closed_form(ClosedFormRegime::qubit_parallel_nostrain, m, FieldSnV::from_components(0.1, 0.0)),
                  Error);
}

TEST_CASE("observables vanish at zero field") {
  const auto o = observables(reference_b(), FieldSnV::zero());
  CHECK_THAT(o.qubit, WithinAbs(0.0, 1e-10));
  CHECK_THAT(o.allowed_split, WithinAbs(0.0, 1e-10));
  CHECK_THAT(o.forbidden_split, WithinAbs(0.0, 1e-10));
}

TEST_CASE("forbidden splitting bounds the allowed splitting") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    SnVModel m;
    m.ground = {100.0 + 2000.0 * u(rng), u(rng), u(rng), 1000.0 * u(rng)};
    m.excited = {3000.0, u(rng), u(rng), 1000.0 * u(rng)};
    const auto o = observables(m, FieldSnV::from_polar(1.5 * u(rng), 180.0 * u(rng)));
    CHECK(o.qubit >= 0.0);
    CHECK(o.forbidden_split >= std::abs(o.allowed_split) - 1e-12);
  }
}

TEST_CASE("qubit splitting is symmetric under theta -> 180 - theta") {
  const SnVModel m = reference_b();
  for (double t = 0.0; t <= 90.0; t += 7.5) {
    const double a = qubit_splitting(m, FieldSnV::from_polar(0.19, t));
    const double b = qubit_splitting(m, FieldSnV::from_polar(0.19, 180.0 - t));
    CHECK_THAT(a, WithinAbs(b, 1e-9));
  }
}

TEST_CASE("rotation maps") {
  SECTION("2 degree grid has 180 points in grid order") {
    const auto grid = default_theta_grid(2.0);
    REQUIRE(grid.size() == 180);
    const auto pts = rotation_map(reference_b(), 0.19, RotationPlane::yz, grid);
    REQUIRE(pts.size() == grid.size());
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK(pts[i].theta == grid[i]);
  }
  SECTION("xy plane of an unstrained emitter shows no allowed splitting") {
    const auto pts = rotation_map(table_one::snv_d(), 0.19, RotationPlane::xy, default_theta_grid(10.0));
    for (const auto& p : pts) CHECK_THAT(p.observables.allowed_split, WithinAbs(0.0, 1e-10));
  }
  SECTION("xy plane of a strained emitter is constant") {
    const auto pts = rotation_map(reference_b(), 0.19, RotationPlane::xy, default_theta_grid(10.0));
    for (const auto& p : pts) CHECK_THAT(p.observables.allowed_split, WithinAbs(pts[0].observables.allowed_split, 1e-10));
  }
  SECTION("thread count does not change the result") {
    const auto grid = default_theta_grid(2.0);
    const auto a = rotation_map(reference_b(), 0.19, RotationPlane::yz, grid, {}, 1);
    const auto b = rotation_map(reference_b(), 0.19, RotationPlane::yz, grid, {}, 4);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].observables.qubit == b[i].observables.qubit);
  }
  SECTION("invalid input") {
    CHECK_THROWS_AS(rotation_map(reference_b(), 0.0, RotationPlane::yz, default_theta_grid()), Error);
    CHECK_THROWS_AS(default_theta_grid(0.0), Error);
    CHECK_THROWS_AS(parse_plane("xz"), Error);
  }
}

TEST_CASE("misalignment shifts the perpendicular minimum by delta_theta") {
  SnVModel m = reference_b();
  m.delta_theta = -0.54;
  const auto at = [&](double angle) {
    return qubit_splitting(m, field_on_plane(RotationPlane::yz, angle, 0.19, 0.19, m.delta_theta));
  };
  // the true perpendicular orientation sits at nominal 90 + delta_theta
  CHECK(at(90.0 + m.delta_theta) < at(90.0 + m.delta_theta + 0.3));
  CHECK(at(90.0 + m.delta_theta) < at(90.0 + m.delta_theta - 0.3));
}

TEST_CASE("lab frame conversion") {
  const auto cal = LabFrameCalibration::table_two();
  for (const char* e : {"A", "B", "C"}) CHECK_THAT(norm(cal.axis(e)), WithinAbs(1.0, 1e-15));
  const Vec3 axis = cal.axis("B");
  // field along the axis has no transverse part
  const auto f = field_in_snv_frame({0.1 * axis[0], 0.1 * axis[1], 0.1 * axis[2]}, cal, "B");
  CHECK_THAT(f.b_par, WithinAbs(0.1, 1e-15));
  CHECK_THAT(f.b_perp, WithinAbs(0.0, 1e-9));
  const auto g = field_from_currents({1.0, 0.0, 0.0}, cal, "A");
  CHECK_THAT(g.magnitude, WithinRel(0.0457, 1e-12));
  CHECK_THAT(std::hypot(g.b_par, g.b_perp), WithinRel(0.0457, 1e-12));
  CHECK_THROWS_AS(cal.axis("Z"), Error);
  LabFrameCalibration bad;
  CHECK_THROWS_AS(bad.set_axis("X", {0.0, 0.0, 0.0}), Error);
}

TEST_CASE("selftest passes with its pinned seed") {
  const auto rep = run_selftest();
  INFO(rep.text());
  CHECK(rep.all_passed());
  for (const auto& c : rep.checks) CHECK(c.cases == 1000);
}
