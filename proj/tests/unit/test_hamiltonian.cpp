#include "catch_amalgamated.hpp"

#include <random>

#include "snv/hamiltonian.hpp"
#include "snv/model.hpp"
#include "snv/transitions.hpp"

using namespace snv;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

// Reference values below come from tests/oracles/derive_values.py (numpy and
// mpmath, independent of this code base) and are frozen here.

TEST_CASE("ground splitting matches the high-precision oracle") {
  CHECK_THAT(ground_splitting(822.0, 577.3), WithinRel(1417.316182084999691336614, 1e-12));
  CHECK_THAT(ground_splitting(822.0, 35.0), WithinRel(824.9751511409298199456548, 1e-12));
  CHECK(ground_splitting(822.0, 0.0) == 822.0);
  CHECK_THROWS_AS(ground_splitting(0.0, 10.0), Error);
  CHECK_THROWS_AS(ground_splitting(822.0, -1.0), Error);
}

TEST_CASE("PL doublet separation of the numeric Hamiltonian equals the splitting relation") {
  SnVModel m;
  m.ground = {822.0, 0.486, 0.268, 577.3};
  CHECK_THAT(pl_doublet_separation(m, FieldSnV::zero()), WithinRel(1417.316182084999691336614, 1e-12));
}

TEST_CASE("qubit splitting at a tilted field matches the oracle") {
  SnVModel m;
  m.ground = {822.0, 0.486, 0.268, 35.0};
  const auto f = FieldSnV::from_components(0.19344, 0.0);
  CHECK_THAT(qubit_splitting(m, f), WithinRel(6.86052971426318, 1e-12));
}

TEST_CASE("Hamiltonian is Hermitian and traceless in both bases") {
  const ManifoldParams p{822.0, 0.486, 0.268, 577.3};
  const auto f = FieldSnV::from_polar(0.19, 37.0, 20.0);
  for (Basis b : {Basis::xy, Basis::so}) {
    const auto h = build_full_hamiltonian(p, f, b);
    CHECK(h.hermiticity_defect() < 1e-12);
    CHECK(std::abs(h.trace()) < 1e-9);
  }
}

TEST_CASE("zero field spectrum is two Kramers doublets") {
  const ManifoldParams p{822.0, 0.486, 0.268, 577.3};
  const auto e = manifold_energies(p, FieldSnV::zero());
  CHECK_THAT(e.lower_split(), WithinAbs(0.0, 1e-10));
  CHECK_THAT(e[3] - e[2], WithinAbs(0.0, 1e-10));
  CHECK_THAT(e.doublet_separation(), WithinRel(ground_splitting(822.0, 577.3), 1e-12));
}

TEST_CASE("eigenvalues agree between the xy and spin-orbit bases over 1000 draws") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const ManifoldParams p{3000.0 * u(rng), u(rng), u(rng), 1000.0 * u(rng)};
    const auto f = FieldSnV::from_components(3.0 * u(rng) - 1.5, 1.5 * u(rng));
    const auto a = manifold_energies(p, f);
    const auto b = manifold_energies_so(p, f);
    for (std::size_t k = 0; k < 4; ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("spectrum is invariant under the azimuth of the transverse field") {
  const ManifoldParams p{822.0, 0.486, 0.268, 300.0};
  const auto a = manifold_energies(p, FieldSnV::from_polar(0.3, 50.0, 0.0));
  for (double phi : {17.0, 90.0, 233.0}) {
    const auto b = manifold_energies(p, FieldSnV::from_polar(0.3, 50.0, phi));
    for (std::size_t k = 0; k < 4; ++k) CHECK_THAT(a[k], WithinAbs(b[k], 1e-10));
  }
}

TEST_CASE("field constructors validate and fold angles") {
  CHECK_THROWS_AS(FieldSnV::from_polar(-0.1, 0.0), Error);
  CHECK_THROWS_AS(FieldSnV::from_components(0.1, -0.1), Error);
  const auto f = FieldSnV::from_polar(0.2, 270.0);
  CHECK_THAT(f.b_perp, WithinAbs(0.2, 1e-15));
  CHECK_THAT(f.b_par, WithinAbs(0.0, 1e-15));
  CHECK(f.theta == 90.0);
}

TEST_CASE("manifold parameters are validated") {
  CHECK_THROWS_AS((ManifoldParams{-1.0, 0.5, 0.5, 0.0}.validate()), Error);
  CHECK_THROWS_AS((ManifoldParams{822.0, 1.5, 0.5, 0.0}.validate()), Error);
  CHECK_THROWS_AS((ManifoldParams{822.0, 0.5, 0.5, -3.0}.validate()), Error);
  CHECK_NOTHROW((ManifoldParams{0.0, 0.0, 1.0, 0.0}.validate()));
}
