#pragma once

// Randomised agreement checks between the two Hamiltonian bases and between
// the analytic limits and the numeric observables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "snv/hamiltonian.hpp"
#include "snv/model.hpp"
#include "snv/transitions.hpp"

namespace snv {

struct SelfTestCheck {
  std::string name;
  std::size_t cases = 0;
  double worst = 0.0;      // largest deviation seen
  double tolerance = 0.0;  // absolute or relative, see `relative`
  bool relative = true;
  std::size_t sign_mismatches = 0;  // informational, signed comparisons only

  [[nodiscard]] bool passed() const { return cases > 0 && worst <= tolerance; }
};

struct SelfTestReport {
  std::vector<SelfTestCheck> checks;

  [[nodiscard]] bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed(); });
  }

  [[nodiscard]] std::string text() const {
    std::ostringstream os;
    std::size_t failures = 0;
    for (const auto& c : checks) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s %-28s cases=%zu worst=%.3e tol=%.0e (%s)", c.passed() ? "PASS" : "FAIL",
                    c.name.c_str(), c.cases, c.worst, c.tolerance, c.relative ? "relative" : "absolute GHz");
      os << buf;
      if (c.sign_mismatches) os << " sign_mismatches=" << c.sign_mismatches;
      os << '\n';
      if (!c.passed()) ++failures;
    }
    os << "selftest: " << checks.size() - failures << " passed, " << failures << " failed\n";
    return os.str();
  }
};

struct SelfTestOptions {
  std::size_t draws = 1000;
  std::uint64_t seed = 20240601;
  double eigen_tolerance = 1e-10;       // GHz
  double closed_form_tolerance = 1e-9;  // relative
};

namespace detail {

struct Draw {
  std::mt19937_64 rng;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
};

inline void record(SelfTestCheck& c, double closed, double numeric) {
  ++c.cases;
  const double dev = std::abs(closed - numeric) / (c.relative ? std::abs(numeric) : 1.0);
  c.worst = std::max(c.worst, std::isfinite(dev) ? dev : std::numeric_limits<double>::infinity());
}

}  // namespace detail

[[nodiscard]] inline SelfTestReport run_selftest(const SelfTestOptions& o = {}) {
  const PhysicalConstants pc;
  detail::Draw d{std::mt19937_64(o.seed)};

  SelfTestCheck bases{"basis_equivalence", 0, 0.0, o.eigen_tolerance, false};
  SelfTestCheck qpn{"qubit_parallel_nostrain", 0, 0.0, o.closed_form_tolerance};
  SelfTestCheck apn{"allowed_parallel_nostrain", 0, 0.0, o.closed_form_tolerance};
  SelfTestCheck qpp{"qubit_perpendicular", 0, 0.0, o.closed_form_tolerance};
  SelfTestCheck app{"allowed_perpendicular", 0, 0.0, o.closed_form_tolerance};
  SelfTestCheck qps{"qubit_parallel_strained", 0, 0.0, o.closed_form_tolerance};

  auto random_manifold = [&](double lambda_lo, double lambda_hi, double ups_lo, double ups_hi) {
    return ManifoldParams{d.uniform(lambda_lo, lambda_hi), d.uniform(0.0, 1.0), d.uniform(0.0, 1.0),
                          d.uniform(ups_lo, ups_hi)};
  };

  for (std::size_t i = 0; i < o.draws; ++i) {
    // Arbitrary field and parameters.
    {
      const ManifoldParams p = random_manifold(0.0, 3000.0, 0.0, 1000.0);
      const FieldSnV f = FieldSnV::from_components(d.uniform(-1.5, 1.5), d.uniform(0.0, 1.5));
      const LevelEnergies a = manifold_energies(p, f, pc);
      const LevelEnergies b = spectrum(build_full_hamiltonian(p, f, Basis::so, pc));
      double dev = 0.0;
      for (std::size_t k = 0; k < 4; ++k) dev = std::max(dev, std::abs(a[k] - b[k]));
      ++bases.cases;
      bases.worst = std::max(bases.worst, dev);
    }

    // Parallel field, no strain.
    {
      SnVModel m;
      m.ground = random_manifold(100.0, 3000.0, 0.0, 0.0);
      m.excited = random_manifold(1000.0, 3000.0, 0.0, 0.0);
      // keep the two quenching factors apart so the allowed split is not a
      // cancellation of two nearly equal numbers
      while (std::abs(m.ground.f_32 - m.excited.f_32) < 0.05) m.excited.f_32 = d.uniform(0.0, 1.0);
      const FieldSnV f = FieldSnV::from_components(d.uniform(0.05, 1.5), 0.0);
      const auto obs = observables(m, f, pc);
      detail::record(qpn, closed_form(ClosedFormRegime::qubit_parallel_nostrain, m, f, pc), obs.qubit);
      detail::record(apn, closed_form(ClosedFormRegime::allowed_parallel_nostrain, m, f, pc), obs.allowed_split);
    }

    // Perpendicular field with strain; the closed forms come out as E1 - E2.
    {
      SnVModel m;
      m.ground = random_manifold(100.0, 3000.0, 5.0, 1000.0);
      m.excited = random_manifold(1000.0, 3000.0, 5.0, 1000.0);
      const FieldSnV f = FieldSnV::from_components(0.0, d.uniform(0.05, 1.5));
      auto obs = observables(m, f, pc);
      double cf = closed_form(ClosedFormRegime::allowed_perpendicular, m, f, pc);
      // The allowed split is a difference of two splittings; redraw the
      // excited strain while that difference is a cancellation.
      while (std::abs(cf) < 1e-3 * std::max(obs.qubit, obs.forbidden_split - obs.qubit)) {
        m.excited.upsilon = d.uniform(5.0, 1000.0);
        obs = observables(m, f, pc);
        cf = closed_form(ClosedFormRegime::allowed_perpendicular, m, f, pc);
      }
      detail::record(qpp, std::abs(closed_form(ClosedFormRegime::qubit_perpendicular, m, f, pc)), obs.qubit);
      detail::record(app, std::abs(cf), std::abs(obs.allowed_split));
      if ((cf > 0.0) != (obs.allowed_split > 0.0)) ++app.sign_mismatches;
    }

    // Parallel field with strain.
    {
      SnVModel m;
      m.ground = random_manifold(100.0, 3000.0, 0.0, 1000.0);
      const FieldSnV f = FieldSnV::from_components(d.uniform(0.05, 1.5), 0.0);
      detail::record(qps, std::abs(closed_form(ClosedFormRegime::qubit_parallel_strained, m, f, pc)),
                     qubit_splitting(m, f, pc));
    }
  }
  return {{bases, qpn, apn, qpp, app, qps}};
}

}  // namespace snv
