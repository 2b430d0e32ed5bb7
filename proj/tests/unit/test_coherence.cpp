#include "catch_amalgamated.hpp"

#include "snv/coherence.hpp"
#include "snv/synthetic.hpp"

using namespace snv;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("normalisation maps the tail mean to one half") {
  DecayTrace tr;
  for (int i = 0; i < 20; ++i) {
    tr.time_ms.push_back(i + 1.0);
    tr.signal.push_back(i < 10 ? 1800.0 : 1000.0);
  }
  const auto n = normalize_decay(tr);
  CHECK(n.normalized);
  CHECK_THAT(n.signal.back(), WithinAbs(0.5, 1e-15));
  CHECK_THAT(n.signal.front(), WithinAbs(0.9, 1e-15));
  // idempotent
  const auto again = normalize_decay(n);
  CHECK(again.signal == n.signal);
}

TEST_CASE("normalisation rejects short or non-positive traces") {
  DecayTrace tr;
  for (int i = 0; i < 5; ++i) {
    tr.time_ms.push_back(i + 1.0);
    tr.signal.push_back(1.0);
  }
  CHECK_THROWS_AS(normalize_decay(tr), Error);
  for (int i = 5; i < 12; ++i) {
    tr.time_ms.push_back(i + 1.0);
    tr.signal.push_back(1.0);
  }
  for (auto& s : tr.signal) s = -1.0;
  CHECK_THROWS_AS(normalize_decay(tr), Error);
  tr.signal[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(normalize_decay(tr), Error);
}

TEST_CASE("noiseless envelopes recover T2 at every pulse number") {
  const synthetic::CpmgSpec spec;
  for (int n = 1; n <= 64; n *= 2) {
    const auto r = fit_stretched_exponential(normalize_decay(synthetic::cpmg_trace(spec, n)));
    INFO("N = " << n);
    CHECK_THAT(r.t2, WithinRel(synthetic::cpmg_t2(spec, n), 1e-6));
    CHECK_THAT(r.amplitude, WithinRel(spec.amplitude, 1e-6));
    CHECK(r.reliable);
  }
}

TEST_CASE("free-offset variant fits raw counts") {
  const synthetic::CpmgSpec spec;
  const auto raw = synthetic::cpmg_trace(spec, 8);
  const auto r = fit_stretched_exponential_free_offset(raw);
  CHECK_THAT(r.t2, WithinRel(synthetic::cpmg_t2(spec, 8), 1e-6));
  CHECK_THAT(r.offset, WithinRel(spec.baseline, 1e-6));
}

TEST_CASE("fixed-offset fit needs a normalised trace") {
  CHECK_THROWS_AS(fit_stretched_exponential(synthetic::cpmg_trace({}, 1)), Error);
  CHECK_THROWS_AS(fit_stretched_exponential(normalize_decay(synthetic::cpmg_trace({}, 1)), 0.0), Error);
}

TEST_CASE("a T2 far beyond the window is flagged unreliable") {
  synthetic::CpmgSpec spec;
  spec.span_in_t2 = 0.3;  // the trace stops long before the decay
  DecayTrace tr = synthetic::cpmg_trace(spec, 4);
  // tail is not the dephased level here, so normalise by hand
  for (auto& s : tr.signal) s /= 2.0 * spec.baseline;
  tr.normalized = true;
  const auto r = fit_stretched_exponential(tr);
  CHECK_THAT(r.t2, WithinRel(synthetic::cpmg_t2(spec, 4), 1e-4));
  CHECK(r.t2 > 3.0 * (tr.time_ms.back() - tr.time_ms.front()));
  spec.span_in_t2 = 0.05;
  DecayTrace tiny = synthetic::cpmg_trace(spec, 4);
  for (auto& s : tiny.signal) s /= 2.0 * spec.baseline;
  tiny.normalized = true;
  CHECK_FALSE(fit_stretched_exponential(tiny).reliable);
}

TEST_CASE("power law regression") {
  SECTION("exact power law") {
    std::vector<std::pair<int, double>> pts;
    for (int n = 1; n <= 64; n *= 2) pts.emplace_back(n, 10.0 * std::pow(n / 64.0, 0.95));
    const auto p = fit_power_law(pts);
    CHECK_THAT(p.beta, WithinRel(0.95, 1e-12));
    CHECK_THAT(p.log_prefactor, WithinRel(std::log(10.0 * std::pow(1.0 / 64.0, 0.95)), 1e-12));
    CHECK(p.beta_stderr < 1e-12);
  }
  SECTION("two points leave the standard error undefined") {
    const auto p = fit_power_law({{1, 1.0}, {4, 4.0}});
    CHECK_THAT(p.beta, WithinRel(1.0, 1e-12));
    CHECK(std::isnan(p.beta_stderr));
  }
  SECTION("invalid input") {
    CHECK_THROWS_AS(fit_power_law({{1, 1.0}}), Error);
    CHECK_THROWS_AS(fit_power_law({{2, 1.0}, {2, 3.0}}), Error);
    CHECK_THROWS_AS(fit_power_law({{1, 1.0}, {2, -3.0}}), Error);
  }
}

TEST_CASE("CPMG suite") {
  const synthetic::CpmgSpec spec;
  SECTION("noiseless suite returns the generating exponent") {
    const auto r = fit_cpmg_suite(synthetic::cpmg_suite(spec));
    REQUIRE(r.per_n.size() == 7);
    CHECK_THAT(r.scaling.beta, WithinRel(0.95, 1e-6));
    CHECK(r.per_n.front().n_pulses == 1);
  }
  SECTION("the synthetic anchor gives T2(1) from beta and T2(64)") {
    CHECK_THAT(synthetic::cpmg_t2(spec, 1), WithinRel(10.0 * std::pow(1.0 / 64.0, 0.95), 1e-15));
    CHECK_THAT(synthetic::cpmg_t2(spec, 1), WithinAbs(0.1924, 1e-4));
  }
  SECTION("pulse numbers must be distinct powers of two") {
    auto bad = synthetic::cpmg_suite(spec);
    bad[2].n_pulses = 3;
    CHECK_THROWS_AS(fit_cpmg_suite(bad), Error);
    auto dup = synthetic::cpmg_suite(spec);
    dup[2].n_pulses = 2;
    CHECK_THROWS_AS(fit_cpmg_suite(dup), Error);
    CHECK_THROWS_AS(fit_cpmg_suite({}), Error);
  }
}

TEST_CASE("T2 under 5 percent noise over 100 seeds") {
  const synthetic::CpmgSpec spec;
  int within = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto r = fit_cpmg_suite(synthetic::cpmg_suite(spec, 0.05, seed));
    bool all = true;
    for (const auto& c : r.per_n) all = all && std::abs(c.t2 / synthetic::cpmg_t2(spec, c.n_pulses) - 1.0) <= 0.05;
    within += all ? 1 : 0;
    ++total;
  }
  INFO(within << " of " << total << " seeds within 5% at every N");
  CHECK(within >= 95);
}

TEST_CASE("the exponent's standard error is calibrated") {
  // Over many noisy suites, |beta - 0.95| <= 2 SE should hold in roughly 95%
  // of cases (t distribution with 5 degrees of freedom: 89.8%).
  const synthetic::CpmgSpec spec;
  int within1 = 0, within2 = 0;
  const int seeds = 200;
  for (int seed = 1; seed <= seeds; ++seed) {
    const auto r = fit_cpmg_suite(synthetic::cpmg_suite(spec, 0.05, static_cast<std::uint64_t>(seed)));
    const double z = std::abs(r.scaling.beta - 0.95) / r.scaling.beta_stderr;
    within1 += z <= 1.0;
    within2 += z <= 2.0;
  }
  INFO(within1 << " within 1 SE, " << within2 << " within 2 SE of " << seeds);
  CHECK(within1 >= 0.5 * seeds);
  CHECK(within2 >= 0.8 * seeds);
}
