#pragma once

// Synthetic datasets generated from known parameters, for round-trip tests,
// the bundled fixtures and the self test.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "snv/coherence.hpp"
#include "snv/field_calibration.hpp"
#include "snv/fit_pipeline.hpp"
#include "snv/model.hpp"
#include "snv/strain.hpp"
#include "snv/transitions.hpp"

namespace snv::synthetic {

inline constexpr double kNominalField = 0.19;  // T

// Noise-free (sigma = 0) or Gaussian-noise spectroscopy dataset of `model`
// on the default angle grid. Allowed splittings keep their sign.
[[nodiscard]] inline SpectroscopyDataset spectroscopy(const SnVModel& model, DatasetKind kind, RotationPlane plane,
                                                      double field = kNominalField, double step_deg = 2.0,
                                                      double sigma = 0.0, std::uint64_t seed = 1,
                                                      const PhysicalConstants& c = {}) {
  SpectroscopyDataset d;
  d.emitter = model.emitter;
  d.kind = kind;
  d.plane = plane;
  d.field_magnitude = field;
  d.signed_allowed = kind == DatasetKind::allowed_split;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double t : default_theta_grid(step_deg)) {
    double v = predict(model, d, t, c);
    if (sigma > 0.0) v += sigma * noise(rng);
    d.points.push_back({t, v});
  }
  return d;
}

[[nodiscard]] inline SpectroscopyDataset pl_dataset(const SnVModel& model, const PhysicalConstants& c = {}) {
  SpectroscopyDataset d;
  d.emitter = model.emitter;
  d.kind = DatasetKind::pl_splitting;
  d.points.push_back({0.0, pl_doublet_separation(model, FieldSnV::zero(), c)});
  return d;
}

// Qubit and allowed-split maps in the yz plane plus the xy allowed map for
// every strained emitter; PL of the unstrained one.
[[nodiscard]] inline PipelineInputs pipeline_suite(const std::vector<SnVModel>& strained, const SnVModel& unstrained,
                                                   double field = kNominalField, double step_deg = 2.0,
                                                   const PhysicalConstants& c = {}) {
  PipelineInputs in;
  for (const auto& m : strained) {
    EmitterData& e = in.emitters[m.emitter];
    e.b_par_cal = m.b_parallel_cal;
    e.b_perp_cal = m.b_perp_cal;
    e.datasets.push_back(spectroscopy(m, DatasetKind::odmr_qubit, RotationPlane::yz, field, step_deg, 0.0, 1, c));
    e.datasets.push_back(spectroscopy(m, DatasetKind::allowed_split, RotationPlane::yz, field, step_deg, 0.0, 1, c));
    e.datasets.push_back(spectroscopy(m, DatasetKind::allowed_split, RotationPlane::xy, field, step_deg, 0.0, 1, c));
  }
  in.emitters[unstrained.emitter].datasets.push_back(pl_dataset(unstrained, c));
  return in;
}

// The four characterised emitters at the nominal field.
[[nodiscard]] inline PipelineInputs table_one_suite(double step_deg = 2.0) {
  return pipeline_suite({table_one::snv_a(), table_one::snv_b(), table_one::snv_c()}, table_one::snv_d(),
                        kNominalField, step_deg);
}

// --- echo traces ----------------------------------------------------------

struct EchoGrid {
  std::size_t points = 1024;
  double dt_us = 0.05;
};

template <class Params>
[[nodiscard]] EchoTrace echo_trace(const Params& p, EchoOrientation orientation, double b_nominal, EchoGrid grid = {},
                                   double sigma = 0.0, std::uint64_t seed = 1) {
  EchoTrace tr;
  tr.orientation = orientation;
  tr.b_nominal = b_nominal;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < grid.points; ++i) {
    const double t = grid.dt_us * static_cast<double>(i);
    double v = echo_model(p, t);
    if (sigma > 0.0) v += sigma * noise(rng);
    tr.points.push_back({t, v});
  }
  return tr;
}

// Parameters of the synthetic traces; only the frequencies vary.
[[nodiscard]] inline ParallelEchoParams parallel_echo_params(double f_mhz) {
  ParallelEchoParams p;
  p.amplitude = 0.3;
  p.depth = 1.0;
  p.f = f_mhz;
  p.phi = 0.4;
  p.t_damp = 40.0;
  p.slope = 1e-4;
  p.dc = 0.2;
  return p;
}

[[nodiscard]] inline PerpendicularEchoParams perpendicular_echo_params(double f1_mhz, double f2_mhz) {
  return {0.5, f1_mhz, f2_mhz, 0.3};
}

// --- CPMG ----------------------------------------------------------------

struct CpmgSpec {
  double t2_ref_ms = 10.0;  // T2 at n_ref pulses
  int n_ref = 64;
  double beta = 0.95;
  double amplitude = 0.5;
  double xi = kDefaultStretch;
  std::size_t points = 100;
  double span_in_t2 = 2.5;  // sampled window in units of T2
  double baseline = 1000.0;  // raw counts of the saturated tail
};

[[nodiscard]] inline double cpmg_t2(const CpmgSpec& s, int n) {
  return s.t2_ref_ms * std::pow(static_cast<double>(n) / s.n_ref, s.beta);
}

// Raw (unnormalised) trace: baseline * 2 * (A exp(-(t/T2)^xi) + 0.5) plus
// Gaussian noise of relative size `rel_noise` times the amplitude.
[[nodiscard]] inline DecayTrace cpmg_trace(const CpmgSpec& s, int n, double rel_noise = 0.0, std::uint64_t seed = 1) {
  DecayTrace tr;
  tr.n_pulses = n;
  const double t2 = cpmg_t2(s, n);
  std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(n) * 0x9E3779B97F4A7C15ull));
  std::normal_distribution<double> noise(0.0, 1.0);
  const double scale = 2.0 * s.baseline;
  for (std::size_t i = 0; i < s.points; ++i) {
    const double t = s.span_in_t2 * t2 * static_cast<double>(i + 1) / static_cast<double>(s.points);
    double v = stretched_exponential(t, s.amplitude, t2, s.xi);
    if (rel_noise > 0.0) v += rel_noise * s.amplitude * noise(rng);
    tr.time_ms.push_back(t);
    tr.signal.push_back(scale * v);
  }
  return tr;
}

[[nodiscard]] inline std::vector<DecayTrace> cpmg_suite(const CpmgSpec& s, double rel_noise = 0.0,
                                                        std::uint64_t seed = 1) {
  std::vector<DecayTrace> out;
  for (int n = 1; n <= 64; n *= 2) out.push_back(cpmg_trace(s, n, rel_noise, seed));
  return out;
}

// --- strain --------------------------------------------------------------

// Membrane cut: the in-plane strain is equibiaxial (eps_xx = eps_yy) with no
// out-of-plane shear, and grows from the edge (x = 0) to the centre.
[[nodiscard]] inline std::vector<StrainGridPoint> membrane_cut(std::size_t points = 27, double width_um = 26.0,
                                                               double eps_edge = 0.0, double eps_centre = -1.1e-3) {
  std::vector<StrainGridPoint> g;
  for (std::size_t i = 0; i < points; ++i) {
    const double x = width_um * static_cast<double>(i) / static_cast<double>(points - 1);
    const double u = std::sin(std::numbers::pi * x / width_um);
    const double e = eps_edge + (eps_centre - eps_edge) * u;
    g.push_back({x, 0.0, {e, e, -0.6 * e, 0.3 * e, 0.0, 0.0}});
  }
  return g;
}

}  // namespace snv::synthetic
