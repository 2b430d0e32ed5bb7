#pragma once

// Field-amplitude calibration from the 13C bath modulation of Hahn-echo
// traces. Parallel traces follow
//   p(tau) = A exp(B sin^4(2 pi f tau + phi) - tau / T_damp) + a tau + DC
// and perpendicular traces
//   p(tau) = A sin^2(2 pi f1 tau) sin^2(2 pi f2 tau) + DC.
// sin^4 and sin^2 put their strongest harmonic at twice the model frequency,
// so FFT peaks are halved before they seed a fit.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fftw3.h>

#include "snv/error.hpp"
#include "snv/hamiltonian.hpp"
#include "snv/optimize.hpp"

namespace snv {

enum class EchoOrientation { parallel, perpendicular };

[[nodiscard]] constexpr std::string_view to_string(EchoOrientation o) noexcept {
  return o == EchoOrientation::parallel ? "parallel" : "perpendicular";
}

[[nodiscard]] inline EchoOrientation parse_orientation(std::string_view s) {
  if (s == "parallel") return EchoOrientation::parallel;
  if (s == "perpendicular") return EchoOrientation::perpendicular;
  fail(ErrorKind::dataset, "orientation must be 'parallel' or 'perpendicular', got '" + std::string(s) + "'");
}

struct EchoPoint {
  double tau = 0.0;     // us
  double signal = 0.0;  // normalised counts
};

struct EchoTrace {
  std::vector<EchoPoint> points;
  EchoOrientation orientation = EchoOrientation::parallel;
  double b_nominal = 0.0;  // T

  void validate() const {
    require(points.size() >= 32, "echo trace needs at least 32 points, got " + std::to_string(points.size()),
            ErrorKind::dataset);
    require(std::isfinite(b_nominal) && b_nominal > 0.0, "echo trace needs b_nominal > 0", ErrorKind::dataset);
    for (std::size_t i = 0; i < points.size(); ++i) {
      require(std::isfinite(points[i].tau) && std::isfinite(points[i].signal),
              "echo trace: non-finite value at point " + std::to_string(i), ErrorKind::dataset);
      if (i > 0)
        require(points[i].tau > points[i - 1].tau,
                "echo trace: tau not strictly increasing at point " + std::to_string(i), ErrorKind::dataset);
    }
  }
};

struct ParallelEchoParams {
  double amplitude = 0.3;  // A
  double depth = 1.0;      // B
  double f = 0.5;          // MHz
  double phi = 0.0;        // rad
  double t_damp = 40.0;    // us
  double slope = 0.0;      // 1/us
  double dc = 0.0;
};

struct PerpendicularEchoParams {
  double amplitude = 0.5;
  double f1 = 0.5;  // MHz, bath
  double f2 = 1.2;  // MHz, proximal spin
  double dc = 0.0;
};

[[nodiscard]] inline double echo_model(const ParallelEchoParams& p, double tau) {
  const double s = std::sin(2.0 * std::numbers::pi * p.f * tau + p.phi);
  const double s2 = s * s;
  return p.amplitude * std::exp(p.depth * s2 * s2 - tau / p.t_damp) + p.slope * tau + p.dc;
}

[[nodiscard]] inline double echo_model(const PerpendicularEchoParams& p, double tau) {
  const double s1 = std::sin(2.0 * std::numbers::pi * p.f1 * tau);
  const double s2 = std::sin(2.0 * std::numbers::pi * p.f2 * tau);
  return p.amplitude * s1 * s1 * s2 * s2 + p.dc;
}

// ---------------------------------------------------------------------------
// Spectrum

struct SpectrumPeak {
  double frequency = 0.0;  // MHz
  double amplitude = 0.0;
};

struct Spectrum {
  std::vector<double> frequency;  // MHz, bins 0 .. n/2
  std::vector<double> magnitude;
  double bin_width = 0.0;         // MHz
  double noise_floor = 0.0;
  std::vector<SpectrumPeak> peaks;  // sorted by amplitude, descending
};

namespace detail {

// FFTW planning is not thread-safe; execution on distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

inline std::vector<double> resample_uniform(const std::vector<EchoPoint>& pts, double& dt) {
  const std::size_t n = pts.size();
  const double t0 = pts.front().tau;
  const double t1 = pts.back().tau;
  dt = (t1 - t0) / static_cast<double>(n - 1);
  std::vector<double> out(n);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i + 1 == n ? t1 : t0 + dt * static_cast<double>(i);
    while (j + 2 < n && pts[j + 1].tau < t) ++j;
    const double w = (t - pts[j].tau) / (pts[j + 1].tau - pts[j].tau);
    out[i] = pts[j].signal + std::clamp(w, 0.0, 1.0) * (pts[j + 1].signal - pts[j].signal);
  }
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace detail

// Magnitude spectrum of the detrended, Hann-windowed trace, resampled onto a
// uniform grid with the same point count. Peaks are strict local maxima from
// bin 2 upwards above the noise floor (five times the median magnitude).
[[nodiscard]] inline Spectrum fft_spectrum(const EchoTrace& trace) {
  require(trace.points.size() >= 32,
          "FFT needs at least 32 samples, got " + std::to_string(trace.points.size()), ErrorKind::dataset);
  double dt = 0.0;
  std::vector<double> x = detail::resample_uniform(trace.points, dt);
  const std::size_t n = x.size();
  // Remove a cubic trend (DC, drift and slow damping) before windowing so the
  // leakage of the baseline cannot masquerade as a modulation peak.
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(n), 4);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  double lo = x.front(), hi = x.front();
  for (std::size_t i = 0; i < n; ++i) {
    const double u = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    const auto r = static_cast<Eigen::Index>(i);
    basis(r, 0) = 1.0;
    basis(r, 1) = u;
    basis(r, 2) = u * u;
    basis(r, 3) = u * u * u;
    y(r) = x[i];
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
  }
  const Eigen::VectorXd trend = basis * basis.colPivHouseholderQr().solve(y);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                          static_cast<double>(n - 1));
    x[i] = (x[i] - trend(static_cast<Eigen::Index>(i))) * w;
  }

  const std::size_t nc = n / 2 + 1;
  std::vector<std::complex<double>> spec(nc);
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), x.data(),
                                reinterpret_cast<fftw_complex*>(spec.data()), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }

  Spectrum out;
  out.bin_width = 1.0 / (static_cast<double>(n) * dt);
  out.frequency.resize(nc);
  out.magnitude.resize(nc);
  for (std::size_t k = 0; k < nc; ++k) {
    out.frequency[k] = static_cast<double>(k) * out.bin_width;
    out.magnitude[k] = std::abs(spec[k]);
  }
  out.magnitude[0] = 0.0;
  // A full-scale sinusoid of amplitude a peaks at a n / 4; anything below a
  // thousandth of the trace's peak-to-peak range on that scale is ignored.
  out.noise_floor = std::max(5.0 * detail::median({out.magnitude.begin() + 1, out.magnitude.end()}),
                             1e-3 * (hi - lo) * static_cast<double>(n) / 4.0);
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) out.noise_floor = std::numeric_limits<double>::infinity();
  for (std::size_t k = 2; k + 1 < nc; ++k) {
    const double m = out.magnitude[k];
    if (m > out.magnitude[k - 1] && m > out.magnitude[k + 1] && m > out.noise_floor)
      out.peaks.push_back({out.frequency[k], m});
  }
  std::stable_sort(out.peaks.begin(), out.peaks.end(),
                   [](const auto& a, const auto& b) { return a.amplitude > b.amplitude; });
  return out;
}

// ---------------------------------------------------------------------------
// Fits

struct EchoFit {
  EchoOrientation orientation = EchoOrientation::parallel;
  ParallelEchoParams parallel;
  PerpendicularEchoParams perpendicular;
  double frequency_stderr = 0.0;  // MHz, of f (parallel) or f1 (perpendicular)
  double f2_stderr = 0.0;         // MHz
  double residual_rms = 0.0;
  double fft_seed = 0.0;  // MHz, model-frequency seed from the dominant peak
  double fft_bin = 0.0;   // MHz
  // Parallel trace without modulation: exponential-plus-linear fit only, the
  // frequency is undetermined.
  bool degenerate = false;
  // Perpendicular fits: true when the lower frequency is also the one nearest
  // the expected bath Larmor frequency.
  bool assignment_consistent = true;

  // Bath frequency used for the field calibration; empty when degenerate.
  [[nodiscard]] std::optional<double> bath_frequency() const {
    if (degenerate) return std::nullopt;
    return orientation == EchoOrientation::parallel ? parallel.f : perpendicular.f1;
  }
};

// Half the 13C gyromagnetic ratio times the field, in MHz.
[[nodiscard]] inline double expected_larmor(double b_tesla, const PhysicalConstants& c = {}) {
  require(std::isfinite(b_tesla) && b_tesla >= 0.0, "field must be finite and >= 0");
  return 0.5 * c.gamma_c13 * b_tesla;
}

namespace detail {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Least squares for the linear coefficients (A, slope, DC) of the parallel
// model at fixed (depth, f, phi, t_damp); returns the residual sum of squares.
inline double parallel_linear_solve(const std::vector<EchoPoint>& pts, ParallelEchoParams& p) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(pts.size()), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double t = pts[i].tau;
    const double s = std::sin(kTwoPi * p.f * t + p.phi);
    const auto r = static_cast<Eigen::Index>(i);
    a(r, 0) = std::exp(p.depth * s * s * s * s - t / p.t_damp);
    a(r, 1) = t;
    a(r, 2) = 1.0;
    y(r) = pts[i].signal;
  }
  const Eigen::Vector3d c = a.colPivHouseholderQr().solve(y);
  p.amplitude = c(0);
  p.slope = c(1);
  p.dc = c(2);
  return (a * c - y).squaredNorm();
}

inline double frequency_stderr(const opt::Result& r, Eigen::Index idx, double value) {
  const opt::Matrix cov = r.covariance();
  const double v = cov(idx, idx);
  // parameters are fitted as log-frequencies
  return std::isfinite(v) && v >= 0.0 ? value * std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
}

inline EchoFit fit_parallel(const EchoTrace& trace, const Spectrum& spec, const opt::Options& o) {
  const auto& pts = trace.points;
  const double span = pts.back().tau - pts.front().tau;
  EchoFit out;
  out.orientation = EchoOrientation::parallel;
  out.fft_bin = spec.bin_width;

  if (spec.peaks.empty()) {
    // No modulation: A exp(-tau/T) + a tau + DC.
    ParallelEchoParams best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (double scale : {0.25, 0.5, 1.0, 2.0, 4.0}) {
      ParallelEchoParams p;
      p.depth = 0.0;
      p.t_damp = scale * span;
      const double c = parallel_linear_solve(pts, p);
      if (c < best_cost) best_cost = c, best = p;
    }
    const opt::ResidualFn res = [&](const opt::Vector& x) {
      ParallelEchoParams p{x(0), 0.0, 0.0, 0.0, std::exp(x(1)), x(2), x(3)};
      opt::Vector r(static_cast<Eigen::Index>(pts.size()));
      for (std::size_t i = 0; i < pts.size(); ++i)
        r(static_cast<Eigen::Index>(i)) = echo_model(p, pts[i].tau) - pts[i].signal;
      return r;
    };
    opt::Vector x0(4);
    x0 << best.amplitude, std::log(best.t_damp), best.slope, best.dc;
    const opt::Result r = opt::levenberg_marquardt(res, x0, o);
    out.parallel = {r.x(0), 0.0, 0.0, 0.0, std::exp(r.x(1)), r.x(2), r.x(3)};
    out.residual_rms = r.rms();
    out.degenerate = true;
    out.frequency_stderr = std::numeric_limits<double>::quiet_NaN();
    return out;
  }

  const double f_seed = 0.5 * spec.peaks.front().frequency;
  out.fft_seed = f_seed;

  // Coarse scan over phase, depth sign and depth with the linear parameters
  // solved exactly; the best candidates start the full nonlinear fit.
  struct Candidate {
    double cost;
    ParallelEchoParams p;
  };
  std::vector<Candidate> cands;
  for (double depth : {-2.0, -1.0, -0.5, 0.5, 1.0, 2.0})
    for (int k = 0; k < 12; ++k) {
      ParallelEchoParams p;
      p.depth = depth;
      p.f = f_seed;
      p.phi = std::numbers::pi * k / 12.0;
      p.t_damp = span;
      const double c = parallel_linear_solve(pts, p);
      cands.push_back({c, p});
    }
  std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.cost < b.cost; });

  auto unpack = [](const opt::Vector& x) {
    return ParallelEchoParams{x(0), x(1), std::exp(x(2)), x(3), std::exp(x(4)), x(5), x(6)};
  };
  const opt::ResidualFn res = [&](const opt::Vector& x) {
    const ParallelEchoParams p = unpack(x);
    opt::Vector r(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i)
      r(static_cast<Eigen::Index>(i)) = echo_model(p, pts[i].tau) - pts[i].signal;
    return r;
  };

  std::optional<opt::Result> best;
  for (std::size_t c = 0; c < std::min<std::size_t>(3, cands.size()); ++c) {
    const auto& p = cands[c].p;
    opt::Vector x0(7);
    x0 << p.amplitude, p.depth, std::log(p.f), p.phi, std::log(p.t_damp), p.slope, p.dc;
    opt::Result r = opt::levenberg_marquardt(res, x0, o);
    if (!best || r.cost < best->cost) best = std::move(r);
  }
  if (!best->converged)
    fail(ErrorKind::calibration, "parallel echo fit did not converge (" + best->message + ")");
  ParallelEchoParams p = unpack(best->x);
  // sin^4 has period pi in phase
  p.phi = std::fmod(p.phi, std::numbers::pi);
  if (p.phi < 0.0) p.phi += std::numbers::pi;
  out.parallel = p;
  out.residual_rms = best->rms();
  out.frequency_stderr = frequency_stderr(*best, 2, p.f);
  return out;
}

inline EchoFit fit_perpendicular(const EchoTrace& trace, const Spectrum& spec, const opt::Options& o,
                                 const PhysicalConstants& c) {
  const auto& pts = trace.points;
  if (spec.peaks.empty())
    fail(ErrorKind::calibration,
         "no FFT peak above the noise floor in the perpendicular echo trace; calibration impossible");
  EchoFit out;
  out.orientation = EchoOrientation::perpendicular;
  out.fft_bin = spec.bin_width;
  out.fft_seed = 0.5 * spec.peaks.front().frequency;

  double lo = pts.front().signal, hi = lo;
  for (const auto& p : pts) lo = std::min(lo, p.signal), hi = std::max(hi, p.signal);

  const opt::ResidualFn res = [&](const opt::Vector& x) {
    const PerpendicularEchoParams p{x(0), std::exp(x(1)), std::exp(x(2)), x(3)};
    opt::Vector r(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i)
      r(static_cast<Eigen::Index>(i)) = echo_model(p, pts[i].tau) - pts[i].signal;
    return r;
  };

  // Both model frequencies show up at twice their value, the cross terms at
  // twice their sum and difference; try every pair of the strongest peaks.
  const std::size_t np = std::min<std::size_t>(4, spec.peaks.size());
  std::vector<std::pair<double, double>> seeds;
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = i + 1; j < np; ++j)
      seeds.emplace_back(0.5 * spec.peaks[i].frequency, 0.5 * spec.peaks[j].frequency);
  if (seeds.empty()) {
    const double f = 0.5 * spec.peaks.front().frequency;
    seeds.emplace_back(f, f);
  }

  std::optional<opt::Result> best;
  for (const auto& [fa, fb] : seeds) {
    opt::Vector x0(4);
    x0 << hi - lo, std::log(std::min(fa, fb)), std::log(std::max(fa, fb)), lo;
    opt::Result r = opt::levenberg_marquardt(res, x0, o);
    if (!best || r.cost < best->cost) best = std::move(r);
  }
  if (!best->converged)
    fail(ErrorKind::calibration, "perpendicular echo fit did not converge (" + best->message + ")");

  double fa = std::exp(best->x(1));
  double fb = std::exp(best->x(2));
  double sa = frequency_stderr(*best, 1, fa);
  double sb = frequency_stderr(*best, 2, fb);
  if (fa > fb) std::swap(fa, fb), std::swap(sa, sb);
  const double larmor = expected_larmor(trace.b_nominal, c);
  out.assignment_consistent = std::abs(fa - larmor) <= std::abs(fb - larmor);
  out.perpendicular = {best->x(0), fa, fb, best->x(3)};
  out.frequency_stderr = sa;
  out.f2_stderr = sb;
  out.residual_rms = best->rms();
  return out;
}

}  // namespace detail

[[nodiscard]] inline EchoFit fit_echo_modulation(const EchoTrace& trace, const PhysicalConstants& c = {},
                                                 const opt::Options& o = {}) {
  trace.validate();
  const Spectrum spec = fft_spectrum(trace);
  return trace.orientation == EchoOrientation::parallel ? detail::fit_parallel(trace, spec, o)
                                                        : detail::fit_perpendicular(trace, spec, o, c);
}

struct CalibratedField {
  double b_nominal = 0.0;    // T
  double f_measured = 0.0;   // MHz
  double f_expected = 0.0;   // MHz
  double b_corrected = 0.0;  // T
  double uncertainty = 0.0;  // T
};

inline constexpr double kMinFieldRelUncertainty = 0.005;

// B_corrected = B_nominal f_measured / f_expected. The relative uncertainty is
// that of the frequency, but never below 0.5 %.
[[nodiscard]] inline CalibratedField corrected_field(double f_measured, double b_nominal,
                                                     double f_stderr = 0.0,
                                                     const PhysicalConstants& c = {}) {
  require(std::isfinite(f_measured) && f_measured > 0.0, "measured frequency must be > 0");
  require(std::isfinite(b_nominal) && b_nominal > 0.0, "nominal field must be > 0");
  CalibratedField out;
  out.b_nominal = b_nominal;
  out.f_measured = f_measured;
  out.f_expected = expected_larmor(b_nominal, c);
  out.b_corrected = b_nominal * f_measured / out.f_expected;
  const double rel = std::isfinite(f_stderr) ? std::abs(f_stderr) / f_measured : 0.0;
  out.uncertainty = std::max(rel, kMinFieldRelUncertainty) * out.b_corrected;
  return out;
}

[[nodiscard]] inline CalibratedField calibrate_field(const EchoFit& fit, double b_nominal,
                                                     const PhysicalConstants& c = {}) {
  const auto f = fit.bath_frequency();
  if (!f)
    fail(ErrorKind::calibration,
         "echo trace shows no bath modulation; frequency undetermined, field cannot be calibrated");
  return corrected_field(*f, b_nominal, fit.frequency_stderr, c);
}

}  // namespace snv
