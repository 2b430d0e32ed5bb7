#pragma once

// CPMG decay normalisation, stretched-exponential envelopes
// S(t) = A exp(-(t / T2)^xi) + 0.5 with t the total evolution time N tau, and
// the T2 ~ N^beta scaling across pulse numbers.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "snv/error.hpp"
#include "snv/optimize.hpp"

namespace snv {

inline constexpr double kDefaultStretch = 4.0;
inline constexpr std::size_t kTailPoints = 10;

struct DecayTrace {
  int n_pulses = 1;
  std::vector<double> time_ms;  // total evolution time N tau
  std::vector<double> signal;
  bool normalized = false;

  void validate() const {
    const std::string who = "decay trace N=" + std::to_string(n_pulses);
    require(n_pulses >= 1, who + ": n_pulses must be >= 1", ErrorKind::dataset);
    require(time_ms.size() == signal.size(), who + ": time and signal lengths differ", ErrorKind::dataset);
    require(!time_ms.empty(), who + ": no points", ErrorKind::dataset);
    for (std::size_t i = 0; i < time_ms.size(); ++i) {
      require(std::isfinite(time_ms[i]) && std::isfinite(signal[i]),
              who + ": non-finite value at point " + std::to_string(i), ErrorKind::dataset);
      if (i > 0)
        require(time_ms[i] > time_ms[i - 1],
                who + ": time not strictly increasing at point " + std::to_string(i), ErrorKind::dataset);
    }
  }
};

[[nodiscard]] inline bool is_power_of_two(int n) { return n >= 1 && (n & (n - 1)) == 0; }

// Scales the trace so the mean of its last ten points is 0.5. Multiplicative,
// so a trace that decays to a zero baseline keeps it; already normalised
// traces are returned unchanged.
[[nodiscard]] inline DecayTrace normalize_decay(DecayTrace trace) {
  trace.validate();
  if (trace.normalized) return trace;
  require(trace.signal.size() >= kTailPoints,
          "normalisation needs at least 10 points, got " + std::to_string(trace.signal.size()),
          ErrorKind::dataset);
  double tail = 0.0;
  for (std::size_t i = trace.signal.size() - kTailPoints; i < trace.signal.size(); ++i) tail += trace.signal[i];
  tail /= static_cast<double>(kTailPoints);
  require(tail > 0.0, "mean of the last 10 points must be > 0 for normalisation", ErrorKind::dataset);
  const double scale = 0.5 / tail;
  for (double& s : trace.signal) s *= scale;
  trace.normalized = true;
  return trace;
}

struct CoherenceResult {
  int n_pulses = 1;
  double t2 = 0.0;         // ms
  double t2_stderr = 0.0;  // ms
  double amplitude = 0.0;
  double offset = 0.5;
  double xi = kDefaultStretch;
  double residual_rms = 0.0;
  // T2 far beyond the measured window is extrapolated, not measured.
  bool reliable = true;
};

[[nodiscard]] inline double stretched_exponential(double t, double amplitude, double t2, double xi,
                                                  double offset = 0.5) {
  return amplitude * std::exp(-std::pow(t / t2, xi)) + offset;
}

namespace detail {

inline double seed_t2(const DecayTrace& tr, double amplitude, double offset) {
  const double level = offset + amplitude / std::exp(1.0);
  for (std::size_t i = 0; i < tr.signal.size(); ++i)
    if (tr.signal[i] <= level) return std::max(tr.time_ms[i], 1e-9);
  return tr.time_ms.back();
}

inline CoherenceResult fit_envelope(const DecayTrace& tr, double xi, bool free_offset,
                                    const opt::Options& o) {
  require(std::isfinite(xi) && xi > 0.0, "stretching factor must be > 0");
  const std::size_t n = tr.time_ms.size();
  const std::size_t head = std::min<std::size_t>(3, n);
  const std::size_t tail_n = std::min(kTailPoints, n);
  double start = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < head; ++i) start += tr.signal[i];
  for (std::size_t i = n - tail_n; i < n; ++i) tail += tr.signal[i];
  start /= static_cast<double>(head);
  tail /= static_cast<double>(tail_n);
  const double offset0 = free_offset ? tail : 0.5;
  const double a0 = start - offset0;
  require(a0 > 0.0, "decay trace N=" + std::to_string(tr.n_pulses) + " shows no decay", ErrorKind::fit);

  const opt::ResidualFn res = [&](const opt::Vector& x) {
    const double t2 = std::exp(x(1));
    const double off = free_offset ? x(2) : 0.5;
    opt::Vector r(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
      r(static_cast<Eigen::Index>(i)) = stretched_exponential(tr.time_ms[i], x(0), t2, xi, off) - tr.signal[i];
    return r;
  };
  opt::Vector x0(free_offset ? 3 : 2);
  x0(0) = a0;
  x0(1) = std::log(seed_t2(tr, a0, offset0));
  if (free_offset) x0(2) = offset0;
  const opt::Result r = opt::levenberg_marquardt(res, x0, o);
  if (!r.converged)
    fail(ErrorKind::fit, "stretched-exponential fit for N=" + std::to_string(tr.n_pulses) +
                             " did not converge (" + r.message + ")");
  CoherenceResult out;
  out.n_pulses = tr.n_pulses;
  out.amplitude = r.x(0);
  out.t2 = std::exp(r.x(1));
  out.offset = free_offset ? r.x(2) : 0.5;
  out.xi = xi;
  out.residual_rms = r.rms();
  const opt::Matrix cov = r.covariance();
  out.t2_stderr = std::isfinite(cov(1, 1)) && cov(1, 1) >= 0.0 ? out.t2 * std::sqrt(cov(1, 1))
                                                                : std::numeric_limits<double>::quiet_NaN();
  const double span = tr.time_ms.back() - tr.time_ms.front();
  out.reliable = out.t2 <= 10.0 * span;
  require(out.amplitude > 0.0,
          "stretched-exponential fit for N=" + std::to_string(tr.n_pulses) + " returned a non-positive amplitude",
          ErrorKind::fit);
  return out;
}

}  // namespace detail

// Fits A exp(-(t/T2)^xi) + 0.5 with xi held fixed.
[[nodiscard]] inline CoherenceResult fit_stretched_exponential(const DecayTrace& trace,
                                                               double xi = kDefaultStretch,
                                                               const opt::Options& o = {}) {
  trace.validate();
  require(trace.normalized, "fit_stretched_exponential needs a normalised trace", ErrorKind::fit);
  return detail::fit_envelope(trace, xi, false, o);
}

// Same envelope with a free offset, for raw (unnormalised) traces.
[[nodiscard]] inline CoherenceResult fit_stretched_exponential_free_offset(const DecayTrace& trace,
                                                                           double xi = kDefaultStretch,
                                                                           const opt::Options& o = {}) {
  trace.validate();
  return detail::fit_envelope(trace, xi, true, o);
}

struct PowerLaw {
  double beta = 0.0;
  double beta_stderr = 0.0;  // NaN with only two points
  double log_prefactor = 0.0;
  std::size_t points = 0;
};

// Ordinary least squares of log T2 on log N.
[[nodiscard]] inline PowerLaw fit_power_law(const std::vector<std::pair<int, double>>& n_t2) {
  require(n_t2.size() >= 2, "power-law fit needs at least two (N, T2) pairs");
  std::vector<double> x, y;
  for (const auto& [n, t2] : n_t2) {
    require(n >= 1, "pulse number must be >= 1");
    require(std::isfinite(t2) && t2 > 0.0, "T2 must be > 0");
    x.push_back(std::log(static_cast<double>(n)));
    y.push_back(std::log(t2));
  }
  const double m = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0.0, "power-law fit needs at least two distinct pulse numbers");
  PowerLaw out;
  out.points = x.size();
  out.beta = sxy / sxx;
  out.log_prefactor = my - out.beta * mx;
  if (x.size() > 2) {
    double ssr = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = y[i] - out.log_prefactor - out.beta * x[i];
      ssr += r * r;
    }
    out.beta_stderr = std::sqrt(ssr / (m - 2.0) / sxx);
  } else {
    out.beta_stderr = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

struct CpmgSuiteResult {
  std::vector<CoherenceResult> per_n;  // ascending N
  PowerLaw scaling;
};

// Normalises and fits every trace, then the power law over N. Pulse numbers
// must be distinct powers of two.
[[nodiscard]] inline CpmgSuiteResult fit_cpmg_suite(std::vector<DecayTrace> traces,
                                                    double xi = kDefaultStretch,
                                                    const opt::Options& o = {}) {
  require(!traces.empty(), "CPMG suite is empty", ErrorKind::dataset);
  std::sort(traces.begin(), traces.end(), [](const auto& a, const auto& b) { return a.n_pulses < b.n_pulses; });
  CpmgSuiteResult out;
  std::vector<std::pair<int, double>> pts;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    require(is_power_of_two(traces[i].n_pulses),
            "CPMG pulse numbers must be powers of two, got " + std::to_string(traces[i].n_pulses),
            ErrorKind::dataset);
    if (i > 0)
      require(traces[i].n_pulses != traces[i - 1].n_pulses,
              "duplicate CPMG trace for N=" + std::to_string(traces[i].n_pulses), ErrorKind::dataset);
    const CoherenceResult r = fit_stretched_exponential(normalize_decay(traces[i]), xi, o);
    out.per_n.push_back(r);
    pts.emplace_back(r.n_pulses, r.t2);
  }
  if (pts.size() >= 2) out.scaling = fit_power_law(pts);
  return out;
}

}  // namespace snv
