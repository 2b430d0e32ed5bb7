#pragma once

// Staged extraction of spin-orbit, strain and orbital-quenching parameters
// from rotation-map spectroscopy of several emitters, and propagation of the
// field-amplitude uncertainty through the whole procedure.
//
// Stage order (one sweep):
//   1  lambda_g   unstrained emitter, PL doublet separation
//   2  upsilon_g  every strained emitter, qubit splitting near theta = 90 deg
//   3  upsilon_u  every strained emitter, allowed splitting at theta = 90 deg
//   4  f32_g      low-strain emitter, qubit map       (+ its delta_theta)
//   5  f32_u      low-strain emitter, allowed map     (+ its delta_theta)
//   6  f12_g      high-strain emitter, qubit map      (+ its delta_theta)
//   7  f12_u      high-strain emitter, allowed map    (+ its delta_theta)
// Holdout emitters then get their delta_theta with every shared parameter
// frozen. Later sweeps repeat stages 2-7 with the values of the previous
// sweep until the parameters stop moving.

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "snv/error.hpp"
#include "snv/hamiltonian.hpp"
#include "snv/model.hpp"
#include "snv/optimize.hpp"
#include "snv/transitions.hpp"

namespace snv {

enum class DatasetKind { odmr_qubit, allowed_split, forbidden_split, pl_splitting };

[[nodiscard]] constexpr std::string_view to_string(DatasetKind k) noexcept {
  switch (k) {
    case DatasetKind::odmr_qubit: return "odmr_qubit";
    case DatasetKind::allowed_split: return "allowed_split";
    case DatasetKind::forbidden_split: return "forbidden_split";
    case DatasetKind::pl_splitting: return "pl_splitting";
  }
  return "unknown";
}

[[nodiscard]] inline DatasetKind parse_dataset_kind(std::string_view s) {
  for (auto k : {DatasetKind::odmr_qubit, DatasetKind::allowed_split, DatasetKind::forbidden_split,
                 DatasetKind::pl_splitting})
    if (s == to_string(k)) return k;
  fail(ErrorKind::dataset, "unknown spectroscopy kind '" + std::string(s) + "'");
}

struct DataPoint {
  double theta = 0.0;  // deg, sweep angle
  double value = 0.0;  // GHz
};

struct SpectroscopyDataset {
  std::string emitter;
  DatasetKind kind = DatasetKind::odmr_qubit;
  std::vector<DataPoint> points;
  double field_magnitude = 0.0;  // T, nominal
  RotationPlane plane = RotationPlane::yz;
  // Allowed splittings are compared by magnitude unless the dataset states
  // that its sign follows dGround - dExcited.
  bool signed_allowed = false;

  [[nodiscard]] bool field_dependent() const { return kind != DatasetKind::pl_splitting; }

  void validate() const {
    require(!points.empty(), "dataset of emitter " + emitter + " has no points", ErrorKind::dataset);
    for (std::size_t i = 0; i < points.size(); ++i)
      require(std::isfinite(points[i].theta) && std::isfinite(points[i].value),
              "dataset of emitter " + emitter + ": non-finite value at point " + std::to_string(i),
              ErrorKind::dataset);
    if (field_dependent())
      require(field_magnitude > 0.0,
              "dataset of emitter " + emitter + " needs field_magnitude > 0", ErrorKind::dataset);
  }
};

enum class FitParam { lambda_g, upsilon_g, upsilon_u, f32_g, f32_u, f12_g, f12_u, delta_theta };

inline constexpr std::array kAllFitParams{FitParam::lambda_g, FitParam::upsilon_g, FitParam::upsilon_u,
                                          FitParam::f32_g,    FitParam::f32_u,     FitParam::f12_g,
                                          FitParam::f12_u,    FitParam::delta_theta};

[[nodiscard]] constexpr std::string_view to_string(FitParam p) noexcept {
  switch (p) {
    case FitParam::lambda_g: return "lambda_g";
    case FitParam::upsilon_g: return "upsilon_g";
    case FitParam::upsilon_u: return "upsilon_u";
    case FitParam::f32_g: return "f32_g";
    case FitParam::f32_u: return "f32_u";
    case FitParam::f12_g: return "f12_g";
    case FitParam::f12_u: return "f12_u";
    case FitParam::delta_theta: return "delta_theta";
  }
  return "unknown";
}

[[nodiscard]] inline double& param_ref(SnVModel& m, FitParam p) {
  switch (p) {
    case FitParam::lambda_g: return m.ground.lambda;
    case FitParam::upsilon_g: return m.ground.upsilon;
    case FitParam::upsilon_u: return m.excited.upsilon;
    case FitParam::f32_g: return m.ground.f_32;
    case FitParam::f32_u: return m.excited.f_32;
    case FitParam::f12_g: return m.ground.f_12;
    case FitParam::f12_u: return m.excited.f_12;
    case FitParam::delta_theta: return m.delta_theta;
  }
  fail(ErrorKind::invalid_argument, "unknown fit parameter");
}

[[nodiscard]] inline double param_value(const SnVModel& m, FitParam p) {
  return param_ref(const_cast<SnVModel&>(m), p);
}

// Dataset kind each target is fitted against.
[[nodiscard]] inline DatasetKind stage_dataset_kind(FitParam p) {
  switch (p) {
    case FitParam::lambda_g: return DatasetKind::pl_splitting;
    case FitParam::upsilon_g:
    case FitParam::f32_g:
    case FitParam::f12_g:
    case FitParam::delta_theta: return DatasetKind::odmr_qubit;
    default: return DatasetKind::allowed_split;
  }
}

// Parameters that must already be fixed before a target can be fitted.
[[nodiscard]] inline std::set<FitParam> stage_prerequisites(FitParam p) {
  using enum FitParam;
  switch (p) {
    case lambda_g:
    case delta_theta: return {};
    case upsilon_g: return {lambda_g};
    case upsilon_u: return {lambda_g, upsilon_g};
    case f32_g: return {lambda_g, upsilon_g};
    case f32_u: return {lambda_g, upsilon_g, upsilon_u, f32_g};
    case f12_g: return {lambda_g, upsilon_g, f32_g, f32_u};
    case f12_u: return {lambda_g, upsilon_g, upsilon_u, f32_g, f32_u, f12_g};
  }
  return {};
}

struct FitStage {
  FitParam target = FitParam::lambda_g;
  DatasetKind dataset_kind = DatasetKind::pl_splitting;
  std::set<FitParam> frozen;
  bool co_fit_delta_theta = false;
  // Restrict to points whose sweep angle lies within this many degrees of
  // 90 or 270 (the perpendicular orientations).
  std::optional<double> perpendicular_window;

  [[nodiscard]] static FitStage make(FitParam target, std::set<FitParam> frozen,
                                     bool co_fit_delta_theta = false,
                                     std::optional<double> window = std::nullopt) {
    return {target, stage_dataset_kind(target), std::move(frozen), co_fit_delta_theta, window};
  }
};

inline constexpr double kSpectroscopyResidualFloor = 1e-10;  // GHz

struct FitOptions {
  PhysicalConstants constants;
  opt::Options optimizer;
  int max_sweeps = 12;
  double sweep_tolerance = 1e-11;       // max relative parameter change between sweeps
  double perpendicular_window = 4.0;    // deg, stage 2 point selection
  double f_initial = 0.3;
  unsigned jobs = 1;
};

struct FitResult {
  SnVModel params;
  double residual_rms = 0.0;  // GHz
  std::map<std::string, double> per_param_spread;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  double initial_gradient_norm = 0.0;
  std::vector<double> cost_history;
};

// ---------------------------------------------------------------------------
// Model predictions

[[nodiscard]] inline FieldSnV dataset_field(const SnVModel& m, const SpectroscopyDataset& d,
                                            double theta) {
  const double par = m.b_parallel_cal > 0.0 ? m.b_parallel_cal : d.field_magnitude;
  const double perp = m.b_perp_cal > 0.0 ? m.b_perp_cal : d.field_magnitude;
  return field_on_plane(d.plane, theta, par, perp, m.delta_theta);
}

[[nodiscard]] inline double predict(const SnVModel& m, const SpectroscopyDataset& d, double theta,
                                    const PhysicalConstants& c = {}) {
  switch (d.kind) {
    case DatasetKind::pl_splitting: {
      const FieldSnV f = d.field_magnitude > 0.0 ? dataset_field(m, d, theta) : FieldSnV::zero();
      return pl_doublet_separation(m, f, c);
    }
    case DatasetKind::odmr_qubit: return qubit_splitting(m, dataset_field(m, d, theta), c);
    case DatasetKind::allowed_split: {
      const double a = observables(m, dataset_field(m, d, theta), c).allowed_split;
      return d.signed_allowed ? a : std::abs(a);
    }
    case DatasetKind::forbidden_split:
      return observables(m, dataset_field(m, d, theta), c).forbidden_split;
  }
  return 0.0;
}

[[nodiscard]] inline double residual_rms(const SnVModel& m, const SpectroscopyDataset& d,
                                         const PhysicalConstants& c = {}) {
  double ss = 0.0;
  for (const auto& p : d.points) {
    const double r = p.value - predict(m, d, p.theta, c);
    ss += r * r;
  }
  return std::sqrt(ss / static_cast<double>(d.points.size()));
}

namespace detail {

inline bool near_perpendicular(double theta, double window) {
  const double w = wrap_degrees(theta);
  return std::abs(w - 90.0) <= window || std::abs(w - 270.0) <= window;
}

// Unconstrained reparametrisation: logistic for quenching factors, softplus
// for the positive energies, identity for the misalignment angle.
struct Transform {
  FitParam param;

  [[nodiscard]] double to_internal(double v) const {
    switch (param) {
      case FitParam::f32_g:
      case FitParam::f32_u:
      case FitParam::f12_g:
      case FitParam::f12_u: {
        const double f = std::clamp(v, 1e-9, 1.0 - 1e-9);
        return std::log(f / (1.0 - f));
      }
      case FitParam::lambda_g:
      case FitParam::upsilon_g:
      case FitParam::upsilon_u: {
        const double x = std::max(v, 1e-9);
        return x > 30.0 ? x + std::log1p(-std::exp(-x)) : std::log(std::expm1(x));
      }
      case FitParam::delta_theta: return v;
    }
    return v;
  }

  [[nodiscard]] double to_external(double u) const {
    switch (param) {
      case FitParam::f32_g:
      case FitParam::f32_u:
      case FitParam::f12_g:
      case FitParam::f12_u: return 1.0 / (1.0 + std::exp(-u));
      case FitParam::lambda_g:
      case FitParam::upsilon_g:
      case FitParam::upsilon_u: return u > 30.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
      case FitParam::delta_theta: return u;
    }
    return u;
  }
};

// Lower-doublet splitting at b_par = 0 as a function of strain; inverted by
// bisection to seed strain fits.
inline double perpendicular_split(double gamma_s, double b_perp, double alpha, double lambda) {
  return -perpendicular_branch_difference(gamma_s, b_perp, alpha, lambda);
}

inline double invert_perpendicular_split(double target, double gamma_s, double b_perp,
                                         double lambda) {
  const double ceiling = gamma_s * b_perp;
  if (!(target > 0.0)) return 0.0;
  if (target >= ceiling) return 5.0 * lambda;
  double lo = 0.0;
  double hi = 10.0 * std::max(lambda, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (perpendicular_split(gamma_s, b_perp, mid, lambda) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::vector<DataPoint> select_points(const SpectroscopyDataset& d, const FitStage& s) {
  if (!s.perpendicular_window || d.plane == RotationPlane::xy) return d.points;
  std::vector<DataPoint> pts;
  for (const auto& p : d.points)
    if (near_perpendicular(p.theta, *s.perpendicular_window)) pts.push_back(p);
  return pts;
}

inline double initial_guess(const FitStage& s, const SpectroscopyDataset& d,
                            const std::vector<DataPoint>& pts, const SnVModel& m,
                            const FitOptions& o) {
  const auto& c = o.constants;
  switch (s.target) {
    case FitParam::lambda_g: {
      double mean = 0.0;
      for (const auto& p : pts) mean += p.value;
      mean /= static_cast<double>(pts.size());
      // PL separation = sqrt(lambda^2 + 4 upsilon^2)
      const double a = m.ground.upsilon;
      return std::sqrt(std::max(mean * mean - 4.0 * a * a, 1.0));
    }
    case FitParam::upsilon_g: {
      const auto it = std::min_element(pts.begin(), pts.end(),
                                       [](const auto& a, const auto& b) { return a.value < b.value; });
      const double bperp = dataset_field(m, d, 90.0 + m.delta_theta).b_perp;
      return invert_perpendicular_split(it->value, c.gamma_s, bperp, m.ground.lambda);
    }
    case FitParam::upsilon_u: {
      double mean = 0.0;
      for (const auto& p : pts) mean += p.value;
      mean /= static_cast<double>(pts.size());
      const double bperp = dataset_field(m, d, 90.0 + m.delta_theta).b_perp;
      const double dg = perpendicular_split(c.gamma_s, bperp, m.ground.upsilon, m.ground.lambda);
      // signed data: mean = dg - du; magnitudes leave two roots, take the smaller du
      const double du = d.signed_allowed ? dg - mean : std::abs(dg - std::abs(mean));
      return invert_perpendicular_split(du, c.gamma_s, bperp, m.excited.lambda);
    }
    case FitParam::delta_theta: return m.delta_theta;
    default: return o.f_initial;
  }
}

inline bool at_bound(FitParam p, double v) {
  switch (p) {
    case FitParam::f32_g:
    case FitParam::f32_u:
    case FitParam::f12_g:
    case FitParam::f12_u: return v <= 1e-6 || v >= 1.0 - 1e-6;
    default: return false;
  }
}

}  // namespace detail

// Fits one stage target (plus delta_theta when requested) by nonlinear least
// squares against the full-Hamiltonian predictions.
[[nodiscard]] inline FitResult fit_stage(const FitStage& stage, const SpectroscopyDataset& data,
                                         const SnVModel& model_in, const FitOptions& options = {}) {
  data.validate();
  const std::string where = "stage " + std::string(to_string(stage.target)) + " (emitter " +
                            (data.emitter.empty() ? model_in.emitter : data.emitter) + ")";
  if (data.kind != stage.dataset_kind || stage.dataset_kind != stage_dataset_kind(stage.target))
    fail(ErrorKind::fit, where + ": needs " + std::string(to_string(stage_dataset_kind(stage.target))) +
                             " data, got " + std::string(to_string(data.kind)));
  if (stage.frozen.contains(stage.target))
    fail(ErrorKind::fit, where + ": target is already frozen");
  if (stage.co_fit_delta_theta && stage.frozen.contains(FitParam::delta_theta))
    fail(ErrorKind::fit, where + ": delta_theta is frozen but co-fitting was requested");
  for (FitParam p : stage_prerequisites(stage.target))
    if (!stage.frozen.contains(p))
      fail(ErrorKind::fit, where + ": prerequisite " + std::string(to_string(p)) + " is not frozen");
  model_in.ground.validate();
  model_in.excited.validate();

  const auto pts = detail::select_points(data, stage);
  require(!pts.empty(), where + ": no data points inside the perpendicular window", ErrorKind::fit);

  std::vector<FitParam> free{stage.target};
  if (stage.co_fit_delta_theta && stage.target != FitParam::delta_theta)
    free.push_back(FitParam::delta_theta);

  std::vector<detail::Transform> tf;
  opt::Vector x0(static_cast<Eigen::Index>(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) {
    tf.push_back({free[k]});
    x0(static_cast<Eigen::Index>(k)) =
        tf[k].to_internal(detail::initial_guess(FitStage{free[k], data.kind, {}, false, {}}, data,
                                                pts, model_in, options));
  }
  const auto& c = options.constants;

  auto unpack = [&](const opt::Vector& x) {
    SnVModel m = model_in;
    for (std::size_t k = 0; k < free.size(); ++k)
      param_ref(m, free[k]) = tf[k].to_external(x(static_cast<Eigen::Index>(k)));
    return m;
  };
  const opt::ResidualFn residuals = [&](const opt::Vector& x) {
    const SnVModel m = unpack(x);
    opt::Vector r(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i)
      r(static_cast<Eigen::Index>(i)) = predict(m, data, pts[i].theta, c) - pts[i].value;
    return r;
  };

  opt::Options lm = options.optimizer;
  // eigenvalues of a ~1000 GHz matrix carry ~1e-12 GHz of rounding noise
  lm.residual_floor = std::max(lm.residual_floor, kSpectroscopyResidualFloor);
  const opt::Result res = opt::levenberg_marquardt(residuals, x0, lm);
  if (!res.converged)
    fail(ErrorKind::fit, where + ": did not converge after " + std::to_string(res.iterations) +
                             " iterations (" + res.message + ")");
  FitResult out;
  out.params = unpack(res.x);
  for (FitParam p : free)
    if (detail::at_bound(p, param_value(out.params, p)))
      fail(ErrorKind::fit, where + ": " + std::string(to_string(p)) + " ran into its bound (" +
                               std::to_string(param_value(out.params, p)) + ")");
  if (std::abs(out.params.delta_theta) >= kMaxMisalignmentDeg)
    fail(ErrorKind::fit, where + ": |delta_theta| >= 5 deg, data probably mis-assigned");
  out.residual_rms = res.rms();
  out.converged = res.converged;
  out.iterations = res.iterations;
  out.gradient_norm = res.gradient_norm;
  out.initial_gradient_norm = res.initial_gradient_norm;
  out.cost_history = res.cost_history;
  return out;
}

// ---------------------------------------------------------------------------
// Staged pipeline

struct EmitterData {
  std::vector<SpectroscopyDataset> datasets;
  double b_par_cal = 0.0;   // T, 0: nominal field of the datasets
  double b_perp_cal = 0.0;  // T
};

struct PipelineRoles {
  std::string unstrained;
  std::string low_strain;
  std::string high_strain;
  std::vector<std::string> holdout;
};

struct PipelineInputs {
  std::map<std::string, EmitterData> emitters;
  std::optional<PipelineRoles> roles;  // detected from the data when empty
};

struct StageRecord {
  int sweep = 0;
  int stage = 0;  // 1..7, 8 for holdout alignment
  FitParam target = FitParam::lambda_g;
  std::string emitter;
  double value = 0.0;
  double residual_rms = 0.0;
  int iterations = 0;
};

struct SummaryRow {
  std::string parameter;
  double value = 0.0;
  std::string source;  // emitter the value was extracted from, "fixed" otherwise
  double spread = 0.0;
  bool fitted = true;
};

struct PipelineResult {
  std::map<std::string, FitResult> per_emitter;
  PipelineRoles roles;
  std::vector<StageRecord> log;
  std::vector<SummaryRow> summary;
  int sweeps = 0;
  bool sweeps_converged = false;
  std::map<std::string, double> holdout_rms;  // GHz
};

namespace detail {

inline const SpectroscopyDataset* find_dataset(const EmitterData& e, DatasetKind kind,
                                               std::optional<RotationPlane> plane = std::nullopt) {
  for (const auto& d : e.datasets)
    if (d.kind == kind && (!plane || d.plane == *plane)) return &d;
  return nullptr;
}

inline std::string stage_label(int stage) {
  static constexpr std::array<std::string_view, 8> names{
      "", "1 (lambda_g)", "2 (upsilon_g)", "3 (upsilon_u)", "4 (f32_g)",
      "5 (f32_u)", "6 (f12_g)", "7 (f12_u)"};
  return "stage " + std::string(names[static_cast<std::size_t>(stage)]);
}

[[noreturn]] inline void missing(int stage, const std::string& emitter, std::string_view what) {
  fail(ErrorKind::dataset, "pipeline aborted at " + stage_label(stage) + ": emitter '" + emitter +
                               "' has no " + std::string(what) + " dataset");
}

struct Plan {
  PipelineRoles roles;
  std::vector<std::string> strained;  // every emitter with qubit data
  const SpectroscopyDataset* pl = nullptr;
  std::map<std::string, const SpectroscopyDataset*> qubit_yz, allowed_perp, allowed_yz;
};

// Strain ranking from the perpendicular qubit minimum, used to assign the
// low/high-strain roles when they are not given.
inline double strain_proxy(const SpectroscopyDataset& qubit) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : qubit.points) best = std::min(best, p.value);
  return best;
}

inline Plan make_plan(const PipelineInputs& in) {
  Plan plan;
  for (const auto& [name, e] : in.emitters)
    for (const auto& d : e.datasets) d.validate();

  if (in.roles) {
    plan.roles = *in.roles;
  } else {
    for (const auto& [name, e] : in.emitters)
      if (find_dataset(e, DatasetKind::pl_splitting)) {
        plan.roles.unstrained = name;
        break;
      }
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& [name, e] : in.emitters)
      if (const auto* q = find_dataset(e, DatasetKind::odmr_qubit, RotationPlane::yz))
        ranked.emplace_back(strain_proxy(*q), name);
    std::sort(ranked.begin(), ranked.end());
    if (!ranked.empty()) plan.roles.low_strain = ranked.front().second;
    if (ranked.size() >= 2) plan.roles.high_strain = ranked.back().second;
    for (std::size_t i = 1; i + 1 < ranked.size(); ++i) plan.roles.holdout.push_back(ranked[i].second);
  }

  auto emitter = [&](const std::string& name, int stage) -> const EmitterData& {
    if (name.empty())
      fail(ErrorKind::dataset, "pipeline aborted at " + stage_label(stage) +
                                   ": no emitter available for this role");
    const auto it = in.emitters.find(name);
    if (it == in.emitters.end())
      fail(ErrorKind::dataset, "pipeline aborted at " + stage_label(stage) + ": emitter '" + name +
                                   "' has no datasets");
    return it->second;
  };

  const auto& d = emitter(plan.roles.unstrained, 1);
  plan.pl = find_dataset(d, DatasetKind::pl_splitting);
  if (!plan.pl) missing(1, plan.roles.unstrained, "pl_splitting");

  plan.strained = {plan.roles.low_strain, plan.roles.high_strain};
  plan.strained.insert(plan.strained.end(), plan.roles.holdout.begin(), plan.roles.holdout.end());
  for (const auto& name : plan.strained) {
    const auto& e = emitter(name, 2);
    const auto* q = find_dataset(e, DatasetKind::odmr_qubit, RotationPlane::yz);
    if (!q) missing(2, name, "yz odmr_qubit");
    plan.qubit_yz[name] = q;
  }
  for (const auto& name : plan.strained) {
    const auto& e = in.emitters.at(name);
    const auto* a = find_dataset(e, DatasetKind::allowed_split, RotationPlane::xy);
    if (!a) a = find_dataset(e, DatasetKind::allowed_split, RotationPlane::yz);
    if (!a) missing(3, name, "allowed_split");
    plan.allowed_perp[name] = a;
  }
  // qubit maps for stages 4 and 6 were checked with stage 2
  const auto* a_low = find_dataset(in.emitters.at(plan.roles.low_strain), DatasetKind::allowed_split,
                                   RotationPlane::yz);
  if (!a_low) missing(5, plan.roles.low_strain, "yz allowed_split");
  const auto* a_high = find_dataset(in.emitters.at(plan.roles.high_strain),
                                    DatasetKind::allowed_split, RotationPlane::yz);
  if (!a_high) missing(7, plan.roles.high_strain, "yz allowed_split");
  for (const auto& name : plan.strained)
    plan.allowed_yz[name] =
        find_dataset(in.emitters.at(name), DatasetKind::allowed_split, RotationPlane::yz);
  return plan;
}

inline double max_relative_change(const std::map<std::string, SnVModel>& a,
                                  const std::map<std::string, SnVModel>& b) {
  double worst = 0.0;
  for (const auto& [name, ma] : a) {
    const SnVModel& mb = b.at(name);
    for (FitParam p : kAllFitParams) {
      const double va = param_value(ma, p);
      const double vb = param_value(mb, p);
      const double scale = p == FitParam::delta_theta ? 1.0 : std::max(std::abs(va), 1e-12);
      worst = std::max(worst, std::abs(va - vb) / scale);
    }
  }
  return worst;
}

}  // namespace detail

[[nodiscard]] inline PipelineResult run_staged_pipeline(const PipelineInputs& in,
                                                        const FitOptions& o = {}) {
  using enum FitParam;
  const detail::Plan plan = detail::make_plan(in);
  PipelineResult out;
  out.roles = plan.roles;

  // Working models; shared parameters are copied into every emitter.
  std::map<std::string, SnVModel> models;
  for (const auto& [name, e] : in.emitters) {
    SnVModel m;
    m.emitter = name;
    m.ground = {1.0, o.f_initial, o.f_initial, 0.0};
    m.excited = {kExcitedLambda, o.f_initial, o.f_initial, 0.0};
    m.b_parallel_cal = e.b_par_cal;
    m.b_perp_cal = e.b_perp_cal;
    models[name] = m;
  }
  auto share = [&](FitParam p, double v) {
    for (auto& [name, m] : models) param_ref(m, p) = v;
  };

  int sweep = 0;
  auto run = [&](int stage, FitParam target, const std::string& emitter,
                 const SpectroscopyDataset& data, const std::set<FitParam>& frozen, bool co_fit,
                 std::optional<double> window = std::nullopt) {
    const FitStage st = FitStage::make(target, frozen, co_fit, window);
    const FitResult r = fit_stage(st, data, models.at(emitter), o);
    SnVModel& m = models.at(emitter);
    const bool shared = target == lambda_g || target == f32_g || target == f32_u ||
                        target == f12_g || target == f12_u;
    if (shared)
      share(target, param_value(r.params, target));
    else
      param_ref(m, target) = param_value(r.params, target);
    if (co_fit) m.delta_theta = r.params.delta_theta;
    out.log.push_back({sweep, stage, target, emitter, param_value(r.params, target), r.residual_rms,
                       r.iterations});
  };

  // Stage 1, once: the unstrained emitter has upsilon_g = 0 by assumption.
  sweep = 1;
  run(1, lambda_g, plan.roles.unstrained, *plan.pl, {}, false);

  const auto& low = plan.roles.low_strain;
  const auto& high = plan.roles.high_strain;
  for (; sweep <= o.max_sweeps; ++sweep) {
    const auto before = models;
    std::set<FitParam> frozen{lambda_g};
    if (sweep > 1) frozen.insert(delta_theta);

    for (const auto& name : plan.strained) {
      auto fz = frozen;
      fz.erase(delta_theta);  // alignment is held, not fitted, in stage 2
      run(2, upsilon_g, name, *plan.qubit_yz.at(name), fz, false, o.perpendicular_window);
    }
    frozen.insert(upsilon_g);
    for (const auto& name : plan.strained) {
      auto fz = frozen;
      fz.erase(delta_theta);
      run(3, upsilon_u, name, *plan.allowed_perp.at(name), fz, false, o.perpendicular_window);
    }
    frozen.insert(upsilon_u);
    frozen.erase(delta_theta);
    run(4, f32_g, low, *plan.qubit_yz.at(low), frozen, true);
    frozen.insert(f32_g);
    run(5, f32_u, low, *plan.allowed_yz.at(low), frozen, true);
    frozen.insert(f32_u);
    run(6, f12_g, high, *plan.qubit_yz.at(high), frozen, true);
    frozen.insert(f12_g);
    run(7, f12_u, high, *plan.allowed_yz.at(high), frozen, true);
    frozen.insert(f12_u);
    for (const auto& name : plan.roles.holdout)
      run(8, delta_theta, name, *plan.qubit_yz.at(name), frozen, false);

    const double change = detail::max_relative_change(before, models);
    out.sweeps = sweep;
    if (sweep > 1 && change < o.sweep_tolerance) {
      out.sweeps_converged = true;
      break;
    }
  }

  for (const auto& [name, e] : in.emitters) {
    FitResult r;
    r.params = models.at(name);
    double ss = 0.0;
    std::size_t n = 0;
    for (const auto& d : e.datasets) {
      for (const auto& p : d.points) {
        const double res = p.value - predict(r.params, d, p.theta, o.constants);
        ss += res * res;
        ++n;
      }
    }
    r.residual_rms = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
    r.converged = out.sweeps_converged;
    r.iterations = out.sweeps;
    out.per_emitter[name] = r;
  }
  for (const auto& name : plan.roles.holdout) out.holdout_rms[name] = out.per_emitter.at(name).residual_rms;

  // Summary rows in the order of the parameter table.
  const SnVModel& ref = models.at(plan.roles.unstrained);
  out.summary.push_back({"lambda_g", ref.ground.lambda, plan.roles.unstrained, 0.0, true});
  out.summary.push_back({"lambda_u", ref.excited.lambda, "fixed", 0.0, false});
  out.summary.push_back({"f32_g", ref.ground.f_32, low, 0.0, true});
  out.summary.push_back({"f32_u", ref.excited.f_32, low, 0.0, true});
  out.summary.push_back({"f12_g", ref.ground.f_12, high, 0.0, true});
  out.summary.push_back({"f12_u", ref.excited.f_12, high, 0.0, true});
  for (const auto& name : plan.strained) {
    const SnVModel& m = models.at(name);
    out.summary.push_back({"upsilon_g[" + name + "]", m.ground.upsilon, name, 0.0, true});
    out.summary.push_back({"upsilon_u[" + name + "]", m.excited.upsilon, name, 0.0, true});
    out.summary.push_back({"b_par[" + name + "]", m.b_parallel_cal, name, 0.0, false});
    out.summary.push_back({"b_perp[" + name + "]", m.b_perp_cal, name, 0.0, false});
    out.summary.push_back({"delta_theta[" + name + "]", m.delta_theta, name, 0.0, true});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Field-amplitude uncertainty

struct UncertaintyResult {
  std::map<std::string, double> spread;                // max - min over converged grid points
  std::map<std::string, std::vector<double>> samples;  // row-major over (x_par, x_perp)
  std::vector<double> x_values;                        // scaling coordinates in [-1, 1]
  int runs = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
};

namespace detail {

inline void materialise_calibration(PipelineInputs& in) {
  for (auto& [name, e] : in.emitters) {
    double nominal = 0.0;
    for (const auto& d : e.datasets)
      if (d.field_dependent()) {
        nominal = d.field_magnitude;
        break;
      }
    if (e.b_par_cal <= 0.0) e.b_par_cal = nominal;
    if (e.b_perp_cal <= 0.0) e.b_perp_cal = nominal;
  }
}

}  // namespace detail

// Refits the full pipeline on a grid_n x grid_n grid of field scalings
// B(x) = B_cal (1 + x rel_error), x in [-1, 1] independently for the
// parallel and transverse amplitudes. The range of each fitted parameter
// over the grid is reported as its standard uncertainty.
[[nodiscard]] inline UncertaintyResult propagate_field_uncertainty(PipelineInputs in,
                                                                   double rel_error, int grid_n,
                                                                   const FitOptions& o = {}) {
  require(rel_error >= 0.0 && std::isfinite(rel_error), "rel_error must be >= 0");
  require(grid_n >= 2, "grid_n must be >= 2");
  detail::materialise_calibration(in);

  UncertaintyResult out;
  for (int i = 0; i < grid_n; ++i) out.x_values.push_back(-1.0 + 2.0 * i / (grid_n - 1));
  const std::size_t cells = static_cast<std::size_t>(grid_n) * static_cast<std::size_t>(grid_n);

  std::vector<std::optional<PipelineResult>> results(cells);
  std::vector<std::string> errors(cells);
  FitOptions inner = o;
  inner.jobs = 1;
  detail::parallel_for(cells, o.jobs, [&](std::size_t cell) {
    const double xp = out.x_values[cell / static_cast<std::size_t>(grid_n)];
    const double xt = out.x_values[cell % static_cast<std::size_t>(grid_n)];
    PipelineInputs scaled = in;
    for (auto& [name, e] : scaled.emitters) {
      e.b_par_cal *= 1.0 + xp * rel_error;
      e.b_perp_cal *= 1.0 + xt * rel_error;
    }
    try {
      results[cell] = run_staged_pipeline(scaled, inner);
    } catch (const Error& err) {
      errors[cell] = err.what();
    }
  });

  out.runs = static_cast<int>(cells);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    if (!results[cell]) {
      ++out.failures;
      out.failure_messages.push_back(errors[cell]);
      continue;
    }
    for (const auto& row : results[cell]->summary)
      if (row.fitted) out.samples[row.parameter].push_back(row.value);
  }
  for (const auto& [name, v] : out.samples) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    out.spread[name] = *hi - *lo;
  }
  return out;
}

inline void apply_spreads(PipelineResult& result, const UncertaintyResult& u) {
  for (auto& row : result.summary) {
    const auto it = u.spread.find(row.parameter);
    if (it != u.spread.end()) row.spread = it->second;
  }
  for (auto& [name, fr] : result.per_emitter) fr.per_param_spread = u.spread;
}

// Aligned text rendering of the summary (parameter, value, source, spread).
[[nodiscard]] inline std::string format_summary_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "parameter" << std::setw(18) << "value" << std::setw(10)
     << "fitted" << std::setw(10) << "source" << "spread\n";
  for (const auto& r : rows) {
    std::ostringstream v, s;
    v << std::setprecision(10) << r.value;
    s << std::setprecision(4) << r.spread;
    os << std::left << std::setw(20) << r.parameter << std::setw(18) << v.str() << std::setw(10)
       << (r.fitted ? "yes" : "-") << std::setw(10) << r.source << s.str() << "\n";
  }
  return os.str();
}

}  // namespace snv
