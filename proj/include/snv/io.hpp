#pragma once

// Dataset files, model files and run configuration.
//
// Datasets are CSV with a `# key: value` comment header. The `kind` key
// selects the schema:
//   odmr          theta_deg,value_GHz              (qubit splitting)
//   rotation_map  theta_deg,value_GHz              (observable: allowed_split | forbidden_split)
//   pl            [theta_deg,]value_GHz            (ground doublet separation)
//   echo          tau_us,signal                    (orientation, b_nominal_T)
//   cpmg          n_pulses,time_ms,counts  or  n_pulses,tau_ms,counts
//   strain_grid   x_um,y_um,eps_xx,eps_yy,eps_zz,eps_xy,eps_yz,eps_zx
// Models and configuration are JSON; unknown keys are rejected.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "snv/coherence.hpp"
#include "snv/error.hpp"
#include "snv/field_calibration.hpp"
#include "snv/fit_pipeline.hpp"
#include "snv/model.hpp"
#include "snv/strain.hpp"
#include "snv/transitions.hpp"

namespace snv {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Shortest stable text form used for every numeric output.
[[nodiscard]] inline std::string format_double(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

// Shortest text that parses back to the same double; used for dataset files.
[[nodiscard]] inline std::string format_exact(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::string path;
  std::map<std::string, std::string> meta;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<int> line_numbers;  // source line of each row

  [[nodiscard]] std::optional<std::string> get(const std::string& key) const {
    const auto it = meta.find(key);
    if (it == meta.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] const std::string& require_key(const std::string& key) const {
    const auto it = meta.find(key);
    if (it == meta.end()) fail(ErrorKind::dataset, path + ": missing required header key '" + key + "'");
    return it->second;
  }

  [[nodiscard]] std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    return std::nullopt;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto p = s.find(sep, start);
    out.push_back(trim(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

inline double parse_number(const std::string& text, const std::string& where) {
  double v = 0.0;
  const char* b = text.data();
  const char* e = b + text.size();
  if (!text.empty() && *b == '+') ++b;
  const auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || text.empty())
    fail(ErrorKind::dataset, where + ": cannot parse '" + text + "' as a number");
  if (!std::isfinite(v)) fail(ErrorKind::dataset, where + ": non-finite value '" + text + "'");
  return v;
}

inline double meta_number(const CsvTable& t, const std::string& key) {
  return parse_number(t.require_key(key), t.path + ": header '" + key + "'");
}

inline std::optional<double> meta_number_opt(const CsvTable& t, const std::string& key) {
  if (!t.get(key)) return std::nullopt;
  return meta_number(t, key);
}

}  // namespace detail

[[nodiscard]] inline CsvTable parse_csv(std::istream& in, const std::string& path = "<input>") {
  CsvTable t;
  t.path = path;
  std::string line;
  int lineno = 0;
  bool header_done = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = detail::trim(line);
    if (s.empty()) continue;
    if (s.front() == '#') {
      const auto colon = s.find(':');
      if (colon == std::string::npos) continue;  // free comment
      const std::string key = detail::trim(std::string_view(s).substr(1, colon - 1));
      const std::string value = detail::trim(std::string_view(s).substr(colon + 1));
      if (key.empty()) continue;
      if (t.meta.contains(key))
        fail(ErrorKind::dataset, path + ": line " + std::to_string(lineno) + ": duplicate header key '" + key + "'");
      t.meta[key] = value;
      continue;
    }
    if (!header_done) {
      t.columns = detail::split(s, ',');
      for (const auto& c : t.columns)
        if (c.empty()) fail(ErrorKind::dataset, path + ": line " + std::to_string(lineno) + ": empty column name");
      header_done = true;
      continue;
    }
    const auto cells = detail::split(s, ',');
    if (cells.size() != t.columns.size())
      fail(ErrorKind::dataset, path + ": line " + std::to_string(lineno) + ": expected " +
                                   std::to_string(t.columns.size()) + " columns, got " + std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      row.push_back(detail::parse_number(cells[c], path + ": line " + std::to_string(lineno) + ", column " +
                                                       std::to_string(c + 1) + " (" + t.columns[c] + ")"));
    t.rows.push_back(std::move(row));
    t.line_numbers.push_back(lineno);
  }
  if (!header_done) fail(ErrorKind::dataset, path + ": no column header line");
  if (t.rows.empty()) fail(ErrorKind::dataset, path + ": no data rows");
  return t;
}

[[nodiscard]] inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  return parse_csv(in, path.string());
}

enum class FileKind { rotation_map, odmr, echo, cpmg, strain_grid, pl };

[[nodiscard]] constexpr std::string_view to_string(FileKind k) noexcept {
  switch (k) {
    case FileKind::rotation_map: return "rotation_map";
    case FileKind::odmr: return "odmr";
    case FileKind::echo: return "echo";
    case FileKind::cpmg: return "cpmg";
    case FileKind::strain_grid: return "strain_grid";
    case FileKind::pl: return "pl";
  }
  return "unknown";
}

[[nodiscard]] inline FileKind file_kind(const CsvTable& t) {
  const std::string& k = t.require_key("kind");
  for (auto v : {FileKind::rotation_map, FileKind::odmr, FileKind::echo, FileKind::cpmg, FileKind::strain_grid,
                 FileKind::pl})
    if (k == to_string(v)) return v;
  fail(ErrorKind::dataset, t.path + ": unknown dataset kind '" + k + "'");
}

namespace detail {

inline void expect_kind(const CsvTable& t, std::initializer_list<FileKind> allowed) {
  const FileKind k = file_kind(t);
  for (FileKind a : allowed)
    if (a == k) return;
  std::string names;
  for (FileKind a : allowed) names += (names.empty() ? "" : " or ") + std::string(to_string(a));
  fail(ErrorKind::dataset, t.path + ": expected kind " + names + ", got '" + std::string(to_string(k)) + "'");
}

inline void expect_columns(const CsvTable& t, const std::vector<std::string>& cols) {
  if (t.columns != cols) {
    std::string want, got;
    for (const auto& c : cols) want += (want.empty() ? "" : ",") + c;
    for (const auto& c : t.columns) got += (got.empty() ? "" : ",") + c;
    fail(ErrorKind::dataset, t.path + ": schema mismatch for kind '" + t.require_key("kind") + "': expected columns " +
                                 want + ", got " + got);
  }
}

}  // namespace detail

// odmr, rotation_map or pl file -> spectroscopy dataset.
[[nodiscard]] inline SpectroscopyDataset to_spectroscopy(const CsvTable& t) {
  detail::expect_kind(t, {FileKind::odmr, FileKind::rotation_map, FileKind::pl});
  const FileKind k = file_kind(t);
  SpectroscopyDataset d;
  d.emitter = t.require_key("emitter");
  if (const auto p = t.get("plane")) d.plane = parse_plane(*p);
  if (const auto s = t.get("allowed_sign")) {
    if (*s != "signed" && *s != "magnitude")
      fail(ErrorKind::dataset, t.path + ": allowed_sign must be 'signed' or 'magnitude'");
    d.signed_allowed = *s == "signed";
  }
  if (k == FileKind::pl) {
    d.kind = DatasetKind::pl_splitting;
    if (t.columns.size() == 1)
      detail::expect_columns(t, {"value_GHz"});
    else
      detail::expect_columns(t, {"theta_deg", "value_GHz"});
    d.field_magnitude = detail::meta_number_opt(t, "field_magnitude").value_or(0.0);
    const bool with_theta = t.columns.size() == 2;
    for (const auto& r : t.rows) d.points.push_back({with_theta ? r[0] : 0.0, with_theta ? r[1] : r[0]});
  } else {
    detail::expect_columns(t, {"theta_deg", "value_GHz"});
    if (k == FileKind::odmr) {
      d.kind = DatasetKind::odmr_qubit;
    } else {
      const std::string obs = t.get("observable").value_or("allowed_split");
      if (obs == "allowed_split")
        d.kind = DatasetKind::allowed_split;
      else if (obs == "forbidden_split")
        d.kind = DatasetKind::forbidden_split;
      else
        fail(ErrorKind::dataset, t.path + ": observable must be allowed_split or forbidden_split, got '" + obs + "'");
    }
    d.field_magnitude = detail::meta_number(t, "field_magnitude");
    for (const auto& r : t.rows) d.points.push_back({r[0], r[1]});
  }
  try {
    d.validate();
  } catch (const Error& e) {
    fail(ErrorKind::dataset, t.path + ": " + e.what());
  }
  return d;
}

[[nodiscard]] inline EchoTrace to_echo(const CsvTable& t) {
  detail::expect_kind(t, {FileKind::echo});
  detail::expect_columns(t, {"tau_us", "signal"});
  EchoTrace e;
  e.orientation = parse_orientation(t.require_key("orientation"));
  e.b_nominal = detail::meta_number(t, "b_nominal_T");
  for (const auto& r : t.rows) e.points.push_back({r[0], r[1]});
  try {
    e.validate();
  } catch (const Error& err) {
    fail(ErrorKind::dataset, t.path + ": " + err.what());
  }
  return e;
}

// Groups rows by pulse number; tau columns are converted to total time N tau.
[[nodiscard]] inline std::vector<DecayTrace> to_cpmg(const CsvTable& t) {
  detail::expect_kind(t, {FileKind::cpmg});
  bool per_pulse = false;
  if (t.column("tau_ms")) {
    detail::expect_columns(t, {"n_pulses", "tau_ms", "counts"});
    per_pulse = true;
  } else {
    detail::expect_columns(t, {"n_pulses", "time_ms", "counts"});
  }
  std::map<int, DecayTrace> by_n;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const double nd = r[0];
    if (nd < 1.0 || nd != std::floor(nd))
      fail(ErrorKind::dataset, t.path + ": line " + std::to_string(t.line_numbers[i]) +
                                   ": n_pulses must be a positive integer");
    const int n = static_cast<int>(nd);
    DecayTrace& tr = by_n[n];
    tr.n_pulses = n;
    tr.time_ms.push_back(per_pulse ? r[1] * n : r[1]);
    tr.signal.push_back(r[2]);
  }
  std::vector<DecayTrace> out;
  for (auto& [n, tr] : by_n) {
    try {
      tr.validate();
    } catch (const Error& e) {
      fail(ErrorKind::dataset, t.path + ": " + e.what());
    }
    out.push_back(std::move(tr));
  }
  return out;
}

[[nodiscard]] inline std::vector<StrainGridPoint> to_strain_grid(const CsvTable& t) {
  detail::expect_kind(t, {FileKind::strain_grid});
  detail::expect_columns(t, {"x_um", "y_um", "eps_xx", "eps_yy", "eps_zz", "eps_xy", "eps_yz", "eps_zx"});
  std::vector<StrainGridPoint> g;
  for (const auto& r : t.rows) g.push_back({r[0], r[1], {r[2], r[3], r[4], r[5], r[6], r[7]}});
  return g;
}

// Loads every spectroscopy file (odmr, rotation_map, pl) of a directory, in
// file-name order. Calibrated amplitudes come from the optional headers
// b_par_cal_T / b_perp_cal_T and must agree between files of one emitter.
[[nodiscard]] inline PipelineInputs load_pipeline_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::io, "'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  PipelineInputs in;
  for (const auto& f : files) {
    const CsvTable t = read_csv(f);
    const FileKind k = file_kind(t);
    if (k != FileKind::odmr && k != FileKind::rotation_map && k != FileKind::pl) continue;
    SpectroscopyDataset d = to_spectroscopy(t);
    EmitterData& e = in.emitters[d.emitter];
    auto merge = [&](const char* key, double& slot) {
      if (const auto v = detail::meta_number_opt(t, key)) {
        if (slot > 0.0 && slot != *v)
          fail(ErrorKind::dataset, t.path + ": " + key + " disagrees with another file of emitter " + d.emitter);
        slot = *v;
      }
    };
    merge("b_par_cal_T", e.b_par_cal);
    merge("b_perp_cal_T", e.b_perp_cal);
    e.datasets.push_back(std::move(d));
  }
  if (in.emitters.empty()) fail(ErrorKind::dataset, "no spectroscopy datasets found in '" + dir.string() + "'");
  return in;
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::invalid_argument, where + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      fail(ErrorKind::invalid_argument, where + ": unknown key '" + k + "'");
  }
}

inline double get_number(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_number()) fail(ErrorKind::invalid_argument, where + ": '" + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(ErrorKind::invalid_argument, where + ": '" + key + "' must be finite");
  return d;
}

inline void read_number(const json& j, const char* key, double& out, const std::string& where) {
  if (j.contains(key)) out = get_number(j, key, where);
}

inline void read_positive(const json& j, const char* key, double& out, const std::string& where) {
  if (!j.contains(key)) return;
  out = get_number(j, key, where);
  if (!(out > 0.0)) fail(ErrorKind::invalid_argument, where + ": '" + key + "' must be > 0");
}

inline void read_positive_int(const json& j, const char* key, int& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() <= 0)
    fail(ErrorKind::invalid_argument, where + ": '" + key + "' must be a positive integer");
  out = static_cast<int>(v.get<long long>());
}

inline json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, where + ": invalid JSON (" + std::string(e.what()) + ")");
  }
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorKind::io, "cannot open '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline ManifoldParams manifold_from_json(const json& j, const std::string& where) {
  reject_unknown(j, {"lambda", "f12", "f32", "upsilon"}, where);
  ManifoldParams m;
  read_number(j, "lambda", m.lambda, where);
  read_number(j, "f12", m.f_12, where);
  read_number(j, "f32", m.f_32, where);
  read_number(j, "upsilon", m.upsilon, where);
  return m;
}

inline json manifold_to_json(const ManifoldParams& m) {
  return {{"lambda", m.lambda}, {"f12", m.f_12}, {"f32", m.f_32}, {"upsilon", m.upsilon}};
}

}  // namespace detail

[[nodiscard]] inline json model_to_json(const SnVModel& m) {
  return {{"emitter", m.emitter},
          {"ground", detail::manifold_to_json(m.ground)},
          {"excited", detail::manifold_to_json(m.excited)},
          {"b_parallel_cal", m.b_parallel_cal},
          {"b_perp_cal", m.b_perp_cal},
          {"delta_theta", m.delta_theta}};
}

[[nodiscard]] inline SnVModel model_from_json(const json& j, const std::string& where = "model") {
  detail::reject_unknown(j, {"emitter", "ground", "excited", "b_parallel_cal", "b_perp_cal", "delta_theta"}, where);
  SnVModel m;
  if (j.contains("emitter")) {
    if (!j.at("emitter").is_string()) fail(ErrorKind::invalid_argument, where + ": 'emitter' must be a string");
    m.emitter = j.at("emitter").get<std::string>();
  }
  if (j.contains("ground")) m.ground = detail::manifold_from_json(j.at("ground"), where + ".ground");
  if (j.contains("excited")) m.excited = detail::manifold_from_json(j.at("excited"), where + ".excited");
  detail::read_number(j, "b_parallel_cal", m.b_parallel_cal, where);
  detail::read_number(j, "b_perp_cal", m.b_perp_cal, where);
  detail::read_number(j, "delta_theta", m.delta_theta, where);
  try {
    m.validate();
  } catch (const Error& e) {
    fail(ErrorKind::invalid_argument, where + ": " + e.what());
  }
  return m;
}

[[nodiscard]] inline SnVModel load_model(const fs::path& p) {
  return model_from_json(detail::parse_json_text(detail::read_text(p), p.string()), p.string());
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  PhysicalConstants constants;
  LabFrameCalibration calibration = LabFrameCalibration::table_two();
  FitOptions fit;
  std::optional<PipelineRoles> roles;
  int grid_n = 5;
  double rel_error = 0.005;
  double xi = kDefaultStretch;
  unsigned jobs = 1;
  std::uint64_t seed = 20240601;
};

[[nodiscard]] inline RunConfig config_from_json(const json& j, const std::string& where = "config") {
  detail::reject_unknown(j, {"constants", "calibration", "fit", "uncertainty", "coherence", "jobs", "seed"}, where);
  RunConfig c;
  if (j.contains("constants")) {
    const auto& s = j.at("constants");
    const std::string w = where + ".constants";
    detail::reject_unknown(s, {"gamma_l", "gamma_s", "gamma_c13"}, w);
    detail::read_positive(s, "gamma_l", c.constants.gamma_l, w);
    detail::read_positive(s, "gamma_s", c.constants.gamma_s, w);
    detail::read_positive(s, "gamma_c13", c.constants.gamma_c13, w);
  }
  if (j.contains("calibration")) {
    const auto& s = j.at("calibration");
    const std::string w = where + ".calibration";
    detail::reject_unknown(s, {"coil_gains", "axes"}, w);
    auto vec3 = [&](const json& v, const std::string& what) {
      if (!v.is_array() || v.size() != 3 || !std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); }))
        fail(ErrorKind::invalid_argument, w + ": '" + what + "' must be an array of three numbers");
      return Vec3{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
    };
    if (s.contains("coil_gains")) c.calibration.coil_gains = vec3(s.at("coil_gains"), "coil_gains");
    if (s.contains("axes")) {
      if (!s.at("axes").is_object()) fail(ErrorKind::invalid_argument, w + ": 'axes' must be an object");
      c.calibration.snv_axes.clear();
      for (const auto& [name, v] : s.at("axes").items()) {
        try {
          c.calibration.set_axis(name, vec3(v, "axes." + name));
        } catch (const Error& e) {
          fail(ErrorKind::invalid_argument, w + ": " + e.what());
        }
      }
    }
  }
  if (j.contains("fit")) {
    const auto& s = j.at("fit");
    const std::string w = where + ".fit";
    detail::reject_unknown(s,
                           {"max_iterations", "relative_tolerance", "gradient_tolerance", "jacobian_step", "max_sweeps",
                            "sweep_tolerance", "perpendicular_window", "f_initial", "roles"},
                           w);
    detail::read_positive_int(s, "max_iterations", c.fit.optimizer.max_iterations, w);
    detail::read_positive(s, "relative_tolerance", c.fit.optimizer.relative_tolerance, w);
    detail::read_positive(s, "gradient_tolerance", c.fit.optimizer.gradient_tolerance, w);
    detail::read_positive(s, "jacobian_step", c.fit.optimizer.jacobian_step, w);
    detail::read_positive_int(s, "max_sweeps", c.fit.max_sweeps, w);
    detail::read_positive(s, "sweep_tolerance", c.fit.sweep_tolerance, w);
    detail::read_positive(s, "perpendicular_window", c.fit.perpendicular_window, w);
    detail::read_positive(s, "f_initial", c.fit.f_initial, w);
    if (c.fit.f_initial >= 1.0) fail(ErrorKind::invalid_argument, w + ": 'f_initial' must be < 1");
    if (s.contains("roles")) {
      const auto& r = s.at("roles");
      const std::string wr = w + ".roles";
      detail::reject_unknown(r, {"unstrained", "low_strain", "high_strain", "holdout"}, wr);
      PipelineRoles roles;
      auto str = [&](const char* key, std::string& out) {
        if (!r.contains(key)) fail(ErrorKind::invalid_argument, wr + ": missing '" + std::string(key) + "'");
        if (!r.at(key).is_string()) fail(ErrorKind::invalid_argument, wr + ": '" + key + "' must be a string");
        out = r.at(key).get<std::string>();
      };
      str("unstrained", roles.unstrained);
      str("low_strain", roles.low_strain);
      str("high_strain", roles.high_strain);
      if (r.contains("holdout")) {
        const auto& h = r.at("holdout");
        if (!h.is_array() || !std::all_of(h.begin(), h.end(), [](const json& x) { return x.is_string(); }))
          fail(ErrorKind::invalid_argument, wr + ": 'holdout' must be an array of strings");
        for (const auto& x : h) roles.holdout.push_back(x.get<std::string>());
      }
      c.roles = roles;
    }
  }
  if (j.contains("uncertainty")) {
    const auto& s = j.at("uncertainty");
    const std::string w = where + ".uncertainty";
    detail::reject_unknown(s, {"grid_n", "rel_error"}, w);
    detail::read_positive_int(s, "grid_n", c.grid_n, w);
    if (c.grid_n < 2) fail(ErrorKind::invalid_argument, w + ": 'grid_n' must be >= 2");
    detail::read_positive(s, "rel_error", c.rel_error, w);
  }
  if (j.contains("coherence")) {
    const auto& s = j.at("coherence");
    const std::string w = where + ".coherence";
    detail::reject_unknown(s, {"xi"}, w);
    detail::read_positive(s, "xi", c.xi, w);
  }
  if (j.contains("jobs")) {
    int jobs = 1;
    detail::read_positive_int(j, "jobs", jobs, where);
    c.jobs = static_cast<unsigned>(jobs);
  }
  if (j.contains("seed")) {
    const auto& v = j.at("seed");
    if (!v.is_number_unsigned()) fail(ErrorKind::invalid_argument, where + ": 'seed' must be a non-negative integer");
    c.seed = v.get<std::uint64_t>();
  }
  c.fit.constants = c.constants;
  c.fit.jobs = c.jobs;
  return c;
}

[[nodiscard]] inline RunConfig load_config(const fs::path& p) {
  return config_from_json(detail::parse_json_text(detail::read_text(p), p.string()), p.string());
}

// ---------------------------------------------------------------------------
// Writers

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write '" + p.string() + "'");
  out << text;
  if (!out) fail(ErrorKind::io, "write to '" + p.string() + "' failed");
}

[[nodiscard]] inline std::string rotation_map_csv(const std::vector<RotationMapPoint>& pts) {
  std::ostringstream os;
  os << "theta_deg,phi_deg,qubit_GHz,allowed_split_GHz,forbidden_split_GHz\n";
  for (const auto& p : pts)
    os << format_double(p.theta) << ',' << format_double(p.phi) << ',' << format_double(p.observables.qubit) << ','
       << format_double(p.observables.allowed_split) << ',' << format_double(p.observables.forbidden_split) << '\n';
  return os.str();
}

[[nodiscard]] inline std::string strain_map_csv(const std::vector<StrainMapRow>& rows) {
  std::ostringstream os;
  os << "x_um,y_um,orientation,gs_splitting_GHz,zpl_shift_GHz\n";
  for (const auto& r : rows)
    os << format_double(r.x_um) << ',' << format_double(r.y_um) << ',' << to_string(r.orientation) << ','
       << format_double(r.gs_splitting) << ',' << format_double(r.zpl_shift) << '\n';
  return os.str();
}

// Dataset writers, the inverse of the loaders above. Calibrated amplitudes
// are written as headers when positive.
[[nodiscard]] inline std::string spectroscopy_csv(const SpectroscopyDataset& d, double b_par_cal = 0.0,
                                                  double b_perp_cal = 0.0) {
  std::ostringstream os;
  switch (d.kind) {
    case DatasetKind::odmr_qubit: os << "# kind: odmr\n"; break;
    case DatasetKind::pl_splitting: os << "# kind: pl\n"; break;
    case DatasetKind::allowed_split: os << "# kind: rotation_map\n# observable: allowed_split\n"; break;
    case DatasetKind::forbidden_split: os << "# kind: rotation_map\n# observable: forbidden_split\n"; break;
  }
  os << "# emitter: " << d.emitter << '\n';
  if (d.kind != DatasetKind::pl_splitting) {
    os << "# plane: " << to_string(d.plane) << '\n';
    os << "# field_magnitude: " << format_exact(d.field_magnitude) << '\n';
  }
  if (d.kind == DatasetKind::allowed_split) os << "# allowed_sign: " << (d.signed_allowed ? "signed" : "magnitude") << '\n';
  if (b_par_cal > 0.0) os << "# b_par_cal_T: " << format_exact(b_par_cal) << '\n';
  if (b_perp_cal > 0.0) os << "# b_perp_cal_T: " << format_exact(b_perp_cal) << '\n';
  os << "theta_deg,value_GHz\n";
  for (const auto& p : d.points) os << format_exact(p.theta) << ',' << format_exact(p.value) << '\n';
  return os.str();
}

[[nodiscard]] inline std::string echo_csv(const EchoTrace& e) {
  std::ostringstream os;
  os << "# kind: echo\n# orientation: " << to_string(e.orientation) << "\n# b_nominal_T: " << format_exact(e.b_nominal)
     << "\ntau_us,signal\n";
  for (const auto& p : e.points) os << format_exact(p.tau) << ',' << format_exact(p.signal) << '\n';
  return os.str();
}

[[nodiscard]] inline std::string cpmg_csv(const std::vector<DecayTrace>& traces) {
  std::ostringstream os;
  os << "# kind: cpmg\nn_pulses,time_ms,counts\n";
  for (const auto& tr : traces)
    for (std::size_t i = 0; i < tr.time_ms.size(); ++i)
      os << tr.n_pulses << ',' << format_exact(tr.time_ms[i]) << ',' << format_exact(tr.signal[i]) << '\n';
  return os.str();
}

[[nodiscard]] inline std::string strain_grid_csv(const std::vector<StrainGridPoint>& g) {
  std::ostringstream os;
  os << "# kind: strain_grid\nx_um,y_um,eps_xx,eps_yy,eps_zz,eps_xy,eps_yz,eps_zx\n";
  for (const auto& p : g)
    os << format_exact(p.x_um) << ',' << format_exact(p.y_um) << ',' << format_exact(p.eps.xx) << ','
       << format_exact(p.eps.yy) << ',' << format_exact(p.eps.zz) << ',' << format_exact(p.eps.xy) << ','
       << format_exact(p.eps.yz) << ',' << format_exact(p.eps.zx) << '\n';
  return os.str();
}

[[nodiscard]] inline json summary_to_json(const PipelineResult& r) {
  json params = json::array();
  for (const auto& row : r.summary)
    params.push_back({{"parameter", row.parameter},
                      {"value", row.value},
                      {"source", row.source},
                      {"spread", row.spread},
                      {"fitted", row.fitted}});
  json emitters = json::object();
  for (const auto& [name, fr] : r.per_emitter) {
    json e = model_to_json(fr.params);
    e["residual_rms_GHz"] = fr.residual_rms;
    emitters[name] = e;
  }
  json holdout = json::object();
  for (const auto& [name, rms] : r.holdout_rms) holdout[name] = {{"residual_rms_GHz", rms}};
  json roles = {{"unstrained", r.roles.unstrained},
                {"low_strain", r.roles.low_strain},
                {"high_strain", r.roles.high_strain},
                {"holdout", r.roles.holdout}};
  return {{"parameters", params},
          {"emitters", emitters},
          {"holdout", holdout},
          {"roles", roles},
          {"sweeps", r.sweeps},
          {"sweeps_converged", r.sweeps_converged}};
}

}  // namespace snv
