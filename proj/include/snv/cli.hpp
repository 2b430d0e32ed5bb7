#pragma once

// Subcommand front end shared by the snvfit executable and the tests.
// Exit codes: 0 success, 1 validation or computation failure, 2 usage error.
// Every failure prints exactly one line starting with "snvfit-error: ".

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "snv/coherence.hpp"
#include "snv/error.hpp"
#include "snv/field_calibration.hpp"
#include "snv/fit_pipeline.hpp"
#include "snv/io.hpp"
#include "snv/model.hpp"
#include "snv/selftest.hpp"
#include "snv/strain.hpp"
#include "snv/transitions.hpp"

namespace snv::cli {

inline constexpr std::string_view kErrorPrefix = "snvfit-error: ";

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"eigen",           "observables", "rotmap",     "fit",     "uncertainty",
                                              "calibrate-field", "fit-cpmg",    "strain-map", "selftest"};
  return names;
}

namespace detail {

inline std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

inline void print_error(std::ostream& err, std::string_view kind, const std::string& msg) {
  err << kErrorPrefix << kind << ": " << one_line(msg) << '\n';
}

struct Common {
  std::string config;
  std::string out;
  int jobs = 0;  // 0: from config
};

struct ModelArgs {
  std::string model_file;
  std::string emitter;  // built-in reference model
};

inline SnVModel resolve_model(const ModelArgs& a) {
  if (!a.model_file.empty() && !a.emitter.empty())
    fail(ErrorKind::invalid_argument, "give either --model or --emitter, not both");
  if (!a.model_file.empty()) return load_model(a.model_file);
  if (a.emitter == "A") return table_one::snv_a();
  if (a.emitter == "B") return table_one::snv_b();
  if (a.emitter == "C") return table_one::snv_c();
  if (a.emitter == "D") return table_one::snv_d();
  if (a.emitter.empty()) fail(ErrorKind::invalid_argument, "a model is required (--model FILE or --emitter A|B|C|D)");
  fail(ErrorKind::invalid_argument, "unknown built-in emitter '" + a.emitter + "' (expected A, B, C or D)");
}

struct FieldArgs {
  std::optional<double> magnitude, theta, phi, b_par, b_perp;
};

inline FieldSnV resolve_field(const FieldArgs& f) {
  const bool polar = f.magnitude.has_value() || f.theta.has_value();
  const bool comps = f.b_par.has_value() || f.b_perp.has_value();
  if (polar && comps) fail(ErrorKind::invalid_argument, "give either --magnitude/--theta or --b-par/--b-perp");
  if (comps) return FieldSnV::from_components(f.b_par.value_or(0.0), f.b_perp.value_or(0.0), f.phi.value_or(0.0));
  if (!f.magnitude) fail(ErrorKind::invalid_argument, "a field is required (--magnitude with --theta, or --b-par/--b-perp)");
  return FieldSnV::from_polar(*f.magnitude, f.theta.value_or(0.0), f.phi.value_or(0.0));
}

inline void add_field_options(CLI::App* s, FieldArgs& f) {
  s->add_option("--magnitude", f.magnitude, "field magnitude, T");
  s->add_option("--theta", f.theta, "polar angle to the SnV axis, deg");
  s->add_option("--phi", f.phi, "azimuth, deg (bookkeeping only)");
  s->add_option("--b-par", f.b_par, "field along the SnV axis, T");
  s->add_option("--b-perp", f.b_perp, "transverse field, T");
}

inline void add_model_options(CLI::App* s, ModelArgs& m) {
  s->add_option("--model", m.model_file, "model JSON file");
  s->add_option("--emitter", m.emitter, "built-in reference model A, B, C or D");
}

inline void warn_lambda(const ManifoldParams& p, std::string_view which, std::ostream& err) {
  if (p.lambda == 0.0)
    err << "warning: " << which << " lambda = 0, the manifold has no spin-orbit splitting and its doublets are not separated\n";
}

inline RunConfig load_run_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.jobs > 0) {
    cfg.jobs = static_cast<unsigned>(c.jobs);
    cfg.fit.jobs = cfg.jobs;
  }
  cfg.fit.constants = cfg.constants;
  return cfg;
}

inline void emit(const Common& c, const std::string& file, const std::string& text) {
  if (!c.out.empty()) write_text(fs::path(c.out) / file, text);
}

inline std::string fmt(double v) { return format_double(v); }

}  // namespace detail

// Runs one command line (args exclude the program name).
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  using namespace detail;
  if (args.empty()) {
    print_error(err, "usage", "missing subcommand; expected one of eigen, observables, rotmap, fit, uncertainty, "
                              "calibrate-field, fit-cpmg, strain-map, selftest");
    return 2;
  }
  const auto& names = subcommands();
  if (!args[0].empty() && args[0][0] != '-' && std::find(names.begin(), names.end(), args[0]) == names.end()) {
    print_error(err, "usage", "unknown subcommand '" + args[0] + "'");
    return 2;
  }

  CLI::App app{"SnV spin Hamiltonian toolkit", "snvfit"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "JSON run configuration");
  app.add_option("--out", common.out, "output directory");
  app.add_option("--jobs", common.jobs, "worker threads")->check(CLI::PositiveNumber);

  // eigen
  ModelArgs eig_model;
  FieldArgs eig_field;
  std::string eig_manifold = "ground", eig_basis = "xy";
  auto* eig = app.add_subcommand("eigen", "eigenvalues of one manifold");
  add_model_options(eig, eig_model);
  add_field_options(eig, eig_field);
  eig->add_option("--manifold", eig_manifold, "ground or excited")->check(CLI::IsMember({"ground", "excited"}));
  eig->add_option("--basis", eig_basis, "xy or so")->check(CLI::IsMember({"xy", "so"}));

  // observables
  ModelArgs obs_model;
  FieldArgs obs_field;
  auto* obs = app.add_subcommand("observables", "qubit, allowed and forbidden splittings at one field");
  add_model_options(obs, obs_model);
  add_field_options(obs, obs_field);

  // rotmap
  ModelArgs rot_model;
  std::string rot_plane = "yz";
  double rot_magnitude = 0.0, rot_step = 2.0;
  auto* rot = app.add_subcommand("rotmap", "observables over a field rotation");
  add_model_options(rot, rot_model);
  rot->add_option("--plane", rot_plane, "xy or yz");
  rot->add_option("--magnitude", rot_magnitude, "field magnitude, T")->required();
  rot->add_option("--step", rot_step, "angle step, deg");

  // fit / uncertainty
  std::string fit_dir;
  auto* fit = app.add_subcommand("fit", "staged parameter extraction");
  fit->add_option("--pipeline", fit_dir, "directory of spectroscopy datasets")->required();
  std::string unc_dir;
  std::optional<double> unc_rel;
  std::optional<int> unc_grid;
  auto* unc = app.add_subcommand("uncertainty", "field-amplitude uncertainty of the staged fit");
  unc->add_option("--pipeline", unc_dir, "directory of spectroscopy datasets")->required();
  unc->add_option("--rel-error", unc_rel, "relative field error");
  unc->add_option("--grid-n", unc_grid, "grid points per field component");

  // calibrate-field
  std::string echo_file;
  auto* cal = app.add_subcommand("calibrate-field", "field amplitude from a Hahn-echo trace");
  cal->add_option("--echo", echo_file, "echo CSV")->required();

  // fit-cpmg
  std::string cpmg_file;
  std::optional<double> cpmg_xi;
  auto* cpmg = app.add_subcommand("fit-cpmg", "stretched-exponential fits and T2 scaling");
  cpmg->add_option("--cpmg", cpmg_file, "CPMG CSV")->required();
  cpmg->add_option("--xi", cpmg_xi, "stretching factor (default 4)");

  // strain-map
  std::string grid_file;
  auto* smap = app.add_subcommand("strain-map", "ground-state splitting and ZPL shift maps");
  smap->add_option("--grid", grid_file, "strain grid CSV")->required();

  // selftest
  std::size_t st_draws = 1000;
  auto* st = app.add_subcommand("selftest", "closed-form versus numeric oracle checks");
  st->add_option("--draws", st_draws, "random draws per check");

  std::vector<std::string> argv_store{"snvfit"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what());
    return 2;
  }

  try {
    const RunConfig cfg = load_run_config(common);
    const PhysicalConstants& pc = cfg.constants;

    if (*eig) {
      const SnVModel m = resolve_model(eig_model);
      const ManifoldParams& p = eig_manifold == "ground" ? m.ground : m.excited;
      warn_lambda(p, eig_manifold, err);
      const FieldSnV f = resolve_field(eig_field);
      const LevelEnergies e = spectrum(build_full_hamiltonian(p, f, eig_basis == "xy" ? Basis::xy : Basis::so, pc));
      std::ostringstream os;
      os << "level,energy_GHz\n";
      for (std::size_t k = 0; k < 4; ++k) os << k + 1 << ',' << fmt(e[k]) << '\n';
      out << os.str();
      emit(common, "eigen.csv", os.str());
      return 0;
    }
    if (*obs) {
      const SnVModel m = resolve_model(obs_model);
      warn_lambda(m.ground, "ground", err);
      warn_lambda(m.excited, "excited", err);
      const FieldSnV f = resolve_field(obs_field);
      const auto o = observables(m, f, pc);
      json j = {{"b_par_T", f.b_par},  {"b_perp_T", f.b_perp},          {"qubit_GHz", o.qubit},
                {"allowed_split_GHz", o.allowed_split}, {"forbidden_split_GHz", o.forbidden_split}};
      const std::string text = j.dump(2) + "\n";
      out << text;
      emit(common, "observables.json", text);
      return 0;
    }
    if (*rot) {
      const SnVModel m = resolve_model(rot_model);
      warn_lambda(m.ground, "ground", err);
      const RotationPlane plane = parse_plane(rot_plane);
      const auto grid = default_theta_grid(rot_step);
      const auto pts = rotation_map(m, rot_magnitude, plane, grid, pc, cfg.jobs);
      const std::string text = rotation_map_csv(pts);
      if (common.out.empty())
        out << text;
      else {
        emit(common, "rotmap_" + std::string(to_string(plane)) + ".csv", text);
        out << "wrote " << pts.size() << " rows to " << (fs::path(common.out) / ("rotmap_" + std::string(to_string(plane)) + ".csv")).string() << '\n';
      }
      return 0;
    }
    if (*fit) {
      PipelineInputs in = load_pipeline_directory(fit_dir);
      if (cfg.roles) in.roles = cfg.roles;
      const PipelineResult r = run_staged_pipeline(in, cfg.fit);
      const std::string table = format_summary_table(r.summary);
      out << table;
      emit(common, "summary.json", summary_to_json(r).dump(2) + "\n");
      emit(common, "summary.txt", table);
      return 0;
    }
    if (*unc) {
      PipelineInputs in = load_pipeline_directory(unc_dir);
      if (cfg.roles) in.roles = cfg.roles;
      const double rel = unc_rel.value_or(cfg.rel_error);
      const int grid_n = unc_grid.value_or(cfg.grid_n);
      PipelineResult r = run_staged_pipeline(in, cfg.fit);
      const UncertaintyResult u = propagate_field_uncertainty(in, rel, grid_n, cfg.fit);
      apply_spreads(r, u);
      const std::string table = format_summary_table(r.summary);
      out << table << "grid runs: " << u.runs << ", failed: " << u.failures << '\n';
      json j = summary_to_json(r);
      j["uncertainty"] = {{"rel_error", rel},
                          {"grid_n", grid_n},
                          {"runs", u.runs},
                          {"failures", u.failures},
                          {"failure_messages", u.failure_messages},
                          {"spread", u.spread}};
      emit(common, "uncertainty.json", j.dump(2) + "\n");
      emit(common, "uncertainty.txt", table);
      return 0;
    }
    if (*cal) {
      const EchoTrace tr = to_echo(read_csv(echo_file));
      const EchoFit f = fit_echo_modulation(tr, pc, cfg.fit.optimizer);
      json j = {{"orientation", std::string(to_string(f.orientation))},
                {"b_nominal_T", tr.b_nominal},
                {"expected_larmor_MHz", expected_larmor(tr.b_nominal, pc)},
                {"degenerate", f.degenerate},
                {"fft_seed_MHz", f.fft_seed},
                {"fft_bin_MHz", f.fft_bin},
                {"residual_rms", f.residual_rms}};
      if (f.orientation == EchoOrientation::parallel) {
        const auto& p = f.parallel;
        j["fit"] = {{"A", p.amplitude}, {"B", p.depth},   {"f_MHz", p.f}, {"phi_rad", p.phi},
                    {"T_damp_us", p.t_damp}, {"a", p.slope}, {"DC", p.dc}};
      } else {
        const auto& p = f.perpendicular;
        j["fit"] = {{"A", p.amplitude}, {"f1_MHz", p.f1}, {"f2_MHz", p.f2}, {"DC", p.dc}};
        j["f2_stderr_MHz"] = f.f2_stderr;
        j["assignment_consistent"] = f.assignment_consistent;
      }
      if (f.degenerate) {
        j["frequency_MHz"] = nullptr;
        const std::string text = j.dump(2) + "\n";
        emit(common, "calibration.json", text);
        out << text;
        print_error(err, to_string(ErrorKind::calibration),
                    "echo trace shows no bath modulation; frequency undetermined, field cannot be calibrated");
        return 1;
      }
      const CalibratedField c = calibrate_field(f, tr.b_nominal, pc);
      j["frequency_MHz"] = c.f_measured;
      j["frequency_stderr_MHz"] = f.frequency_stderr;
      j["b_corrected_T"] = c.b_corrected;
      j["b_uncertainty_T"] = c.uncertainty;
      const std::string text = j.dump(2) + "\n";
      out << text;
      emit(common, "calibration.json", text);
      return 0;
    }
    if (*cpmg) {
      const double xi = cpmg_xi.value_or(cfg.xi);
      require(xi > 0.0, "--xi must be > 0");
      const auto traces = to_cpmg(read_csv(cpmg_file));
      const CpmgSuiteResult r = fit_cpmg_suite(traces, xi, cfg.fit.optimizer);
      json per_n = json::array();
      for (const auto& c : r.per_n)
        per_n.push_back({{"N", c.n_pulses},
                         {"T2_ms", c.t2},
                         {"T2_stderr_ms", c.t2_stderr},
                         {"A", c.amplitude},
                         {"reliable", c.reliable}});
      json j = {{"xi", xi}, {"per_N", per_n}};
      if (r.per_n.size() >= 2) {
        j["beta"] = r.scaling.beta;
        j["beta_err"] = r.scaling.beta_stderr;
      }
      std::ostringstream curves;
      curves << "n_pulses,time_ms,signal_normalized,fit\n";
      for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto nt = normalize_decay(traces[i]);
        const auto& c = r.per_n[i];
        for (std::size_t k = 0; k < nt.time_ms.size(); ++k)
          curves << nt.n_pulses << ',' << fmt(nt.time_ms[k]) << ',' << fmt(nt.signal[k]) << ','
                 << fmt(stretched_exponential(nt.time_ms[k], c.amplitude, c.t2, xi)) << '\n';
      }
      const std::string text = j.dump(2) + "\n";
      out << text;
      emit(common, "cpmg.json", text);
      emit(common, "cpmg_curves.csv", curves.str());
      return 0;
    }
    if (*smap) {
      const auto grid = to_strain_grid(read_csv(grid_file));
      const auto rows = strain_map(grid, {}, cfg.jobs);
      const std::string text = strain_map_csv(rows);
      if (common.out.empty())
        out << text;
      else {
        emit(common, "strain_map.csv", text);
        out << "wrote " << rows.size() << " rows\n";
      }
      return 0;
    }
    if (*st) {
      SelfTestOptions o;
      o.draws = st_draws;
      o.seed = cfg.seed;
      const SelfTestReport rep = run_selftest(o);
      const std::string text = rep.text();
      out << text;
      emit(common, "selftest.txt", text);
      if (!rep.all_passed()) {
        print_error(err, "selftest", "oracle checks failed");
        return 1;
      }
      return 0;
    }
  } catch (const Error& e) {
    print_error(err, to_string(e.kind()), e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    print_error(err, "io", e.what());
    return 1;
  } catch (const json::exception& e) {
    print_error(err, to_string(ErrorKind::invalid_argument), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what());
    return 1;
  }
  print_error(err, "usage", "no subcommand given");
  return 2;
}

}  // namespace snv::cli
