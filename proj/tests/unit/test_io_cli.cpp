#include "catch_amalgamated.hpp"

#include <fstream>
#include <sstream>

#include "snv/cli.hpp"
#include "snv/io.hpp"
#include "snv/synthetic.hpp"

using namespace snv;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::StartsWith;
using Catch::Matchers::WithinRel;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream o, e;
  Run r;
  r.code = cli::run_command(args, o, e);
  r.out = o.str();
  r.err = e.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("snvfit_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

CsvTable csv(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in, "mem.csv");
}

// Writes the synthetic pipeline suite to a directory.
fs::path pipeline_dir(const std::string& name) {
  const fs::path dir = scratch(name);
  const auto in = synthetic::table_one_suite();
  for (const auto& [emitter, e] : in.emitters)
    for (std::size_t i = 0; i < e.datasets.size(); ++i)
      write_text(dir / (emitter + "_" + std::to_string(i) + ".csv"),
                 spectroscopy_csv(e.datasets[i], e.b_par_cal, e.b_perp_cal));
  return dir;
}

// one line, machine-parsable prefix
void check_error_line(const Run& r) {
  CHECK_THAT(r.err, StartsWith("snvfit-error: "));
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

}  // namespace

TEST_CASE("CSV parsing reports the failing row and key") {
  SECTION("NaN value names its line") {
    const auto t = [] { return csv("# kind: odmr\n# emitter: A\n# plane: yz\n# field_magnitude: 0.19\ntheta_deg,value_GHz\n0,1.0\n2,nan\n"); };
    CHECK_THROWS_WITH(t(), ContainsSubstring("line 7"));
  }
  SECTION("missing field magnitude names the key") {
    const auto t = csv("# kind: rotation_map\n# emitter: A\n# plane: yz\ntheta_deg,value_GHz\n0,1.0\n");
    CHECK_THROWS_WITH(to_spectroscopy(t), ContainsSubstring("'field_magnitude'"));
  }
  SECTION("schema mismatch") {
    const auto t = csv("# kind: odmr\n# emitter: A\n# field_magnitude: 0.19\nangle,value\n0,1.0\n");
    CHECK_THROWS_WITH(to_spectroscopy(t), ContainsSubstring("schema mismatch"));
  }
  SECTION("ragged row") {
    CHECK_THROWS_WITH(csv("# kind: odmr\na,b\n1,2,3\n"), ContainsSubstring("expected 2 columns"));
  }
  SECTION("unknown kind and empty file") {
    CHECK_THROWS_AS(file_kind(csv("# kind: hologram\na\n1\n")), Error);
    CHECK_THROWS_AS(csv("# kind: odmr\n"), Error);
    CHECK_THROWS_AS(csv("# kind: odmr\na,b\n"), Error);
  }
}

TEST_CASE("dataset writers round-trip exactly") {
  const auto m = table_one::snv_b();
  const auto d = synthetic::spectroscopy(m, DatasetKind::allowed_split, RotationPlane::yz);
  const auto back = to_spectroscopy(csv(spectroscopy_csv(d, m.b_parallel_cal, m.b_perp_cal)));
  REQUIRE(back.points.size() == d.points.size());
  CHECK(back.signed_allowed);
  CHECK(back.plane == RotationPlane::yz);
  for (std::size_t i = 0; i < d.points.size(); ++i) CHECK(back.points[i].value == d.points[i].value);

  const auto tr = synthetic::echo_trace(synthetic::parallel_echo_params(0.5), EchoOrientation::parallel, 0.1);
  const auto te = to_echo(csv(echo_csv(tr)));
  CHECK(te.points.size() == tr.points.size());
  CHECK(te.points.back().signal == tr.points.back().signal);

  const auto suite = synthetic::cpmg_suite({});
  const auto tc = to_cpmg(csv(cpmg_csv(suite)));
  REQUIRE(tc.size() == suite.size());
  CHECK(tc[3].signal == suite[3].signal);

  const auto cut = synthetic::membrane_cut();
  const auto g = to_strain_grid(csv(strain_grid_csv(cut)));
  REQUIRE(g.size() == cut.size());
  CHECK(g[13].eps.xy == cut[13].eps.xy);
}

TEST_CASE("CPMG files with per-pulse spacing are converted to total time") {
  const auto tr = to_cpmg(csv("# kind: cpmg\nn_pulses,tau_ms,counts\n4,0.5,1\n4,1.0,2\n"));
  REQUIRE(tr.size() == 1);
  CHECK(tr[0].time_ms == std::vector<double>{2.0, 4.0});
  CHECK_THROWS_AS(to_cpmg(csv("# kind: cpmg\nn_pulses,time_ms,counts\n1.5,1,1\n")), Error);
}

TEST_CASE("models and configuration") {
  SECTION("model JSON round trip") {
    const auto m = table_one::snv_c();
    CHECK(model_from_json(model_to_json(m)) == m);
  }
  SECTION("unknown keys are rejected") {
    CHECK_THROWS_WITH(config_from_json(json::parse(R"({"fitt": {}})")), ContainsSubstring("fitt"));
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"fit": {"max_sweep": 3}})")), Error);
    CHECK_THROWS_AS(model_from_json(json::parse(R"({"emitter": "A", "colour": 1})")), Error);
  }
  SECTION("numeric options must be positive") {
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"uncertainty": {"rel_error": -0.1}})")), Error);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"uncertainty": {"grid_n": 1}})")), Error);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"jobs": 0})")), Error);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"fit": {"f_initial": 1.5}})")), Error);
  }
  SECTION("valid configuration") {
    const auto c = config_from_json(json::parse(
        R"({"constants": {"gamma_l": 14.0}, "fit": {"max_sweeps": 3, "roles": {"unstrained": "D", "low_strain": "A", "high_strain": "B", "holdout": ["C"]}}, "uncertainty": {"grid_n": 3, "rel_error": 0.01}, "coherence": {"xi": 2}, "jobs": 2, "seed": 5})"));
    CHECK(c.fit.max_sweeps == 3);
    CHECK(c.grid_n == 3);
    CHECK(c.xi == 2.0);
    CHECK(c.jobs == 2);
    CHECK(c.seed == 5);
    REQUIRE(c.roles);
    CHECK(c.roles->holdout == std::vector<std::string>{"C"});
  }
}

TEST_CASE("CLI exit codes and error lines") {
  SECTION("unknown subcommand") {
    const auto r = run({"frobnicate"});
    CHECK(r.code == 2);
    check_error_line(r);
  }
  SECTION("missing subcommand") {
    const auto r = run({});
    CHECK(r.code == 2);
    check_error_line(r);
  }
  SECTION("bad flag value is a usage error") {
    const auto r = run({"rotmap", "--emitter", "B", "--magnitude", "abc"});
    CHECK(r.code == 2);
    check_error_line(r);
  }
  SECTION("validation failure") {
    const auto r = run({"rotmap", "--emitter", "B", "--magnitude", "0.19", "--plane", "xz"});
    CHECK(r.code == 1);
    check_error_line(r);
  }
  SECTION("missing file") {
    const auto r = run({"fit-cpmg", "--cpmg", "/nonexistent/cpmg.csv"});
    CHECK(r.code == 1);
    CHECK_THAT(r.err, StartsWith("snvfit-error: io: "));
  }
  SECTION("multi-line messages are folded into one line") {
    const fs::path dir = scratch("badcfg");
    write_text(dir / "cfg.json", "{\n  \"fit\": \n");
    const auto r = run({"selftest", "--config", (dir / "cfg.json").string()});
    CHECK(r.code == 1);
    check_error_line(r);
  }
  SECTION("missing high-strain data aborts the fit at stage 7") {
    const fs::path dir = pipeline_dir("missing");
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto t = read_csv(e.path());
      if (t.get("emitter") == "B" && t.get("plane") == "yz" && file_kind(t) == FileKind::rotation_map)
        fs::remove(e.path());
    }
    const auto r = run({"fit", "--pipeline", dir.string()});
    CHECK(r.code == 1);
    check_error_line(r);
    CHECK_THAT(r.err, ContainsSubstring("stage 7 (f12_u)"));
  }
  SECTION("lambda = 0 warns but succeeds") {
    const fs::path dir = scratch("lambda0");
    SnVModel m = table_one::snv_d();
    m.ground.lambda = 0.0;
    write_text(dir / "m.json", model_to_json(m).dump());
    const auto r = run({"eigen", "--model", (dir / "m.json").string(), "--magnitude", "0.1", "--theta", "0"});
    CHECK(r.code == 0);
    CHECK_THAT(r.err, ContainsSubstring("warning: ground lambda = 0"));
  }
}

TEST_CASE("rotmap writes a header and 180 rows on the 2 degree grid") {
  const fs::path dir = scratch("rotmap");
  write_text(dir / "snvB.json", model_to_json(table_one::snv_b()).dump(2));
  const auto r = run({"rotmap", "--model", (dir / "snvB.json").string(), "--plane", "yz", "--magnitude", "0.19"});
  REQUIRE(r.code == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 181);
  CHECK_THAT(r.out, StartsWith("theta_deg,phi_deg,qubit_GHz,allowed_split_GHz,forbidden_split_GHz\n"));
  const auto threaded = run({"rotmap", "--model", (dir / "snvB.json").string(), "--plane", "yz", "--magnitude",
                             "0.19", "--jobs", "3"});
  CHECK(threaded.out == r.out);
}

TEST_CASE("eigen and observables subcommands") {
  const auto e = run({"eigen", "--emitter", "B", "--b-par", "0.1", "--b-perp", "0.05"});
  REQUIRE(e.code == 0);
  CHECK(std::count(e.out.begin(), e.out.end(), '\n') == 5);
  const auto o = run({"observables", "--emitter", "A", "--magnitude", "0.19344", "--theta", "0"});
  REQUIRE(o.code == 0);
  const auto j = json::parse(o.out);
  SnVModel a = table_one::snv_a();
  CHECK_THAT(j.at("qubit_GHz").get<double>(), WithinRel(qubit_splitting(a, FieldSnV::from_polar(0.19344, 0.0)), 1e-12));
  const auto both = run({"observables", "--emitter", "A", "--magnitude", "0.1", "--b-par", "0.1"});
  CHECK(both.code == 1);
}

TEST_CASE("fit and selftest outputs are byte-identical across runs") {
  const fs::path dir = pipeline_dir("determinism");
  const fs::path o1 = scratch("det_out1"), o2 = scratch("det_out2");
  const auto a = run({"fit", "--pipeline", dir.string(), "--out", o1.string()});
  const auto b = run({"fit", "--pipeline", dir.string(), "--out", o2.string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(a.out == b.out);
  CHECK(slurp(o1 / "summary.json") == slurp(o2 / "summary.json"));
  CHECK(slurp(o1 / "summary.txt") == slurp(o2 / "summary.txt"));

  const auto summary = json::parse(slurp(o1 / "summary.json"));
  for (const auto& p : summary.at("parameters"))
    if (p.at("parameter") == "f12_u") CHECK_THAT(p.at("value").get<double>(), WithinRel(table_one::f12_u, 1e-6));

  const auto s1 = run({"selftest", "--out", o1.string()});
  const auto s2 = run({"selftest", "--out", o2.string()});
  CHECK(s1.code == 0);
  CHECK(s1.out == s2.out);
  CHECK(slurp(o1 / "selftest.txt") == slurp(o2 / "selftest.txt"));
  CHECK_THAT(s1.out, ContainsSubstring("selftest: 6 passed, 0 failed"));
}

TEST_CASE("calibration, CPMG and strain subcommands write their outputs") {
  const fs::path dir = scratch("misc");
  write_text(dir / "echo.csv", echo_csv(synthetic::echo_trace(synthetic::parallel_echo_params(0.51775),
                                                              EchoOrientation::parallel, 0.1)));
  write_text(dir / "cpmg.csv", cpmg_csv(synthetic::cpmg_suite({})));
  write_text(dir / "grid.csv", strain_grid_csv(synthetic::membrane_cut()));
  const fs::path out = dir / "out";

  const auto c = run({"calibrate-field", "--echo", (dir / "echo.csv").string(), "--out", out.string()});
  REQUIRE(c.code == 0);
  CHECK_THAT(json::parse(slurp(out / "calibration.json")).at("b_corrected_T").get<double>(), WithinRel(0.0967, 1e-3));

  const auto p = run({"fit-cpmg", "--cpmg", (dir / "cpmg.csv").string(), "--out", out.string()});
  REQUIRE(p.code == 0);
  CHECK_THAT(json::parse(slurp(out / "cpmg.json")).at("beta").get<double>(), WithinRel(0.95, 1e-6));
  CHECK(fs::exists(out / "cpmg_curves.csv"));

  const auto s = run({"strain-map", "--grid", (dir / "grid.csv").string(), "--out", out.string()});
  REQUIRE(s.code == 0);
  const std::string map = slurp(out / "strain_map.csv");
  CHECK(std::count(map.begin(), map.end(), '\n') == 1 + 4 * 27);

  // a trace without modulation cannot calibrate the field
  auto flat = synthetic::parallel_echo_params(0.5);
  flat.depth = 0.0;
  write_text(dir / "flat.csv", echo_csv(synthetic::echo_trace(flat, EchoOrientation::parallel, 0.1)));
  const auto f = run({"calibrate-field", "--echo", (dir / "flat.csv").string()});
  CHECK(f.code == 1);
  CHECK_THAT(f.err, StartsWith("snvfit-error: calibration: "));
}

TEST_CASE("uncertainty subcommand with zero field error") {
  const fs::path dir = pipeline_dir("unc");
  const auto r = run({"uncertainty", "--pipeline", dir.string(), "--rel-error", "0", "--grid-n", "2"});
  REQUIRE(r.code == 0);
  CHECK_THAT(r.out, ContainsSubstring("grid runs: 4, failed: 0"));
}
