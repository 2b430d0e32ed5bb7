// Regenerates the synthetic fixture set under data/synthetic from the
// reference models. Usage: make_fixtures [OUTPUT_DIR]

#include <iostream>
#include <string>

#include "snv/io.hpp"
#include "snv/synthetic.hpp"

int main(int argc, char** argv) {
  using namespace snv;
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("data/synthetic");
  try {
    const SnVModel strained[] = {table_one::snv_a(), table_one::snv_b(), table_one::snv_c()};
    const SnVModel unstrained = table_one::snv_d();

    for (const auto& m : strained) write_text(root / "models" / ("snv" + m.emitter + ".json"), model_to_json(m).dump(2) + "\n");
    write_text(root / "models" / "snvD.json", model_to_json(unstrained).dump(2) + "\n");

    const fs::path pipe = root / "pipeline";
    for (const auto& m : strained) {
      const std::string base = "snv" + m.emitter;
      const auto q = synthetic::spectroscopy(m, DatasetKind::odmr_qubit, RotationPlane::yz);
      const auto ayz = synthetic::spectroscopy(m, DatasetKind::allowed_split, RotationPlane::yz);
      const auto axy = synthetic::spectroscopy(m, DatasetKind::allowed_split, RotationPlane::xy);
      write_text(pipe / (base + "_qubit_yz.csv"), spectroscopy_csv(q, m.b_parallel_cal, m.b_perp_cal));
      write_text(pipe / (base + "_allowed_yz.csv"), spectroscopy_csv(ayz, m.b_parallel_cal, m.b_perp_cal));
      write_text(pipe / (base + "_allowed_xy.csv"), spectroscopy_csv(axy, m.b_parallel_cal, m.b_perp_cal));
    }
    write_text(pipe / "snvD_pl.csv", spectroscopy_csv(synthetic::pl_dataset(unstrained)));

    // Echo traces whose bath frequencies sit at 0.967 and 0.945 of the
    // nominal Larmor frequency.
    const double f_par = 0.51775, f_perp = 0.506;
    write_text(root / "echo_parallel.csv",
               echo_csv(synthetic::echo_trace(synthetic::parallel_echo_params(f_par), EchoOrientation::parallel, 0.1,
                                              {}, 0.01, 11)));
    write_text(root / "echo_perpendicular.csv",
               echo_csv(synthetic::echo_trace(synthetic::perpendicular_echo_params(f_perp, 1.3),
                                              EchoOrientation::perpendicular, 0.1, {}, 0.01, 12)));

    write_text(root / "cpmg.csv", cpmg_csv(synthetic::cpmg_suite({}, 0.01, 13)));
    write_text(root / "strain_grid.csv", strain_grid_csv(synthetic::membrane_cut()));
  } catch (const std::exception& e) {
    std::cerr << "make_fixtures: " << e.what() << '\n';
    return 1;
  }
  std::cout << "fixtures written to " << root.string() << '\n';
  return 0;
}
