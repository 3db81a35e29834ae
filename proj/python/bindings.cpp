#include "ultra/errors.hpp"
#include "ultra/linalg.hpp"
#include "ultra/operator.hpp"
#include "ultra/reports.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace ultra;

namespace {

py::tuple preset_matrices(const std::string& name, int n) {
  const DriftPair d = drift_preset(name, n);
  return py::make_tuple(d.B1(), d.B2());
}

py::dict rank_of(const Mat& b1, const Mat& b2, double tol_rel) {
  const RankReport r = numerical_rank(kalman_matrix(DriftPair(b1, b2)), tol_rel);
  py::dict out;
  out["rank"] = r.rank;
  out["singular_values"] = r.singular_values;
  out["tol_used"] = r.tol_used;
  return out;
}

std::optional<double> c2_of(const Mat& b1, const Mat& b2, double t2) {
  const DecayProfile p = c2_lower_bound(DriftPair(b1, b2), t2, std::max(2000, 100 * static_cast<int>(b1.rows())), 400);
  if (p.rank_deficient) return std::nullopt;
  return p.c2_estimate;
}

py::dict run_text(const std::string& text, std::optional<std::filesystem::path> out, int threads,
                  std::optional<std::uint64_t> seed_base, bool strict, std::vector<std::string> only) {
  const RunConfig cfg = parse_config(text);
  RunOptions opts;
  opts.out = std::move(out);
  opts.threads = threads;
  opts.seed_base = seed_base;
  opts.strict = strict;
  opts.only = std::move(only);
  RunResult res;
  {
    py::gil_scoped_release release;
    res = run(cfg, opts);
  }
  py::dict d;
  d["exit_code"] = res.exit_code;
  d["directory"] = res.directory;
  d["reports_json"] = reports_json(res.reports);
  d["reports_csv"] = reports_csv(res.reports);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Verification harness for ultraparabolic Carleman estimates";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  auto config = py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  (void)config;

  m.attr("EXIT_PASS") = kExitPass;
  m.attr("EXIT_FAIL") = kExitFail;
  m.attr("EXIT_CONFIG") = kExitConfig;
  m.attr("EXIT_OUT_OF_REGIME") = kExitOutOfRegime;

  m.def("drift_preset", &preset_matrices, py::arg("name"), py::arg("n") = 3,
        "(B1, B2) for heat, L1, jerk or example1.");
  m.def("kalman_rank", &rank_of, py::arg("B1"), py::arg("B2"), py::arg("tol_rel") = 1e-10,
        "Numerical rank of [B1, B2 B1, ...] with singular values.");
  m.def("c2_estimate", &c2_of, py::arg("B1"), py::arg("B2"), py::arg("t2"),
        "Sphere minimum of the frequency decay functional; None when the rank condition fails.");
  m.def("normalize_config", [](const std::string& text) { return serialize_config(parse_config(text)); },
        py::arg("text"), "Parse and re-emit a YAML config with every default filled in.");
  m.def("run", &run_text, py::arg("config_text"), py::arg("out") = py::none(), py::arg("threads") = 1,
        py::arg("seed_base") = py::none(), py::arg("strict") = false,
        py::arg("only") = std::vector<std::string>{},
        "Run the suite described by a YAML config; returns exit code and report bodies.");
}
