#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "condflow/errors.hpp"
#include "condflow/experiments.hpp"
#include "condflow/quadvar.hpp"
#include "condflow/rng.hpp"

namespace py = pybind11;
using namespace condflow;

namespace {

EmpiricalMeasure measure_from(const Eigen::MatrixXd& atoms) {
  // 1-D input arrives as an N x 1 column; atoms are stored d x N
  if (atoms.cols() == 1) return EmpiricalMeasure(atoms.transpose());
  return EmpiricalMeasure(atoms);
}

py::dict run_dict(const RunResult& r) {
  py::dict out;
  out["experiment"] = r.experiment;
  out["passed"] = r.pass;
  out["report"] = r.report.dump();
  py::dict tables;
  for (const auto& t : r.tables) tables[py::str(t.name)] = t.render();
  out["tables"] = tables;
  out["payload"] = py::bytes(r.payload());
  return out;
}

ExperimentConfig with_seed(ExperimentConfig c, std::optional<std::uint64_t> seed) {
  if (seed) c.seed = seed;
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "conditional-law chain rule checks and mean-field control oracles";
  m.attr("__version__") = kVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericOverflow>(m, "NumericOverflow", PyExc_ArithmeticError);
  py::register_exception<Unsupported>(m, "Unsupported", PyExc_NotImplementedError);

  m.def("philox4x32", [](std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    return Philox4x32::apply(ctr, key);
  });
  m.def("normals", [](std::uint64_t seed, std::uint32_t stream, std::uint32_t index, std::uint32_t step, std::size_t n) {
    std::vector<double> z(n);
    RngStream(seed, stream).normals(index, step, z);
    return z;
  }, py::arg("seed"), py::arg("stream"), py::arg("index"), py::arg("step"), py::arg("n"));

  m.def("experiment_names", &experiment_names);
  m.def("list_registry", &list_registry);
  m.def("builtin_functionals", &builtin_functional_names);

  // experiments; report is returned as JSON text and decoded on the Python side
  m.def("run_yaml", [](const std::string& text, std::optional<std::uint64_t> seed) {
    auto c = with_seed(parse_config(text), seed);
    py::gil_scoped_release nogil;
    auto r = run_experiment(c);
    py::gil_scoped_acquire gil;
    return run_dict(r);
  }, py::arg("text"), py::arg("seed") = py::none());
  m.def("run_file", [](const std::string& path, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
    auto c = with_seed(load_config(path), seed);
    RunResult r;
    {
      py::gil_scoped_release nogil;
      r = run_experiment(c);
      if (out) write_run(r, c, *out);
    }
    return run_dict(r);
  }, py::arg("path"), py::arg("seed") = py::none(), py::arg("out") = py::none());

  // measures
  m.def("w2_squared", [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return w2_squared(measure_from(a), measure_from(b));
  });
  m.def("eval", [](const std::string& name, const Eigen::MatrixXd& atoms) {
    return eval(builtin_functional(name), measure_from(atoms));
  });
  m.def("d_lions", [](const std::string& name, const Eigen::MatrixXd& atoms, double x) {
    return d_lions(builtin_functional(name), measure_from(atoms), Eigen::VectorXd::Constant(1, x))(0);
  });
  m.def("delta_m2", [](const std::string& name, const Eigen::MatrixXd& atoms, double x, double xh) {
    return delta_m2(builtin_functional(name), measure_from(atoms), Eigen::VectorXd::Constant(1, x),
                    Eigen::VectorXd::Constant(1, xh));
  });
  m.def("fd_check_dm", [](const std::string& name, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          const std::vector<double>& eps, bool second) {
    auto u = builtin_functional(name);
    FdTable t = second ? fd_check_dm2(u, measure_from(a), measure_from(b), eps)
                       : fd_check_dm(u, measure_from(a), measure_from(b), eps);
    py::list rows;
    for (const auto& r : t.rows) rows.append(py::make_tuple(r.eps, r.error, r.order ? py::cast(*r.order) : py::none()));
    return py::make_tuple(rows, t.passes());
  }, py::arg("name"), py::arg("m"), py::arg("m_prime"), py::arg("eps"), py::arg("second") = false);

  // quadratic variation
  m.def("realized_qv", [](const Eigen::VectorXd& values, double horizon) {
    const auto n = static_cast<std::size_t>(values.size()) - 1;
    SamplePath p(make_uniform_partition(horizon, n), values.transpose());
    return realized_qv(p)(0, 0);
  });
  m.def("brownian_path", [](double horizon, std::size_t cells, std::uint64_t seed) {
    auto w = simulate_brownian(make_uniform_partition(horizon, cells), 1, RngStream(seed, 0));
    return Eigen::VectorXd(w.values().row(0).transpose());
  });
  m.def("lemma_study", [](const std::string& weight, double sigma, const std::vector<std::size_t>& n_list,
                          std::size_t seeds, std::uint64_t seed) {
    LemmaStudy s;
    {
      py::gil_scoped_release nogil;
      s = lemma_convergence_study(lemma_brownian(sigma, weight), n_list, seeds, seed);
    }
    py::list rows;
    for (const auto& r : s.rows) {
      rows.append(py::make_tuple(r.n, r.mean_abs_error, r.std_error, r.ratio ? py::cast(*r.ratio) : py::none()));
    }
    return py::make_tuple(rows, s.trend_ok());
  });

  // LQ control oracle
  py::class_<LqParams>(m, "LqParams")
      .def(py::init<>())
      .def_readwrite("q", &LqParams::q)
      .def_readwrite("r", &LqParams::r)
      .def_readwrite("c_g", &LqParams::c_g)
      .def_readwrite("c_m", &LqParams::c_m)
      .def_readwrite("sigma", &LqParams::sigma)
      .def_readwrite("sigma0", &LqParams::sigma0)
      .def_readwrite("horizon", &LqParams::horizon);
  m.def("riccati", [](const LqParams& p, const std::vector<double>& times) {
    auto sol = solve_lq_riccati(p);
    Eigen::MatrixXd out(times.size(), 3);
    for (std::size_t i = 0; i < times.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = sol.state(times[i]).transpose();
    return out;
  }, "columns P, R, c of V = P Var + R mean^2 + c");
  m.def("lq_value", [](const LqParams& p, double t, double mean, double var) {
    Eigen::Vector3d z = solve_lq_riccati(p).state(t);
    return z(0) * var + z(1) * mean * mean + z(2);
  });
  m.def("lq_hjb_max_residual", [](const LqParams& p, double eps, std::size_t threads) {
    auto sol = std::make_shared<const OdeSolution>(solve_lq_riccati(p));
    auto grid = default_hjb_grid(p.horizon);
    auto problem = ControlProblem::linear_quadratic(p, lq_control_bound(*sol, grid));
    py::gil_scoped_release nogil;
    return hjb_residual(problem, QuadraticMomentValue(sol, eps), grid, threads).max_abs_residual;
  }, py::arg("params"), py::arg("eps") = 0.0, py::arg("threads") = 1);
}
