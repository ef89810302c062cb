#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "qvidw/convex_sets.hpp"
#include "qvidw/direct_solver.hpp"
#include "qvidw/dw_engine.hpp"
#include "qvidw/problem_library.hpp"
#include "qvidw/qvi_model.hpp"

namespace py = pybind11;
using namespace qvidw;

namespace {

QMode parse_q(const std::string& text) {
  if (text == "none") return QMode::none();
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string head = text.substr(0, colon);
    const double value = std::stod(text.substr(colon + 1));
    if (head == "fixed") return QMode::fixed(value);
    if (head == "auto") return QMode::auto_target(value);
  }
  throw std::invalid_argument("q expects none, fixed:<v> or auto:<c>");
}

FhatMode parse_fhat(const std::string& text) {
  if (text == "constant") return FhatMode::Constant;
  if (text == "first-order") return FhatMode::FirstOrder;
  if (text == "exact") return FhatMode::Exact;
  throw std::invalid_argument("fhat expects constant, first-order or exact");
}

py::dict solution_dict(const QviSolution& solution) {
  py::dict out;
  out["x"] = solution.x;
  out["multipliers"] = solution.multipliers;
  out["operator_value"] = solution.operator_value;
  out["kkt_residual"] = solution.kkt_residual;
  return out;
}

py::dict solve_dw_py(const QviProblem& problem, const Vector& y1,
                     const Vector& omega, const std::string& fhat,
                     const std::string& q, bool jacobi, double gap_tol,
                     double inner_tol, int max_outer, std::uint64_t seed) {
  DwConfig config;
  config.omega = omega;
  config.fhat_mode = parse_fhat(fhat);
  config.q_mode = parse_q(q);
  config.jacobi = jacobi;
  config.gap_tol = gap_tol;
  config.inner_tol = inner_tol;
  config.max_outer = max_outer;
  config.seed = seed;

  const DwReport report = run_dw(problem, y1, config);

  py::list gaps, steps;
  for (const auto& rec : report.records) {
    gaps.append(rec.gap_value);
    steps.append(rec.step_norm);
  }
  py::dict out;
  out["status"] = to_string(report.status);
  out["iterations"] = report.iterations();
  out["total_time_s"] = report.total_time;
  out["message"] = report.message;
  out["solution"] = solution_dict(report.solution);
  out["gap_history"] = gaps;
  out["step_history"] = steps;
  return out;
}

py::dict solve_direct_py(const QviProblem& problem, const Vector& x0,
                         std::uint64_t seed) {
  DirectOptions options;
  options.seed = seed;
  const DirectResult result = solve_direct(problem, x0, options);
  py::dict out;
  out["converged"] = result.converged;
  out["iterations"] = result.iterations;
  out["solution"] = solution_dict(result.solution);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dantzig-Wolfe decomposition for quasi-variational inequalities";

  py::class_<QviProblem>(m, "Problem")
      .def_property_readonly("name",
                             [](const QviProblem& p) { return p.name; })
      .def_property_readonly("dim",
                             [](const QviProblem& p) { return p.dim(); })
      .def_property_readonly(
          "num_coupled", [](const QviProblem& p) { return p.num_coupled(); })
      .def_property_readonly(
          "metadata", [](const QviProblem& p) { return p.metadata; })
      .def("operator_value",
           [](const QviProblem& p, const Vector& x) { return p.op.eval(x); })
      .def("coupled_values",
           [](const QviProblem& p, const Vector& y, const Vector& x) {
             return p.coupled_values(y, x);
           })
      .def("default_initial_point", [](const QviProblem& p) {
        return p.easy_set.project(Vector::Zero(p.dim()));
      });

  m.def("project_simplex", [](const Vector& v) {
    return ConvexSet::simplex(v.size()).project(v);
  }, py::arg("v"));
  m.def("project_ball_nonneg", [](const Vector& v, double radius_sq) {
    return ConvexSet::ball_nonneg(v.size(), radius_sq).project(v);
  }, py::arg("v"), py::arg("radius_sq"));

  m.def("gen_walrasian",
        [](int consumers, int goods, double capacity, std::uint64_t seed) {
          if (capacity <= 0.0)
            capacity = walras_default_capacity(consumers, goods);
          return gen_walrasian(consumers, goods, capacity, seed);
        },
        py::arg("consumers"), py::arg("goods"), py::arg("capacity") = 0.0,
        py::arg("seed") = 0);
  m.def("make_walrasian",
        [](const std::vector<Matrix>& R_list, const std::vector<Vector>& b_list,
           const std::vector<Vector>& E_list, double capacity) {
          WalrasianData data;
          data.consumers = static_cast<int>(R_list.size());
          data.goods =
              R_list.empty() ? 0 : static_cast<int>(R_list.front().rows());
          data.R_list = R_list;
          data.b_list = b_list;
          data.E_list = E_list;
          data.M = capacity;
          return make_walrasian(data);
        },
        py::arg("R_list"), py::arg("b_list"), py::arg("E_list"),
        py::arg("capacity"));
  m.def("walras_initial_point", &walras_initial_point, py::arg("consumers"),
        py::arg("goods"));

  m.def("gen_movset", &gen_movset, py::arg("n"), py::arg("seed") = 0,
        py::arg("spectral_margin") = 0.5, py::arg("d") = 1.0);
  m.def("make_movset",
        [](const Matrix& A, const Matrix& R, const Matrix& B, const Vector& b,
           double d) {
          MovSetData data;
          data.n = A.rows();
          data.A_mat = A;
          data.R_mat = R;
          data.B_mat = B;
          data.b_vec = b;
          data.d = d;
          return make_movset(data);
        },
        py::arg("A"), py::arg("R"), py::arg("B"), py::arg("b"), py::arg("d"));
  m.def("movset_initial_point", &movset_initial_point, py::arg("n"));

  m.def("kkt_residual", &qvi_kkt_residual, py::arg("problem"), py::arg("x"),
        py::arg("mu"));

  m.def("solve_dw", &solve_dw_py, py::arg("problem"), py::arg("y1"),
        py::arg("omega") = Vector::Ones(1), py::arg("fhat") = "exact",
        py::arg("q") = "auto:0.01", py::arg("jacobi") = false,
        py::arg("gap_tol") = 1e-6, py::arg("inner_tol") = 1e-8,
        py::arg("max_outer") = 100, py::arg("seed") = 0);

  m.def("solve_direct", &solve_direct_py, py::arg("problem"), py::arg("x0"),
        py::arg("seed") = 0);
}
