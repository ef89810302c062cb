#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "qvidw/bench.hpp"
#include "qvidw/direct_solver.hpp"
#include "qvidw/dw_engine.hpp"
#include "qvidw/io.hpp"
#include "qvidw/problem_library.hpp"

namespace {

using namespace qvidw;

// Shared solver flags; defaults mirror DwConfig.
struct SolverFlags {
  std::vector<double> omega{1.0};
  std::string fhat = "exact";
  std::string q = "auto:0.01";
  bool jacobi = false;
  bool jacobi_parallel = false;
  double gap_tol = 1e-6;
  double inner_tol = 1e-8;
  int max_outer = 100;
  std::uint64_t seed = 0;
  double accept_tol = 1e-5;
};

void add_solver_flags(CLI::App* cmd, SolverFlags& flags) {
  cmd->add_option("--omega", flags.omega,
                  "gradient mixing weight(s) in [0,1]; one value broadcasts");
  cmd->add_option("--fhat", flags.fhat, "operator approximation in the subproblem")
      ->check(CLI::IsMember({"constant", "first-order", "exact"}));
  cmd->add_option("--q", flags.q, "regularization: none, fixed:<v> or auto:<c>");
  cmd->add_flag("--jacobi", flags.jacobi, "solve the subproblem blockwise");
  cmd->add_flag("--jacobi-parallel", flags.jacobi_parallel,
                "run Jacobi blocks on separate threads");
  cmd->add_option("--gap-tol", flags.gap_tol,
                  "relative stopping tolerance on the gap");
  cmd->add_option("--inner-tol", flags.inner_tol,
                  "master and subproblem tolerance");
  cmd->add_option("--max-outer", flags.max_outer, "outer iteration cap");
  cmd->add_option("--seed", flags.seed, "seed for randomized restarts");
  cmd->add_option("--accept-tol", flags.accept_tol,
                  "KKT residual bound behind exit code 0");
}

QMode parse_q(const std::string& text) {
  if (text == "none") return QMode::none();
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string head = text.substr(0, colon);
    const std::string tail = text.substr(colon + 1);
    std::size_t used = 0;
    const double value = std::stod(tail, &used);
    if (used == tail.size()) {
      if (head == "fixed") return QMode::fixed(value);
      if (head == "auto") return QMode::auto_target(value);
    }
  }
  throw std::invalid_argument(
      "--q expects none, fixed:<value> or auto:<target>, got '" + text + "'");
}

DwConfig make_config(const SolverFlags& flags) {
  DwConfig config;
  config.omega = Eigen::Map<const Vector>(flags.omega.data(),
                                          static_cast<Index>(flags.omega.size()));
  if (flags.fhat == "constant")
    config.fhat_mode = FhatMode::Constant;
  else if (flags.fhat == "first-order")
    config.fhat_mode = FhatMode::FirstOrder;
  else
    config.fhat_mode = FhatMode::Exact;
  config.q_mode = parse_q(flags.q);
  config.jacobi = flags.jacobi;
  config.jacobi_parallel = flags.jacobi_parallel;
  config.gap_tol = flags.gap_tol;
  config.inner_tol = flags.inner_tol;
  config.max_outer = flags.max_outer;
  config.seed = flags.seed;
  return config;
}

void write_json(const json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open for writing: " + out_path);
  out << j.dump(2) << '\n';
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, sep))
    if (!part.empty()) parts.push_back(part);
  return parts;
}

int run_gen(const std::string& family, int consumers, int goods,
            double capacity, Index n, double margin, double level,
            std::uint64_t seed, const std::string& out_path) {
  json file;
  if (family == "walras") {
    if (capacity <= 0.0) capacity = walras_default_capacity(consumers, goods);
    file = problem_to_json(sample_walrasian(consumers, goods, capacity, seed));
  } else {
    file = problem_to_json(sample_movset(n, seed, margin, level));
  }
  write_json(file, out_path);
  return 0;
}

int run_solve(const std::string& problem_path, const SolverFlags& flags,
              const std::vector<double>& y1_values, bool trace,
              const std::string& out_path) {
  QviProblem problem;
  try {
    problem = load_problem(problem_path);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }

  DwConfig config = make_config(flags);
  if (trace)
    config.on_iteration = [](const IterationRecord& rec) {
      std::cout << record_to_json(rec).dump() << '\n';
    };

  Vector y1;
  if (y1_values.empty()) {
    y1 = problem.easy_set.project(Vector::Zero(problem.dim()));
  } else {
    if (static_cast<Index>(y1_values.size()) != problem.dim()) {
      std::cerr << "error: --y1 needs " << problem.dim() << " values\n";
      return 2;
    }
    y1 = Eigen::Map<const Vector>(y1_values.data(),
                                  static_cast<Index>(y1_values.size()));
  }

  DwReport report;
  try {
    report = run_dw(problem, y1, config);
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }

  write_json(report_to_json(report), out_path);
  const bool accepted = report.status == DwStatus::Converged &&
                        report.solution.kkt_residual <= flags.accept_tol;
  return accepted ? 0 : 1;
}

int run_direct(const std::string& problem_path, double accept_tol,
               std::uint64_t seed, const std::string& out_path) {
  QviProblem problem;
  try {
    problem = load_problem(problem_path);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  DirectOptions options;
  options.seed = seed;
  const Vector x0 = problem.easy_set.project(Vector::Zero(problem.dim()));
  const DirectResult result = solve_direct(problem, x0, options);
  write_json(direct_result_to_json(result), out_path);
  const bool accepted =
      result.converged && result.solution.kkt_residual <= accept_tol;
  return accepted ? 0 : 1;
}

int run_bench_cmd(const std::string& family,
                  const std::vector<std::string>& grid_tokens,
                  int seeds_per_cell, const SolverFlags& flags,
                  const std::vector<double>& omega_sweep, bool with_direct,
                  double margin, double level, int jobs,
                  const std::string& out_path) {
  BenchSpec spec;
  spec.family = family == "walras" ? BenchFamily::Walrasian
                                   : BenchFamily::MovingSet;
  for (const auto& token : grid_tokens) {
    for (const auto& cell : split(token, ',')) {
      if (spec.family == BenchFamily::Walrasian) {
        const auto parts = split(cell, 'x');
        if (parts.size() != 2)
          throw std::invalid_argument("walras grid cells look like CxG, got '" +
                                      cell + "'");
        spec.grid.emplace_back(std::stoi(parts[0]), std::stoi(parts[1]));
      } else {
        spec.grid.emplace_back(std::stoi(cell), 0);
      }
    }
  }
  spec.seeds_per_cell = seeds_per_cell;
  spec.config = make_config(flags);
  spec.run_direct = with_direct;
  spec.omega_sweep = omega_sweep;
  spec.movset_margin = margin;
  spec.movset_level = level;
  spec.accept_tol = flags.accept_tol;
  spec.jobs = jobs;
  spec.base_seed = flags.seed;

  const std::vector<BenchRow> rows = run_bench(spec);
  write_bench_csv(rows, out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Dantzig-Wolfe decomposition for quasi-variational inequalities"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a problem file");
  std::string gen_family;
  int gen_consumers = 2, gen_goods = 2;
  double gen_capacity = 0.0;  // 0 means the 10 C G default
  Index gen_n = 10;
  double gen_margin = 0.5, gen_level = 1.0;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--family", gen_family, "walras or movset")
      ->required()
      ->check(CLI::IsMember({"walras", "movset"}));
  gen->add_option("--consumers", gen_consumers, "walras: number of consumers");
  gen->add_option("--goods", gen_goods, "walras: number of goods");
  gen->add_option("--capacity", gen_capacity,
                  "walras: firm capacity (squared radius); 0 picks 10 C G");
  gen->add_option("--n", gen_n, "movset: dimension");
  gen->add_option("--margin", gen_margin, "movset: spectral margin of B");
  gen->add_option("--level", gen_level, "movset: ellipsoid level d");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output path (stdout when omitted)");

  // solve
  auto* solve = app.add_subcommand("solve", "run the decomposition solver");
  std::string solve_problem;
  SolverFlags solve_flags;
  std::vector<double> solve_y1;
  bool solve_trace = false;
  std::string solve_out;
  solve->add_option("problem", solve_problem, "problem JSON file")->required();
  add_solver_flags(solve, solve_flags);
  solve->add_option("--y1", solve_y1,
                    "initial point (defaults to the easy-set projection of 0)");
  solve->add_flag("--trace", solve_trace, "one JSON line per outer iteration");
  solve->add_option("--out", solve_out, "report path (stdout when omitted)");

  // direct
  auto* direct = app.add_subcommand("direct", "full KKT baseline solver");
  std::string direct_problem;
  double direct_accept = 1e-5;
  std::uint64_t direct_seed = 0;
  std::string direct_out;
  direct->add_option("problem", direct_problem, "problem JSON file")
      ->required();
  direct->add_option("--accept-tol", direct_accept,
                     "KKT residual bound behind exit code 0");
  direct->add_option("--seed", direct_seed, "seed for randomized restarts");
  direct->add_option("--out", direct_out, "report path (stdout when omitted)");

  // bench
  auto* bench = app.add_subcommand("bench", "seeded benchmark sweep to CSV");
  std::string bench_family;
  std::vector<std::string> bench_grid;
  int bench_seeds = 20;
  SolverFlags bench_flags;
  std::vector<double> bench_omega_sweep;
  bool bench_direct = false;
  double bench_margin = 0.5, bench_level = 1.0;
  int bench_jobs = 1;
  std::string bench_out;
  bench->add_option("--family", bench_family, "walras or movset")
      ->required()
      ->check(CLI::IsMember({"walras", "movset"}));
  bench->add_option("--grid", bench_grid,
                    "cells: CxG pairs for walras, dimensions for movset")
      ->required();
  bench->add_option("--seeds-per-cell", bench_seeds, "instances per cell");
  add_solver_flags(bench, bench_flags);
  bench->add_option("--omega-sweep", bench_omega_sweep,
                    "omega values, one row group per value");
  bench->add_flag("--direct", bench_direct, "also run the full KKT baseline");
  bench->add_option("--margin", bench_margin, "movset: spectral margin of B");
  bench->add_option("--level", bench_level, "movset: ellipsoid level d");
  bench->add_option("--jobs", bench_jobs, "concurrent instances");
  bench->add_option("--out", bench_out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return run_gen(gen_family, gen_consumers, gen_goods, gen_capacity, gen_n,
                     gen_margin, gen_level, gen_seed, gen_out);
    if (solve->parsed())
      return run_solve(solve_problem, solve_flags, solve_y1, solve_trace,
                       solve_out);
    if (direct->parsed())
      return run_direct(direct_problem, direct_accept, direct_seed,
                        direct_out);
    if (bench->parsed())
      return run_bench_cmd(bench_family, bench_grid, bench_seeds, bench_flags,
                           bench_omega_sweep, bench_direct, bench_margin,
                           bench_level, bench_jobs, bench_out);
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 2;
}
