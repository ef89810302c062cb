#include "qvidw/bench.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "qvidw/direct_solver.hpp"
#include "qvidw/problem_library.hpp"
#include "qvidw/qvi_model.hpp"

namespace qvidw {

const char* const kBenchCsvHeader =
    "n,params,solver,mean_time_s,max_time_s,mean_iters,max_iters,"
    "mean_kkt_residual,failures";

namespace {

struct RunOutcome {
  double time_s = 0.0;
  double iters = 0.0;
  double kkt = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
};

struct Task {
  std::size_t combo = 0;  // (cell, omega) row group
  int seed_index = 0;
  std::uint64_t instance_seed = 0;
  double omega = 1.0;
  std::pair<int, int> cell;
};

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

void run_one(const BenchSpec& spec, const Task& task, RunOutcome* dw_out,
             RunOutcome* direct_out) {
  QviProblem problem;
  Vector y1;
  if (spec.family == BenchFamily::Walrasian) {
    problem = gen_walrasian(
        task.cell.first, task.cell.second,
        walras_default_capacity(task.cell.first, task.cell.second),
        task.instance_seed);
    y1 = walras_initial_point(task.cell.first, task.cell.second);
  } else {
    problem = gen_movset(task.cell.first, task.instance_seed,
                         spec.movset_margin, spec.movset_level);
    y1 = movset_initial_point(task.cell.first);
  }

  if (dw_out) {
    DwConfig config = spec.config;
    if (task.omega >= 0.0) config.omega = Vector::Constant(1, task.omega);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const DwReport report = run_dw(problem, y1, config);
      dw_out->time_s = elapsed_since(t0);
      dw_out->iters = report.iterations();
      dw_out->kkt = qvi_kkt_residual(problem, report.solution.x,
                                     report.solution.multipliers);
      dw_out->ok = report.status == DwStatus::Converged &&
                   dw_out->kkt <= spec.accept_tol;
    } catch (const std::exception&) {
      dw_out->time_s = elapsed_since(t0);
      dw_out->ok = false;
    }
  }
  if (direct_out) {
    DirectOptions dopt;
    dopt.seed = task.instance_seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const DirectResult result = solve_direct(problem, y1, dopt);
      direct_out->time_s = elapsed_since(t0);
      direct_out->iters = result.iterations;
      direct_out->kkt = qvi_kkt_residual(problem, result.solution.x,
                                         result.solution.multipliers);
      direct_out->ok = result.converged && direct_out->kkt <= spec.accept_tol;
    } catch (const std::exception&) {
      direct_out->time_s = elapsed_since(t0);
      direct_out->ok = false;
    }
  }
}

BenchRow aggregate(Index n, std::string params, std::string solver,
                   const std::vector<RunOutcome>& runs) {
  BenchRow row;
  row.n = n;
  row.params = std::move(params);
  row.solver = std::move(solver);
  double time_sum = 0.0, iter_sum = 0.0, kkt_sum = 0.0;
  int ok_count = 0;
  for (const auto& run : runs) {
    if (!run.ok) {
      ++row.failures;
      continue;
    }
    ++ok_count;
    time_sum += run.time_s;
    iter_sum += run.iters;
    kkt_sum += run.kkt;
    row.max_time_s = std::max(row.max_time_s, run.time_s);
    row.max_iters = std::max(row.max_iters, run.iters);
  }
  if (ok_count > 0) {
    row.mean_time_s = time_sum / ok_count;
    row.mean_iters = iter_sum / ok_count;
    row.mean_kkt_residual = kkt_sum / ok_count;
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.mean_time_s = row.max_time_s = nan;
    row.mean_iters = row.max_iters = nan;
    row.mean_kkt_residual = nan;
  }
  return row;
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchSpec& spec) {
  if (spec.grid.empty())
    throw std::invalid_argument("run_bench: empty grid");
  if (spec.seeds_per_cell < 1)
    throw std::invalid_argument("run_bench: need at least one seed per cell");
  if (!spec.run_dw_solver && !spec.run_direct)
    throw std::invalid_argument("run_bench: no solver selected");
  spec.config.validate(1);

  std::vector<double> omegas = spec.omega_sweep;
  if (omegas.empty()) {
    // Without a sweep the config's own omega applies; a scalar entry keeps
    // the rows labeled with its value.
    omegas.push_back(spec.config.omega.size() == 1 ? spec.config.omega[0]
                                                   : -1.0);
  }

  std::vector<Task> tasks;
  std::size_t combo = 0;
  for (std::size_t cell_idx = 0; cell_idx < spec.grid.size(); ++cell_idx) {
    for (double omega : omegas) {
      for (int s = 0; s < spec.seeds_per_cell; ++s) {
        Task task;
        task.combo = combo;
        task.seed_index = s;
        task.instance_seed = spec.base_seed +
                             (static_cast<std::uint64_t>(cell_idx) << 20) +
                             static_cast<std::uint64_t>(s);
        task.omega = omega;
        task.cell = spec.grid[cell_idx];
        tasks.push_back(task);
      }
      ++combo;
    }
  }

  std::vector<RunOutcome> dw_runs(tasks.size());
  std::vector<RunOutcome> direct_runs(tasks.size());
  std::atomic<std::size_t> next{0};
  const int jobs = std::max(1, spec.jobs);
  const auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      run_one(spec, tasks[i], spec.run_dw_solver ? &dw_runs[i] : nullptr,
              spec.run_direct ? &direct_runs[i] : nullptr);
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Tasks were laid out seeds-innermost, so each (cell, omega) group is a
  // contiguous slice.
  const std::size_t seeds = static_cast<std::size_t>(spec.seeds_per_cell);
  std::vector<BenchRow> rows;
  combo = 0;
  for (std::size_t cell_idx = 0; cell_idx < spec.grid.size(); ++cell_idx) {
    const auto cell = spec.grid[cell_idx];
    for (double omega : omegas) {
      Index n;
      std::ostringstream params;
      if (spec.family == BenchFamily::Walrasian) {
        n = static_cast<Index>(cell.first + 2) * cell.second;
        params << "C=" << cell.first << ";G=" << cell.second;
      } else {
        n = cell.first;
        params << "margin=" << spec.movset_margin;
      }
      if (omega >= 0.0) params << ";omega=" << omega;

      const std::size_t first = combo * seeds;
      if (spec.run_dw_solver) {
        std::vector<RunOutcome> group(dw_runs.begin() + first,
                                      dw_runs.begin() + first + seeds);
        rows.push_back(aggregate(n, params.str(), "dw", group));
      }
      if (spec.run_direct) {
        std::vector<RunOutcome> group(direct_runs.begin() + first,
                                      direct_runs.begin() + first + seeds);
        rows.push_back(aggregate(n, params.str(), "direct_kkt", group));
      }
      ++combo;
    }
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << kBenchCsvHeader << '\n';
  out.precision(9);
  for (const auto& row : rows) {
    out << row.n << ',' << row.params << ',' << row.solver << ','
        << row.mean_time_s << ',' << row.max_time_s << ',' << row.mean_iters
        << ',' << row.max_iters << ',' << row.mean_kkt_residual << ','
        << row.failures << '\n';
  }
}

}  // namespace qvidw
