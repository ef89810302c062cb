#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qvidw/common.hpp"
#include "qvidw/dw_engine.hpp"

namespace qvidw {

enum class BenchFamily { Walrasian, MovingSet };

// A benchmark sweep: grid cells x seeds, each instance solved by the
// requested solvers and re-verified by qvi_kkt_residual before it counts
// as a success.  Cells are (C, G) pairs for the Walrasian family and
// (n, ignored) for moving sets.  A nonempty omega_sweep replaces the
// config's omega cell by cell, one row per omega value.
struct BenchSpec {
  BenchFamily family = BenchFamily::MovingSet;
  std::vector<std::pair<int, int>> grid;
  int seeds_per_cell = 20;
  DwConfig config;
  bool run_dw_solver = true;
  bool run_direct = false;
  std::vector<double> omega_sweep;
  double movset_margin = 0.5;
  double movset_level = 1.0;
  double accept_tol = 1e-5;
  int jobs = 1;
  std::uint64_t base_seed = 0;
};

// One CSV row.  Mean and max columns aggregate the successful runs of a
// cell; when every seed fails they are NaN and failures says so.
struct BenchRow {
  Index n = 0;
  std::string params;
  std::string solver;
  double mean_time_s = 0.0;
  double max_time_s = 0.0;
  double mean_iters = 0.0;
  double max_iters = 0.0;
  double mean_kkt_residual = 0.0;
  int failures = 0;
};

// Runs the sweep, instances concurrently up to spec.jobs.  Row order and
// all non-timing columns are deterministic for a fixed spec.
std::vector<BenchRow> run_bench(const BenchSpec& spec);

extern const char* const kBenchCsvHeader;
void write_bench_csv(const std::vector<BenchRow>& rows,
                     const std::string& path);

}  // namespace qvidw
