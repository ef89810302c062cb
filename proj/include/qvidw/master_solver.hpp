#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "qvidw/common.hpp"
#include "qvidw/qvi_model.hpp"

namespace qvidw {

// Columns spanning the inner approximation of the feasible set.  Every
// column must lie in the easy set; exact duplicates (within dedup_tol in
// the max norm) are rejected so the master system keeps full meaning.
class ColumnPool {
 public:
  ColumnPool(ProductSet easy_set, double feasibility_tol,
             double dedup_tol = 1e-12);

  // False when the column duplicates an existing one.  Throws
  // std::invalid_argument when the column is not in the easy set.
  bool try_add(const Vector& y);

  int size() const { return static_cast<int>(columns_.cols()); }
  Index dim() const { return easy_set_.dim(); }
  const Matrix& matrix() const { return columns_; }
  Vector column(int j) const { return columns_.col(j); }
  const ProductSet& easy_set() const { return easy_set_; }

 private:
  ProductSet easy_set_;
  double feasibility_tol_;
  double dedup_tol_;
  Matrix columns_;
};

// Solution of the restricted problem over the convex hull of the pool
// intersected with the coupled constraints at its own point: x = Y lambda,
// z_m = F(x), mu the coupled multipliers.  tau is the multiplier of the
// hull's sum-to-one constraint (kept for warm starts).
struct MasterSolution {
  Vector x;
  Vector lambda;
  Vector z_m;
  Vector mu;
  double tau = 0.0;
  double kkt_residual = 0.0;
  int inner_iterations = 0;
};

class MasterSolveError : public std::runtime_error {
 public:
  MasterSolveError(const std::string& what, MasterSolution best)
      : std::runtime_error(what), best_found(std::move(best)) {}
  MasterSolution best_found;
};

class MasterInfeasibleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MasterOptions {
  double tol = 1e-8;
  int max_newton_iterations = 250;
  int max_restarts = 5;
  double mu_cap = 1e8;
  std::uint64_t seed = 0;
};

// KKT residual of a candidate in hull coordinates: the natural map of the
// reduced problem over the simplex, plus coupled feasibility, sign and
// complementarity violations, in the max norm.
double master_kkt_residual(const QviProblem& problem, const ColumnPool& pool,
                           const MasterSolution& candidate);

// Solves the restricted problem by a semismooth Newton method on the
// Fischer-Burmeister reformulation of its KKT system, warm started from
// the previous outer iteration.  Falls back to a sequential fixed-point
// scheme (freeze the constraint parameter, solve the resulting problem
// over the hull, repeat) when Newton stalls; throws MasterSolveError with
// the best candidate when both fail.  A one-column pool whose column
// violates its own coupled constraints raises MasterInfeasibleError.
MasterSolution solve_master(const QviProblem& problem, const ColumnPool& pool,
                            const std::optional<MasterSolution>& warm,
                            const MasterOptions& options);

MasterSolution solve_master(const QviProblem& problem, const ColumnPool& pool,
                            const std::optional<MasterSolution>& warm,
                            double tol);

}  // namespace qvidw
