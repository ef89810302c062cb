#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qvidw/common.hpp"
#include "qvidw/master_solver.hpp"
#include "qvidw/qvi_model.hpp"
#include "qvidw/vi_solvers.hpp"

namespace qvidw {

// How the operator is approximated in the column-generating subproblem.
//   Constant:   freeze F at the master point (z_m).
//   FirstOrder: linearize F at the master point (needs a Jacobian).
//   Exact:      keep F itself.
enum class FhatMode { Constant, FirstOrder, Exact };

// Regularization q >= 0 added to the subproblem as q (y - x_k): off, a
// fixed value, or chosen so the assembled operator reaches a target
// monotonicity modulus.
struct QMode {
  enum class Kind { None, Fixed, Auto };
  Kind kind = Kind::None;
  double value = 0.0;  // Fixed: q; Auto: target modulus

  static QMode none() { return {Kind::None, 0.0}; }
  static QMode fixed(double q) { return {Kind::Fixed, q}; }
  static QMode auto_target(double c) { return {Kind::Auto, c}; }
};

struct IterationRecord {
  int k = 0;
  double gap_value = 0.0;
  double step_norm = 0.0;  // ||y_next - x_k||_2
  double mu_norm_inf = 0.0;
  double master_residual = 0.0;
  double subproblem_residual = 0.0;
  double master_time = 0.0;
  double subproblem_time = 0.0;
  double zeta_norm_inf = 0.0;
  double min_pool_gap = 0.0;  // most negative linearized gap over the pool
};

enum class DwStatus { Converged, MaxOuter, MuUnbounded, InnerFailure };
std::string to_string(DwStatus status);

struct DwConfig {
  // Per-constraint blend between the frozen constraint gradient (1) and the
  // gradient tracked in y (0); a single entry broadcasts.
  Vector omega = Vector::Ones(1);
  FhatMode fhat_mode = FhatMode::Exact;
  QMode q_mode = QMode::auto_target(1e-2);
  bool jacobi = false;
  bool jacobi_parallel = false;
  double gap_tol = 1e-6;  // relative: stop once gap >= -gap_tol (1 + |zeta|)
  double inner_tol = 1e-8;
  int max_outer = 100;
  int inner_max_iter = 200000;
  double mu_max = 1e8;
  std::uint64_t seed = 0;
  std::function<void(const IterationRecord&)> on_iteration;  // trace hook

  void validate(Index num_coupled) const;  // throws std::invalid_argument
};

struct DwReport {
  DwStatus status = DwStatus::MaxOuter;
  QviSolution solution;  // last master point; authoritative when Converged
  std::vector<IterationRecord> records;
  double total_time = 0.0;
  std::string message;

  int iterations() const { return static_cast<int>(records.size()); }
};

// Assembled subproblem operator F_k(y) = Fhat(y) + Gamma(y) mu + q (y - x_k),
// with the affine form filled in whenever the pieces make it exact.
struct SubproblemOperator {
  std::function<Vector(const Vector&)> eval;
  std::optional<ViOperator::Affine> affine;
  Vector x_k;
  Vector mu;
  double q = 0.0;
};

// Gamma closure: column i blends the constraint gradient frozen at the
// master point with the gradient tracked at y, weighted by omega[i].
std::function<Matrix(const Vector&)> build_gamma(const QviProblem& problem,
                                                 const Vector& x_k,
                                                 const Vector& omega);

std::function<Vector(const Vector&)> build_fhat(const QviProblem& problem,
                                                const MasterSolution& master,
                                                FhatMode mode);

SubproblemOperator build_subproblem(const QviProblem& problem,
                                    const MasterSolution& master,
                                    const Vector& omega, FhatMode mode,
                                    double q);

// Modulus-targeting choice of q: estimates the monotonicity modulus of the
// approximated operator (exactly for affine data, from sampled symmetric
// Jacobians otherwise; blockwise under the Jacobi split) and returns
// max(0, c_target - estimate).  The multiplier term is monotone for convex
// constraints, so ignoring it only ever overestimates q.
double auto_regularization(const QviProblem& problem, FhatMode mode,
                           const Vector& omega, bool jacobi, double c_target);

// Linearized optimality gap <z_m + Gamma(x_k) mu, y - x_k>; nonpositive at
// subproblem solutions, nonnegative over the pool, zero only at a fixed
// point.
double gap(const Vector& y, const MasterSolution& master,
           const Matrix& gamma_at_xk);

// Block-decoupled instances: block a sees its own coordinates as unknowns
// and the master point in every other block.  Concatenating the block
// operators at x_k reproduces the full operator there.
std::vector<ViInstance> jacobi_split(const QviProblem& problem,
                                     const SubproblemOperator& subop);

DwReport run_dw(const QviProblem& problem, const Vector& y1,
                const DwConfig& config);

}  // namespace qvidw
