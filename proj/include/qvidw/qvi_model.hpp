#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qvidw/common.hpp"
#include "qvidw/convex_sets.hpp"

namespace qvidw {

// Single-valued operator F: R^n -> R^n.  eval is mandatory; the Jacobian
// and the explicit affine form are optional accelerators that solvers probe
// for.  When affine is present, eval must agree with A x + b.
struct OperatorSpec {
  struct AffineForm {
    Matrix A;
    Vector b;
  };

  Index dim = 0;
  std::function<Vector(const Vector&)> eval;
  std::function<Matrix(const Vector&)> jacobian;  // may be empty
  std::optional<AffineForm> affine;
  std::optional<double> monotonicity_modulus_hint;

  Vector operator()(const Vector& x) const { return eval(x); }
};

// Parametric constraints g(y, x) <= 0 coupling the decision y to the
// parameter x.  grad_y returns the n x m matrix whose column i is the
// gradient of g_i in y.  Each g_i must be convex in y for fixed x.
//
// grad_y_affine, when present, declares that
//   grad column i = curvature[i] * y + offset(x).col(i),
// with an empty curvature vector standing for all-zero curvature (g linear
// in y).  Solvers use it to assemble subproblems in closed form.
struct CoupledConstraints {
  struct AffineGradY {
    std::vector<Matrix> curvature;               // empty, or one n x n per i
    std::function<Matrix(const Vector&)> offset;  // x -> n x m
  };

  Index count = 0;  // m; zero means no coupling
  std::function<Vector(const Vector& y, const Vector& x)> eval;
  std::function<Matrix(const Vector& y, const Vector& x)> grad_y;
  std::optional<AffineGradY> grad_y_affine;
};

// Quasi-variational inequality data: find x in K(x) with
//   <F(x), y - x> >= 0  for all y in K(x),
// where K(x) = {y in easy_set : g(y, x) <= 0}.  jacobi_blocks partitions
// the coordinates for block-decoupled subproblem solves; boundaries must
// align with easy_set block boundaries so each piece keeps an exact
// projection.
struct QviProblem {
  std::string name;
  OperatorSpec op;
  CoupledConstraints coupled;
  ProductSet easy_set;
  std::vector<Index> jacobi_blocks;
  std::map<std::string, std::string> metadata;

  Index dim() const { return op.dim; }
  Index num_coupled() const { return coupled.count; }

  Vector coupled_values(const Vector& y, const Vector& x) const;
  // grad_y g evaluated at (x, x); the n x m matrix used by stationarity.
  Matrix coupled_grad_at(const Vector& x) const;

  // Structural consistency: dimensions, block alignment, presence of the
  // required closures.  Throws std::invalid_argument on violation.
  void check_consistency() const;
};

struct QviSolution {
  Vector x;
  Vector multipliers;     // one per coupled constraint
  Vector operator_value;  // F(x)
  double kkt_residual = 0.0;
};

// Stationarity, feasibility, dual feasibility and complementarity of the
// pair (x, mu), folded into one number:
//   max( ||x - P(x - (F(x) + grad_y g(x,x) mu))||_inf over the easy set,
//        max_i g_i(x,x)_+, max_i (-mu_i)_+, max_i |mu_i g_i(x,x)| ).
double qvi_kkt_residual(const QviProblem& problem, const Vector& x,
                        const Vector& mu);

struct CheckResult {
  std::string name;
  bool passed = true;
  double worst_deviation = 0.0;
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  bool all_passed() const;
};

// Spot-checks the closures against each other on random points: affine form
// vs eval, Jacobian vs finite differences, convexity of each g_i in y, and
// grad_y vs finite differences.  Purely diagnostic; no state is mutated.
ValidationReport validate(const QviProblem& problem, int samples,
                          std::uint64_t seed);

}  // namespace qvidw
