#pragma once

#include <functional>
#include <optional>
#include <stdexcept>

#include "qvidw/common.hpp"
#include "qvidw/convex_sets.hpp"

namespace qvidw {

// Variational inequality over a product of canonical sets: find y in S with
// <Phi(y), v - y> >= 0 for all v in S.  The affine form, when present,
// declares Phi(y) = A y + b and unlocks the direct routes.
struct ViOperator {
  struct Affine {
    Matrix A;
    Vector b;
  };

  std::function<Vector(const Vector&)> eval;
  std::optional<Affine> affine;

  Vector operator()(const Vector& y) const {
    if (eval) return eval(y);
    return affine->A * y + affine->b;
  }
};

struct ViInstance {
  ViOperator op;
  ProductSet set;
  std::optional<double> strong_monotonicity_hint;
};

struct ViResult {
  Vector y;
  Vector z;  // Phi(y)
  double natural_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Thrown by the dense affine solve when the matrix is singular to working
// precision.  condition_estimate is the max/min pivot ratio of a full-pivot
// factorization.
class SingularOperatorError : public std::runtime_error {
 public:
  SingularOperatorError(const std::string& what, double cond)
      : std::runtime_error(what), condition_estimate(cond) {}
  double condition_estimate;
};

// Raised by the active-set solve when the working set repeats; the caller
// is expected to fall back to the extragradient route.
class ActiveSetCycleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Natural residual ||y - P_S(y - Phi(y))||_inf, the common merit across all
// routes.
double natural_residual(const ViInstance& vi, const Vector& y);

// Korpelevich extragradient with backtracked step size (halve until the
// Lipschitz test passes, grow mildly on clean steps).  Handles monotone
// operators; strong monotonicity gives a linear rate.
ViResult solve_extragradient(const ViInstance& vi, const Vector& y0,
                             double tol, int max_iter);

// Same scheme with a caller-supplied projector, for feasible sets that are
// not products of canonical blocks (used by the master fallback).
ViResult solve_extragradient_projected(
    const std::function<Vector(const Vector&)>& op,
    const std::function<Vector(const Vector&)>& project, const Vector& y0,
    double tol, int max_iter);

// Phi(y) = A y + b over all of R^n: one dense factorization.  Throws
// SingularOperatorError when A is rank deficient.
ViResult solve_affine_allspace(const Matrix& A, const Vector& b);

// Affine VI over a box (orthant blocks count as one-sided boxes): primal
// active-set iteration with exact complementarity at termination.  Requires
// every block of `set` to be a Box, NonnegOrthant or AllSpace.  Throws
// ActiveSetCycleError if the working set cycles.
ViResult solve_affine_box_activeset(const Matrix& A, const Vector& b,
                                    const ProductSet& set);

// Semismooth Newton on the natural map y - P_S(y - (A y + b)) for affine
// operators over any product set.  Quadratic local convergence makes it the
// workhorse for sets with simplex or ball blocks, where a first-order
// method would need O(L/c) iterations per digit.  converged=false on
// stall; no exception.
ViResult solve_affine_natural_newton(const Matrix& A, const Vector& b,
                                     const ProductSet& set, const Vector& y0,
                                     double tol, int max_iter);

// Route on structure: affine over all-space -> direct solve; affine over
// boxes/orthants with an SPD matrix -> active set; other affine instances
// -> natural-map Newton; extragradient handles everything else and backs
// up the structured routes when they fail.
ViResult solve_vi(const ViInstance& vi, const Vector& y0, double tol,
                  int max_iter);

}  // namespace qvidw
