#pragma once

#include <functional>
#include <utility>

#include "qvidw/common.hpp"

namespace qvidw::detail {

// Fischer-Burmeister complementarity function, phi(a, b) = sqrt(a^2 + b^2)
// - a - b.  Zero exactly when a >= 0, b >= 0 and a b = 0.
double fischer_burmeister(double a, double b);

// One element of the generalized gradient of phi.  At the kink (0, 0) the
// symmetric element (1/sqrt(2) - 1, 1/sqrt(2) - 1) is returned.
std::pair<double, double> fischer_burmeister_grad(double a, double b);

// Smoothed variant, sqrt(a^2 + b^2 + 2 eps^2) - a - b.  C^1 everywhere for
// eps > 0 and zero exactly when a > 0, b > 0 and a b = eps^2, so driving
// eps to zero walks a central path through degenerate kinks.
double fischer_burmeister(double a, double b, double eps);
std::pair<double, double> fischer_burmeister_grad(double a, double b,
                                                  double eps);

struct NewtonOptions {
  double tol = 1e-10;  // on ||residual||_inf
  int max_iter = 250;
  double lm_init = 1e-10;
  double lm_shrink = 0.25;
  double lm_grow = 10.0;
  int max_consecutive_rejects = 25;
};

struct NewtonOutcome {
  Vector u;
  double residual_inf = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Levenberg-Marquardt damped Newton on a square semismooth system
// r(u) = 0.  jacobian(u) returns an element of the generalized Jacobian;
// steps solve the damped normal equations, so rank-deficient Jacobians
// (degenerate complementarity) stay harmless.  Accepts a step only when it
// reduces ||r||_2; gives up after too many consecutive rejections and
// returns the best point seen.
NewtonOutcome lm_semismooth_newton(
    const std::function<Vector(const Vector&)>& residual,
    const std::function<Matrix(const Vector&)>& jacobian, Vector u0,
    const NewtonOptions& opt);

}  // namespace qvidw::detail
