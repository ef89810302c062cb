#include "semismooth.hpp"

#include <Eigen/QR>

#include <cmath>

namespace qvidw::detail {

double fischer_burmeister(double a, double b) {
  return std::sqrt(a * a + b * b) - a - b;
}

std::pair<double, double> fischer_burmeister_grad(double a, double b) {
  const double r = std::sqrt(a * a + b * b);
  if (r <= 1e-14) {
    const double g = 1.0 / std::sqrt(2.0) - 1.0;
    return {g, g};
  }
  return {a / r - 1.0, b / r - 1.0};
}

double fischer_burmeister(double a, double b, double eps) {
  return std::sqrt(a * a + b * b + 2.0 * eps * eps) - a - b;
}

std::pair<double, double> fischer_burmeister_grad(double a, double b,
                                                  double eps) {
  const double r = std::sqrt(a * a + b * b + 2.0 * eps * eps);
  if (r <= 1e-14) {
    const double g = 1.0 / std::sqrt(2.0) - 1.0;
    return {g, g};
  }
  return {a / r - 1.0, b / r - 1.0};
}

NewtonOutcome lm_semismooth_newton(
    const std::function<Vector(const Vector&)>& residual,
    const std::function<Matrix(const Vector&)>& jacobian, Vector u0,
    const NewtonOptions& opt) {
  NewtonOutcome out;
  Vector u = std::move(u0);
  Vector r = residual(u);
  double merit = r.squaredNorm();
  out.u = u;
  out.residual_inf = r.lpNorm<Eigen::Infinity>();

  double lm = opt.lm_init;
  for (int it = 1; it <= opt.max_iter; ++it) {
    out.iterations = it;
    if (out.residual_inf <= opt.tol) {
      out.converged = true;
      return out;
    }

    const Matrix J = jacobian(u);
    const auto n = J.cols();
    const double diag_scale = 1.0 + J.colwise().squaredNorm().maxCoeff();

    bool accepted = false;

    // Undamped step first, with a backtracking line search on the merit.
    // Damping shifts every singular value by the same amount, which freezes
    // motion along the flat directions of a degenerate system; the pure
    // step through a rank-revealing factorization keeps those alive and
    // the line search still guards against overshoot.  Backtracking stops
    // well above rounding scale: a step that only survives microscopically
    // is not progress, and the damped branch below handles it better.
    {
      const Vector step = J.completeOrthogonalDecomposition().solve(-r);
      if (step.allFinite()) {
        double t = 1.0;
        for (int ls = 0; ls < 14; ++ls, t *= 0.5) {
          const Vector u_try = u + t * step;
          const Vector r_try = residual(u_try);
          const double merit_try = r_try.squaredNorm();
          if (merit_try < (1.0 - 1e-4 * t) * merit) {
            u = u_try;
            r = r_try;
            merit = merit_try;
            accepted = true;
            break;
          }
        }
      }
    }

    for (int rejects = 0;
         !accepted && rejects < opt.max_consecutive_rejects; ++rejects) {
      // Damped step through a QR factorization of the stacked system
      // [J; sqrt(nu) I]; the normal equations would square the conditioning
      // and lose the step accuracy exactly where degeneracy needs it.
      Matrix A(2 * n, n);
      A.topRows(n) = J;
      A.bottomRows(n) =
          std::sqrt(lm * diag_scale) * Matrix::Identity(n, n);
      Vector rhs = Vector::Zero(2 * n);
      rhs.head(n) = -r;
      const Vector step = A.householderQr().solve(rhs);
      if (!step.allFinite()) {
        lm *= opt.lm_grow;
        continue;
      }
      const Vector u_try = u + step;
      const Vector r_try = residual(u_try);
      const double merit_try = r_try.squaredNorm();
      if (merit_try < merit) {
        u = u_try;
        r = r_try;
        merit = merit_try;
        lm = std::max(lm * opt.lm_shrink, 1e-14);
        accepted = true;
        break;
      }
      lm *= opt.lm_grow;
    }

    const double rinf = r.lpNorm<Eigen::Infinity>();
    if (rinf < out.residual_inf) {
      out.residual_inf = rinf;
      out.u = u;
    }
    if (!accepted) break;  // stalled; caller decides on restarts
  }
  out.converged = out.residual_inf <= opt.tol;
  return out;
}

}  // namespace qvidw::detail
