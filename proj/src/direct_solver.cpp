#include "qvidw/direct_solver.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "qvidw/rng.hpp"
#include "semismooth.hpp"

namespace qvidw {

namespace {

// Forward-difference Jacobian of a map R^n -> R^m around x.
Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f,
                   const Vector& x, Index out_dim) {
  const Index n = x.size();
  Matrix J(out_dim, n);
  const Vector f0 = f(x);
  for (Index j = 0; j < n; ++j) {
    const double h = 1e-7 * (1.0 + std::abs(x[j]));
    Vector xp = x;
    xp[j] += h;
    J.col(j) = (f(xp) - f0) / h;
  }
  return J;
}

}  // namespace

DirectResult solve_direct(const QviProblem& problem, const Vector& x0,
                          const DirectOptions& options) {
  problem.check_consistency();
  const Index n = problem.dim();
  const Index m = problem.num_coupled();
  if (x0.size() != n)
    throw std::invalid_argument("solve_direct: initial point dimension");

  // KKT system in (x, mu): the easy set's natural map composed with
  // F + grad g mu, and Fischer-Burmeister rows for the coupled pairs.
  const auto combined = [&](const Vector& x, const Vector& mu) -> Vector {
    Vector t = problem.op.eval(x);
    if (m > 0) t += problem.coupled_grad_at(x) * mu;
    return t;
  };
  const auto residual = [&](const Vector& u) -> Vector {
    const Vector x = u.head(n);
    const Vector mu = u.tail(m);
    Vector r(n + m);
    const Vector v = x - combined(x, mu);
    r.head(n) = x - problem.easy_set.project(v);
    if (m > 0) {
      const Vector c = problem.coupled_values(x, x);
      for (Index i = 0; i < m; ++i)
        r[n + i] = detail::fischer_burmeister(mu[i], -c[i]);
    }
    return r;
  };
  const auto jacobian = [&](const Vector& u) -> Matrix {
    const Vector x = u.head(n);
    const Vector mu = u.tail(m);
    const Vector v = x - combined(x, mu);
    const Matrix D = problem.easy_set.projection_jacobian(v);

    Matrix Tx;  // d(F + grad g mu)/dx
    if (m == 0) {
      if (problem.op.affine)
        Tx = problem.op.affine->A;
      else if (problem.op.jacobian)
        Tx = problem.op.jacobian(x);
      else
        Tx = fd_jacobian(problem.op.eval, x, n);
    } else if (problem.op.affine || problem.op.jacobian) {
      Tx = problem.op.affine ? problem.op.affine->A : problem.op.jacobian(x);
      Tx += fd_jacobian(
          [&](const Vector& xx) -> Vector {
            return problem.coupled_grad_at(xx) * mu;
          },
          x, n);
    } else {
      Tx = fd_jacobian([&](const Vector& xx) { return combined(xx, mu); }, x,
                       n);
    }

    Matrix J = Matrix::Zero(n + m, n + m);
    J.topLeftCorner(n, n) = Matrix::Identity(n, n) - D + D * Tx;
    if (m > 0) {
      const Matrix G = problem.coupled_grad_at(x);
      J.topRightCorner(n, m) = D * G;
      const Vector c = problem.coupled_values(x, x);
      const Matrix Cx = fd_jacobian(
          [&](const Vector& xx) { return problem.coupled_values(xx, xx); }, x,
          m);
      for (Index i = 0; i < m; ++i) {
        const auto [da, db] = detail::fischer_burmeister_grad(mu[i], -c[i]);
        J.row(n + i).head(n) = -db * Cx.row(i);
        J(n + i, n + i) = da;
      }
    }
    return J;
  };

  detail::NewtonOptions nopt;
  nopt.tol = options.tol;
  nopt.max_iter = options.max_iterations;

  Vector u0(n + m);
  u0.head(n) = problem.easy_set.project(x0);
  u0.tail(m).setZero();

  Rng rng(options.seed * 16777619u + 97);
  DirectResult result;
  detail::NewtonOutcome best;
  best.residual_inf = std::numeric_limits<double>::infinity();
  int total_iterations = 0;
  for (int attempt = 0; attempt <= options.max_restarts; ++attempt) {
    const detail::NewtonOutcome out =
        detail::lm_semismooth_newton(residual, jacobian, u0, nopt);
    total_iterations += out.iterations;
    if (out.residual_inf < best.residual_inf) best = out;
    if (out.converged) break;
    // Restart near the best point seen, feasible in x and with sign-kept
    // multipliers.
    Vector xp = best.u.head(n);
    for (Index j = 0; j < n; ++j) xp[j] += 0.25 * rng.uniform(-1.0, 1.0);
    u0.head(n) = problem.easy_set.project(xp);
    for (Index i = 0; i < m; ++i)
      u0[n + i] = std::abs(best.u[n + i] + 0.1 * rng.uniform(-1.0, 1.0));
  }

  result.iterations = total_iterations;
  result.converged = best.converged;
  result.solution.x = best.u.head(n);
  result.solution.multipliers = best.u.tail(m);
  result.solution.operator_value = problem.op.eval(result.solution.x);
  result.solution.kkt_residual =
      qvi_kkt_residual(problem, result.solution.x, result.solution.multipliers);
  return result;
}

}  // namespace qvidw
