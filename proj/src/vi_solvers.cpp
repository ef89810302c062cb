#include "qvidw/vi_solvers.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <sstream>
#include <vector>

#include "semismooth.hpp"

namespace qvidw {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector eval_op(const ViOperator& op, const Vector& y) {
  if (op.eval) return op.eval(y);
  if (op.affine) return op.affine->A * y + op.affine->b;
  throw std::invalid_argument("ViOperator: neither eval nor affine set");
}

}  // namespace

double natural_residual(const ViInstance& vi, const Vector& y) {
  const Vector z = eval_op(vi.op, y);
  return (y - vi.set.project(y - z)).lpNorm<Eigen::Infinity>();
}

ViResult solve_extragradient(const ViInstance& vi, const Vector& y0,
                             double tol, int max_iter) {
  const auto op = [&](const Vector& y) { return eval_op(vi.op, y); };
  const auto project = [&](const Vector& y) { return vi.set.project(y); };
  return solve_extragradient_projected(op, project, y0, tol, max_iter);
}

ViResult solve_extragradient_projected(
    const std::function<Vector(const Vector&)>& op,
    const std::function<Vector(const Vector&)>& project, const Vector& y0,
    double tol, int max_iter) {
  ViResult res;
  Vector y = project(y0);
  double tau = 1.0;
  const double lipschitz_fraction = 0.9;

  for (int it = 1; it <= max_iter; ++it) {
    res.iterations = it;
    const Vector Fy = op(y);
    res.natural_residual =
        (y - project(y - Fy)).lpNorm<Eigen::Infinity>();
    if (res.natural_residual <= tol) {
      res.y = y;
      res.z = Fy;
      res.converged = true;
      return res;
    }

    // Halve the step until the local Lipschitz test accepts it; a clean
    // first try earns a mild step increase, which keeps tau tracking 1/L
    // without knowing L.
    bool halved = false;
    Vector ybar, Fybar;
    for (;;) {
      ybar = project(y - tau * Fy);
      Fybar = op(ybar);
      const double lhs = tau * (Fy - Fybar).norm();
      const double rhs = lipschitz_fraction * (y - ybar).norm();
      if (lhs <= rhs || tau < 1e-14) break;
      tau *= 0.5;
      halved = true;
    }
    y = project(y - tau * Fybar);
    if (!halved) tau = std::min(tau * 1.1, 1e6);
  }

  const Vector Fy = op(y);
  res.y = y;
  res.z = Fy;
  res.natural_residual = (y - project(y - Fy)).lpNorm<Eigen::Infinity>();
  res.converged = res.natural_residual <= tol;
  return res;
}

ViResult solve_affine_allspace(const Matrix& A, const Vector& b) {
  if (A.rows() != A.cols() || A.rows() != b.size())
    throw std::invalid_argument("solve_affine_allspace: shape mismatch");

  Eigen::FullPivLU<Matrix> lu(A);
  const Index n = A.rows();
  double pmax = 0.0, pmin = kInf;
  for (Index i = 0; i < n; ++i) {
    const double p = std::abs(lu.matrixLU()(i, i));
    pmax = std::max(pmax, p);
    pmin = std::min(pmin, p);
  }
  const double cond = pmin > 0.0 ? pmax / pmin : kInf;
  if (lu.rank() < n) {
    std::ostringstream msg;
    msg << "affine solve: matrix is singular to working precision"
        << " (pivot ratio " << cond << ")";
    throw SingularOperatorError(msg.str(), cond);
  }

  ViResult res;
  res.y = lu.solve(-b);
  res.z = A * res.y + b;
  res.natural_residual = res.z.lpNorm<Eigen::Infinity>();
  res.iterations = 1;
  const double bound = 1e-10 * (1.0 + b.lpNorm<Eigen::Infinity>());
  if (res.natural_residual > bound) {
    std::ostringstream msg;
    msg << "affine solve: residual " << res.natural_residual
        << " exceeds " << bound << "; matrix is effectively singular"
        << " (pivot ratio " << cond << ")";
    throw SingularOperatorError(msg.str(), cond);
  }
  res.converged = true;
  return res;
}

ViResult solve_affine_box_activeset(const Matrix& A, const Vector& b,
                                    const ProductSet& set) {
  const Index n = A.rows();
  if (A.cols() != n || b.size() != n || set.dim() != n)
    throw std::invalid_argument("solve_affine_box_activeset: shape mismatch");

  Vector lo(n), hi(n);
  for (std::size_t a = 0; a < set.block_count(); ++a) {
    const ConvexSet& blk = set.block(a);
    const Index o = set.offset(a);
    switch (blk.kind()) {
      case SetKind::AllSpace:
        lo.segment(o, blk.dim()).setConstant(-kInf);
        hi.segment(o, blk.dim()).setConstant(kInf);
        break;
      case SetKind::NonnegOrthant:
        lo.segment(o, blk.dim()).setZero();
        hi.segment(o, blk.dim()).setConstant(kInf);
        break;
      case SetKind::Box:
        lo.segment(o, blk.dim()) = blk.lower();
        hi.segment(o, blk.dim()) = blk.upper();
        break;
      default:
        throw std::invalid_argument(
            "solve_affine_box_activeset: set must be boxes/orthants");
    }
  }

  // Primal-dual active set iteration, c = 1: a coordinate is pinned to a
  // bound when the sign of its multiplier estimate w_i beats the primal
  // violation.  Finite convergence for the symmetric positive definite
  // case; repeats of the working set are treated as failure.
  std::vector<std::int8_t> state(n, 0);  // -1 at lower, +1 at upper, 0 free
  std::set<std::vector<std::int8_t>> seen;
  const int max_rounds =
      n >= 20 ? (1 << 20) : (1 << n) + 4;

  Vector y(n), w(n);
  int rounds = 0;
  for (;;) {
    ++rounds;
    if (!seen.insert(state).second || rounds > max_rounds)
      throw ActiveSetCycleError("active set solve cycled");

    std::vector<Index> freeIdx;
    for (Index i = 0; i < n; ++i) {
      if (state[i] < 0)
        y[i] = lo[i];
      else if (state[i] > 0)
        y[i] = hi[i];
      else
        freeIdx.push_back(i);
    }
    const Index f = static_cast<Index>(freeIdx.size());
    if (f > 0) {
      Matrix Aff(f, f);
      Vector rhs(f);
      for (Index a = 0; a < f; ++a) {
        rhs[a] = -b[freeIdx[a]];
        for (Index c2 = 0; c2 < f; ++c2)
          Aff(a, c2) = A(freeIdx[a], freeIdx[c2]);
        for (Index i = 0; i < n; ++i)
          if (state[i] != 0) rhs[a] -= A(freeIdx[a], i) * y[i];
      }
      Eigen::LDLT<Matrix> ldlt(Aff);
      if (ldlt.info() != Eigen::Success)
        throw ActiveSetCycleError("active set solve hit a non-SPD block");
      const Vector yf = ldlt.solve(rhs);
      if (!yf.allFinite())
        throw ActiveSetCycleError("active set solve produced non-finite step");
      for (Index a = 0; a < f; ++a) y[freeIdx[a]] = yf[a];
    }
    w = A * y + b;

    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      std::int8_t next = 0;
      if (std::isfinite(lo[i]) && w[i] - (y[i] - lo[i]) > 0.0)
        next = -1;
      else if (std::isfinite(hi[i]) && -w[i] - (hi[i] - y[i]) > 0.0)
        next = 1;
      if (next != state[i]) {
        state[i] = next;
        changed = true;
      }
    }
    if (!changed) break;
  }

  ViResult res;
  res.y = y;
  res.z = w;
  res.iterations = rounds;
  res.natural_residual =
      (y - set.project(y - w)).lpNorm<Eigen::Infinity>();
  res.converged = true;
  return res;
}

ViResult solve_affine_natural_newton(const Matrix& A, const Vector& b,
                                     const ProductSet& set, const Vector& y0,
                                     double tol, int max_iter) {
  const Index n = A.rows();
  if (A.cols() != n || b.size() != n || set.dim() != n || y0.size() != n)
    throw std::invalid_argument(
        "solve_affine_natural_newton: shape mismatch");

  const auto residual = [&](const Vector& y) -> Vector {
    return y - set.project(y - (A * y + b));
  };
  // I - D (I - A) with D an element of the projection's generalized
  // Jacobian at the pre-projection point.
  const auto jacobian = [&](const Vector& y) -> Matrix {
    const Matrix D = set.projection_jacobian(y - (A * y + b));
    Matrix J = D * A - D;
    J.diagonal().array() += 1.0;
    return J;
  };

  detail::NewtonOptions nopt;
  nopt.tol = 0.5 * tol;
  nopt.max_iter = max_iter;
  const detail::NewtonOutcome out =
      detail::lm_semismooth_newton(residual, jacobian, set.project(y0), nopt);

  // Hand back the projection image of the last iterate rather than the
  // iterate itself: it lies in the set exactly, at the cost of a residual
  // re-check that can miss tol by a Lipschitz factor.
  ViResult res;
  res.y = set.project(out.u - (A * out.u + b));
  res.z = A * res.y + b;
  res.iterations = out.iterations;
  res.natural_residual =
      (res.y - set.project(res.y - res.z)).lpNorm<Eigen::Infinity>();
  res.converged = res.natural_residual <= tol;
  return res;
}

namespace {

bool all_blocks_are(const ProductSet& set,
                    const std::initializer_list<SetKind>& kinds) {
  for (std::size_t a = 0; a < set.block_count(); ++a) {
    bool ok = false;
    for (SetKind k : kinds)
      if (set.block(a).kind() == k) ok = true;
    if (!ok) return false;
  }
  return true;
}

bool symmetric_positive_definite(const Matrix& A) {
  const double asym = (A - A.transpose()).lpNorm<Eigen::Infinity>();
  if (asym > 1e-10 * (1.0 + A.lpNorm<Eigen::Infinity>())) return false;
  Eigen::LLT<Matrix> llt(0.5 * (A + A.transpose()));
  return llt.info() == Eigen::Success;
}

}  // namespace

ViResult solve_vi(const ViInstance& vi, const Vector& y0, double tol,
                  int max_iter) {
  if (vi.op.affine) {
    const Matrix& A = vi.op.affine->A;
    const Vector& b = vi.op.affine->b;
    if (all_blocks_are(vi.set, {SetKind::AllSpace}))
      return solve_affine_allspace(A, b);
    if (all_blocks_are(vi.set,
                       {SetKind::AllSpace, SetKind::NonnegOrthant,
                        SetKind::Box}) &&
        symmetric_positive_definite(A)) {
      try {
        return solve_affine_box_activeset(A, b, vi.set);
      } catch (const ActiveSetCycleError&) {
        // fall through to natural-map Newton
      }
    }
    ViResult newton = solve_affine_natural_newton(
        A, b, vi.set, y0, tol, std::min(max_iter, 200));
    if (newton.converged) return newton;
    // Polish the best Newton point rather than restart from scratch.
    ViResult res = solve_extragradient(vi, newton.y, tol, max_iter);
    res.iterations += newton.iterations;
    return res;
  }
  return solve_extragradient(vi, y0, tol, max_iter);
}

}  // namespace qvidw
