#include "qvidw/master_solver.hpp"

#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qvidw/rng.hpp"
#include "semismooth.hpp"

namespace qvidw {

ColumnPool::ColumnPool(ProductSet easy_set, double feasibility_tol,
                       double dedup_tol)
    : easy_set_(std::move(easy_set)),
      feasibility_tol_(feasibility_tol),
      dedup_tol_(dedup_tol),
      columns_(easy_set_.dim(), 0) {}

bool ColumnPool::try_add(const Vector& y) {
  if (y.size() != easy_set_.dim())
    throw std::invalid_argument("ColumnPool: column dimension mismatch");
  if (!easy_set_.contains(y, feasibility_tol_))
    throw std::invalid_argument("ColumnPool: column is outside the easy set");
  for (Index j = 0; j < columns_.cols(); ++j) {
    if ((columns_.col(j) - y).lpNorm<Eigen::Infinity>() <= dedup_tol_)
      return false;
  }
  columns_.conservativeResize(Eigen::NoChange, columns_.cols() + 1);
  columns_.col(columns_.cols() - 1) = y;
  return true;
}

namespace {

// Shared evaluation of the reduced quantities at hull coordinates lambda:
// x = Y lambda, t = Y^T (F(x) + G(x) mu) (multiplier-free part of the dual
// slack) and c = g(x, x).  A frozen parameter turns the quasi-variational
// coupling off: g and its gradient are then taken at (x, x_frozen).
struct ReducedEval {
  Vector t;  // k
  Vector c;  // m
};

ReducedEval reduced_eval(const QviProblem& P, const Matrix& Y,
                         const Vector& lambda, const Vector& mu,
                         const Vector* frozen_x = nullptr) {
  ReducedEval out;
  const Vector x = Y * lambda;
  const Vector& param = frozen_x ? *frozen_x : x;
  Vector w = P.op.eval(x);
  if (P.num_coupled() > 0) {
    w += P.coupled.grad_y(x, param) * mu;
    out.c = P.coupled.eval(x, param);
  } else {
    out.c.resize(0);
  }
  out.t = Y.transpose() * w;
  return out;
}

struct FbSystem {
  const QviProblem& P;
  const Matrix& Y;
  Index k, m;
  const Vector* frozen = nullptr;  // fixed constraint parameter, or self
  double eps = 0.0;                // complementarity smoothing, 0 = exact

  Index size() const { return k + m + 1; }

  Vector residual(const Vector& u) const {
    const Vector lambda = u.head(k);
    const Vector mu = u.segment(k, m);
    const double tau = u[k + m];
    const ReducedEval e = reduced_eval(P, Y, lambda, mu, frozen);
    Vector r(size());
    for (Index j = 0; j < k; ++j)
      r[j] = detail::fischer_burmeister(lambda[j], e.t[j] + tau, eps);
    for (Index i = 0; i < m; ++i)
      r[k + i] = detail::fischer_burmeister(mu[i], -e.c[i], eps);
    r[k + m] = lambda.sum() - 1.0;
    return r;
  }

  Matrix jacobian(const Vector& u) const {
    const Vector lambda = u.head(k);
    const Vector mu = u.segment(k, m);
    const double tau = u[k + m];
    const ReducedEval base = reduced_eval(P, Y, lambda, mu, frozen);

    // Central differences of the smooth inner maps in lambda; the coupled
    // constraints depend on x through both slots, which keeps an analytic
    // chain rule out of reach without second derivatives of g.  Central
    // rather than forward because degenerate pools leave the Jacobian
    // near-singular, and Newton then amplifies any derivative error into a
    // residual floor well above the solve tolerance.
    Matrix T_lam(k, k), C_lam(m, k);
    for (Index j = 0; j < k; ++j) {
      const double h = 1e-5 * (1.0 + std::abs(lambda[j]));
      Vector lp = lambda;
      lp[j] += h;
      Vector lo = lambda;
      lo[j] -= h;
      const ReducedEval pe = reduced_eval(P, Y, lp, mu, frozen);
      const ReducedEval me = reduced_eval(P, Y, lo, mu, frozen);
      T_lam.col(j) = (pe.t - me.t) / (2.0 * h);
      if (m > 0) C_lam.col(j) = (pe.c - me.c) / (2.0 * h);
    }
    Matrix T_mu(k, m);
    if (m > 0) {
      const Vector x = Y * lambda;
      T_mu = Y.transpose() * P.coupled.grad_y(x, frozen ? *frozen : x);
    }

    Matrix J = Matrix::Zero(size(), size());
    for (Index j = 0; j < k; ++j) {
      const auto [da, db] =
          detail::fischer_burmeister_grad(lambda[j], base.t[j] + tau, eps);
      J(j, j) += da;
      J.block(j, 0, 1, k) += db * T_lam.row(j);
      if (m > 0) J.block(j, k, 1, m) += db * T_mu.row(j);
      J(j, k + m) += db;
    }
    for (Index i = 0; i < m; ++i) {
      const auto [da, db] =
          detail::fischer_burmeister_grad(mu[i], -base.c[i], eps);
      J(k + i, k + i) += da;
      J.block(k + i, 0, 1, k) -= db * C_lam.row(i);
    }
    J.block(k + m, 0, 1, k).setOnes();
    return J;
  }
};

MasterSolution package(const QviProblem& P, const Matrix& Y,
                       const Vector& lambda, const Vector& mu, double tau) {
  MasterSolution sol;
  sol.lambda = lambda;
  sol.mu = mu;
  sol.tau = tau;
  sol.x = Y * lambda;
  sol.z_m = P.op.eval(sol.x);
  return sol;
}

}  // namespace

double master_kkt_residual(const QviProblem& problem, const ColumnPool& pool,
                           const MasterSolution& candidate) {
  const Matrix& Y = pool.matrix();
  const Index k = Y.cols();
  const Index m = problem.num_coupled();
  if (candidate.lambda.size() != k || candidate.mu.size() != m)
    throw std::invalid_argument("master_kkt_residual: candidate shape");

  const ReducedEval e =
      reduced_eval(problem, Y, candidate.lambda, candidate.mu);
  const ConvexSet simplex = ConvexSet::simplex(k);
  const Vector nat =
      candidate.lambda - simplex.project(candidate.lambda - e.t);
  double r = nat.lpNorm<Eigen::Infinity>();
  for (Index i = 0; i < m; ++i) {
    r = std::max(r, std::max(0.0, e.c[i]));
    r = std::max(r, std::max(0.0, -candidate.mu[i]));
    r = std::max(r, std::abs(candidate.mu[i] * e.c[i]));
  }
  return r;
}

namespace {

// Finishing step for a stalled near-solution.  Late pools carry clusters of
// nearly identical columns, which leaves the root degenerate: the weight
// split across a cluster is non-unique and the complementarity kinks sit
// exactly at the solution, so the semismooth local rate collapses.  Fixing
// an active pattern replaces the kinked conditions with smooth equations
// (zero slack on supporting columns, zero value on active constraints,
// weights summing to one) that plain Newton finishes in a few steps, with
// minimum-norm steps absorbing the rank deficiency that caused the stall.
// Because the root manifold is non-unique, the solved pattern is then
// checked against the conditions it left out and pivoted when one is
// violated.  A pattern that never validates is discarded, never returned.
std::optional<MasterSolution> pattern_polish(const QviProblem& P,
                                             const ColumnPool& pool,
                                             const MasterSolution& guess,
                                             double tol) {
  const Matrix& Y = pool.matrix();
  const Index k = Y.cols();
  const Index m = P.num_coupled();
  if (guess.lambda.size() != k || guess.mu.size() != m) return std::nullopt;

  const ReducedEval at = reduced_eval(P, Y, guess.lambda, guess.mu);
  const double tscale = 1.0 + at.t.lpNorm<Eigen::Infinity>();
  const bool dbg = std::getenv("QVIDW_MASTER_DEBUG") != nullptr;

  // Columns join the pattern when their weight or their dual slack marks
  // them as supporting; constraints when the multiplier or the value marks
  // them as active.
  std::vector<char> in_b(static_cast<std::size_t>(k), 0);
  std::vector<char> in_a(static_cast<std::size_t>(m), 0);
  for (Index j = 0; j < k; ++j) {
    if (guess.lambda[j] > 1e-6 ||
        std::abs(at.t[j] + guess.tau) <= 1e-5 * tscale)
      in_b[static_cast<std::size_t>(j)] = 1;
  }
  for (Index i = 0; i < m; ++i) {
    if (guess.mu[i] > 1e-6 || at.c[i] > -1e-7 * (1.0 + std::abs(at.c[i])))
      in_a[static_cast<std::size_t>(i)] = 1;
  }

  Vector lam_cur = guess.lambda.cwiseMax(0.0);
  Vector mu_cur = guess.mu.cwiseMax(0.0);
  double tau_cur = guess.tau;

  std::set<std::string> visited;
  for (int round = 0; round < 2 * static_cast<int>(k + m) + 8; ++round) {
    std::vector<Index> basic, active;
    for (Index j = 0; j < k; ++j)
      if (in_b[static_cast<std::size_t>(j)]) basic.push_back(j);
    for (Index i = 0; i < m; ++i)
      if (in_a[static_cast<std::size_t>(i)]) active.push_back(i);
    if (basic.empty()) return std::nullopt;

    const Index nb = static_cast<Index>(basic.size());
    const Index na = static_cast<Index>(active.size());
    const Index nu = nb + na + 1;

    const auto expand = [&](const Vector& v) {
      std::pair<Vector, Vector> out{Vector::Zero(k), Vector::Zero(m)};
      for (Index a = 0; a < nb; ++a) out.first[basic[a]] = v[a];
      for (Index a = 0; a < na; ++a) out.second[active[a]] = v[nb + a];
      return out;
    };
    const auto equations = [&](const Vector& v) -> Vector {
      const auto [lambda, mu] = expand(v);
      const ReducedEval e = reduced_eval(P, Y, lambda, mu);
      Vector r(nu);
      for (Index a = 0; a < nb; ++a) r[a] = e.t[basic[a]] + v[nb + na];
      for (Index a = 0; a < na; ++a) r[nb + a] = e.c[active[a]];
      r[nb + na] = lambda.sum() - 1.0;
      return r;
    };

    Vector v(nu);
    for (Index a = 0; a < nb; ++a) v[a] = lam_cur[basic[a]];
    for (Index a = 0; a < na; ++a) v[nb + a] = mu_cur[active[a]];
    v[nb + na] = tau_cur;

    double res_inf = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 8; ++it) {
      const Vector r = equations(v);
      res_inf = r.lpNorm<Eigen::Infinity>();
      if (res_inf <= 1e-13 * tscale) break;
      Matrix J(nu, nu);
      for (Index a = 0; a < nu; ++a) {
        const double h = 1e-5 * (1.0 + std::abs(v[a]));
        Vector vp = v;
        vp[a] += h;
        Vector vm = v;
        vm[a] -= h;
        J.col(a) = (equations(vp) - equations(vm)) / (2.0 * h);
      }
      const Vector step = J.completeOrthogonalDecomposition().solve(-r);
      if (!step.allFinite()) return std::nullopt;
      v += step;
    }
    res_inf = equations(v).lpNorm<Eigen::Infinity>();
    if (res_inf > 1e-10 * tscale) {
      if (dbg)
        std::fprintf(stderr, "  [polish round=%d] nb=%ld na=%ld stuck r=%.3e\n",
                     round, static_cast<long>(nb), static_cast<long>(na),
                     res_inf);
      return std::nullopt;  // pattern system has no reachable root
    }

    const auto [lambda, mu] = expand(v);
    const double tau = v[nb + na];
    const ReducedEval e = reduced_eval(P, Y, lambda, mu);

    // One pivot per round, entering first: the worst excluded violation
    // (negative column slack or positive constraint value) joins the
    // pattern; only when nothing wants in does the most negative weight or
    // multiplier leave.  Single pivots with a visited-pattern check are the
    // standard guard against the cycling that degenerate vertices invite.
    const double eta = std::max(1e-10, 0.01 * tol);
    Index enter_col = -1, enter_con = -1, leave_col = -1, leave_con = -1;
    double worst_slack = -eta * tscale;
    double worst_viol = eta;
    double worst_lam = -eta, worst_mu = -eta;
    for (Index j = 0; j < k; ++j) {
      const std::size_t sj = static_cast<std::size_t>(j);
      const double slack = e.t[j] + tau;
      if (in_b[sj] && lambda[j] < worst_lam) {
        worst_lam = lambda[j];
        leave_col = j;
      } else if (!in_b[sj] && slack < worst_slack) {
        worst_slack = slack;
        enter_col = j;
      }
    }
    for (Index i = 0; i < m; ++i) {
      const std::size_t si = static_cast<std::size_t>(i);
      if (in_a[si] && mu[i] < worst_mu) {
        worst_mu = mu[i];
        leave_con = i;
      } else if (!in_a[si] &&
                 e.c[i] / (1.0 + std::abs(e.c[i])) > worst_viol) {
        worst_viol = e.c[i] / (1.0 + std::abs(e.c[i]));
        enter_con = i;
      }
    }

    bool pivoted = false;
    if (enter_col >= 0 || enter_con >= 0) {
      if (enter_col >= 0 && (enter_con < 0 || -worst_slack >= worst_viol))
        in_b[static_cast<std::size_t>(enter_col)] = 1;
      else
        in_a[static_cast<std::size_t>(enter_con)] = 1;
      pivoted = true;
    } else if (leave_col >= 0 || leave_con >= 0) {
      if (leave_col >= 0 && (leave_con < 0 || worst_lam <= worst_mu))
        in_b[static_cast<std::size_t>(leave_col)] = 0;
      else
        in_a[static_cast<std::size_t>(leave_con)] = 0;
      pivoted = true;
    }

    lam_cur = lambda.cwiseMax(0.0);
    mu_cur = mu.cwiseMax(0.0);
    tau_cur = tau;

    if (!pivoted) {
      MasterSolution cand = package(P, Y, lam_cur, mu_cur, tau);
      cand.kkt_residual = master_kkt_residual(P, pool, cand);
      if (dbg)
        std::fprintf(stderr,
                     "  [polish round=%d] nb=%ld na=%ld r=%.3e kkt=%.3e\n",
                     round, static_cast<long>(nb), static_cast<long>(na),
                     res_inf, cand.kkt_residual);
      if (cand.kkt_residual <= tol) return cand;
      return std::nullopt;
    }
    std::string key(in_b.begin(), in_b.end());
    key.append(in_a.begin(), in_a.end());
    if (!visited.insert(std::move(key)).second) {
      if (dbg)
        std::fprintf(stderr, "  [polish round=%d] cycle, giving up\n", round);
      return std::nullopt;
    }
    if (dbg)
      std::fprintf(stderr,
                   "  [polish round=%d] nb=%ld na=%ld r=%.3e pivot "
                   "enter=(%ld %.2e | %ld %.2e) leave=(%ld %.2e | %ld "
                   "%.2e)\n",
                   round, static_cast<long>(nb), static_cast<long>(na),
                   res_inf, static_cast<long>(enter_col), worst_slack,
                   static_cast<long>(enter_con), worst_viol,
                   static_cast<long>(leave_col), worst_lam,
                   static_cast<long>(leave_con), worst_mu);
  }
  return std::nullopt;
}

// Path-following rescue for degenerate stalls.  Solving the smoothed
// system at decreasing eps keeps every complementarity pair strictly
// interior (a b = eps^2), the way interior-point centering does, so the
// iterate slides past the kink manifold instead of stalling on it; the
// final exact solve then starts inside the basin of a correctly signed
// root.  Validated by the caller's residual, like every other candidate.
std::optional<MasterSolution> smoothing_rescue(const QviProblem& P,
                                               const ColumnPool& pool,
                                               FbSystem& sys, Vector u,
                                               const MasterOptions& opt,
                                               int* total_iters) {
  const Index k = sys.k;
  const Index m = sys.m;
  const auto res = [&sys](const Vector& w) { return sys.residual(w); };
  const auto jac = [&sys](const Vector& w) { return sys.jacobian(w); };

  const ReducedEval e0 = reduced_eval(P, pool.matrix(), u.head(k),
                                      u.segment(k, m));
  const double tscale = 1.0 + e0.t.lpNorm<Eigen::Infinity>();
  const bool dbg = std::getenv("QVIDW_MASTER_DEBUG") != nullptr;
  const double eps_floor = std::max(1e-15, 0.02 * opt.tol);

  // Two passes: warm from the stalled iterate, then from the barycenter.
  // A stalled point can sit in the wrong basin of the smoothed system, and
  // the path from a bland interior start is the textbook-reliable one.
  for (int pass = 0; pass < 2; ++pass) {
    if (pass == 1) {
      u.head(k).setConstant(1.0 / static_cast<double>(k));
      u.segment(k, m).setOnes();
      const ReducedEval en = reduced_eval(P, pool.matrix(), u.head(k),
                                          u.segment(k, m));
      u[k + m] = -en.t.mean();
    }
    // Adaptive continuation: a failed level is rolled back and retried
    // with a gentler shrink, because near a degenerate vertex the path
    // curves sharply and a fixed factor overshoots the Newton basin.
    double eps_good = (pass == 0 ? 1e-3 : 1e-1) * tscale;
    double shrink = 1e-2;
    {
      sys.eps = eps_good;
      detail::NewtonOptions nopt;
      nopt.tol = std::max(1e-4 * eps_good, 0.05 * opt.tol);
      nopt.max_iter = 120;
      const detail::NewtonOutcome out =
          detail::lm_semismooth_newton(res, jac, u, nopt);
      *total_iters += out.iterations;
      u = out.u;
      if (dbg)
        std::fprintf(stderr,
                     "  [smooth pass=%d] eps=%.1e res=%.3e iters=%d\n", pass,
                     eps_good, out.residual_inf, out.iterations);
    }
    for (int level = 0; level < 40; ++level) {
      const double eps =
          eps_good <= eps_floor ? 0.0
                                : std::max(eps_good * shrink, eps_floor);
      sys.eps = eps;
      detail::NewtonOptions nopt;
      nopt.tol = std::max(1e-4 * eps, 0.05 * opt.tol);
      nopt.max_iter = 120;
      const detail::NewtonOutcome out =
          detail::lm_semismooth_newton(res, jac, u, nopt);
      *total_iters += out.iterations;
      if (dbg)
        std::fprintf(stderr,
                     "  [smooth pass=%d level=%d] eps=%.1e res=%.3e "
                     "iters=%d shrink=%.2f\n",
                     pass, level, eps, out.residual_inf, out.iterations,
                     shrink);
      if (out.converged) {
        u = out.u;
        if (eps == 0.0) break;
        eps_good = eps;
        shrink = std::max(shrink * shrink, 1e-2);
      } else {
        shrink = std::sqrt(shrink);
        if (shrink > 0.7) break;
      }
    }
    sys.eps = 0.0;

    MasterSolution sol = package(P, pool.matrix(), u.head(k).cwiseMax(0.0),
                                 u.segment(k, m).cwiseMax(0.0), u[k + m]);
    sol.kkt_residual = master_kkt_residual(P, pool, sol);
    if (dbg)
      std::fprintf(stderr, "  [smooth pass=%d done] kkt=%.3e\n", pass,
                   sol.kkt_residual);
    if (sol.kkt_residual <= opt.tol) return sol;
    // The path endpoint has correct signs everywhere, which is exactly
    // what the pattern finish needs.
    if (auto fixed = pattern_polish(P, pool, sol, opt.tol)) return fixed;
  }
  return std::nullopt;
}

// Sequential fixed point used when Newton stalls on the quasi-variational
// coupling: freeze the constraint parameter, solve the frozen problem over
// the hull through the same reformulation, move the parameter to the new
// point, repeat.  Each round is a bounded Newton run, so the whole fallback
// stays a small multiple of one master attempt.
MasterSolution sequential_fallback(const QviProblem& P, const ColumnPool& pool,
                                   Vector u, const MasterOptions& opt,
                                   int* iterations) {
  const Matrix& Y = pool.matrix();
  const Index k = Y.cols();
  const Index m = P.num_coupled();

  Vector x_bar = Y * u.head(k);
  for (int round = 0; round < 20; ++round) {
    FbSystem frozen{P, Y, k, m, &x_bar};
    const auto res = [&frozen](const Vector& w) { return frozen.residual(w); };
    const auto jac = [&frozen](const Vector& w) { return frozen.jacobian(w); };
    detail::NewtonOptions nopt;
    nopt.tol = 0.1 * opt.tol;
    nopt.max_iter = 150;
    const detail::NewtonOutcome out =
        detail::lm_semismooth_newton(res, jac, u, nopt);
    *iterations += out.iterations;
    if (!out.u.allFinite()) break;
    u = out.u;
    const Vector x_new = Y * u.head(k);
    const double move = (x_new - x_bar).lpNorm<Eigen::Infinity>();
    x_bar = x_new;
    if (out.converged && move <= 0.1 * opt.tol) break;
  }

  Vector lambda = u.head(k).cwiseMax(0.0);
  const double sum = lambda.sum();
  if (sum > 0.0)
    lambda /= sum;
  else
    lambda.setConstant(1.0 / static_cast<double>(k));
  const Vector mu = u.segment(k, m).cwiseMax(0.0);
  return package(P, Y, lambda, mu, u[k + m]);
}

}  // namespace

MasterSolution solve_master(const QviProblem& problem, const ColumnPool& pool,
                            const std::optional<MasterSolution>& warm,
                            const MasterOptions& options) {
  problem.check_consistency();
  const Matrix& Y = pool.matrix();
  const Index k = Y.cols();
  const Index m = problem.num_coupled();
  if (k == 0)
    throw std::invalid_argument("solve_master: column pool is empty");

  // Single column: the hull is a point, so only the coupled complementarity
  // needs an answer.  Feasibility of the column against itself is the one
  // thing that can fail, and it has to fail loudly.
  if (k == 1) {
    const Vector y1 = Y.col(0);
    Vector mu = Vector::Zero(m);
    if (m > 0) {
      const Vector c = problem.coupled.eval(y1, y1);
      for (Index i = 0; i < m; ++i) {
        if (c[i] > std::max(options.tol, 1e-10)) {
          std::ostringstream msg;
          msg << "master infeasible: coupled constraint " << i
              << " violated by the initial column (g = " << c[i] << ")";
          throw MasterInfeasibleError(msg.str());
        }
      }
    }
    MasterSolution sol = package(problem, Y, Vector::Ones(1), mu, 0.0);
    sol.tau = -sol.z_m.dot(y1);
    sol.kkt_residual = master_kkt_residual(problem, pool, sol);
    sol.inner_iterations = 0;
    return sol;
  }

  FbSystem sys{problem, Y, k, m};
  const auto residual = [&sys](const Vector& u) { return sys.residual(u); };
  const auto jacobian = [&sys](const Vector& u) { return sys.jacobian(u); };

  // Start from the previous outer iteration when shapes line up (the pool
  // grows by one column between calls), otherwise from the barycenter.
  Vector u0 = Vector::Zero(k + m + 1);
  if (warm && warm->mu.size() == m &&
      (warm->lambda.size() == k || warm->lambda.size() == k - 1)) {
    Vector lam = Vector::Zero(k);
    lam.head(warm->lambda.size()) = warm->lambda;
    u0.head(k) = ConvexSet::simplex(k).project(lam);
    u0.segment(k, m) = warm->mu.cwiseMax(0.0);
    u0[k + m] = warm->tau;
  } else {
    u0.head(k).setConstant(1.0 / static_cast<double>(k));
    const ReducedEval e0 = reduced_eval(problem, Y, u0.head(k), u0.segment(k, m));
    u0[k + m] = -u0.head(k).dot(e0.t);
  }

  Rng rng(options.seed * 1000003u + static_cast<std::uint64_t>(k));
  MasterSolution best;
  double best_kkt = std::numeric_limits<double>::infinity();
  int total_iters = 0;

  const bool dbg = std::getenv("QVIDW_MASTER_DEBUG") != nullptr;
  if (dbg && k >= 2) {
    double dmin = std::numeric_limits<double>::infinity();
    for (Index a = 0; a < k; ++a)
      for (Index b2 = a + 1; b2 < k; ++b2)
        dmin = std::min(dmin,
                        (Y.col(a) - Y.col(b2)).lpNorm<Eigen::Infinity>());
    std::fprintf(stderr, "[master k=%ld] min col dist %.3e\n",
                 static_cast<long>(k), dmin);
  }
  double fb_tol = 0.1 * options.tol;
  Vector u_start = u0;
  for (int attempt = 0; attempt <= options.max_restarts; ++attempt) {
    detail::NewtonOptions nopt;
    nopt.tol = fb_tol;
    nopt.max_iter = options.max_newton_iterations;
    const detail::NewtonOutcome out =
        detail::lm_semismooth_newton(residual, jacobian, u_start, nopt);
    total_iters += out.iterations;

    MasterSolution sol = package(problem, Y, out.u.head(k),
                                 out.u.segment(k, m), out.u[k + m]);
    sol.inner_iterations = total_iters;
    const bool mu_sane =
        m == 0 || sol.mu.lpNorm<Eigen::Infinity>() <= options.mu_cap;
    sol.kkt_residual = master_kkt_residual(problem, pool, sol);
    if (dbg)
      std::fprintf(stderr,
                   "[master k=%ld attempt=%d] newton conv=%d iters=%d "
                   "fb_res=%.3e kkt=%.3e fb_tol=%.1e\n",
                   static_cast<long>(k), attempt, out.converged ? 1 : 0,
                   out.iterations, out.residual_inf, sol.kkt_residual, fb_tol);
    if (dbg && !out.converged && attempt == 0) {
      const Vector rr = sys.residual(out.u);
      const ReducedEval ee =
          reduced_eval(problem, Y, out.u.head(k), out.u.segment(k, m));
      std::vector<Index> order(static_cast<std::size_t>(rr.size()));
      for (Index i = 0; i < rr.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](Index a, Index b2) {
        return std::abs(rr[a]) > std::abs(rr[b2]);
      });
      for (int i = 0; i < 6 && i < static_cast<int>(order.size()); ++i) {
        const Index row = order[i];
        double aa = 0, bb = 0;
        const char* kind = "sum";
        if (row < k) {
          aa = out.u[row];
          bb = ee.t[row] + out.u[k + m];
          kind = "lam";
        } else if (row < k + m) {
          aa = out.u[row];
          bb = -ee.c[row - k];
          kind = "mu";
        }
        std::fprintf(stderr,
                     "    stall row %ld %s |r|=%.3e a=%.6e b=%.6e\n",
                     static_cast<long>(row), kind, std::abs(rr[row]), aa, bb);
      }
      const Eigen::JacobiSVD<Matrix> svd(sys.jacobian(out.u));
      const Vector sv = svd.singularValues();
      std::fprintf(stderr, "    stall sv: max=%.3e min6:", sv[0]);
      for (Index i = std::max<Index>(0, sv.size() - 6); i < sv.size(); ++i)
        std::fprintf(stderr, " %.2e", sv[i]);
      std::fprintf(stderr, "\n");
      if (const char* dump = std::getenv("QVIDW_MASTER_DUMP")) {
        std::FILE* f = std::fopen(dump, "w");
        if (f) {
          std::fprintf(f, "%ld %ld %ld\n", static_cast<long>(Y.rows()),
                       static_cast<long>(k), static_cast<long>(m));
          for (Index r = 0; r < Y.rows(); ++r)
            for (Index c2 = 0; c2 < k; ++c2)
              std::fprintf(f, "%.17e\n", Y(r, c2));
          for (Index i = 0; i < k + m + 1; ++i)
            std::fprintf(f, "%.17e\n", out.u[i]);
          std::fclose(f);
        }
      }
    }
    if (mu_sane && sol.kkt_residual < best_kkt) {
      best_kkt = sol.kkt_residual;
      best = sol;
    }
    if (mu_sane && sol.kkt_residual <= options.tol) return sol;

    // Stalls near the solution are usually degeneracy, not distance; the
    // pattern finish costs a handful of small Newton steps, so try it
    // before spending a restart.  When the stalled point's own pattern does
    // not validate, the warm start's does surprisingly often: its support
    // is the previous pool's solved support plus one candidate column.
    if (mu_sane) {
      if (auto fin = pattern_polish(problem, pool, sol, options.tol)) {
        fin->inner_iterations = total_iters;
        return *fin;
      }
      if (attempt == 0) {
        MasterSolution wsol = package(problem, Y, u0.head(k),
                                      u0.segment(k, m), u0[k + m]);
        if (auto fin = pattern_polish(problem, pool, wsol, options.tol)) {
          fin->inner_iterations = total_iters;
          return *fin;
        }
        if (auto fin =
                smoothing_rescue(problem, pool, sys, u0, options,
                                 &total_iters)) {
          fin->inner_iterations = total_iters;
          return *fin;
        }
      }
    }

    if (out.converged && sol.kkt_residual > options.tol && fb_tol > 1e-14) {
      // The reformulation converged but the natural-map check disagrees by
      // a constant factor; tighten rather than restart.
      fb_tol *= 0.1;
      u_start = out.u;
      continue;
    }
    // Perturbed restart around the best point seen.
    Vector lam = best_kkt < std::numeric_limits<double>::infinity()
                     ? best.lambda
                     : u0.head(k);
    Vector mu_b = best_kkt < std::numeric_limits<double>::infinity()
                      ? best.mu
                      : Vector::Zero(m);
    for (Index j = 0; j < k; ++j) lam[j] += 0.25 * rng.uniform(-1.0, 1.0);
    u_start.head(k) = ConvexSet::simplex(k).project(lam);
    for (Index i = 0; i < m; ++i)
      u_start[k + i] =
          std::max(0.0, mu_b[i] * (1.0 + 0.3 * rng.uniform(-1.0, 1.0)) +
                            0.1 * rng.uniform());
    u_start[k + m] = best.tau;
  }

  // Newton is out of road; try the sequential fixed point.
  try {
    Vector u_init = u0;
    if (best_kkt < std::numeric_limits<double>::infinity()) {
      u_init.head(k) = best.lambda;
      u_init.segment(k, m) = best.mu;
      u_init[k + m] = best.tau;
    }
    MasterSolution sol =
        sequential_fallback(problem, pool, u_init, options, &total_iters);
    sol.inner_iterations = total_iters;
    sol.kkt_residual = master_kkt_residual(problem, pool, sol);
    if (sol.kkt_residual <= options.tol) return sol;
    if (auto fin = pattern_polish(problem, pool, sol, options.tol)) {
      fin->inner_iterations = total_iters;
      return *fin;
    }
    if (sol.kkt_residual < best_kkt) {
      best_kkt = sol.kkt_residual;
      best = sol;
    }
  } catch (const std::exception&) {
    // fall through to the error below with the Newton candidate
  }

  std::ostringstream msg;
  msg << "master solve did not reach tolerance " << options.tol
      << " (best KKT residual " << best_kkt << " after "
      << options.max_restarts << " restarts and fallback)";
  best.inner_iterations = total_iters;
  throw MasterSolveError(msg.str(), best);
}

MasterSolution solve_master(const QviProblem& problem, const ColumnPool& pool,
                            const std::optional<MasterSolution>& warm,
                            double tol) {
  MasterOptions opt;
  opt.tol = tol;
  return solve_master(problem, pool, warm, opt);
}

}  // namespace qvidw
