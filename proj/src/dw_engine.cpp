#include "qvidw/dw_engine.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "qvidw/rng.hpp"

namespace qvidw {

std::string to_string(DwStatus status) {
  switch (status) {
    case DwStatus::Converged:
      return "converged";
    case DwStatus::MaxOuter:
      return "max_outer";
    case DwStatus::MuUnbounded:
      return "mu_unbounded";
    case DwStatus::InnerFailure:
      return "inner_failure";
  }
  return "unknown";
}

void DwConfig::validate(Index num_coupled) const {
  if (!(gap_tol > 0.0))
    throw std::invalid_argument("DwConfig: gap_tol must be positive");
  if (!(inner_tol > 0.0))
    throw std::invalid_argument("DwConfig: inner_tol must be positive");
  if (!(inner_tol < gap_tol))
    throw std::invalid_argument(
        "DwConfig: inner_tol must be below gap_tol so the inner solves "
        "out-resolve the stopping test");
  if (max_outer < 1)
    throw std::invalid_argument("DwConfig: max_outer must be at least 1");
  if (inner_max_iter < 1)
    throw std::invalid_argument("DwConfig: inner_max_iter must be positive");
  if (!(mu_max > 0.0))
    throw std::invalid_argument("DwConfig: mu_max must be positive");
  if (omega.size() != 1 && omega.size() != num_coupled)
    throw std::invalid_argument(
        "DwConfig: omega must be scalar or one entry per coupled constraint");
  for (Index i = 0; i < omega.size(); ++i)
    if (omega[i] < 0.0 || omega[i] > 1.0)
      throw std::invalid_argument("DwConfig: omega entries must be in [0,1]");
  if (q_mode.kind == QMode::Kind::Fixed && q_mode.value < 0.0)
    throw std::invalid_argument("DwConfig: fixed q must be nonnegative");
  if (q_mode.kind == QMode::Kind::Auto && q_mode.value < 0.0)
    throw std::invalid_argument("DwConfig: auto q target must be nonnegative");
}

namespace {

Vector broadcast_omega(const Vector& omega, Index m) {
  if (m == 0) return Vector();
  if (omega.size() == m) return omega;
  if (omega.size() == 1) return Vector::Constant(m, omega[0]);
  throw std::invalid_argument("omega has neither 1 nor m entries");
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::function<Matrix(const Vector&)> build_gamma(const QviProblem& problem,
                                                 const Vector& x_k,
                                                 const Vector& omega_in) {
  const Index m = problem.num_coupled();
  const Vector omega = broadcast_omega(omega_in, m);
  if (m == 0) {
    const Index n = problem.dim();
    return [n](const Vector&) { return Matrix(n, 0); };
  }
  const Matrix G_k = problem.coupled_grad_at(x_k);
  const bool all_frozen = (omega.array() >= 1.0).all();
  if (all_frozen) {
    return [G_k](const Vector&) { return G_k; };
  }
  const Vector x = x_k;
  const auto grad_y = problem.coupled.grad_y;
  return [G_k, omega, x, grad_y, m](const Vector& y) {
    Matrix G = grad_y(y, x);
    for (Index i = 0; i < m; ++i)
      G.col(i) = omega[i] * G_k.col(i) + (1.0 - omega[i]) * G.col(i);
    return G;
  };
}

std::function<Vector(const Vector&)> build_fhat(const QviProblem& problem,
                                                const MasterSolution& master,
                                                FhatMode mode) {
  switch (mode) {
    case FhatMode::Constant: {
      const Vector z = master.z_m;
      return [z](const Vector&) { return z; };
    }
    case FhatMode::FirstOrder: {
      Matrix J;
      if (problem.op.affine)
        J = problem.op.affine->A;
      else if (problem.op.jacobian)
        J = problem.op.jacobian(master.x);
      else
        throw std::invalid_argument(
            "build_fhat: first-order mode needs a Jacobian or affine form");
      const Vector x = master.x;
      const Vector z = master.z_m;
      return [J, x, z](const Vector& y) { return z + J * (y - x); };
    }
    case FhatMode::Exact:
      return problem.op.eval;
  }
  throw std::logic_error("build_fhat: unreachable");
}

SubproblemOperator build_subproblem(const QviProblem& problem,
                                    const MasterSolution& master,
                                    const Vector& omega_in, FhatMode mode,
                                    double q) {
  const Index n = problem.dim();
  const Index m = problem.num_coupled();
  const Vector omega = broadcast_omega(omega_in, m);

  SubproblemOperator sub;
  sub.x_k = master.x;
  sub.mu = master.mu;
  sub.q = q;

  // Affine pieces, when they exist exactly.
  std::optional<ViOperator::Affine> fhat_affine;
  switch (mode) {
    case FhatMode::Constant:
      fhat_affine = ViOperator::Affine{Matrix::Zero(n, n), master.z_m};
      break;
    case FhatMode::FirstOrder: {
      Matrix J;
      if (problem.op.affine)
        J = problem.op.affine->A;
      else if (problem.op.jacobian)
        J = problem.op.jacobian(master.x);
      else
        break;
      fhat_affine = ViOperator::Affine{J, master.z_m - J * master.x};
      break;
    }
    case FhatMode::Exact:
      if (problem.op.affine)
        fhat_affine =
            ViOperator::Affine{problem.op.affine->A, problem.op.affine->b};
      break;
  }

  std::optional<ViOperator::Affine> gamma_affine;
  if (m == 0) {
    gamma_affine = ViOperator::Affine{Matrix::Zero(n, n), Vector::Zero(n)};
  } else {
    const Matrix G_k = problem.coupled_grad_at(master.x);
    const bool all_frozen = (omega.array() >= 1.0).all();
    if (all_frozen) {
      gamma_affine =
          ViOperator::Affine{Matrix::Zero(n, n), G_k * master.mu};
    } else if (problem.coupled.grad_y_affine) {
      const auto& aff = *problem.coupled.grad_y_affine;
      Matrix A = Matrix::Zero(n, n);
      Vector b = Vector::Zero(n);
      const Matrix off = aff.offset(master.x);
      for (Index i = 0; i < m; ++i) {
        const double mi = master.mu[i];
        b += mi * off.col(i);
        if (!aff.curvature.empty()) {
          A += mi * (1.0 - omega[i]) * aff.curvature[i];
          b += mi * omega[i] * (aff.curvature[i] * master.x);
        }
      }
      gamma_affine = ViOperator::Affine{std::move(A), std::move(b)};
    }
  }

  if (fhat_affine && gamma_affine) {
    ViOperator::Affine total;
    total.A = fhat_affine->A + gamma_affine->A;
    total.b = fhat_affine->b + gamma_affine->b;
    if (q != 0.0) {
      total.A.diagonal().array() += q;
      total.b -= q * master.x;
    }
    sub.affine = total;
    const Matrix A = sub.affine->A;
    const Vector b = sub.affine->b;
    sub.eval = [A, b](const Vector& y) -> Vector { return A * y + b; };
    return sub;
  }

  const auto fhat = build_fhat(problem, master, mode);
  const auto gamma = build_gamma(problem, master.x, omega);
  const Vector mu = master.mu;
  const Vector x_k = master.x;
  sub.eval = [fhat, gamma, mu, x_k, q, m](const Vector& y) -> Vector {
    Vector v = fhat(y);
    if (m > 0) v += gamma(y) * mu;
    if (q != 0.0) v += q * (y - x_k);
    return v;
  };
  return sub;
}

namespace {

double min_eig_sym(const Matrix& A) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (A + A.transpose()),
                                           Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double blockwise_min_eig(const Matrix& J, const std::vector<Index>& blocks) {
  double worst = std::numeric_limits<double>::infinity();
  Index off = 0;
  for (Index sz : blocks) {
    worst = std::min(worst, min_eig_sym(J.block(off, off, sz, sz)));
    off += sz;
  }
  return worst;
}

}  // namespace

double auto_regularization(const QviProblem& problem, FhatMode mode,
                           const Vector& omega, bool jacobi, double c_target) {
  (void)omega;  // the multiplier term is monotone for every omega in [0,1]
  const Index n = problem.dim();
  double c_hat = 0.0;

  if (mode == FhatMode::Constant) {
    c_hat = 0.0;
  } else if (problem.op.affine) {
    const Matrix& A = problem.op.affine->A;
    c_hat = jacobi ? blockwise_min_eig(A, problem.jacobi_blocks)
                   : min_eig_sym(A);
  } else {
    // Sampled estimate; exactness is out of reach without structure, so
    // lean pessimistic by taking the worst sample.
    Rng rng(1234577);
    c_hat = std::numeric_limits<double>::infinity();
    for (int s = 0; s < 5; ++s) {
      Vector x(n);
      for (Index i = 0; i < n; ++i)
        x[i] = s == 0 ? 0.0 : rng.uniform(-2.0, 2.0);
      Matrix J;
      if (problem.op.jacobian) {
        J = problem.op.jacobian(x);
      } else {
        J.resize(n, n);
        const Vector f0 = problem.op.eval(x);
        const double h = 1e-6;
        for (Index j = 0; j < n; ++j) {
          Vector xp = x;
          xp[j] += h;
          J.col(j) = (problem.op.eval(xp) - f0) / h;
        }
      }
      c_hat = std::min(c_hat, jacobi
                                  ? blockwise_min_eig(J, problem.jacobi_blocks)
                                  : min_eig_sym(J));
    }
  }
  return std::max(0.0, c_target - c_hat);
}

double gap(const Vector& y, const MasterSolution& master,
           const Matrix& gamma_at_xk) {
  Vector zeta = master.z_m;
  if (master.mu.size() > 0) zeta += gamma_at_xk * master.mu;
  return zeta.dot(y - master.x);
}

std::vector<ViInstance> jacobi_split(const QviProblem& problem,
                                     const SubproblemOperator& subop) {
  const Vector& x_k = subop.x_k;
  std::vector<ViInstance> out;
  out.reserve(problem.jacobi_blocks.size());

  Index off = 0;
  std::size_t set_first = 0;
  for (Index sz : problem.jacobi_blocks) {
    // Identify the run of easy-set blocks covered by this partition block;
    // consistency was checked by the problem already.
    std::size_t set_last = set_first;
    Index covered = 0;
    while (covered < sz) {
      covered += problem.easy_set.block(set_last).dim();
      ++set_last;
    }

    ViInstance inst;
    inst.set = problem.easy_set.slice(set_first, set_last);
    if (subop.affine) {
      const Matrix& A = subop.affine->A;
      ViOperator::Affine blk;
      blk.A = A.block(off, off, sz, sz);
      const Vector full = A * x_k + subop.affine->b;
      blk.b = full.segment(off, sz) - blk.A * x_k.segment(off, sz);
      inst.op.affine = std::move(blk);
      const Matrix Ab = inst.op.affine->A;
      const Vector bb = inst.op.affine->b;
      inst.op.eval = [Ab, bb](const Vector& y) -> Vector {
        return Ab * y + bb;
      };
    } else {
      const auto eval = subop.eval;
      const Vector base = x_k;
      const Index o = off, s = sz;
      inst.op.eval = [eval, base, o, s](const Vector& y_a) -> Vector {
        Vector z = base;
        z.segment(o, s) = y_a;
        return eval(z).segment(o, s);
      };
    }
    out.push_back(std::move(inst));
    off += sz;
    set_first = set_last;
  }
  return out;
}

DwReport run_dw(const QviProblem& problem, const Vector& y1,
                const DwConfig& config) {
  problem.check_consistency();
  config.validate(problem.num_coupled());
  const Index n = problem.dim();
  const Index m = problem.num_coupled();
  if (y1.size() != n)
    throw std::invalid_argument("run_dw: initial point dimension mismatch");

  const double feas_tol = std::max(config.inner_tol, 1e-10);
  if (!problem.easy_set.contains(y1, feas_tol))
    throw std::invalid_argument(
        "run_dw: initial point infeasible: outside the easy set");
  if (m > 0) {
    const Vector g1 = problem.coupled.eval(y1, y1);
    for (Index i = 0; i < m; ++i)
      if (g1[i] > feas_tol) {
        std::ostringstream msg;
        msg << "run_dw: initial point infeasible: coupled constraint " << i
            << " is positive at itself (g = " << g1[i] << ")";
        throw std::invalid_argument(msg.str());
      }
  }

  const Vector omega = broadcast_omega(config.omega, m);
  double q = 0.0;
  switch (config.q_mode.kind) {
    case QMode::Kind::None:
      break;
    case QMode::Kind::Fixed:
      q = config.q_mode.value;
      break;
    case QMode::Kind::Auto:
      q = auto_regularization(problem, config.fhat_mode, omega, config.jacobi,
                              config.q_mode.value);
      break;
  }

  DwReport report;
  const double t_begin = now_seconds();
  ColumnPool pool(problem.easy_set, std::max(feas_tol * 10.0, 1e-9));
  pool.try_add(y1);

  std::optional<MasterSolution> warm;
  Vector y_prev = y1;
  MasterSolution master;
  bool have_master = false;

  for (int k = 1; k <= config.max_outer; ++k) {
    IterationRecord rec;
    rec.k = k;

    MasterOptions mopt;
    mopt.tol = config.inner_tol;
    mopt.seed = config.seed + static_cast<std::uint64_t>(k);
    mopt.mu_cap = config.mu_max * 10.0;
    const double t0 = now_seconds();
    try {
      master = solve_master(problem, pool, warm, mopt);
      have_master = true;
    } catch (const MasterSolveError& err) {
      report.status = DwStatus::InnerFailure;
      report.message = err.what();
      master = err.best_found;
      have_master = master.x.size() == n;
      break;
    }
    rec.master_time = now_seconds() - t0;
    rec.master_residual = master.kkt_residual;
    rec.mu_norm_inf =
        m > 0 ? master.mu.lpNorm<Eigen::Infinity>() : 0.0;

    const Matrix G_k = problem.coupled_grad_at(master.x);
    Vector zeta = master.z_m;
    if (m > 0) zeta += G_k * master.mu;
    rec.zeta_norm_inf = zeta.lpNorm<Eigen::Infinity>();

    const SubproblemOperator subop =
        build_subproblem(problem, master, omega, config.fhat_mode, q);

    const double t1 = now_seconds();
    Vector y_next(n);
    double sub_res = 0.0;
    bool sub_ok = true;
    std::string sub_msg;
    try {
      if (config.jacobi && problem.jacobi_blocks.size() > 1) {
        const std::vector<ViInstance> parts = jacobi_split(problem, subop);
        const auto solve_block = [&](std::size_t a, Index off,
                                     Index sz) -> ViResult {
          return solve_vi(parts[a], y_prev.segment(off, sz),
                          config.inner_tol, config.inner_max_iter);
        };
        std::vector<ViResult> results(parts.size());
        if (config.jacobi_parallel) {
          std::vector<std::future<ViResult>> futs;
          Index off = 0;
          for (std::size_t a = 0; a < parts.size(); ++a) {
            const Index sz = problem.jacobi_blocks[a];
            futs.push_back(std::async(std::launch::async, solve_block, a,
                                      off, sz));
            off += sz;
          }
          for (std::size_t a = 0; a < parts.size(); ++a)
            results[a] = futs[a].get();
        } else {
          Index off = 0;
          for (std::size_t a = 0; a < parts.size(); ++a) {
            const Index sz = problem.jacobi_blocks[a];
            results[a] = solve_block(a, off, sz);
            off += sz;
          }
        }
        Index off = 0;
        for (std::size_t a = 0; a < parts.size(); ++a) {
          const Index sz = problem.jacobi_blocks[a];
          if (!results[a].converged) {
            sub_ok = false;
            std::ostringstream msg;
            msg << "subproblem block " << a << " stopped at residual "
                << results[a].natural_residual;
            sub_msg = msg.str();
          }
          y_next.segment(off, sz) = results[a].y;
          sub_res = std::max(sub_res, results[a].natural_residual);
          off += sz;
        }
      } else {
        ViInstance inst;
        inst.op.eval = subop.eval;
        inst.op.affine = subop.affine;
        inst.set = problem.easy_set;
        const ViResult r =
            solve_vi(inst, y_prev, config.inner_tol, config.inner_max_iter);
        if (!r.converged) {
          sub_ok = false;
          std::ostringstream msg;
          msg << "subproblem stopped at residual " << r.natural_residual;
          sub_msg = msg.str();
        }
        y_next = r.y;
        sub_res = r.natural_residual;
      }
    } catch (const std::exception& err) {
      sub_ok = false;
      sub_msg = err.what();
      y_next = master.x;
    }
    rec.subproblem_time = now_seconds() - t1;
    rec.subproblem_residual = sub_res;

    if (!sub_ok) {
      report.status = DwStatus::InnerFailure;
      report.message = sub_msg;
      report.records.push_back(rec);
      if (config.on_iteration) config.on_iteration(rec);
      break;
    }

    rec.gap_value = zeta.dot(y_next - master.x);
    rec.step_norm = (y_next - master.x).norm();
    double pool_gap = std::numeric_limits<double>::infinity();
    for (int j = 0; j < pool.size(); ++j)
      pool_gap = std::min(pool_gap, zeta.dot(pool.column(j) - master.x));
    rec.min_pool_gap = pool_gap;

    report.records.push_back(rec);
    if (config.on_iteration) config.on_iteration(rec);

    const double threshold =
        config.gap_tol * (1.0 + rec.zeta_norm_inf);
    if (rec.gap_value >= -threshold) {
      report.status = DwStatus::Converged;
      break;
    }
    if (rec.mu_norm_inf > config.mu_max) {
      report.status = DwStatus::MuUnbounded;
      std::ostringstream msg;
      msg << "multiplier norm " << rec.mu_norm_inf << " exceeded "
          << config.mu_max;
      report.message = msg.str();
      break;
    }
    if (!pool.try_add(y_next)) {
      report.status = DwStatus::InnerFailure;
      report.message =
          "subproblem returned an existing column while the gap is still "
          "negative; inner tolerances are too loose";
      break;
    }
    warm = master;
    y_prev = y_next;
  }

  if (have_master) {
    report.solution.x = master.x;
    report.solution.multipliers = master.mu;
    report.solution.operator_value = master.z_m;
    report.solution.kkt_residual =
        qvi_kkt_residual(problem, master.x, master.mu);
  } else {
    report.solution.x = y1;
    report.solution.multipliers = Vector::Zero(m);
    report.solution.operator_value = problem.op.eval(y1);
    report.solution.kkt_residual =
        qvi_kkt_residual(problem, y1, report.solution.multipliers);
  }
  report.total_time = now_seconds() - t_begin;
  return report;
}

}  // namespace qvidw
