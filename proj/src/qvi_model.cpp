#include "qvidw/qvi_model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "qvidw/rng.hpp"

namespace qvidw {

Vector QviProblem::coupled_values(const Vector& y, const Vector& x) const {
  if (coupled.count == 0) return Vector();
  return coupled.eval(y, x);
}

Matrix QviProblem::coupled_grad_at(const Vector& x) const {
  if (coupled.count == 0) return Matrix(dim(), 0);
  return coupled.grad_y(x, x);
}

void QviProblem::check_consistency() const {
  if (op.dim <= 0) throw std::invalid_argument(name + ": operator dim not set");
  if (!op.eval) throw std::invalid_argument(name + ": operator eval missing");
  if (easy_set.dim() != op.dim) {
    std::ostringstream msg;
    msg << name << ": easy set dimension " << easy_set.dim()
        << " does not match operator dimension " << op.dim;
    throw std::invalid_argument(msg.str());
  }
  if (coupled.count < 0)
    throw std::invalid_argument(name + ": negative constraint count");
  if (coupled.count > 0 && (!coupled.eval || !coupled.grad_y))
    throw std::invalid_argument(name + ": coupled closures missing");
  if (coupled.grad_y_affine) {
    const auto& aff = *coupled.grad_y_affine;
    if (!aff.curvature.empty() &&
        aff.curvature.size() != static_cast<std::size_t>(coupled.count))
      throw std::invalid_argument(name + ": grad_y_affine curvature count");
    if (!aff.offset)
      throw std::invalid_argument(name + ": grad_y_affine offset missing");
  }

  if (jacobi_blocks.empty())
    throw std::invalid_argument(name + ": jacobi_blocks empty");
  Index total = 0;
  std::size_t set_block = 0;
  Index set_covered = 0;
  for (Index sz : jacobi_blocks) {
    if (sz <= 0) throw std::invalid_argument(name + ": empty jacobi block");
    total += sz;
    // Walk easy-set blocks until this partition block is covered; the
    // boundary has to land exactly on a set-block boundary.
    Index need = sz;
    while (need > 0) {
      if (set_block >= easy_set.block_count())
        throw std::invalid_argument(name + ": jacobi blocks overrun easy set");
      const Index avail = easy_set.block(set_block).dim() - set_covered;
      if (avail <= need) {
        need -= avail;
        set_covered = 0;
        ++set_block;
      } else {
        throw std::invalid_argument(
            name + ": jacobi block boundary splits an easy-set block");
      }
    }
  }
  if (total != op.dim)
    throw std::invalid_argument(name + ": jacobi blocks do not sum to dim");

  if (op.affine) {
    if (op.affine->A.rows() != op.dim || op.affine->A.cols() != op.dim ||
        op.affine->b.size() != op.dim)
      throw std::invalid_argument(name + ": affine form has wrong shape");
  }
}

double qvi_kkt_residual(const QviProblem& problem, const Vector& x,
                        const Vector& mu) {
  if (x.size() != problem.dim())
    throw std::invalid_argument("qvi_kkt_residual: x dimension mismatch");
  if (mu.size() != problem.num_coupled())
    throw std::invalid_argument("qvi_kkt_residual: mu dimension mismatch");

  Vector w = problem.op.eval(x);
  if (problem.num_coupled() > 0) w += problem.coupled_grad_at(x) * mu;
  const Vector proj = problem.easy_set.project(x - w);
  double r = (x - proj).lpNorm<Eigen::Infinity>();

  if (problem.num_coupled() > 0) {
    const Vector g = problem.coupled.eval(x, x);
    for (Index i = 0; i < g.size(); ++i) {
      r = std::max(r, std::max(0.0, g[i]));
      r = std::max(r, std::max(0.0, -mu[i]));
      r = std::max(r, std::abs(mu[i] * g[i]));
    }
  }
  return r;
}

bool ValidationReport::all_passed() const {
  for (const CheckResult& c : checks)
    if (!c.passed) return false;
  return true;
}

namespace {

Vector sample_point(Rng& rng, Index n, double scale) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

ValidationReport validate(const QviProblem& problem, int samples,
                          std::uint64_t seed) {
  problem.check_consistency();
  ValidationReport report;
  Rng rng(seed);
  const Index n = problem.dim();
  const Index m = problem.num_coupled();

  if (problem.op.affine) {
    CheckResult c{"operator affine form matches eval", true, 0.0};
    for (int s = 0; s < samples; ++s) {
      const Vector x = sample_point(rng, n, 5.0);
      const Vector lhs = problem.op.eval(x);
      const Vector rhs = problem.op.affine->A * x + problem.op.affine->b;
      const double dev = (lhs - rhs).lpNorm<Eigen::Infinity>() /
                         (1.0 + rhs.lpNorm<Eigen::Infinity>());
      c.worst_deviation = std::max(c.worst_deviation, dev);
    }
    c.passed = c.worst_deviation <= 1e-12;
    report.checks.push_back(c);
  }

  if (problem.op.jacobian) {
    CheckResult c{"operator jacobian matches finite differences", true, 0.0};
    const double h = 1e-6;
    for (int s = 0; s < samples; ++s) {
      const Vector x = sample_point(rng, n, 3.0);
      const Matrix J = problem.op.jacobian(x);
      double scale = 1.0 + J.lpNorm<Eigen::Infinity>();
      for (Index j = 0; j < n; ++j) {
        Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const Vector col =
            (problem.op.eval(xp) - problem.op.eval(xm)) / (2.0 * h);
        const double dev =
            (col - J.col(j)).lpNorm<Eigen::Infinity>() / scale;
        c.worst_deviation = std::max(c.worst_deviation, dev);
      }
    }
    c.passed = c.worst_deviation <= 1e-5;
    report.checks.push_back(c);
  }

  if (m > 0) {
    CheckResult conv{"coupled constraints convex in y (midpoint test)", true,
                     0.0};
    CheckResult grad{"coupled gradient matches finite differences", true, 0.0};
    const double h = 1e-6;
    for (int s = 0; s < samples; ++s) {
      const Vector x = sample_point(rng, n, 3.0);
      const Vector y1 = sample_point(rng, n, 3.0);
      const Vector y2 = sample_point(rng, n, 3.0);
      const Vector gm = problem.coupled.eval(0.5 * (y1 + y2), x);
      const Vector gavg =
          0.5 * (problem.coupled.eval(y1, x) + problem.coupled.eval(y2, x));
      for (Index i = 0; i < m; ++i)
        conv.worst_deviation =
            std::max(conv.worst_deviation, gm[i] - gavg[i]);

      const Matrix G = problem.coupled.grad_y(y1, x);
      double scale = 1.0 + G.lpNorm<Eigen::Infinity>();
      for (Index j = 0; j < n; ++j) {
        Vector yp = y1, ym = y1;
        yp[j] += h;
        ym[j] -= h;
        const Vector row =
            (problem.coupled.eval(yp, x) - problem.coupled.eval(ym, x)) /
            (2.0 * h);
        for (Index i = 0; i < m; ++i) {
          const double dev = std::abs(row[i] - G(j, i)) / scale;
          grad.worst_deviation = std::max(grad.worst_deviation, dev);
        }
      }

      if (problem.coupled.grad_y_affine) {
        const auto& aff = *problem.coupled.grad_y_affine;
        Matrix Gaff = aff.offset(x);
        if (!aff.curvature.empty())
          for (Index i = 0; i < m; ++i) Gaff.col(i) += aff.curvature[i] * y1;
        const double dev = (Gaff - G).lpNorm<Eigen::Infinity>() / scale;
        grad.worst_deviation = std::max(grad.worst_deviation, dev);
      }
    }
    conv.passed = conv.worst_deviation <= 1e-10;
    grad.passed = grad.worst_deviation <= 1e-5;
    report.checks.push_back(conv);
    report.checks.push_back(grad);
  }

  return report;
}

}  // namespace qvidw
