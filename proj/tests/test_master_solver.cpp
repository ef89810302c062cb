#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <optional>
#include <stdexcept>

#include "qvidw/master_solver.hpp"
#include "qvidw/problem_library.hpp"
#include "semismooth.hpp"

using qvidw::ColumnPool;
using qvidw::ConvexSet;
using qvidw::Matrix;
using qvidw::MasterOptions;
using qvidw::MasterSolution;
using qvidw::ProductSet;
using qvidw::QviProblem;
using qvidw::Vector;

namespace {

// F(x) = x - 4 on the line, moving ellipsoid g(y, x) = (y - x/2)^2 - 1.
// With the pool {0, 4} the restricted problem has the unique solution
// x = 2, lambda = (1/2, 1/2), mu = 1, tau = 0: the constraint is active,
// F(2) + 2 mu = -2 + 2 = 0, and both hull scores vanish.
QviProblem one_dim_moving_set() {
  QviProblem p;
  p.name = "hand_1d";
  p.op.dim = 1;
  p.op.eval = [](const Vector& x) {
    Vector r(1);
    r[0] = x[0] - 4.0;
    return r;
  };
  Matrix A(1, 1);
  A(0, 0) = 1.0;
  Vector b(1);
  b[0] = -4.0;
  p.op.affine = qvidw::OperatorSpec::AffineForm{A, b};
  p.coupled.count = 1;
  p.coupled.eval = [](const Vector& y, const Vector& x) {
    Vector g(1);
    const double t = y[0] - 0.5 * x[0];
    g[0] = t * t - 1.0;
    return g;
  };
  p.coupled.grad_y = [](const Vector& y, const Vector& x) {
    Matrix G(1, 1);
    G(0, 0) = 2.0 * (y[0] - 0.5 * x[0]);
    return G;
  };
  p.easy_set = ProductSet({ConvexSet::all_space(1)});
  p.jacobi_blocks = {1};
  return p;
}

// Single consumer, single good, quadratic disutility x - 2, endowment 3,
// firm capacity 4.  The equilibrium is x = (2, 2, 1) with a slack budget.
QviProblem tiny_walras() {
  qvidw::WalrasianData data;
  data.consumers = 1;
  data.goods = 1;
  Matrix R(1, 1);
  R(0, 0) = 1.0;
  data.R_list = {R};
  Vector b(1), E(1);
  b[0] = 2.0;
  E[0] = 3.0;
  data.b_list = {b};
  data.E_list = {E};
  data.M = 4.0;
  return qvidw::make_walrasian(data);
}

Vector scalar(double v) {
  Vector x(1);
  x[0] = v;
  return x;
}

// Hull scores sigma_j = <y_j, F(x) + G mu> + tau; complementary slackness
// against lambda is the master's own optimality certificate.
Vector hull_scores(const QviProblem& p, const ColumnPool& pool,
                   const MasterSolution& s) {
  Vector w = p.op.eval(s.x);
  if (p.num_coupled() > 0) w += p.coupled.grad_y(s.x, s.x) * s.mu;
  return (pool.matrix().transpose() * w).array() + s.tau;
}

}  // namespace

TEST_CASE("column pool admits, deduplicates and rejects") {
  ColumnPool pool(ProductSet({ConvexSet::simplex(2)}), 1e-9);
  Vector v(2);
  v << 0.5, 0.5;
  CHECK(pool.try_add(v));
  CHECK(pool.size() == 1);

  CHECK_FALSE(pool.try_add(v));
  Vector v2(2);
  v2 << 0.5 + 1e-13, 0.5 - 1e-13;
  CHECK_FALSE(pool.try_add(v2));
  CHECK(pool.size() == 1);

  Vector w(2);
  w << 0.6, 0.4;
  CHECK(pool.try_add(w));
  CHECK(pool.size() == 2);
  CHECK(pool.column(1)[0] == 0.6);

  Vector bad(2);
  bad << 0.7, 0.2;
  CHECK_THROWS_AS(pool.try_add(bad), std::invalid_argument);
}

TEST_CASE("single-column pool short-circuits") {
  const QviProblem p = one_dim_moving_set();
  ColumnPool pool(p.easy_set, 1e-9);
  pool.try_add(scalar(0.0));

  const MasterSolution s =
      qvidw::solve_master(p, pool, std::nullopt, MasterOptions{});
  CHECK(s.x[0] == 0.0);
  CHECK(s.lambda.size() == 1);
  CHECK(s.lambda[0] == 1.0);
  CHECK(s.z_m[0] == -4.0);
  CHECK(s.mu[0] == 0.0);
  CHECK(s.tau == 0.0);
  CHECK(qvidw::master_kkt_residual(p, pool, s) <= 1e-12);
}

TEST_CASE("single infeasible column is reported as such") {
  const QviProblem p = one_dim_moving_set();
  ColumnPool pool(p.easy_set, 1e-9);
  pool.try_add(scalar(4.0));  // g(4, 4) = 3 > 0
  CHECK_THROWS_AS(
      qvidw::solve_master(p, pool, std::nullopt, MasterOptions{}),
      qvidw::MasterInfeasibleError);
}

TEST_CASE("two-column moving-set master has the hand solution") {
  const QviProblem p = one_dim_moving_set();
  ColumnPool pool(p.easy_set, 1e-9);
  pool.try_add(scalar(0.0));
  pool.try_add(scalar(4.0));

  MasterOptions opt;
  opt.tol = 1e-10;
  const MasterSolution s = qvidw::solve_master(p, pool, std::nullopt, opt);

  CHECK(s.x[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(s.lambda[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(s.lambda[1] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(s.mu[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(s.tau) <= 1e-6);
  CHECK(s.kkt_residual <= 1e-10);
  CHECK(qvidw::master_kkt_residual(p, pool, s) <= 1e-10);

  const Vector sigma = hull_scores(p, pool, s);
  for (int j = 0; j < pool.size(); ++j) {
    CHECK(sigma[j] >= -1e-8);
    CHECK(std::abs(sigma[j] * s.lambda[j]) <= 1e-8);
  }
}

TEST_CASE("walrasian master lands on the vertex with slack budget") {
  const QviProblem p = tiny_walras();
  ColumnPool pool(p.easy_set, 1e-9);
  Vector ya(3), yb(3);
  ya << 0.0, 0.0, 1.0;
  yb << 2.0, 2.0, 1.0;
  pool.try_add(ya);
  pool.try_add(yb);

  MasterOptions opt;
  opt.tol = 1e-10;
  const MasterSolution s = qvidw::solve_master(p, pool, std::nullopt, opt);

  CHECK(s.x[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(s.x[1] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(s.x[2] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.lambda[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(s.lambda[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(s.mu[0]) <= 1e-6);
  CHECK(s.tau == doctest::Approx(-1.0).epsilon(1e-5));

  // The off-support column keeps a positive score: sigma = (2, 0).
  const Vector sigma = hull_scores(p, pool, s);
  CHECK(sigma[0] == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(std::abs(sigma[1]) <= 1e-6);
}

TEST_CASE("warm start reproduces the cold solution") {
  const QviProblem p = one_dim_moving_set();
  ColumnPool pool(p.easy_set, 1e-9);
  pool.try_add(scalar(0.0));
  pool.try_add(scalar(4.0));

  MasterOptions opt;
  opt.tol = 1e-10;
  const MasterSolution cold = qvidw::solve_master(p, pool, std::nullopt, opt);
  const MasterSolution warm = qvidw::solve_master(p, pool, cold, opt);
  CHECK(warm.x[0] == doctest::Approx(cold.x[0]).epsilon(1e-8));
  CHECK(warm.mu[0] == doctest::Approx(cold.mu[0]).epsilon(1e-8));
  CHECK(warm.kkt_residual <= 1e-10);
}

TEST_CASE("candidate scoring matches a hand computation") {
  const QviProblem p = one_dim_moving_set();
  ColumnPool pool(p.easy_set, 1e-9);
  pool.try_add(scalar(0.0));
  pool.try_add(scalar(4.0));

  MasterSolution cand;
  cand.x = scalar(2.0);
  cand.lambda = Vector::Constant(2, 0.5);
  cand.z_m = scalar(-2.0);
  cand.mu = scalar(1.0);
  cand.tau = 0.0;
  CHECK(qvidw::master_kkt_residual(p, pool, cand) == 0.0);

  // Dropping the multiplier leaves t = (0, -8); the simplex natural map
  // moves lambda to the second vertex, so the residual is 1/2.
  cand.mu = scalar(0.0);
  CHECK(qvidw::master_kkt_residual(p, pool, cand) ==
        doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("fischer burmeister values and kink gradient") {
  namespace d = qvidw::detail;
  CHECK(d::fischer_burmeister(0.0, 0.0) == 0.0);
  CHECK(d::fischer_burmeister(1.0, 0.0) == 0.0);
  CHECK(d::fischer_burmeister(0.0, 2.5) == 0.0);
  CHECK(d::fischer_burmeister(-1.0, 0.0) == 2.0);
  CHECK(d::fischer_burmeister(3.0, 4.0) == doctest::Approx(-2.0));

  const auto [da, db] = d::fischer_burmeister_grad(0.0, 0.0);
  CHECK(da == doctest::Approx(1.0 / std::sqrt(2.0) - 1.0));
  CHECK(db == doctest::Approx(1.0 / std::sqrt(2.0) - 1.0));

  // Away from the kink the gradient is smooth: phi(3,4) has
  // d/da = 3/5 - 1, d/db = 4/5 - 1.
  const auto [ga, gb] = d::fischer_burmeister_grad(3.0, 4.0);
  CHECK(ga == doctest::Approx(-0.4));
  CHECK(gb == doctest::Approx(-0.2));
}
