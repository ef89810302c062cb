#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Cholesky>

#include <cmath>
#include <vector>

#include "qvidw/convex_sets.hpp"
#include "qvidw/rng.hpp"
#include "qvidw/vi_solvers.hpp"

using qvidw::ConvexSet;
using qvidw::Index;
using qvidw::Matrix;
using qvidw::ProductSet;
using qvidw::Rng;
using qvidw::Vector;
using qvidw::ViInstance;
using qvidw::ViResult;

namespace {

Matrix random_spd(Rng& rng, Index n) {
  Matrix S(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) S(i, j) = rng.uniform(-1.0, 1.0);
  return S.transpose() * S / static_cast<double>(n) + Matrix::Identity(n, n);
}

Vector random_vector(Rng& rng, Index n, double scale) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(-scale, scale);
  return v;
}

// Random feasible point, blockwise, for optimality-inequality checks.
Vector random_member(Rng& rng, const ProductSet& set) {
  Vector v(set.dim());
  for (std::size_t a = 0; a < set.block_count(); ++a) {
    const ConvexSet& blk = set.block(a);
    const Index o = set.offset(a);
    Vector w = random_vector(rng, blk.dim(), 3.0);
    v.segment(o, blk.dim()) = blk.project(w);
  }
  return v;
}

ViInstance affine_instance(const Matrix& A, const Vector& b,
                           ProductSet set) {
  ViInstance vi;
  vi.op.affine = qvidw::ViOperator::Affine{A, b};
  vi.op.eval = [A, b](const Vector& y) { return A * y + b; };
  vi.set = std::move(set);
  return vi;
}

// Exhaustive LCP solve for SPD matrices in low dimension: pick the support
// of y, solve the reduced system, keep the candidate satisfying both sign
// conditions.  Uniqueness for positive definite A makes the first hit THE
// solution.
Vector oracle_lcp(const Matrix& A, const Vector& b) {
  const Index n = A.rows();
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    std::vector<Index> freeIdx;
    for (Index i = 0; i < n; ++i)
      if (mask & (1u << i)) freeIdx.push_back(i);
    const Index f = static_cast<Index>(freeIdx.size());
    Vector y = Vector::Zero(n);
    if (f > 0) {
      Matrix Aff(f, f);
      Vector rhs(f);
      for (Index r = 0; r < f; ++r) {
        rhs[r] = -b[freeIdx[r]];
        for (Index c = 0; c < f; ++c) Aff(r, c) = A(freeIdx[r], freeIdx[c]);
      }
      const Vector yf = Aff.ldlt().solve(rhs);
      for (Index r = 0; r < f; ++r) y[freeIdx[r]] = yf[r];
    }
    const Vector z = A * y + b;
    bool ok = true;
    for (Index i = 0; i < n; ++i) {
      if (y[i] < -1e-9 || z[i] < -1e-9) ok = false;
      if (std::abs(y[i] * z[i]) > 1e-9) ok = false;
    }
    if (ok) return y;
  }
  FAIL("oracle found no complementary support");
  return Vector::Zero(n);
}

}  // namespace

TEST_CASE("extragradient on worked instances") {
  // Identity-shift over the whole space: fixed point at the shift.
  ViInstance vi;
  vi.op.eval = [](const Vector& y) {
    Vector r(2);
    r[0] = y[0] - 3.0;
    r[1] = y[1] - 1.0;
    return r;
  };
  vi.set = ProductSet({ConvexSet::all_space(2)});
  ViResult res = qvidw::solve_extragradient(vi, Vector::Zero(2), 1e-10, 5000);
  CHECK(res.converged);
  CHECK(res.y[0] == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(res.y[1] == doctest::Approx(1.0).epsilon(1e-8));

  // Same operator shape over the simplex: the solution is the projection
  // of the shift, here (1, 0).
  vi.op.eval = [](const Vector& y) {
    Vector r(2);
    r[0] = y[0] - 2.0;
    r[1] = y[1];
    return r;
  };
  vi.set = ProductSet({ConvexSet::simplex(2)});
  res = qvidw::solve_extragradient(vi, Vector::Zero(2), 1e-10, 5000);
  CHECK(res.converged);
  CHECK(res.y[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(res.y[1] == doctest::Approx(0.0).epsilon(1e-8));

  // Orthant with one component pushed against the boundary: y = (1, 0)
  // with multiplier-like z = (0, 1).
  vi.op.eval = [](const Vector& y) {
    Vector r(2);
    r[0] = y[0] - 1.0;
    r[1] = y[1] + 1.0;
    return r;
  };
  vi.set = ProductSet({ConvexSet::nonneg_orthant(2)});
  res = qvidw::solve_extragradient(vi, Vector::Ones(2), 1e-10, 5000);
  CHECK(res.converged);
  CHECK(res.y[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(res.y[1] == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(res.z[1] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("direct solve over the whole space") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.raw() % 5);
    const Matrix A = random_spd(rng, n);
    const Vector b = random_vector(rng, n, 2.0);
    const ViResult res = qvidw::solve_affine_allspace(A, b);
    CHECK(res.converged);
    CHECK((A * res.y + b).lpNorm<Eigen::Infinity>() < 1e-10);
  }

  Matrix S(2, 2);
  S << 1.0, 1.0, 1.0, 1.0;
  CHECK_THROWS_AS(qvidw::solve_affine_allspace(S, Vector::Ones(2)),
                  qvidw::SingularOperatorError);
}

TEST_CASE("active set solves a worked complementarity instance exactly") {
  Matrix A(2, 2);
  A << 2.0, 1.0, 1.0, 2.0;
  Vector b(2);
  b << -1.0, 4.0;
  const ProductSet orthant({ConvexSet::nonneg_orthant(2)});
  const ViResult res = qvidw::solve_affine_box_activeset(A, b, orthant);
  CHECK(res.converged);
  CHECK(res.y[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(res.y[1] == 0.0);
  CHECK(res.z[0] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(res.z[1] == doctest::Approx(4.5).epsilon(1e-14));
}

TEST_CASE("active set agrees with the support-enumeration oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.raw() % 4);
    const Matrix A = random_spd(rng, n);
    const Vector b = random_vector(rng, n, 3.0);
    const Vector expect = oracle_lcp(A, b);
    const ViResult res = qvidw::solve_affine_box_activeset(
        A, b, ProductSet({ConvexSet::nonneg_orthant(n)}));
    CHECK((res.y - expect).lpNorm<Eigen::Infinity>() < 1e-9);
  }
}

TEST_CASE("active set clamps to finite box bounds") {
  Matrix A = Matrix::Identity(2, 2);
  Vector b(2);
  b << -2.0, 0.5;
  const ProductSet box(
      {ConvexSet::box(Vector::Zero(2), Vector::Ones(2))});
  const ViResult res = qvidw::solve_affine_box_activeset(A, b, box);
  CHECK(res.converged);
  CHECK(res.y[0] == 1.0);
  CHECK(res.y[1] == 0.0);
}

TEST_CASE("extragradient and active set agree on random orthant instances") {
  Rng rng(314);
  for (int trial = 0; trial < 10; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.raw() % 7);
    const Matrix A = random_spd(rng, n);
    const Vector b = random_vector(rng, n, 3.0);
    const ProductSet orthant({ConvexSet::nonneg_orthant(n)});

    const ViResult direct = qvidw::solve_affine_box_activeset(A, b, orthant);

    ViInstance vi;  // closure only, so the router cannot shortcut
    vi.op.eval = [A, b](const Vector& y) { return A * y + b; };
    vi.set = orthant;
    const ViResult eg =
        qvidw::solve_extragradient(vi, Vector::Ones(n), 1e-10, 100000);
    CHECK(eg.converged);
    CHECK((eg.y - direct.y).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("natural-map newton solves affine instances over mixed blocks") {
  // Identity operator: the solution is the blockwise projection of -b.
  const ProductSet set({ConvexSet::nonneg_orthant(1), ConvexSet::simplex(2),
                        ConvexSet::ball_nonneg(2, 4.0)});
  const Matrix A = Matrix::Identity(5, 5);
  Vector b(5);
  b << -2.0, -2.0, 0.0, -3.0, -4.0;
  const ViResult res = qvidw::solve_affine_natural_newton(
      A, b, set, Vector::Zero(5), 1e-10, 100);
  CHECK(res.converged);
  Vector expect(5);
  expect << 2.0, 1.0, 0.0, 1.2, 1.6;
  CHECK((res.y - expect).lpNorm<Eigen::Infinity>() < 1e-9);
  CHECK(set.contains(res.y, 1e-12));
}

TEST_CASE("natural-map newton matches extragradient on skewed operators") {
  Rng rng(777);
  for (int trial = 0; trial < 10; ++trial) {
    const Index n = 5;
    Matrix A = random_spd(rng, n);
    // Add a skew part; the operator stays strongly monotone but is no
    // longer symmetric, which locks the active-set route out.
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) {
        const double s = rng.uniform(-0.5, 0.5);
        A(i, j) += s;
        A(j, i) -= s;
      }
    const Vector b = random_vector(rng, n, 2.0);
    const ProductSet set({ConvexSet::simplex(3), ConvexSet::ball_nonneg(2, 1.0)});

    const ViResult newton = qvidw::solve_affine_natural_newton(
        A, b, set, Vector::Zero(n), 1e-11, 100);
    CHECK(newton.converged);

    ViInstance vi;
    vi.op.eval = [A, b](const Vector& y) { return A * y + b; };
    vi.set = set;
    const ViResult eg =
        qvidw::solve_extragradient(vi, Vector::Zero(n), 1e-10, 200000);
    CHECK(eg.converged);
    CHECK((newton.y - eg.y).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("router picks a working route for every structure") {
  Rng rng(555);

  // Affine over all-space: one-shot solve.
  {
    Matrix A(2, 2);
    A << 1.0, 1.0, -1.0, 1.0;
    Vector b(2);
    b << -2.0, 0.0;
    const ViInstance vi = affine_instance(A, b, ProductSet({ConvexSet::all_space(2)}));
    const ViResult res = qvidw::solve_vi(vi, Vector::Zero(2), 1e-9, 10);
    CHECK(res.converged);
    CHECK(res.iterations == 1);
    CHECK((A * res.y + b).lpNorm<Eigen::Infinity>() < 1e-10);
  }

  // Singular affine over all-space propagates the failure.
  {
    Matrix S(2, 2);
    S << 1.0, 2.0, 2.0, 4.0;
    const ViInstance vi =
        affine_instance(S, Vector::Ones(2), ProductSet({ConvexSet::all_space(2)}));
    CHECK_THROWS_AS(qvidw::solve_vi(vi, Vector::Zero(2), 1e-9, 10),
                    qvidw::SingularOperatorError);
  }

  // SPD over orthant: active set, exact complementarity.
  {
    Matrix A(2, 2);
    A << 2.0, 1.0, 1.0, 2.0;
    Vector b(2);
    b << -1.0, 4.0;
    const ViInstance vi =
        affine_instance(A, b, ProductSet({ConvexSet::nonneg_orthant(2)}));
    const ViResult res = qvidw::solve_vi(vi, Vector::Zero(2), 1e-9, 10);
    CHECK(res.y[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(res.y[1] == 0.0);
  }

  // Mixed blocks and non-symmetric matrices land on the Newton route; the
  // optimality inequality is the route-independent certificate.
  for (int trial = 0; trial < 8; ++trial) {
    const Index n = 6;
    Matrix A = random_spd(rng, n);
    A(0, 1) += 0.7;
    A(1, 0) -= 0.7;
    const Vector b = random_vector(rng, n, 2.0);
    const ProductSet set({ConvexSet::nonneg_orthant(2), ConvexSet::simplex(2),
                          ConvexSet::ball_nonneg(2, 2.0)});
    const ViInstance vi = affine_instance(A, b, set);
    const ViResult res = qvidw::solve_vi(vi, Vector::Zero(n), 1e-10, 200000);
    CHECK(res.converged);
    CHECK(res.natural_residual <= 1e-10);
    for (int j = 0; j < 100; ++j) {
      const Vector v = random_member(rng, set);
      CHECK(res.z.dot(v - res.y) >= -1e-8);
    }
  }
}

TEST_CASE("reported residuals are recomputable") {
  Rng rng(8080);
  const Index n = 4;
  const Matrix A = random_spd(rng, n);
  const Vector b = random_vector(rng, n, 2.0);
  const ProductSet set({ConvexSet::simplex(n)});
  const ViInstance vi = affine_instance(A, b, set);
  const ViResult res = qvidw::solve_vi(vi, Vector::Zero(n), 1e-10, 100000);
  CHECK(res.converged);
  CHECK(std::abs(qvidw::natural_residual(vi, res.y) - res.natural_residual) <=
        1e-12);
  CHECK((res.z - (A * res.y + b)).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("solutions are invariant under positive scaling of the operator") {
  // Scaling the operator rescales z but must not move y.
  ViInstance vi;
  vi.op.eval = [](const Vector& y) {
    Vector r(3);
    for (Index i = 0; i < 3; ++i)
      r[i] = y[i] + 0.5 * std::tanh(y[i]) - 0.8 * static_cast<double>(i + 1);
    return r;
  };
  vi.set = ProductSet({ConvexSet::box(Vector::Zero(3), Vector::Ones(3))});

  ViInstance scaled = vi;
  const auto base = vi.op.eval;
  scaled.op.eval = [base](const Vector& y) { return (2.0 * base(y)).eval(); };

  const ViResult a = qvidw::solve_vi(vi, Vector::Zero(3), 1e-11, 100000);
  const ViResult c = qvidw::solve_vi(scaled, Vector::Zero(3), 1e-11, 100000);
  CHECK(a.converged);
  CHECK(c.converged);
  CHECK((a.y - c.y).lpNorm<Eigen::Infinity>() < 1e-8);
}
