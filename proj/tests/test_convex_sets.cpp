#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "qvidw/convex_sets.hpp"
#include "qvidw/rng.hpp"

using qvidw::ConvexSet;
using qvidw::Index;
using qvidw::ProductSet;
using qvidw::Rng;
using qvidw::Vector;

namespace {

// Enumeration oracle for projections in low dimension.  Every candidate
// minimizer of ||w - v||^2 over one of the canonical sets has a known
// structure (a support set, plus for the ball an optional radial scaling),
// so listing all supports and keeping the feasible candidate with smallest
// distance gives the exact projection without touching the production code
// path.
Vector oracle_project_simplex(const Vector& v) {
  const Index d = v.size();
  double best = std::numeric_limits<double>::infinity();
  Vector best_w = Vector::Zero(d);
  for (unsigned mask = 1; mask < (1u << d); ++mask) {
    std::vector<Index> support;
    for (Index i = 0; i < d; ++i)
      if (mask & (1u << i)) support.push_back(i);
    // On the support the minimizer shifts every coordinate by the same
    // amount so the sum hits one.
    double s = 0.0;
    for (Index i : support) s += v[i];
    const double shift = (1.0 - s) / static_cast<double>(support.size());
    Vector w = Vector::Zero(d);
    bool feasible = true;
    for (Index i : support) {
      w[i] = v[i] + shift;
      if (w[i] < -1e-12) feasible = false;
    }
    if (!feasible) continue;
    const double dist = (w - v).squaredNorm();
    if (dist < best) {
      best = dist;
      best_w = w;
    }
  }
  return best_w;
}

Vector oracle_project_ball_nonneg(const Vector& v, double r2) {
  const Index d = v.size();
  const double r = std::sqrt(r2);
  double best = std::numeric_limits<double>::infinity();
  Vector best_w = Vector::Zero(d);
  if (0.0 < best) {
    best = v.squaredNorm();  // w = 0 candidate
    best_w = Vector::Zero(d);
  }
  for (unsigned mask = 1; mask < (1u << d); ++mask) {
    std::vector<Index> support;
    for (Index i = 0; i < d; ++i)
      if (mask & (1u << i)) support.push_back(i);
    // Stationarity forces w proportional to v on the support: either the
    // untouched v (ball inactive) or v scaled back to the sphere.
    for (int boundary = 0; boundary <= 1; ++boundary) {
      Vector w = Vector::Zero(d);
      double nsq = 0.0;
      for (Index i : support) {
        w[i] = v[i];
        nsq += v[i] * v[i];
      }
      if (boundary) {
        if (nsq <= 0.0) continue;
        w *= r / std::sqrt(nsq);
      } else if (nsq > r2 + 1e-14) {
        continue;
      }
      bool feasible = true;
      for (Index i : support)
        if (w[i] < -1e-12) feasible = false;
      if (!feasible) continue;
      const double dist = (w - v).squaredNorm();
      if (dist < best) {
        best = dist;
        best_w = w;
      }
    }
  }
  return best_w;
}

Vector random_vector(Rng& rng, Index d, double scale) {
  Vector v(d);
  for (Index i = 0; i < d; ++i) v[i] = rng.uniform(-scale, scale);
  return v;
}

// Random point of the set, for the optimality-inequality checks.
Vector random_member(Rng& rng, const ConvexSet& s) {
  const Index d = s.dim();
  switch (s.kind()) {
    case qvidw::SetKind::AllSpace:
      return random_vector(rng, d, 5.0);
    case qvidw::SetKind::NonnegOrthant: {
      Vector v(d);
      for (Index i = 0; i < d; ++i) v[i] = rng.uniform(0.0, 5.0);
      return v;
    }
    case qvidw::SetKind::Box: {
      Vector v(d);
      for (Index i = 0; i < d; ++i)
        v[i] = s.lower()[i] + rng.uniform() * (s.upper()[i] - s.lower()[i]);
      return v;
    }
    case qvidw::SetKind::Simplex: {
      Vector v(d);
      double sum = 0.0;
      for (Index i = 0; i < d; ++i) {
        v[i] = rng.uniform() + 1e-3;
        sum += v[i];
      }
      return v / sum;
    }
    case qvidw::SetKind::BallNonneg: {
      Vector v(d);
      for (Index i = 0; i < d; ++i) v[i] = rng.uniform();
      const double n = v.norm();
      if (n == 0.0) return v;
      return v * (rng.uniform() * std::sqrt(s.radius_sq()) / n);
    }
  }
  return Vector::Zero(d);
}

std::vector<ConvexSet> sample_sets() {
  Vector lo(3), hi(3);
  lo << -1.0, 0.0, 2.0;
  hi << 1.0, 0.5, 4.0;
  return {ConvexSet::all_space(4),
          ConvexSet::nonneg_orthant(5),
          ConvexSet::box(lo, hi),
          ConvexSet::simplex(4),
          ConvexSet::ball_nonneg(3, 2.5)};
}

}  // namespace

TEST_CASE("worked projections") {
  // Simplex: support is all three coordinates, threshold -0.2.
  Vector v(3);
  v << 0.3, 0.2, -0.1;
  Vector w = ConvexSet::simplex(3).project(v);
  CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(0.1).epsilon(1e-12));

  // Ball-orthant: clamp kills the negative coordinate, then the radius
  // pulls the rest onto the sphere.
  Vector u(2);
  u << 3.0, -4.0;
  Vector p = ConvexSet::ball_nonneg(2, 1.0).project(u);
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.0).epsilon(1e-12));

  Vector b(2);
  b << 2.0, -2.0;
  Vector lo = Vector::Zero(2), hi = Vector::Ones(2);
  Vector q = ConvexSet::box(lo, hi).project(b);
  CHECK(q[0] == 1.0);
  CHECK(q[1] == 0.0);
}

TEST_CASE("membership") {
  Vector v(2);
  v << 0.5, 0.6;
  CHECK_FALSE(ConvexSet::simplex(2).contains(v, 1e-9));
  v << 0.5, 0.5;
  CHECK(ConvexSet::simplex(2).contains(v, 1e-9));
  v << 1.0, 0.0;
  CHECK(ConvexSet::ball_nonneg(2, 1.0).contains(v, 0.0));
  v << 1.0 + 1e-6, 0.0;
  CHECK_FALSE(ConvexSet::ball_nonneg(2, 1.0).contains(v, 1e-9));
}

TEST_CASE("projection matches the enumeration oracle in low dimension") {
  Rng rng(20240811);
  for (int trial = 0; trial < 400; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.raw() % 4);
    Vector v = random_vector(rng, d, 3.0);

    Vector ws = ConvexSet::simplex(d).project(v);
    Vector wso = oracle_project_simplex(v);
    CHECK((ws - wso).lpNorm<Eigen::Infinity>() < 1e-10);

    const double r2 = 0.25 + 3.0 * rng.uniform();
    Vector wb = ConvexSet::ball_nonneg(d, r2).project(v);
    Vector wbo = oracle_project_ball_nonneg(v, r2);
    CHECK((wb - wbo).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("projections are idempotent and firmly nonexpansive") {
  Rng rng(7);
  for (const ConvexSet& s : sample_sets()) {
    for (int trial = 0; trial < 50; ++trial) {
      Vector v = random_vector(rng, s.dim(), 6.0);
      Vector u = random_vector(rng, s.dim(), 6.0);
      Vector pv = s.project(v);
      Vector pu = s.project(u);
      CHECK((s.project(pv) - pv).lpNorm<Eigen::Infinity>() <= 1e-12);
      // Firm nonexpansiveness: ||Pv - Pu||^2 <= <Pv - Pu, v - u>.
      const double lhs = (pv - pu).squaredNorm();
      const double rhs = (pv - pu).dot(v - u);
      CHECK(lhs <= rhs + 1e-10);
    }
  }
}

TEST_CASE("projection optimality inequality against random feasible points") {
  Rng rng(99);
  for (const ConvexSet& s : sample_sets()) {
    for (int trial = 0; trial < 10; ++trial) {
      Vector v = random_vector(rng, s.dim(), 6.0);
      Vector pv = s.project(v);
      CHECK(s.contains(pv, 1e-9));
      for (int j = 0; j < 100; ++j) {
        Vector y = random_member(rng, s);
        CHECK((v - pv).dot(y - pv) <= 1e-10);
      }
    }
  }
}

TEST_CASE("product set projects blockwise") {
  ProductSet P({ConvexSet::simplex(2), ConvexSet::nonneg_orthant(1)});
  CHECK(P.dim() == 3);
  Vector v(3);
  v << 2.0, 0.0, -3.0;
  Vector w = P.project(v);
  CHECK(w[0] == doctest::Approx(1.0));
  CHECK(w[1] == doctest::Approx(0.0));
  CHECK(w[2] == 0.0);
  CHECK(P.contains(w, 1e-12));
  CHECK_FALSE(P.contains(v, 1e-9));

  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Vector u = random_vector(rng, 3, 4.0);
    Vector pu = P.project(u);
    Vector manual(3);
    manual.head(2) = ConvexSet::simplex(2).project(u.head(2));
    manual.tail(1) = ConvexSet::nonneg_orthant(1).project(u.tail(1));
    CHECK((pu - manual).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("projection jacobian is a forward difference of the projection") {
  // Off the kinks the projection is smooth, so a central difference has to
  // reproduce the B-subdifferential element.
  Rng rng(55);
  for (const ConvexSet& s : sample_sets()) {
    int checked = 0;
    int trial = 0;
    while (checked < 20 && trial < 200) {
      ++trial;
      Vector v = random_vector(rng, s.dim(), 4.0);
      const qvidw::Matrix J = s.projection_jacobian(v);
      const double h = 1e-6;
      qvidw::Matrix Jfd(s.dim(), s.dim());
      for (Index j = 0; j < s.dim(); ++j) {
        Vector vp = v, vm = v;
        vp[j] += h;
        vm[j] -= h;
        Jfd.col(j) = (s.project(vp) - s.project(vm)) / (2.0 * h);
      }
      // Skip points that straddle a kink; the two estimates then disagree
      // by O(1) rather than O(h^2).
      if ((J - Jfd).lpNorm<Eigen::Infinity>() > 1e-4) continue;
      CHECK((J - Jfd).lpNorm<Eigen::Infinity>() < 1e-6);
      ++checked;
    }
    CHECK(checked == 20);
  }
}

TEST_CASE("degenerate and error cases") {
  CHECK_THROWS_AS(ConvexSet::ball_nonneg(2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ConvexSet::simplex(0), std::invalid_argument);
  Vector lo = Vector::Ones(2), hi = Vector::Zero(2);
  CHECK_THROWS_AS(ConvexSet::box(lo, hi), std::invalid_argument);
  CHECK_THROWS_AS(ConvexSet::simplex(3).project(Vector::Zero(2)),
                  std::invalid_argument);

  // Simplex in dimension one is the single point {1}.
  Vector v(1);
  v << -7.0;
  CHECK(ConvexSet::simplex(1).project(v)[0] == doctest::Approx(1.0));

  // Box with infinite bounds behaves like an orthant.
  Vector l = Vector::Zero(2);
  Vector u = Vector::Constant(2, std::numeric_limits<double>::infinity());
  Vector x(2);
  x << -1.0, 7.0;
  Vector w = ConvexSet::box(l, u).project(x);
  CHECK(w[0] == 0.0);
  CHECK(w[1] == 7.0);
}
