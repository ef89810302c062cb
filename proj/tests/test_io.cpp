#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <limits>
#include <stdexcept>

#include "qvidw/io.hpp"
#include "qvidw/rng.hpp"

using qvidw::ConvexSet;
using qvidw::Index;
using qvidw::json;
using qvidw::Matrix;
using qvidw::ProductSet;
using qvidw::QviProblem;
using qvidw::Rng;
using qvidw::Vector;

namespace {

Vector random_vector(Rng& rng, Index n, double scale) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(-scale, scale);
  return v;
}

// Behavioral equality on random points; file-level equality would be too
// strict about closures and too lax about their meaning.
void check_same_problem(const QviProblem& a, const QviProblem& b) {
  REQUIRE(a.dim() == b.dim());
  REQUIRE(a.num_coupled() == b.num_coupled());
  CHECK(a.easy_set == b.easy_set);
  CHECK(a.jacobi_blocks == b.jacobi_blocks);

  Rng rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = random_vector(rng, a.dim(), 3.0);
    const Vector y = random_vector(rng, a.dim(), 3.0);
    CHECK((a.op.eval(x) - b.op.eval(x)).lpNorm<Eigen::Infinity>() <= 1e-14);
    if (a.num_coupled() > 0) {
      CHECK((a.coupled.eval(y, x) - b.coupled.eval(y, x))
                .lpNorm<Eigen::Infinity>() <= 1e-12);
      CHECK((a.coupled.grad_y(y, x) - b.coupled.grad_y(y, x))
                .lpNorm<Eigen::Infinity>() <= 1e-12);
    }
  }
}

}  // namespace

TEST_CASE("set descriptors round-trip") {
  const double inf = std::numeric_limits<double>::infinity();
  Vector lo(3), hi(3);
  lo << -1.0, 0.0, -inf;
  hi << 1.0, inf, 4.0;
  const ConvexSet sets[] = {
      ConvexSet::all_space(4), ConvexSet::nonneg_orthant(2),
      ConvexSet::box(lo, hi), ConvexSet::simplex(5),
      ConvexSet::ball_nonneg(3, 2.5)};
  for (const ConvexSet& s : sets) {
    const json j = qvidw::set_to_json(s);
    CHECK(qvidw::set_from_json(j) == s);
    // Through text as well, since that is what files see.
    CHECK(qvidw::set_from_json(json::parse(j.dump())) == s);
  }

  // Infinite bounds are written as null, not as a non-JSON literal.
  const json jb = qvidw::set_to_json(ConvexSet::box(lo, hi));
  CHECK(jb.at("lower").at(2).is_null());
  CHECK(jb.at("upper").at(1).is_null());
  CHECK(jb.at("lower").at(0).get<double>() == -1.0);

  CHECK_THROWS_AS(qvidw::set_from_json(json{{"type", "polyhedron"}}),
                  std::invalid_argument);
}

TEST_CASE("walrasian problems survive the file format") {
  const qvidw::WalrasianData data = qvidw::sample_walrasian(
      2, 3, qvidw::walras_default_capacity(2, 3), 7);
  const QviProblem original = qvidw::make_walrasian(data);

  const json j = qvidw::problem_to_json(data);
  CHECK(j.at("coupled").at("builtin") == "budget");
  const QviProblem loaded = qvidw::problem_from_json(json::parse(j.dump()));

  CHECK(loaded.name == original.name);
  CHECK(loaded.metadata.at("family") == "walrasian");
  check_same_problem(original, loaded);
}

TEST_CASE("moving-set problems survive the file format") {
  const qvidw::MovSetData data = qvidw::sample_movset(4, 19, 0.4, 2.0);
  const QviProblem original = qvidw::make_movset(data);

  const json j = qvidw::problem_to_json(data);
  CHECK(j.at("coupled").at("builtin") == "quadratic_moving_set");
  const QviProblem loaded = qvidw::problem_from_json(json::parse(j.dump()));

  CHECK(loaded.name == original.name);
  CHECK(loaded.metadata.at("level") == original.metadata.at("level"));
  check_same_problem(original, loaded);
}

TEST_CASE("plain affine problems serialize when uncoupled") {
  QviProblem p;
  p.name = "diag_vi";
  p.op.dim = 2;
  Matrix A = Matrix::Identity(2, 2) * 3.0;
  Vector b(2);
  b << -1.0, 2.0;
  p.op.affine = qvidw::OperatorSpec::AffineForm{A, b};
  p.op.eval = [A, b](const Vector& x) -> Vector { return A * x + b; };
  p.easy_set = ProductSet({ConvexSet::nonneg_orthant(2)});
  p.jacobi_blocks = {2};
  p.metadata["origin"] = "unit test";

  const json j = qvidw::problem_to_json(p);
  const QviProblem loaded = qvidw::problem_from_json(json::parse(j.dump()));
  CHECK(loaded.name == "diag_vi");
  CHECK(loaded.metadata.at("origin") == "unit test");
  check_same_problem(p, loaded);

  // Coupled problems must go through their generator data.
  CHECK_THROWS_AS(qvidw::problem_to_json(qvidw::gen_movset(3, 1)),
                  std::invalid_argument);
}

TEST_CASE("loader rejects files that disagree with the builtin layout") {
  json jm = qvidw::problem_to_json(qvidw::sample_movset(3, 2));
  jm["easy_set"][0]["dim"] = 4;
  CHECK_THROWS_AS(qvidw::problem_from_json(jm), std::invalid_argument);

  json jw = qvidw::problem_to_json(qvidw::sample_walrasian(
      2, 2, qvidw::walras_default_capacity(2, 2), 3));
  jw["blocks"] = {8};
  CHECK_THROWS_AS(qvidw::problem_from_json(jw), std::invalid_argument);
}

TEST_CASE("problem files round-trip through disk") {
  const char* path = "qvidw_io_roundtrip.json";
  const qvidw::MovSetData data = qvidw::sample_movset(3, 11);
  qvidw::save_problem(qvidw::problem_to_json(data), path);
  const QviProblem loaded = qvidw::load_problem(path);
  check_same_problem(qvidw::make_movset(data), loaded);
  std::remove(path);

  CHECK_THROWS_AS(qvidw::load_problem("does_not_exist.json"),
                  std::runtime_error);
}

TEST_CASE("iteration records and reports carry the full trace") {
  qvidw::IterationRecord rec;
  rec.k = 3;
  rec.gap_value = -0.25;
  rec.step_norm = 1.5;
  rec.zeta_norm_inf = 2.0;
  const json jr = qvidw::record_to_json(rec);
  CHECK(jr.at("k") == 3);
  CHECK(jr.at("gap") == -0.25);
  CHECK(jr.at("step_norm") == 1.5);
  CHECK(jr.at("zeta_norm_inf") == 2.0);
  for (const char* key :
       {"mu_norm_inf", "master_residual", "subproblem_residual",
        "master_time_s", "subproblem_time_s", "min_pool_gap"})
    CHECK(jr.contains(key));

  qvidw::DwReport report;
  report.status = qvidw::DwStatus::Converged;
  report.solution.x = Vector::Constant(2, 1.5);
  report.solution.multipliers = Vector::Zero(1);
  report.solution.operator_value = Vector::Zero(2);
  report.solution.kkt_residual = 1e-9;
  report.records.push_back(rec);
  report.total_time = 0.5;
  const json jrep = qvidw::report_to_json(report);
  CHECK(jrep.at("status") == "converged");
  CHECK(jrep.at("iterations") == 1);
  CHECK(jrep.at("records").size() == 1);
  CHECK(jrep.at("solution").at("x").size() == 2);
  CHECK(jrep.at("solution").at("kkt_residual") == 1e-9);

  qvidw::DirectResult direct;
  direct.converged = true;
  direct.iterations = 12;
  direct.solution = report.solution;
  const json jd = qvidw::direct_result_to_json(direct);
  CHECK(jd.at("converged") == true);
  CHECK(jd.at("iterations") == 12);
  CHECK(jd.at("solution").contains("multipliers"));
}
