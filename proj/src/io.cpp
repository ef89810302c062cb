#include "qvidw/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace qvidw {

namespace {

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw std::invalid_argument("expected a JSON array");
  Vector v(static_cast<Index>(j.size()));
  Index i = 0;
  for (const auto& e : j) v[i++] = e.get<double>();
  return v;
}

json matrix_to_json(const Matrix& A) {
  json out = json::array();
  for (Index r = 0; r < A.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < A.cols(); ++c) row.push_back(A(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty())
    throw std::invalid_argument("expected a nonempty JSON matrix");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(j.front().size());
  Matrix A(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Index>(row.size()) != cols)
      throw std::invalid_argument("ragged JSON matrix");
    for (Index c = 0; c < cols; ++c)
      A(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return A;
}

json bound_to_json(double v) {
  if (std::isinf(v)) return nullptr;
  return v;
}

double bound_from_json(const json& j, double unbounded) {
  if (j.is_null()) return unbounded;
  return j.get<double>();
}

}  // namespace

json set_to_json(const ConvexSet& set) {
  switch (set.kind()) {
    case SetKind::AllSpace:
      return {{"type", "all_space"}, {"dim", set.dim()}};
    case SetKind::NonnegOrthant:
      return {{"type", "nonneg_orthant"}, {"dim", set.dim()}};
    case SetKind::Box: {
      json lower = json::array();
      json upper = json::array();
      for (Index i = 0; i < set.dim(); ++i) {
        lower.push_back(bound_to_json(set.lower()[i]));
        upper.push_back(bound_to_json(set.upper()[i]));
      }
      return {{"type", "box"}, {"lower", lower}, {"upper", upper}};
    }
    case SetKind::Simplex:
      return {{"type", "simplex"}, {"dim", set.dim()}};
    case SetKind::BallNonneg:
      return {{"type", "ball_nonneg"},
              {"dim", set.dim()},
              {"radius_sq", set.radius_sq()}};
  }
  throw std::logic_error("set_to_json: unreachable");
}

ConvexSet set_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "all_space")
    return ConvexSet::all_space(j.at("dim").get<Index>());
  if (type == "nonneg_orthant")
    return ConvexSet::nonneg_orthant(j.at("dim").get<Index>());
  if (type == "box") {
    const auto& jl = j.at("lower");
    const auto& ju = j.at("upper");
    if (jl.size() != ju.size())
      throw std::invalid_argument("box bounds differ in length");
    const Index n = static_cast<Index>(jl.size());
    const double inf = std::numeric_limits<double>::infinity();
    Vector lower(n), upper(n);
    for (Index i = 0; i < n; ++i) {
      lower[i] = bound_from_json(jl.at(static_cast<std::size_t>(i)), -inf);
      upper[i] = bound_from_json(ju.at(static_cast<std::size_t>(i)), inf);
    }
    return ConvexSet::box(std::move(lower), std::move(upper));
  }
  if (type == "simplex") return ConvexSet::simplex(j.at("dim").get<Index>());
  if (type == "ball_nonneg")
    return ConvexSet::ball_nonneg(j.at("dim").get<Index>(),
                                  j.at("radius_sq").get<double>());
  throw std::invalid_argument("unknown set type: " + type);
}

namespace {

json easy_set_to_json(const ProductSet& set) {
  json out = json::array();
  for (std::size_t a = 0; a < set.block_count(); ++a)
    out.push_back(set_to_json(set.block(a)));
  return out;
}

ProductSet easy_set_from_json(const json& j) {
  std::vector<ConvexSet> blocks;
  blocks.reserve(j.size());
  for (const auto& e : j) blocks.push_back(set_from_json(e));
  return ProductSet(std::move(blocks));
}

json problem_frame(const QviProblem& problem) {
  if (!problem.op.affine)
    throw std::invalid_argument(
        "problem_to_json: only affine operators serialize");
  json j;
  j["name"] = problem.name;
  j["n"] = problem.dim();
  j["m"] = problem.num_coupled();
  j["operator"] = {{"affine",
                    {{"A", matrix_to_json(problem.op.affine->A)},
                     {"b", vector_to_json(problem.op.affine->b)}}}};
  j["easy_set"] = easy_set_to_json(problem.easy_set);
  j["blocks"] = problem.jacobi_blocks;
  j["metadata"] = problem.metadata;
  return j;
}

}  // namespace

json problem_to_json(const WalrasianData& data) {
  const QviProblem problem = make_walrasian(data);
  json j = problem_frame(problem);
  json endowments = json::array();
  for (const auto& E : data.E_list) endowments.push_back(vector_to_json(E));
  j["coupled"] = {{"builtin", "budget"},
                  {"consumers", data.consumers},
                  {"goods", data.goods},
                  {"E", std::move(endowments)}};
  return j;
}

json problem_to_json(const MovSetData& data) {
  const QviProblem problem = make_movset(data);
  json j = problem_frame(problem);
  j["coupled"] = {{"builtin", "quadratic_moving_set"},
                  {"R", matrix_to_json(data.R_mat)},
                  {"B", matrix_to_json(data.B_mat)},
                  {"d", data.d}};
  return j;
}

json problem_to_json(const QviProblem& problem) {
  if (problem.num_coupled() != 0)
    throw std::invalid_argument(
        "problem_to_json: coupled constraints are closure-level; serialize "
        "through the generator data instead");
  json j = problem_frame(problem);
  j["coupled"] = {{"builtin", "none"}};
  return j;
}

QviProblem problem_from_json(const json& j) {
  const Index n = j.at("n").get<Index>();
  const Index m = j.at("m").get<Index>();
  const auto& jop = j.at("operator");
  if (!jop.contains("affine"))
    throw std::invalid_argument(
        "problem_from_json: only affine operators load");
  Matrix A = matrix_from_json(jop.at("affine").at("A"));
  Vector b = vector_from_json(jop.at("affine").at("b"));
  if (A.rows() != n || A.cols() != n || b.size() != n)
    throw std::invalid_argument("problem_from_json: operator size mismatch");

  const ProductSet easy = easy_set_from_json(j.at("easy_set"));
  const std::vector<Index> blocks =
      j.at("blocks").get<std::vector<Index>>();
  std::map<std::string, std::string> metadata;
  if (j.contains("metadata"))
    metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  const std::string name = j.at("name").get<std::string>();

  const auto meta_u64 = [&metadata](const char* key) -> std::uint64_t {
    const auto it = metadata.find(key);
    return it == metadata.end() ? 0 : std::stoull(it->second);
  };

  const std::string builtin =
      j.at("coupled").at("builtin").get<std::string>();
  QviProblem problem;
  if (builtin == "none") {
    if (m != 0)
      throw std::invalid_argument("problem_from_json: m > 0 needs a builtin");
    problem.op.dim = n;
    problem.op.affine = OperatorSpec::AffineForm{A, b};
    problem.op.eval = [A, b](const Vector& x) -> Vector { return A * x + b; };
    problem.op.jacobian = [A](const Vector&) { return A; };
    problem.easy_set = easy;
    problem.jacobi_blocks = blocks;
  } else if (builtin == "quadratic_moving_set") {
    const auto& jc = j.at("coupled");
    MovSetData data;
    data.n = n;
    data.A_mat = std::move(A);
    data.b_vec = std::move(b);
    data.R_mat = matrix_from_json(jc.at("R"));
    data.B_mat = matrix_from_json(jc.at("B"));
    data.d = jc.at("d").get<double>();
    data.seed = meta_u64("seed");
    problem = make_movset(data);
  } else if (builtin == "budget") {
    const auto& jc = j.at("coupled");
    WalrasianData data;
    data.consumers = jc.at("consumers").get<int>();
    data.goods = jc.at("goods").get<int>();
    data.seed = meta_u64("seed");
    const int C = data.consumers;
    const int G = data.goods;
    if (n != static_cast<Index>(C + 2) * G || m != C)
      throw std::invalid_argument(
          "problem_from_json: budget sizes disagree with n, m");
    for (const auto& e : jc.at("E"))
      data.E_list.push_back(vector_from_json(e));
    // R^i and b^i sit in the affine operator exactly where the assembly
    // put them.
    for (int i = 0; i < C; ++i) {
      const Index off = static_cast<Index>(i) * G;
      data.R_list.push_back(A.block(off, off, G, G));
      data.b_list.push_back(-b.segment(off, G));
    }
    if (easy.block_count() != static_cast<std::size_t>(C + 2) ||
        easy.block(C).kind() != SetKind::BallNonneg)
      throw std::invalid_argument(
          "problem_from_json: budget easy set must end in ball, simplex");
    data.M = easy.block(C).radius_sq();
    problem = make_walrasian(data);
  } else {
    throw std::invalid_argument("unknown coupled builtin: " + builtin);
  }

  // A hand-edited file could disagree with what the constructors rebuilt;
  // trust the constructors and insist the file matches them.
  if (!(problem.easy_set == easy))
    throw std::invalid_argument(
        "problem_from_json: easy_set disagrees with the builtin's layout");
  if (problem.jacobi_blocks != blocks)
    throw std::invalid_argument(
        "problem_from_json: blocks disagree with the builtin's layout");

  problem.name = name;
  for (const auto& [key, value] : metadata) problem.metadata[key] = value;
  problem.check_consistency();
  return problem;
}

void save_problem(const json& problem_file, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << problem_file.dump(2) << '\n';
}

QviProblem load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  json j;
  in >> j;
  return problem_from_json(j);
}

json record_to_json(const IterationRecord& record) {
  return {{"k", record.k},
          {"gap", record.gap_value},
          {"step_norm", record.step_norm},
          {"mu_norm_inf", record.mu_norm_inf},
          {"master_residual", record.master_residual},
          {"subproblem_residual", record.subproblem_residual},
          {"master_time_s", record.master_time},
          {"subproblem_time_s", record.subproblem_time},
          {"zeta_norm_inf", record.zeta_norm_inf},
          {"min_pool_gap", record.min_pool_gap}};
}

json solution_to_json(const QviSolution& solution) {
  return {{"x", vector_to_json(solution.x)},
          {"multipliers", vector_to_json(solution.multipliers)},
          {"operator_value", vector_to_json(solution.operator_value)},
          {"kkt_residual", solution.kkt_residual}};
}

json report_to_json(const DwReport& report) {
  json records = json::array();
  for (const auto& rec : report.records) records.push_back(record_to_json(rec));
  return {{"status", to_string(report.status)},
          {"iterations", report.iterations()},
          {"total_time_s", report.total_time},
          {"message", report.message},
          {"solution", solution_to_json(report.solution)},
          {"records", std::move(records)}};
}

json direct_result_to_json(const DirectResult& result) {
  return {{"converged", result.converged},
          {"iterations", result.iterations},
          {"solution", solution_to_json(result.solution)}};
}

}  // namespace qvidw
