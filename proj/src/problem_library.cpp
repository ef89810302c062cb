#include "qvidw/problem_library.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "qvidw/rng.hpp"

namespace qvidw {

namespace {

Matrix uniform_matrix(Rng& rng, Index rows, Index cols, double lo, double hi) {
  Matrix A(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) A(r, c) = rng.uniform(lo, hi);
  return A;
}

Vector uniform_vector(Rng& rng, Index n, double lo, double hi) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

// Largest eigenvalue of a symmetric PSD matrix by fixed-length power
// iteration from the normalized all-ones vector.  Deterministic, and ample
// for rescaling purposes.
double largest_eigenvalue_est(const Matrix& S) {
  Vector v = Vector::Ones(S.rows());
  v /= v.norm();
  double rayleigh = 0.0;
  for (int it = 0; it < 60; ++it) {
    Vector w = S * v;
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    v = w / nw;
    rayleigh = v.dot(S * v);
  }
  return rayleigh;
}

void require_symmetric(const Matrix& A, const char* label) {
  const double scale = 1.0 + A.cwiseAbs().maxCoeff();
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    std::ostringstream msg;
    msg << label << " must be symmetric";
    throw std::invalid_argument(msg.str());
  }
}

void require_positive_definite(const Matrix& A, const char* label) {
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << label << " must be positive definite";
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

WalrasianData sample_walrasian(int consumers, int goods, double M,
                               std::uint64_t seed) {
  if (consumers < 1 || goods < 1)
    throw std::invalid_argument("sample_walrasian: need C >= 1 and G >= 1");
  if (!(M > 0.0))
    throw std::invalid_argument("sample_walrasian: capacity must be positive");

  Rng rng(seed);
  WalrasianData data;
  data.consumers = consumers;
  data.goods = goods;
  data.M = M;
  data.seed = seed;
  data.R_list.reserve(consumers);
  data.b_list.reserve(consumers);
  data.E_list.reserve(consumers);
  for (int i = 0; i < consumers; ++i) {
    data.b_list.push_back(uniform_vector(rng, goods, 0.0, 10.0));
    const Matrix A = uniform_matrix(rng, goods, goods, -1.0, 1.0);
    Matrix B = A.transpose() * A;
    const double peak = B.cwiseAbs().maxCoeff();
    if (peak > 0.0) B *= 10.0 / peak;
    data.R_list.push_back(std::move(B));
    data.E_list.push_back(uniform_vector(rng, goods, 0.0, 10.0));
  }
  return data;
}

QviProblem make_walrasian(const WalrasianData& data) {
  const int C = data.consumers;
  const int G = data.goods;
  if (C < 1 || G < 1)
    throw std::invalid_argument("make_walrasian: need C >= 1 and G >= 1");
  if (!(data.M > 0.0))
    throw std::invalid_argument("make_walrasian: capacity must be positive");
  if (data.R_list.size() != static_cast<std::size_t>(C) ||
      data.b_list.size() != static_cast<std::size_t>(C) ||
      data.E_list.size() != static_cast<std::size_t>(C))
    throw std::invalid_argument(
        "make_walrasian: need one R, b, E per consumer");
  for (int i = 0; i < C; ++i) {
    if (data.R_list[i].rows() != G || data.R_list[i].cols() != G ||
        data.b_list[i].size() != G || data.E_list[i].size() != G)
      throw std::invalid_argument("make_walrasian: consumer data must be GxG/G");
    require_symmetric(data.R_list[i], "make_walrasian: R");
    if (data.E_list[i].minCoeff() < 0.0)
      throw std::invalid_argument(
          "make_walrasian: endowments must be nonnegative");
  }

  const Index n = static_cast<Index>(C + 2) * G;
  const Index firm_off = static_cast<Index>(C) * G;
  const Index price_off = static_cast<Index>(C + 1) * G;

  // F is affine: consumer blocks R^i x^i - b^i, the firm sees -p, and the
  // price player sees the excess supply sum(E^i - x^i) + production.
  Matrix A = Matrix::Zero(n, n);
  Vector b = Vector::Zero(n);
  Vector total_endowment = Vector::Zero(G);
  for (int i = 0; i < C; ++i) {
    const Index off = static_cast<Index>(i) * G;
    A.block(off, off, G, G) = data.R_list[i];
    b.segment(off, G) = -data.b_list[i];
    A.block(price_off, off, G, G) = -Matrix::Identity(G, G);
    total_endowment += data.E_list[i];
  }
  A.block(firm_off, price_off, G, G) = -Matrix::Identity(G, G);
  A.block(price_off, firm_off, G, G) = Matrix::Identity(G, G);
  b.segment(price_off, G) = total_endowment;

  QviProblem problem;
  {
    std::ostringstream name;
    name << "walrasian_C" << C << "_G" << G << "_seed" << data.seed;
    problem.name = name.str();
  }
  problem.op.dim = n;
  problem.op.affine = OperatorSpec::AffineForm{A, b};
  problem.op.eval = [A, b](const Vector& x) -> Vector { return A * x + b; };
  problem.op.jacobian = [A](const Vector&) { return A; };

  // Budget constraints: g_i(y, x) = <p(x), y^i - E^i> with p(x) the price
  // block of the parameter.  Linear in y, so the gradient has no curvature.
  const std::vector<Vector> E = data.E_list;
  const int CC = C, GG = G;
  const Index po = price_off;
  auto budget_grad = [CC, GG, po, n](const Vector& x) -> Matrix {
    Matrix grad = Matrix::Zero(n, CC);
    const Vector p = x.segment(po, GG);
    for (int i = 0; i < CC; ++i)
      grad.col(i).segment(static_cast<Index>(i) * GG, GG) = p;
    return grad;
  };
  problem.coupled.count = C;
  problem.coupled.eval = [CC, GG, po, E](const Vector& y,
                                         const Vector& x) -> Vector {
    const Vector p = x.segment(po, GG);
    Vector g(CC);
    for (int i = 0; i < CC; ++i)
      g[i] = p.dot(y.segment(static_cast<Index>(i) * GG, GG) - E[i]);
    return g;
  };
  problem.coupled.grad_y = [budget_grad](const Vector&, const Vector& x) {
    return budget_grad(x);
  };
  problem.coupled.grad_y_affine =
      CoupledConstraints::AffineGradY{{}, budget_grad};

  std::vector<ConvexSet> blocks;
  blocks.reserve(C + 2);
  for (int i = 0; i < C; ++i) blocks.push_back(ConvexSet::nonneg_orthant(G));
  blocks.push_back(ConvexSet::ball_nonneg(G, data.M));
  blocks.push_back(ConvexSet::simplex(G));
  problem.easy_set = ProductSet(std::move(blocks));

  problem.jacobi_blocks.assign(static_cast<std::size_t>(C), G);
  problem.jacobi_blocks.push_back(2 * static_cast<Index>(G));

  problem.metadata["family"] = "walrasian";
  problem.metadata["consumers"] = std::to_string(C);
  problem.metadata["goods"] = std::to_string(G);
  problem.metadata["capacity"] = std::to_string(data.M);
  problem.metadata["seed"] = std::to_string(data.seed);
  return problem;
}

double walras_default_capacity(int consumers, int goods) {
  return 10.0 * static_cast<double>(consumers) * static_cast<double>(goods);
}

QviProblem gen_walrasian(int consumers, int goods, double M,
                         std::uint64_t seed) {
  return make_walrasian(sample_walrasian(consumers, goods, M, seed));
}

Vector walras_initial_point(int consumers, int goods) {
  if (consumers < 1 || goods < 1)
    throw std::invalid_argument(
        "walras_initial_point: need C >= 1 and G >= 1");
  const Index n = static_cast<Index>(consumers + 2) * goods;
  Vector y = Vector::Zero(n);
  y.segment(static_cast<Index>(consumers + 1) * goods, goods)
      .setConstant(1.0 / static_cast<double>(goods));
  return y;
}

MovSetData sample_movset(Index n, std::uint64_t seed, double spectral_margin,
                         double d) {
  if (n < 1) throw std::invalid_argument("sample_movset: need n >= 1");
  if (!(d > 0.0)) throw std::invalid_argument("sample_movset: need d > 0");
  if (!(spectral_margin > 0.0) || !(spectral_margin < 1.0))
    throw std::invalid_argument(
        "sample_movset: spectral_margin must lie in (0,1)");

  Rng rng(seed);
  MovSetData data;
  data.n = n;
  data.seed = seed;
  data.spectral_margin = spectral_margin;
  data.d = d;

  const auto random_spd = [&rng, n]() {
    Matrix S(n, n);
    for (Index r = 0; r < n; ++r)
      for (Index c = 0; c < n; ++c) S(r, c) = rng.normal();
    Matrix M = S.transpose() * S + 0.5 * Matrix::Identity(n, n);
    const double top = largest_eigenvalue_est(M);
    if (top > 0.0) M /= top;
    return M;
  };
  data.A_mat = random_spd();
  data.R_mat = random_spd();

  Matrix T(n, n);
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < n; ++c) T(r, c) = rng.normal();
  const Eigen::HouseholderQR<Matrix> qr(T);
  data.B_mat = spectral_margin * Matrix(qr.householderQ());

  data.b_vec = uniform_vector(rng, n, -1.0, 1.0);
  return data;
}

QviProblem make_movset(const MovSetData& data) {
  const Index n = data.n;
  if (n < 1) throw std::invalid_argument("make_movset: need n >= 1");
  if (!(data.d > 0.0)) throw std::invalid_argument("make_movset: need d > 0");
  if (data.A_mat.rows() != n || data.A_mat.cols() != n ||
      data.R_mat.rows() != n || data.R_mat.cols() != n ||
      data.B_mat.rows() != n || data.B_mat.cols() != n ||
      data.b_vec.size() != n)
    throw std::invalid_argument("make_movset: matrix sizes must all be n");
  require_symmetric(data.A_mat, "make_movset: A");
  require_symmetric(data.R_mat, "make_movset: R");
  require_positive_definite(data.A_mat, "make_movset: A");
  require_positive_definite(data.R_mat, "make_movset: R");

  const Matrix A = data.A_mat;
  const Matrix R = data.R_mat;
  const Matrix B = data.B_mat;
  const Vector b = data.b_vec;
  const double d = data.d;

  QviProblem problem;
  {
    std::ostringstream name;
    name << "moving_set_n" << n << "_seed" << data.seed;
    problem.name = name.str();
  }
  problem.op.dim = n;
  problem.op.affine = OperatorSpec::AffineForm{A, b};
  problem.op.eval = [A, b](const Vector& x) -> Vector { return A * x + b; };
  problem.op.jacobian = [A](const Vector&) { return A; };

  problem.coupled.count = 1;
  problem.coupled.eval = [R, B, d](const Vector& y, const Vector& x) -> Vector {
    const Vector w = y - B * x;
    Vector g(1);
    g[0] = w.dot(R * w) - d;
    return g;
  };
  problem.coupled.grad_y = [R, B](const Vector& y, const Vector& x) -> Matrix {
    return 2.0 * (R * (y - B * x));
  };
  const Matrix RB2 = 2.0 * (R * B);
  problem.coupled.grad_y_affine = CoupledConstraints::AffineGradY{
      {2.0 * R}, [RB2](const Vector& x) -> Matrix { return -(RB2 * x); }};

  problem.easy_set = ProductSet({ConvexSet::all_space(n)});
  problem.jacobi_blocks = {n};

  problem.metadata["family"] = "moving_set";
  problem.metadata["n"] = std::to_string(n);
  problem.metadata["seed"] = std::to_string(data.seed);
  problem.metadata["spectral_margin"] = std::to_string(data.spectral_margin);
  problem.metadata["level"] = std::to_string(data.d);
  return problem;
}

QviProblem gen_movset(Index n, std::uint64_t seed, double spectral_margin,
                      double d) {
  return make_movset(sample_movset(n, seed, spectral_margin, d));
}

Vector movset_initial_point(Index n) {
  if (n < 1) throw std::invalid_argument("movset_initial_point: need n >= 1");
  return Vector::Zero(n);
}

}  // namespace qvidw
