#pragma once

#include <cstdint>
#include <vector>

#include "qvidw/common.hpp"
#include "qvidw/qvi_model.hpp"

namespace qvidw {

// Walrasian exchange economy: C consumers with quadratic disutilities, one
// capacity-bounded firm, and a price player on the unit simplex.  Variables
// stack as (x^1, ..., x^C, firm, prices), so n = (C + 2) G.  Each consumer's
// budget <p, x^i - E^i> <= 0 couples through the prices, which makes the
// game a QVI rather than a plain VI.
struct WalrasianData {
  int consumers = 0;           // C
  int goods = 0;               // G
  std::vector<Matrix> R_list;  // G x G PSD disutility curvature, one per consumer
  std::vector<Vector> b_list;  // linear utility coefficients
  std::vector<Vector> E_list;  // endowments
  double M = 0.0;              // firm capacity: ||production||^2 <= M
  std::uint64_t seed = 0;
};

// Draws consumer data from the seeded recipe: b^i, E^i uniform in [0,10]^G
// and R^i = (10 / max|B^i|) B^i with B^i = A^T A, A uniform in [-1,1]^{GxG},
// so R^i is PSD with entries in [-10,10].
WalrasianData sample_walrasian(int consumers, int goods, double M,
                               std::uint64_t seed);

// Assembles the QVI from explicit data (the path for closed-form instances).
QviProblem make_walrasian(const WalrasianData& data);

// 10 C G, large enough that the capacity never binds at the equilibria the
// sampling recipe produces.
double walras_default_capacity(int consumers, int goods);

// Sample then assemble.
QviProblem gen_walrasian(int consumers, int goods, double M,
                         std::uint64_t seed);

// Prices 1/G each, every other coordinate zero.  Feasible for its own
// budget constraints since endowments are nonnegative.
Vector walras_initial_point(int consumers, int goods);

// Moving-set QVI: F(x) = A x + b over all of R^n, with the single coupled
// constraint <R (y - B x), y - B x> <= d, an ellipsoid whose center B x
// follows the parameter.
struct MovSetData {
  Index n = 0;
  Matrix A_mat;  // positive definite
  Matrix R_mat;  // positive definite
  Matrix B_mat;  // ||B|| = spectral_margin < 1 keeps the fixed point tame
  Vector b_vec;
  double d = 0.0;  // ellipsoid level, > 0
  std::uint64_t seed = 0;
  double spectral_margin = 0.0;
};

// Seeded recipe: A and R are S^T S + I/2 rescaled to unit spectral norm
// (so both are positive definite with norm 1), B is spectral_margin times
// the orthogonal factor of a random matrix, b is uniform in [-1,1]^n.
MovSetData sample_movset(Index n, std::uint64_t seed,
                         double spectral_margin = 0.5, double d = 1.0);

QviProblem make_movset(const MovSetData& data);

QviProblem gen_movset(Index n, std::uint64_t seed,
                      double spectral_margin = 0.5, double d = 1.0);

// The zero vector; inside the moving set at itself because g(0,0) = -d < 0.
Vector movset_initial_point(Index n);

}  // namespace qvidw
