#pragma once

#include <cstdint>

#include "qvidw/common.hpp"
#include "qvidw/qvi_model.hpp"

namespace qvidw {

struct DirectOptions {
  double tol = 1e-10;       // on the KKT system's max norm
  int max_iterations = 300;  // Newton iterations per attempt
  int max_restarts = 5;
  std::uint64_t seed = 0;
};

struct DirectResult {
  QviSolution solution;
  int iterations = 0;
  bool converged = false;
};

// Solves the full QVI KKT system in original coordinates (x, mu): the
// natural map of the easy set composed with F + grad g mu, paired with
// Fischer-Burmeister complementarity for the coupled constraints.  A
// semismooth Newton with Levenberg-Marquardt damping and perturbed
// restarts.  Intended as a small-instance oracle, not a scalable solver:
// every iteration forms a dense (n + m) square Jacobian.
DirectResult solve_direct(const QviProblem& problem, const Vector& x0,
                          const DirectOptions& options = {});

}  // namespace qvidw
