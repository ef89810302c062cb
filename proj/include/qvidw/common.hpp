#pragma once

#include <Eigen/Core>

namespace qvidw {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

}  // namespace qvidw
