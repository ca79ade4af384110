#pragma once

#include <Eigen/Dense>

namespace pssuq {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

}  // namespace pssuq
