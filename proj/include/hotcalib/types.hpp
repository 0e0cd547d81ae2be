#pragma once

#include <Eigen/Dense>

namespace hotcalib {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Sample-per-row storage for feature sets.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

}  // namespace hotcalib
