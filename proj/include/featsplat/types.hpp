#pragma once

#include <Eigen/Core>

namespace fsplat {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace fsplat
