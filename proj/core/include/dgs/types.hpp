#pragma once

#include <Eigen/Dense>

namespace dgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;
using VecXi = Eigen::VectorXi;
using MatXi = Eigen::MatrixXi;

}  // namespace dgs
