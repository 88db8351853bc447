#pragma once

#include <Eigen/Dense>

#include <complex>

namespace covfk {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

// fixed-capacity stack types for the per-step sampling loops; model
// geometries have dim <= 8 and bundles rank <= 8
using CoordVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 8, 1>;
using FrameMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 8, 8>;
using FiberMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, 0, 8, 8>;
using FiberVec = Eigen::Matrix<cplx, Eigen::Dynamic, 1, 0, 8, 1>;

inline constexpr cplx kI{0.0, 1.0};

} // namespace covfk
