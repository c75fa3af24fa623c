// Small dense linear-algebra helpers: SPD Cholesky with an explicit pivot
// tolerance and SVD-based numerical rank.
#pragma once

#include <Eigen/Dense>

namespace domcal {

// Lower Cholesky factor of a symmetric positive-definite matrix.
// Throws input_error when the matrix is not symmetric or a pivot falls at or
// below `pivot_tol` times the largest diagonal magnitude (the scale-relative
// SPD check used by the data generators).
Eigen::MatrixXd cholesky_spd(const Eigen::MatrixXd& a, double pivot_tol = 1e-10,
                             const char* what = "covariance");

// Number of singular values above rel_tol * sigma_max (0 for an all-zero
// matrix).
int numerical_rank(const Eigen::MatrixXd& a, double rel_tol = 1e-8);

}  // namespace domcal
