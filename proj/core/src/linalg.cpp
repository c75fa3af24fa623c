#include "domcal/linalg.hpp"

#include <cmath>
#include <string>

#include "domcal/errors.hpp"

namespace domcal {

Eigen::MatrixXd cholesky_spd(const Eigen::MatrixXd& a, double pivot_tol,
                             const char* what) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) {
    throw input_error(std::string(what) + " matrix is not square");
  }
  if (!a.isApprox(a.transpose(), 1e-12)) {
    throw input_error(std::string(what) + " matrix is not symmetric");
  }
  if (n == 0) return Eigen::MatrixXd(0, 0);
  // Pivot acceptance is relative to the matrix's own scale so that the SPD
  // verdict is invariant under positive rescaling (epsilon * I is SPD for
  // any positive epsilon).
  const double scale = a.diagonal().cwiseAbs().maxCoeff();
  const double threshold = pivot_tol * scale;
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > threshold)) {
      throw input_error(std::string(what) +
                        " matrix is not positive definite (pivot " +
                        std::to_string(d) + " at index " + std::to_string(j) +
                        ")");
    }
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return l;
}

int numerical_rank(const Eigen::MatrixXd& a, double rel_tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double tol = rel_tol * s(0);
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > tol) ++rank;
  }
  return rank;
}

}  // namespace domcal
