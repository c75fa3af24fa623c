// Internal quasi-Newton minimizer for the low-dimensional smooth constraint
// systems: BFGS with central-difference gradients and Armijo backtracking.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>

namespace domcal::detail {

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
};

inline Eigen::VectorXd fd_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * (1.0 + std::abs(x(i)));
    probe(i) = x(i) + h;
    const double hi = f(probe);
    probe(i) = x(i) - h;
    const double lo = f(probe);
    probe(i) = x(i);
    g(i) = (hi - lo) / (2.0 * h);
  }
  return g;
}

inline MinimizeResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&)>& f,
    Eigen::VectorXd x0, int max_iters = 300, double grad_tol = 1e-10) {
  const Eigen::Index n = x0.size();
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd x = std::move(x0);
  double fx = f(x);
  Eigen::VectorXd g = fd_gradient(f, x);

  MinimizeResult out;
  int iter = 0;
  for (; iter < max_iters; ++iter) {
    if (g.norm() < grad_tol) break;
    Eigen::VectorXd dir = -(h_inv * g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // reset a corrupted metric
      h_inv.setIdentity();
      dir = -g;
      slope = g.dot(dir);
      if (!(slope < 0.0)) break;
    }
    // Armijo backtracking.
    double step = 1.0;
    double f_new = fx;
    Eigen::VectorXd x_new = x;
    bool moved = false;
    for (int k = 0; k < 50; ++k) {
      x_new = x + step * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;

    const Eigen::VectorXd g_new = fd_gradient(f, x_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const Eigen::VectorXd hy = h_inv * yv;
      const double yhy = yv.dot(hy);
      // Standard BFGS inverse update.
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
               (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    x = std::move(x_new);
    fx = f_new;
    g = g_new;
  }
  out.x = std::move(x);
  out.value = fx;
  out.iterations = iter;
  return out;
}

}  // namespace domcal::detail
