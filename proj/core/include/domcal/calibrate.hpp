// Post-processing calibrators: isotonic regression (PAVA), Platt scaling,
// pooled naive calibration, and min-max robust isotonic over environments.
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "domcal/metrics.hpp"

namespace domcal {

// Piecewise monotone recalibration map. Inputs outside the knot range clamp
// to the end values; between knots the interpolation rule applies.
struct MonotoneMap {
  enum class Interp { step, linear };
  std::vector<double> knots;   // strictly ascending
  std::vector<double> values;  // nondecreasing, in [0,1]
  Interp interp = Interp::linear;

  void validate() const;
  double operator()(double x) const;
};

// sigmoid(a * logit(f) + b), with f clipped to [1e-6, 1-1e-6] before logit.
struct PlattMap {
  double a = 1.0;
  double b = 0.0;
  double operator()(double f) const;
};

Eigen::VectorXd apply(const MonotoneMap& map, const Eigen::VectorXd& preds);
Eigen::VectorXd apply(const PlattMap& map, const Eigen::VectorXd& preds);

// Exact weighted least-squares fit of a nondecreasing sequence, by
// pool-adjacent-violators. Weights must be positive.
std::vector<double> pava(const std::vector<double>& targets,
                         const std::vector<double>& weights);

// One environment's calibration-fitting data; targets may be any values in
// [0,1] (binary labels are the common case).
struct FitSample {
  Eigen::VectorXd f;
  Eigen::VectorXd y;
};

// Least-squares monotone fit of y on f. Ties in f are merged into a single
// knot with label-mean target weighted by multiplicity.
MonotoneMap fit_isotonic(const Eigen::VectorXd& f, const Eigen::VectorXd& y);
MonotoneMap fit_isotonic(const PredictionSet& preds);

// Platt scaling by damped Newton on mean cross-entropy; requires both
// classes present. Converged when gradient inf-norm < 1e-8 (200 iters max).
PlattMap fit_platt(const PredictionSet& preds);

// Pool all environments' pairs and fit a single isotonic map.
MonotoneMap calibrate_naive(const std::vector<PredictionSet>& envs);

struct RobustOptions {
  std::size_t max_iters = 10000;
  double stability_tol = 1e-6;     // level-offset floor; a full ladder pass
                                   // improving the record by less than this
                                   // ends the fit
  std::size_t stability_window = 500;  // progress probes run every
                                       // stability_window / 10 iterations
  double target_slack = 1e-2;      // initial Polyak level offset; halved
                                   // whenever a probe interval stalls
};

struct RobustFitResult {
  MonotoneMap map;
  double objective = 0.0;  // achieved worst-environment mean squared error
  bool converged = false;
  std::size_t iterations = 0;
};

// Minimize max_e (1/N_e) sum_i (z(f_{e,i}) - y_{e,i})^2 over nondecreasing z
// valued at the pooled distinct prediction points, z in [0,1]. Projected
// subgradient with Polyak-style steps, warm-started at the pooled isotonic
// fit (so the result never does worse than naive pooling).
RobustFitResult calibrate_robust(const std::vector<FitSample>& envs,
                                 const RobustOptions& options = {});
RobustFitResult calibrate_robust(const std::vector<PredictionSet>& envs,
                                 const RobustOptions& options = {});

}  // namespace domcal
