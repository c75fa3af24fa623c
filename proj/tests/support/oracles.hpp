// Independent reference implementations used to certify the library. These
// deliberately recompute results the slow, obvious way (exhaustive
// enumeration, naive double sums, finite differences, closed-form duals) and
// share no internals with core/ beyond its public types.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include <domcal/calibrate.hpp>
#include <domcal/env_data.hpp>
#include <domcal/metrics.hpp>

namespace testsupport {

// Exact weighted monotone least squares by enumerating every consecutive-block
// partition (2^(n-1) candidates, n <= ~16); a partition is feasible when its
// block means are nondecreasing, and the optimum over feasible partitions is
// the isotonic optimum. Returns the minimal sum_i w_i (y_i - z_i)^2.
double exhaustive_isotonic_objective(const std::vector<double>& targets,
                                     const std::vector<double>& weights);

// Independent weighted pool-adjacent-violators (stack form), used as a
// building block for the robust dual oracle below.
std::vector<double> reference_pava(const std::vector<double>& targets,
                                   const std::vector<double>& weights);

// Naive O(m^2) kernel calibration error: correctness c = 1{1{f>=0.5} == y},
// confidence r = max(f, 1-f), value (1/m^2) sum_ij (c_i-r_i)(c_j-r_j)
// k(r_i,r_j), optionally clamped at zero.
double mmce_double_sum(const domcal::PredictionSet& preds,
                       const domcal::KernelSpec& kernel, bool clamp = true);

// Exact optimum of the two-environment min-max isotonic program via strong
// duality: maximize over the environment weight the pooled weighted-isotonic
// inner optimum (concave and unimodal in the weight; golden-section search).
double robust_two_env_optimum(const domcal::FitSample& env_a,
                              const domcal::FitSample& env_b);

// Two-bit posterior by brute-force enumeration of the eight
// (label, flip1, flip2) outcomes of the joint table.
double two_bit_posterior_table(const domcal::TwoBitEnvSpec& spec, int x1,
                               int x2);

// Central finite-difference gradient of a scalar function.
Eigen::VectorXd central_difference(
    const std::function<double(const Eigen::VectorXd&)>& fn,
    const Eigen::VectorXd& x, double step = 1e-5);

// ||a - b|| / max(1e-12, ||a||, ||b||), the gradient-check error measure.
double relative_gap(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

double median(std::vector<double> values);

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// ---- randomized specs for the theory and acceptance suites ----

// Random environments with well-conditioned covariances; general position
// holds almost surely.
domcal::GaussianEnvSpecA random_spec_a(std::uint64_t seed, int d_ns = 3,
                                       int d_sp = 2, int k = 5);
domcal::GaussianEnvSpecB random_spec_b(std::uint64_t seed, int d_c = 2,
                                       int d_sp = 2, int k = 6);

// Five environments whose spurious means fan out over +-100 degrees around a
// random orientation at four times the stable block's scale (norms 0.6..1.8
// against 0.3). Spurious features dominate a plain ERM fit, while their
// cross-environment disagreement makes the calibration penalty prefer the
// stable block once the penalty weight crosses ~5.
domcal::GaussianEnvSpecA fan_spec_a(std::uint64_t seed);

}  // namespace testsupport
