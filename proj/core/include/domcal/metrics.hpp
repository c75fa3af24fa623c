// Calibration and invariance metrics: reliability bins, ECE, Brier with its
// calibration/refinement split, kernel MMCE, CLOvE, and the IRMv1 penalty.
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace domcal {

// Aligned per-environment predicted probabilities and binary labels.
struct PredictionSet {
  std::string env_id;
  Eigen::VectorXd confidences;  // in [0,1]
  Eigen::VectorXd labels;       // {0,1}
  void validate() const;
};

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double conf = 0.0;  // mean predicted probability of members, 0 if empty
  double acc = 0.0;   // mean label of members, 0 if empty
};

struct ReliabilityBins {
  int num_bins = 0;
  std::size_t total = 0;
  std::vector<ReliabilityBin> bins;
};

struct KernelSpec {
  enum class Kind { rbf };
  Kind kind = Kind::rbf;
  double gamma = 2.5;
  void validate() const;
  double operator()(double a, double b) const;
};

struct BrierDecomposition {
  double brier = 0.0;
  double cal = 0.0;
  double ref = 0.0;
};

// Logit-space view of one environment, for the scalar-rescaling penalty.
struct LogitSet {
  std::string env_id;
  Eigen::VectorXd logits;
  Eigen::VectorXd labels;  // {0,1}
};

enum class AggregateMode { mean, max };

// Equal-width binning of [0,1]; a probability of exactly 1.0 falls in the
// last bin. Throws input_error on empty input or B < 1.
ReliabilityBins reliability_bins(const PredictionSet& preds, int num_bins);

// Sum over occupied bins of (n_b/N) * |acc - conf|.
double ece(const PredictionSet& preds, int num_bins = 10);

// Mean squared error split by grouping on exact distinct prediction values:
// brier = cal + ref with cal the squared gap to each group's label mean and
// ref the label-mean binomial variance.
BrierDecomposition brier_decomposition(const PredictionSet& preds);

// Kernel calibration error: with confidence r = max(f, 1-f) and correctness
// c = 1{predicted class == label} (threshold 1/2, ties to class 1), returns
// (1/m^2) sum_{ij} (c_i-r_i)(c_j-r_j) k(r_i,r_j), clamped at 0.
double mmce(const PredictionSet& preds, const KernelSpec& kernel = {});

// Population form over weighted atoms: confidences r, per-atom probability
// of correctness, and masses summing to 1.
double mmce_weighted(const Eigen::VectorXd& confidence,
                     const Eigen::VectorXd& correct_rate,
                     const Eigen::VectorXd& mass,
                     const KernelSpec& kernel = {});

// Sum of per-environment MMCE.
double clove(const std::vector<PredictionSet>& envs,
             const KernelSpec& kernel = {});

// Per environment, the squared derivative of mean cross-entropy with respect
// to a scalar scaling of the logits at scale 1, summed over environments.
double irmv1_penalty(const std::vector<LogitSet>& envs);

double aggregate(const std::vector<double>& scores, AggregateMode mode);

}  // namespace domcal
