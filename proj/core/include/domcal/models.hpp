// Trainable predictors (logistic-linear, small MLP, two-moment linear
// regressor), penalized objectives (CLOvE / IRMv1), analytic gradients, a
// small deterministic trainer, and the exact population landscape over odd
// two-bit classifiers.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "domcal/env_data.hpp"
#include "domcal/metrics.hpp"

namespace domcal {

enum class ModelFamily { linear, mlp, two_moment };
enum class BaseLoss { cross_entropy, squared };
enum class PenaltyKind { none, clove, irmv1 };
enum class Optimizer { sgd, adagrad, adam };

// Flat-parameter model value. Layouts:
//   linear:     [w(0..d-1), b]                  -> sigmoid(w.x + b)
//   two_moment: [w(0..d-1), c]                  -> mean w.x, constant var c
//   mlp:        per layer, row-major W then b;  -> ReLU hidden, sigmoid out
struct Model {
  ModelFamily family = ModelFamily::linear;
  Eigen::Index input_dim = 0;
  std::vector<Eigen::Index> hidden;  // mlp hidden widths
  Eigen::VectorXd params;

  static Model linear(Eigen::Index input_dim);
  static Model linear(const Eigen::VectorXd& w, double b);
  static Model two_moment(const Eigen::VectorXd& w, double c);
  // He-style random init, deterministic in the seed.
  static Model mlp(Eigen::Index input_dim, std::vector<Eigen::Index> hidden,
                   std::uint64_t seed);

  Eigen::Index expected_params() const;
  void validate() const;
};

struct ObjectiveSpec {
  BaseLoss base_loss = BaseLoss::cross_entropy;
  PenaltyKind penalty = PenaltyKind::none;
  double lambda = 0.0;
  KernelSpec kernel{};
  // Estimator for the CLOvE penalty on a sample. The plain form is the
  // metric's full double sum, a V-statistic whose O(1/m) bias rewards
  // overconfidence when minimized on small batches; the unbiased form drops
  // the diagonal pairs so minibatch penalty gradients are unbiased for the
  // population penalty (and its value may dip slightly below zero). Metric
  // reporting uses the plain form; training should use the unbiased one.
  bool unbiased_penalty = false;
  void validate() const;
};

// Predicted probability for classifiers; predicted mean for the regressor.
Eigen::VectorXd forward(const Model& model, const Eigen::MatrixXd& features);
// Pre-link scores; classifiers only.
Eigen::VectorXd logits(const Model& model, const Eigen::MatrixXd& features);

struct ObjectiveParts {
  double total = 0.0;
  double base = 0.0;     // sum over envs of mean base loss
  double penalty = 0.0;  // unweighted penalty value (total = base + lambda*penalty)
};

ObjectiveParts objective_parts(const Model& model,
                               const EnvironmentBundle& bundle,
                               const ObjectiveSpec& spec);
double objective(const Model& model, const EnvironmentBundle& bundle,
                 const ObjectiveSpec& spec);

// Analytic gradient of the objective in the flat parameter layout. MMCE
// correctness flags are held constant, matching the differentiable reading
// of the penalty.
Eigen::VectorXd gradient(const Model& model, const EnvironmentBundle& bundle,
                         const ObjectiveSpec& spec);

struct TrainHyper {
  double lr = 0.1;
  std::size_t steps = 200;
  std::size_t batch = 512;  // per environment; 0 means full batch
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  void validate() const;
};

struct TraceRow {
  std::size_t step = 0;
  double objective = 0.0;
  double base_loss = 0.0;
  double penalty = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<TraceRow> trace;
};

// Minibatch training with per-environment batches each step; deterministic
// for a fixed seed. Throws numeric_error naming the step if the objective
// becomes non-finite.
TrainResult train(const Model& init, const EnvironmentBundle& bundle,
                  const ObjectiveSpec& spec, const TrainHyper& hyper);

// Exact population landscape over odd two-bit classifiers, parameterized by
// the class-1 probabilities p1 = f(+1,+1) and p2 = f(+1,-1); oddness gives
// f(-1,-1) = 1-p1 and f(-1,+1) = 1-p2. All quantities are closed-form
// enumerations of the 8-outcome joint distribution per environment.
struct TwoBitLandscape {
  std::vector<double> axis;  // shared grid for p1 and p2
  std::size_t num_envs = 0;
  // Point (i,j) = (axis[i], axis[j]) stored at flat index i*axis.size()+j.
  std::vector<double> train_loss;          // summed per-env cross-entropy
  std::vector<std::vector<double>> mmce;   // [env][point]
  std::vector<std::vector<double>> irmv1;  // [env][point]
};

TwoBitLandscape two_bit_population_penalties(
    const std::vector<TwoBitEnvSpec>& envs, int points_per_axis = 401,
    const KernelSpec& kernel = {});

// Population quantities of a single odd classifier on one environment; the
// landscape is this evaluated on the grid. Exposed for spot checks.
struct TwoBitPointScores {
  double cross_entropy = 0.0;
  double mmce = 0.0;
  double irmv1 = 0.0;
};
TwoBitPointScores two_bit_point_scores(const TwoBitEnvSpec& env, double p1,
                                       double p2,
                                       const KernelSpec& kernel = {});

}  // namespace domcal
