// Environment-indexed datasets: file ingestion plus the three synthetic
// generators (anti-causal Gaussian classification, Gaussian regression with
// label-dependent spurious features, and the two-bit binary setting).
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "domcal/rng.hpp"

namespace domcal {

struct Environment {
  std::string id;
  Eigen::MatrixXd features;  // n_e x d
  Eigen::VectorXd labels;    // {0,1} for classification, real for regression
};

// Per-environment labeled datasets sharing one feature dimension.
struct EnvironmentBundle {
  std::vector<Environment> environments;

  Eigen::Index feature_dim() const {
    return environments.empty() ? 0 : environments.front().features.cols();
  }
  // Throws input_error when an invariant is broken (empty env, mismatched
  // widths, duplicate ids).
  void validate() const;
};

// Anti-causal Gaussian classification setting. Labels are Bernoulli(eta) in
// {0,1}; both feature blocks are Gaussian with label-dependent means
// (y - 1/2) * mu. The second block's parameters vary per environment.
struct GaussianEnvSpecA {
  double eta = 0.5;
  Eigen::VectorXd mu_ns;   // shared block mean direction [d_ns]
  Eigen::MatrixXd sigma_ns;  // shared block covariance, SPD
  std::vector<Eigen::VectorXd> mu_sp;   // per-env mean direction [d_sp]
  std::vector<Eigen::MatrixXd> sigma_sp;  // per-env covariance, SPD

  Eigen::Index d_ns() const { return mu_ns.size(); }
  Eigen::Index d_sp() const { return mu_sp.empty() ? 0 : mu_sp.front().size(); }
  std::size_t num_envs() const { return mu_sp.size(); }
  void validate() const;
};

// Gaussian regression setting: y = w_c_star . x_c + noise, and the spurious
// block is generated from the label, x_sp = y * mu_i + noise_i.
struct GaussianEnvSpecB {
  Eigen::VectorXd w_c_star;  // [d_c]
  double sigma_y2 = 1.0;     // label noise variance
  std::vector<Eigen::VectorXd> mu_c;     // per-env causal mean [d_c]
  std::vector<Eigen::MatrixXd> sigma_c;  // per-env causal covariance, SPD
  std::vector<Eigen::VectorXd> mu_sp;    // per-env spurious direction [d_sp]
  std::vector<Eigen::MatrixXd> sigma_sp;  // per-env spurious covariance, SPD

  Eigen::Index d_c() const { return w_c_star.size(); }
  Eigen::Index d_sp() const { return mu_sp.empty() ? 0 : mu_sp.front().size(); }
  std::size_t num_envs() const { return mu_c.size(); }
  void validate() const;
};

// Two binary features X1, X2 in {-1,+1}, each equal to the (sign) label
// flipped independently with probability alpha resp. beta.
struct TwoBitEnvSpec {
  double alpha = 0.0;
  double beta = 0.0;
  void validate() const;
};

// File ingestion. CSV header: env,y,x0,...,x{d-1}. JSON:
// {"environments":[{"id":str,"features":[[...]],"labels":[...]}]}.
enum class BundleFormat { csv, json };
EnvironmentBundle load_bundle(const std::string& path, BundleFormat format);
void save_bundle(const EnvironmentBundle& bundle, const std::string& path,
                 BundleFormat format);

EnvironmentBundle generate_setting_a(const GaussianEnvSpecA& spec,
                                     std::size_t n_per_env,
                                     std::uint64_t seed);
EnvironmentBundle generate_setting_b(const GaussianEnvSpecB& spec,
                                     std::size_t n_per_env,
                                     std::uint64_t seed);

struct TwoBitSample {
  Eigen::MatrixXd features;  // n x 2, entries in {-1,+1}
  Eigen::VectorXd labels;    // {0,1}
};
TwoBitSample generate_two_bit(const TwoBitEnvSpec& spec, std::size_t n,
                              std::uint64_t seed);

// Bundle over several two-bit environments (ids "e0", "e1", ...).
EnvironmentBundle generate_two_bit_bundle(
    const std::vector<TwoBitEnvSpec>& specs, std::size_t n_per_env,
    std::uint64_t seed);

// Exact Bayes posterior P(Y=+1 | X1=x1, X2=x2) of the two-bit model.
double two_bit_posterior(const TwoBitEnvSpec& spec, int x1, int x2);

}  // namespace domcal
