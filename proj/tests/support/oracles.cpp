#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <domcal/rng.hpp>

namespace testsupport {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double exhaustive_isotonic_objective(const std::vector<double>& targets,
                                     const std::vector<double>& weights) {
  const std::size_t n = targets.size();
  if (n == 0) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  // Bit b of `mask` set means a block boundary between positions b and b+1.
  for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    double objective = 0.0;
    double prev_mean = -std::numeric_limits<double>::infinity();
    bool feasible = true;
    std::size_t start = 0;
    for (std::size_t end = 0; end < n && feasible; ++end) {
      const bool boundary = end + 1 == n || (mask >> end) & 1u;
      if (!boundary) continue;
      double sw = 0.0, swy = 0.0;
      for (std::size_t i = start; i <= end; ++i) {
        sw += weights[i];
        swy += weights[i] * targets[i];
      }
      const double mean = swy / sw;
      if (mean < prev_mean) {
        feasible = false;
        break;
      }
      for (std::size_t i = start; i <= end; ++i)
        objective += weights[i] * (targets[i] - mean) * (targets[i] - mean);
      prev_mean = mean;
      start = end + 1;
    }
    if (feasible) best = std::min(best, objective);
  }
  return best;
}

std::vector<double> reference_pava(const std::vector<double>& targets,
                                   const std::vector<double>& weights) {
  struct Block {
    double sum_w, sum_wy;
    std::size_t count;
    double mean() const { return sum_wy / sum_w; }
  };
  std::vector<Block> stack;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    stack.push_back({weights[i], weights[i] * targets[i], 1});
    while (stack.size() > 1 &&
           stack[stack.size() - 2].mean() >= stack.back().mean()) {
      stack[stack.size() - 2].sum_w += stack.back().sum_w;
      stack[stack.size() - 2].sum_wy += stack.back().sum_wy;
      stack[stack.size() - 2].count += stack.back().count;
      stack.pop_back();
    }
  }
  std::vector<double> fit;
  fit.reserve(targets.size());
  for (const Block& b : stack) fit.insert(fit.end(), b.count, b.mean());
  return fit;
}

double mmce_double_sum(const domcal::PredictionSet& preds,
                       const domcal::KernelSpec& kernel, bool clamp) {
  const auto m = preds.confidences.size();
  VectorXd r(m), c(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double f = preds.confidences(i);
    const double predicted = f >= 0.5 ? 1.0 : 0.0;
    c(i) = predicted == preds.labels(i) ? 1.0 : 0.0;
    r(i) = std::max(f, 1.0 - f);
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      sum += (c(i) - r(i)) * (c(j) - r(j)) * kernel(r(i), r(j));
  const double value = sum / (static_cast<double>(m) * static_cast<double>(m));
  return clamp ? std::max(value, 0.0) : value;
}

namespace {

// Pooled-knot sufficient statistics of one environment: per distinct
// prediction value, the example count and the label sum / squared sum.
struct KnotStats {
  double count = 0.0;
  double sum_y = 0.0;
  double sum_y2 = 0.0;
};

// Inner minimum of the weighted pooled objective
//   lambda * mse(env_a) + (1 - lambda) * mse(env_b)
// over nondecreasing maps valued at the pooled knots (exact, via PAVA).
double weighted_inner_optimum(const std::vector<double>& knots,
                              const std::vector<KnotStats>& a,
                              const std::vector<KnotStats>& b, double n_a,
                              double n_b, double lambda) {
  std::vector<double> targets, weights;
  double constant = 0.0;
  for (std::size_t v = 0; v < knots.size(); ++v) {
    const double w =
        lambda * a[v].count / n_a + (1.0 - lambda) * b[v].count / n_b;
    const double u =
        lambda * a[v].sum_y / n_a + (1.0 - lambda) * b[v].sum_y / n_b;
    const double q =
        lambda * a[v].sum_y2 / n_a + (1.0 - lambda) * b[v].sum_y2 / n_b;
    if (w <= 0.0) {
      // Zero-mass knot (lambda at an endpoint): any monotone fill works and
      // contributes nothing.
      constant += q;
      continue;
    }
    targets.push_back(u / w);
    weights.push_back(w);
    constant += q - u * u / w;
  }
  const std::vector<double> fit = reference_pava(targets, weights);
  double objective = constant;
  for (std::size_t i = 0; i < fit.size(); ++i)
    objective += weights[i] * (targets[i] - fit[i]) * (targets[i] - fit[i]);
  return objective;
}

std::vector<KnotStats> knot_stats(const std::vector<double>& knots,
                                  const domcal::FitSample& env) {
  std::vector<KnotStats> stats(knots.size());
  for (Eigen::Index i = 0; i < env.f.size(); ++i) {
    const auto it = std::lower_bound(knots.begin(), knots.end(), env.f(i));
    const auto v = static_cast<std::size_t>(it - knots.begin());
    stats[v].count += 1.0;
    stats[v].sum_y += env.y(i);
    stats[v].sum_y2 += env.y(i) * env.y(i);
  }
  return stats;
}

}  // namespace

double robust_two_env_optimum(const domcal::FitSample& env_a,
                              const domcal::FitSample& env_b) {
  std::vector<double> knots;
  for (Eigen::Index i = 0; i < env_a.f.size(); ++i) knots.push_back(env_a.f(i));
  for (Eigen::Index i = 0; i < env_b.f.size(); ++i) knots.push_back(env_b.f(i));
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  const std::vector<KnotStats> a = knot_stats(knots, env_a);
  const std::vector<KnotStats> b = knot_stats(knots, env_b);
  const double n_a = static_cast<double>(env_a.f.size());
  const double n_b = static_cast<double>(env_b.f.size());

  const auto dual = [&](double lambda) {
    return weighted_inner_optimum(knots, a, b, n_a, n_b, lambda);
  };
  // The dual is concave on [0,1]; golden-section maximization.
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.0, hi = 1.0;
  double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  double f1 = dual(x1), f2 = dual(x2);
  for (int iter = 0; iter < 120; ++iter) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = dual(x2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = dual(x1);
    }
  }
  return std::max({f1, f2, dual(0.0), dual(1.0)});
}

double two_bit_posterior_table(const domcal::TwoBitEnvSpec& spec, int x1,
                               int x2) {
  double joint_pos = 0.0, total = 0.0;
  for (int y_sign : {+1, -1}) {
    for (int flip1 : {0, 1}) {
      for (int flip2 : {0, 1}) {
        const double p = 0.5 * (flip1 ? spec.alpha : 1.0 - spec.alpha) *
                         (flip2 ? spec.beta : 1.0 - spec.beta);
        const int got_x1 = flip1 ? -y_sign : y_sign;
        const int got_x2 = flip2 ? -y_sign : y_sign;
        if (got_x1 != x1 || got_x2 != x2) continue;
        total += p;
        if (y_sign == +1) joint_pos += p;
      }
    }
  }
  return joint_pos / total;
}

Eigen::VectorXd central_difference(
    const std::function<double(const Eigen::VectorXd&)>& fn,
    const Eigen::VectorXd& x, double step) {
  VectorXd grad(x.size());
  VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + step;
    const double up = fn(probe);
    probe(i) = x(i) - step;
    const double down = fn(probe);
    probe(i) = x(i);
    grad(i) = (up - down) / (2.0 * step);
  }
  return grad;
}

double relative_gap(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max({1e-12, a.norm(), b.norm()});
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

namespace {

MatrixXd random_spd(domcal::Rng& rng, int dim) {
  MatrixXd a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) a(i, j) = rng.normal();
  return a * a.transpose() / static_cast<double>(dim) +
         0.5 * MatrixXd::Identity(dim, dim);
}

VectorXd random_vector(domcal::Rng& rng, int dim, double scale) {
  VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = scale * rng.normal();
  return v;
}

}  // namespace

domcal::GaussianEnvSpecA random_spec_a(std::uint64_t seed, int d_ns, int d_sp,
                                       int k) {
  domcal::Rng rng(seed);
  domcal::GaussianEnvSpecA spec;
  spec.eta = 0.5;
  spec.mu_ns = random_vector(rng, d_ns, 1.0);
  spec.sigma_ns = random_spd(rng, d_ns);
  for (int e = 0; e < k; ++e) {
    spec.mu_sp.push_back(random_vector(rng, d_sp, 1.0));
    spec.sigma_sp.push_back(random_spd(rng, d_sp));
  }
  return spec;
}

domcal::GaussianEnvSpecB random_spec_b(std::uint64_t seed, int d_c, int d_sp,
                                       int k) {
  domcal::Rng rng(seed);
  domcal::GaussianEnvSpecB spec;
  spec.w_c_star = random_vector(rng, d_c, 1.0);
  while (spec.w_c_star.norm() < 0.2) spec.w_c_star = random_vector(rng, d_c, 1.0);
  spec.sigma_y2 = 0.25;
  for (int e = 0; e < k; ++e) {
    VectorXd mu_c = random_vector(rng, d_c, 1.0);
    // The verification preconditions need a solidly nonzero label mean
    // w_c_star . mu_c in every environment; resample the rare near-misses.
    while (std::abs(spec.w_c_star.dot(mu_c)) < 0.1)
      mu_c = random_vector(rng, d_c, 1.0);
    spec.mu_c.push_back(mu_c);
    spec.sigma_c.push_back(random_spd(rng, d_c));
    spec.mu_sp.push_back(random_vector(rng, d_sp, 1.0));
    spec.sigma_sp.push_back(random_spd(rng, d_sp));
  }
  return spec;
}

domcal::GaussianEnvSpecA fan_spec_a(std::uint64_t seed) {
  domcal::Rng rng(seed);
  domcal::GaussianEnvSpecA spec;
  spec.eta = 0.5;
  VectorXd dir = random_vector(rng, 3, 1.0);
  while (dir.norm() < 1e-6) dir = random_vector(rng, 3, 1.0);
  spec.mu_ns = 0.3 * dir / dir.norm();
  spec.sigma_ns = MatrixXd::Identity(3, 3);
  const double deg = M_PI / 180.0;
  const double theta0 = rng.u01() * 2.0 * M_PI;
  const Eigen::Vector2d u(std::cos(theta0), std::sin(theta0));
  const Eigen::Vector2d v(-std::sin(theta0), std::cos(theta0));
  const double fan_fraction[5] = {-1.0, -0.5, 0.0, 0.5, 1.0};
  const double radius_mult[5] = {0.5, 0.75, 1.0, 1.25, 1.5};
  for (int e = 0; e < 5; ++e) {
    const double angle = fan_fraction[e] * 100.0 * deg;
    spec.mu_sp.push_back(1.2 * radius_mult[e] *
                         (std::cos(angle) * u + std::sin(angle) * v));
    spec.sigma_sp.push_back(MatrixXd::Identity(2, 2));
  }
  return spec;
}

}  // namespace testsupport
