// Implementations of the calibration metrics.
#include "domcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "domcal/errors.hpp"

namespace domcal {

namespace {

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

void PredictionSet::validate() const {
  if (confidences.size() == 0) throw input_error("empty prediction set");
  if (confidences.size() != labels.size())
    throw input_error("confidences/labels length mismatch");
  for (Eigen::Index i = 0; i < confidences.size(); ++i) {
    const double f = confidences(i);
    if (!(f >= 0.0 && f <= 1.0))
      throw input_error("confidence out of [0,1] at index " +
                        std::to_string(i));
    const double y = labels(i);
    if (y != 0.0 && y != 1.0)
      throw input_error("label not in {0,1} at index " + std::to_string(i));
  }
}

void KernelSpec::validate() const {
  if (!(gamma > 0.0)) throw input_error("kernel gamma must be positive");
}

double KernelSpec::operator()(double a, double b) const {
  const double d = a - b;
  return std::exp(-gamma * d * d);
}

ReliabilityBins reliability_bins(const PredictionSet& preds, int num_bins) {
  preds.validate();
  if (num_bins < 1) throw input_error("need at least one bin");
  const auto b = static_cast<std::size_t>(num_bins);

  ReliabilityBins out;
  out.num_bins = num_bins;
  out.total = static_cast<std::size_t>(preds.confidences.size());
  out.bins.resize(b);
  std::vector<double> conf_sum(b, 0.0), acc_sum(b, 0.0);
  for (std::size_t k = 0; k < b; ++k) {
    out.bins[k].lo = static_cast<double>(k) / num_bins;
    out.bins[k].hi = static_cast<double>(k + 1) / num_bins;
  }
  for (Eigen::Index i = 0; i < preds.confidences.size(); ++i) {
    const double f = preds.confidences(i);
    // floor(f*B), with f == 1.0 assigned to the last bin.
    auto k = static_cast<std::size_t>(f * num_bins);
    if (k >= b) k = b - 1;
    out.bins[k].count += 1;
    conf_sum[k] += f;
    acc_sum[k] += preds.labels(i);
  }
  for (std::size_t k = 0; k < b; ++k) {
    if (out.bins[k].count > 0) {
      out.bins[k].conf = conf_sum[k] / static_cast<double>(out.bins[k].count);
      out.bins[k].acc = acc_sum[k] / static_cast<double>(out.bins[k].count);
    }
  }
  return out;
}

double ece(const PredictionSet& preds, int num_bins) {
  const ReliabilityBins rb = reliability_bins(preds, num_bins);
  double total = 0.0;
  for (const auto& bin : rb.bins) {
    if (bin.count == 0) continue;
    total += (static_cast<double>(bin.count) / static_cast<double>(rb.total)) *
             std::abs(bin.acc - bin.conf);
  }
  return total;
}

BrierDecomposition brier_decomposition(const PredictionSet& preds) {
  preds.validate();
  const auto m = static_cast<double>(preds.confidences.size());

  BrierDecomposition out;
  out.brier = (preds.confidences - preds.labels).squaredNorm() / m;

  // Group by exact floating-point prediction value.
  std::map<double, std::pair<std::size_t, double>> groups;  // f -> (n, sum y)
  for (Eigen::Index i = 0; i < preds.confidences.size(); ++i) {
    auto& g = groups[preds.confidences(i)];
    g.first += 1;
    g.second += preds.labels(i);
  }
  for (const auto& [f, g] : groups) {
    const auto n = static_cast<double>(g.first);
    const double ybar = g.second / n;
    out.cal += n * (f - ybar) * (f - ybar);
    out.ref += n * ybar * (1.0 - ybar);
  }
  out.cal /= m;
  out.ref /= m;
  return out;
}

double mmce_weighted(const Eigen::VectorXd& confidence,
                     const Eigen::VectorXd& correct_rate,
                     const Eigen::VectorXd& mass, const KernelSpec& kernel) {
  kernel.validate();
  const Eigen::Index m = confidence.size();
  if (m == 0) throw input_error("empty atom set");
  if (correct_rate.size() != m || mass.size() != m)
    throw input_error("atom vectors must share length");

  // s_i = mass_i * (c_i - r_i); value = sum_{ij} s_i s_j k(r_i, r_j).
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double si = mass(i) * (correct_rate(i) - confidence(i));
    // Diagonal term plus twice the strictly-lower triangle, in index order.
    total += si * si;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double sj = mass(j) * (correct_rate(j) - confidence(j));
      total += 2.0 * si * sj * kernel(confidence(i), confidence(j));
    }
  }
  return total < 0.0 ? 0.0 : total;
}

double mmce(const PredictionSet& preds, const KernelSpec& kernel) {
  preds.validate();
  kernel.validate();
  const Eigen::Index m = preds.confidences.size();

  // Collapse onto the distinct confidence values: within a group the kernel
  // factor is constant, so only sum of (c - r) and the group r matter. This
  // is an exact regrouping of the (1/m^2) double sum.
  std::map<double, double> group_sum;  // r -> sum of (c - r)
  for (Eigen::Index i = 0; i < m; ++i) {
    const double f = preds.confidences(i);
    const double r = std::max(f, 1.0 - f);
    const double predicted = f >= 0.5 ? 1.0 : 0.0;
    const double c = predicted == preds.labels(i) ? 1.0 : 0.0;
    group_sum[r] += c - r;
  }
  const auto v = static_cast<Eigen::Index>(group_sum.size());
  Eigen::VectorXd r(v), s(v);
  Eigen::Index g = 0;
  for (const auto& [rv, sv] : group_sum) {
    r(g) = rv;
    s(g) = sv;
    ++g;
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < v; ++i) {
    total += s(i) * s(i);
    for (Eigen::Index j = 0; j < i; ++j)
      total += 2.0 * s(i) * s(j) * kernel(r(i), r(j));
  }
  total /= static_cast<double>(m) * static_cast<double>(m);
  return total < 0.0 ? 0.0 : total;
}

double clove(const std::vector<PredictionSet>& envs,
             const KernelSpec& kernel) {
  if (envs.empty()) throw input_error("need at least one environment");
  double total = 0.0;
  for (const auto& e : envs) total += mmce(e, kernel);
  return total;
}

double irmv1_penalty(const std::vector<LogitSet>& envs) {
  if (envs.empty()) throw input_error("need at least one environment");
  double total = 0.0;
  for (const auto& e : envs) {
    if (e.logits.size() == 0) throw input_error("empty environment");
    if (e.logits.size() != e.labels.size())
      throw input_error("logits/labels length mismatch");
    // d/dw mean CE(sigmoid(w z), y) at w=1 equals mean((sigmoid(z) - y) z).
    double grad = 0.0;
    for (Eigen::Index i = 0; i < e.logits.size(); ++i) {
      const double z = e.logits(i);
      grad += (sigmoid(z) - e.labels(i)) * z;
    }
    grad /= static_cast<double>(e.logits.size());
    total += grad * grad;
  }
  return total;
}

double aggregate(const std::vector<double>& scores, AggregateMode mode) {
  if (scores.empty()) throw input_error("need at least one score");
  if (mode == AggregateMode::max)
    return *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

}  // namespace domcal
