#include "domcal/selection.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "domcal/errors.hpp"
#include "domcal/metrics.hpp"

namespace domcal {

namespace {

using Eigen::Index;
using Eigen::VectorXd;

// Per-candidate scoring shared by both selection modes.
SelectionEntry score_candidate(const Candidate& candidate,
                               const EnvironmentBundle& validation, int bins,
                               MonotoneMap* map_out) {
  // Pool every environment's predictions for the single isotonic fit.
  std::size_t total = 0;
  for (const auto& env : validation.environments) total += env.labels.size();
  VectorXd pooled_f(static_cast<Index>(total));
  VectorXd pooled_y(static_cast<Index>(total));
  std::vector<VectorXd> per_env_f;
  per_env_f.reserve(validation.environments.size());
  Index at = 0;
  for (const auto& env : validation.environments) {
    VectorXd f = forward(candidate.model, env.features);
    pooled_f.segment(at, f.size()) = f;
    pooled_y.segment(at, f.size()) = env.labels;
    at += f.size();
    per_env_f.push_back(std::move(f));
  }

  const MonotoneMap map = fit_isotonic(pooled_f, pooled_y);
  if (map_out != nullptr) *map_out = map;

  SelectionEntry entry;
  entry.model_id = candidate.id;
  entry.worst_ece = 0.0;
  double sum_ece = 0.0;
  for (std::size_t e = 0; e < validation.environments.size(); ++e) {
    PredictionSet preds;
    preds.env_id = validation.environments[e].id;
    preds.confidences = apply(map, per_env_f[e]);
    preds.labels = validation.environments[e].labels;
    const double score = ece(preds, bins);
    entry.per_env_ece.push_back(score);
    entry.worst_ece = std::max(entry.worst_ece, score);
    sum_ece += score;
  }
  entry.mean_ece =
      sum_ece / static_cast<double>(validation.environments.size());

  const VectorXd recal = apply(map, pooled_f);
  std::size_t correct = 0;
  for (Index i = 0; i < recal.size(); ++i) {
    const double predicted = recal(i) >= 0.5 ? 1.0 : 0.0;
    if (predicted == pooled_y(i)) ++correct;
  }
  entry.val_accuracy =
      static_cast<double>(correct) / static_cast<double>(total);
  return entry;
}

SelectionReport score_pool(const CandidatePool& pool, int bins) {
  pool.validate();
  if (bins < 1) throw input_error("bin count must be >= 1");
  SelectionReport report;
  report.bins = bins;
  for (const auto& env : pool.validation.environments)
    report.env_ids.push_back(env.id);
  report.recalibration.resize(pool.models.size());
  for (std::size_t j = 0; j < pool.models.size(); ++j) {
    report.entries.push_back(score_candidate(
        pool.models[j], pool.validation, bins, &report.recalibration[j]));
  }
  return report;
}

}  // namespace

void CandidatePool::validate() const {
  if (models.empty()) throw input_error("candidate pool is empty");
  validation.validate();
  std::set<std::string> ids;
  for (const auto& candidate : models) {
    if (candidate.id.empty()) throw input_error("candidate id is empty");
    if (!ids.insert(candidate.id).second)
      throw input_error("duplicate candidate id: " + candidate.id);
    candidate.model.validate();
    if (candidate.model.family == ModelFamily::two_moment)
      throw input_error("selection needs classifier candidates (candidate " +
                        candidate.id + " is a regressor)");
    if (candidate.model.input_dim != validation.feature_dim())
      throw input_error("candidate " + candidate.id +
                        " does not match validation feature width");
  }
}

SelectionReport select_worst_case_ece(const CandidatePool& pool, int bins) {
  SelectionReport report = score_pool(pool, bins);
  report.mode = "worst_case_ece";
  std::size_t best = 0;
  for (std::size_t j = 1; j < report.entries.size(); ++j) {
    if (report.entries[j].worst_ece < report.entries[best].worst_ece) best = j;
  }
  report.selected = true;
  report.chosen_index = best;
  report.chosen_id = report.entries[best].model_id;
  return report;
}

SelectionReport select_threshold_avg_ece(const CandidatePool& pool,
                                         double acc_threshold, int bins) {
  if (!(acc_threshold >= 0.0 && acc_threshold <= 1.0))
    throw input_error("accuracy threshold must lie in [0,1]");
  SelectionReport report = score_pool(pool, bins);
  report.mode = "threshold_avg_ece";
  report.acc_threshold = acc_threshold;
  std::size_t best = report.entries.size();
  for (std::size_t j = 0; j < report.entries.size(); ++j) {
    if (report.entries[j].val_accuracy < acc_threshold) continue;
    if (best == report.entries.size() ||
        report.entries[j].mean_ece < report.entries[best].mean_ece)
      best = j;
  }
  if (best == report.entries.size()) {
    report.selected = false;
    report.diagnostic = "no candidate reaches validation accuracy threshold";
    return report;
  }
  report.selected = true;
  report.chosen_index = best;
  report.chosen_id = report.entries[best].model_id;
  return report;
}

OodEvaluation evaluate_ood(const Model& model, const EnvironmentBundle& test,
                           int bins, const MonotoneMap* recalibration) {
  test.validate();
  model.validate();
  if (model.family == ModelFamily::two_moment)
    throw input_error("evaluation needs a classifier");
  if (model.input_dim != test.feature_dim())
    throw input_error("model does not match test feature width");

  std::size_t total = 0;
  for (const auto& env : test.environments) total += env.labels.size();
  PredictionSet pooled;
  pooled.env_id = "pooled";
  pooled.confidences.resize(static_cast<Index>(total));
  pooled.labels.resize(static_cast<Index>(total));
  Index at = 0;
  for (const auto& env : test.environments) {
    VectorXd f = forward(model, env.features);
    if (recalibration != nullptr) f = apply(*recalibration, f);
    pooled.confidences.segment(at, f.size()) = f;
    pooled.labels.segment(at, f.size()) = env.labels;
    at += f.size();
  }

  OodEvaluation out;
  out.total = total;
  std::size_t correct = 0;
  for (Index i = 0; i < pooled.confidences.size(); ++i) {
    const double predicted = pooled.confidences(i) >= 0.5 ? 1.0 : 0.0;
    if (predicted == pooled.labels(i)) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  out.ece_value = ece(pooled, bins);
  out.brier = brier_decomposition(pooled).brier;
  return out;
}

}  // namespace domcal
