// Model selection: worst-case-ECE selection after pooled isotonic
// recalibration, the threshold-constrained average-ECE variant, and pooled
// out-of-distribution evaluation.
#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "domcal/calibrate.hpp"
#include "domcal/env_data.hpp"
#include "domcal/models.hpp"

namespace domcal {

struct Candidate {
  std::string id;
  Model model;
};

struct CandidatePool {
  std::vector<Candidate> models;
  EnvironmentBundle validation;
  // At least one classifier candidate with unique nonempty ids, at least one
  // validation environment, and matching feature widths.
  void validate() const;
};

struct SelectionEntry {
  std::string model_id;
  std::vector<double> per_env_ece;  // recalibrated, indexed like env_ids
  double worst_ece = 0.0;
  double mean_ece = 0.0;
  double val_accuracy = 0.0;  // pooled validation accuracy after recalibration
};

struct SelectionReport {
  std::vector<SelectionEntry> entries;  // one per candidate, pool order
  std::vector<std::string> env_ids;
  std::string mode;  // "worst_case_ece" or "threshold_avg_ece"
  int bins = 10;
  double acc_threshold = 0.0;  // threshold_avg_ece only
  bool selected = false;
  std::string chosen_id;
  std::size_t chosen_index = 0;  // valid only when selected
  std::string diagnostic;       // set when nothing qualifies
  std::vector<MonotoneMap> recalibration;  // pooled isotonic map per candidate
};

// For each candidate: fit isotonic on pooled validation data, score the
// recalibrated predictions per environment with B-bin ECE, take the max over
// environments, and select the argmin (ties to the lowest index).
SelectionReport select_worst_case_ece(const CandidatePool& pool, int bins = 10);

// Same scoring, but select the lowest average per-environment ECE among
// candidates whose pooled post-recalibration validation accuracy is at least
// acc_threshold; an empty qualifying set yields selected=false plus a
// diagnostic.
SelectionReport select_threshold_avg_ece(const CandidatePool& pool,
                                         double acc_threshold, int bins = 10);

struct OodEvaluation {
  double accuracy = 0.0;  // threshold 0.5, ties to class 1
  double ece_value = 0.0;
  double brier = 0.0;
  std::size_t total = 0;  // pooled example count
};

// Pools every environment in the test bundle and scores the (optionally
// recalibrated) model on the pooled examples.
OodEvaluation evaluate_ood(const Model& model, const EnvironmentBundle& test,
                           int bins = 10,
                           const MonotoneMap* recalibration = nullptr);

}  // namespace domcal
