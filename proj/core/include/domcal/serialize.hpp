// Report and artifact serialization: deterministic JSON/CSV emission with
// 17-significant-digit numbers, plus the reproducibility envelope
// (config hash, seed, isolated timestamp field).
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "domcal/calibrate.hpp"
#include "domcal/env_data.hpp"
#include "domcal/metrics.hpp"
#include "domcal/models.hpp"
#include "domcal/selection.hpp"
#include "domcal/theory.hpp"

namespace domcal {

// Every emitted report opens with this envelope; the timestamp is the single
// field allowed to differ between byte-identical reruns.
struct RunMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string timestamp;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);
// Hash of the canonical form of a JSON document (parsed, keys sorted,
// re-serialized); textual differences that do not change content hash alike.
std::string config_hash_of(const std::string& config_json_text);
std::string iso_utc_timestamp_now();

// ---- aggregate metric report ----

struct PerEnvMetrics {
  double ece_value = 0.0;
  double mmce_value = 0.0;
  double brier = 0.0;
  double cal = 0.0;
  double ref = 0.0;
};

struct MetricReport {
  std::vector<std::pair<std::string, PerEnvMetrics>> per_env;  // bundle order
  double mean_ece = 0.0;
  double max_ece = 0.0;
  double clove_value = 0.0;
  double irmv1_value = 0.0;  // logits recovered as logit(confidence)
  OodEvaluation pooled;      // all environments pooled
  int bins = 10;
};

MetricReport compute_metric_report(const std::vector<PredictionSet>& preds,
                                   int bins = 10,
                                   const KernelSpec& kernel = {});

std::string render_metric_report(const MetricReport& report,
                                 const RunMeta& meta);
std::string render_reliability_csv(const ReliabilityBins& bins);

// ---- calibration maps and calibration report ----

std::string render_monotone_map(const MonotoneMap& map);  // compact object
MonotoneMap parse_monotone_map(const std::string& text);
std::string render_platt_map(const PlattMap& map);
PlattMap parse_platt_map(const std::string& text);

struct CalibrationReport {
  std::string mode;  // "naive", "robust", or "platt"
  MonotoneMap map;   // naive/robust
  PlattMap platt;    // platt only
  double objective = 0.0;  // robust worst-environment objective
  bool converged = true;
  int iterations = 0;
  std::string warning;
};

std::string render_calibration_report(const CalibrationReport& report,
                                      const RunMeta& meta);

// ---- models and training ----

std::string render_model(const Model& model);  // compact object
Model parse_model(const std::string& text);
std::string render_train_report(const TrainResult& result,
                                const RunMeta& meta);
std::string render_trace_csv(const std::vector<TraceRow>& trace);

// ---- landscape, selection, verification ----

std::string render_landscape_csv(const TwoBitLandscape& landscape);
std::string render_selection_report(const SelectionReport& report,
                                    const RunMeta& meta);
std::string render_selection_csv(const SelectionReport& report);
std::string render_theorem1_report(const Theorem1Report& report,
                                   const RunMeta& meta);
std::string render_theorem2_report(const Theorem2Report& report,
                                   const RunMeta& meta);

}  // namespace domcal
