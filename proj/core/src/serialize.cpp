#include "domcal/serialize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <json.hpp>

#include "domcal/errors.hpp"
#include "text_io.hpp"

namespace domcal {

namespace {

using detail::escape_json;
using detail::fmt_double;

std::string json_quote(std::string_view s) {
  return "\"" + escape_json(s) + "\"";
}

std::string bool_text(bool v) { return v ? "true" : "false"; }

std::string num_array(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ",";
    out += fmt_double(v[i]);
  }
  out += "]";
  return out;
}

std::string num_array(const Eigen::VectorXd& v) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ",";
    out += fmt_double(v(i));
  }
  out += "]";
  return out;
}

std::string index_array(const std::vector<Eigen::Index>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(v[i]);
  }
  out += "]";
  return out;
}

std::string string_array(const std::vector<std::string>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ",";
    out += json_quote(v[i]);
  }
  out += "]";
  return out;
}

// Opens the report object with the reproducibility envelope; reports close
// with "}\n". The timestamp sits alone on its line so reruns can be compared
// byte-for-byte by skipping that single line.
std::string envelope(const RunMeta& meta) {
  std::string out = "{\n";
  out += "  \"config_hash\": " + json_quote(meta.config_hash) + ",\n";
  out += "  \"seed\": " + std::to_string(meta.seed) + ",\n";
  out += "  \"timestamp\": " + json_quote(meta.timestamp) + ",\n";
  return out;
}

std::string rank_check_object(const RankCheck& check) {
  return "{\"matrix\": " + json_quote(check.matrix) +
         ", \"rank\": " + std::to_string(check.rank) +
         ", \"required\": " + std::to_string(check.required) +
         ", \"passes\": " + bool_text(check.passes) + "}";
}

std::string preconditions_object(const std::map<std::string, bool>& pre) {
  std::string out = "{";
  bool first = true;
  for (const auto& [name, ok] : pre) {
    if (!first) out += ", ";
    first = false;
    out += json_quote(name) + ": " + bool_text(ok);
  }
  out += "}";
  return out;
}

nlohmann::json parse_json(const std::string& text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw input_error(std::string(what) + " is not valid JSON: " + e.what());
  }
}

std::vector<double> number_list(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array())
    throw input_error(std::string("missing numeric array field: ") + key);
  std::vector<double> out;
  for (const auto& v : j[key]) {
    if (!v.is_number())
      throw input_error(std::string("non-numeric entry in field: ") + key);
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    hash ^= static_cast<std::uint64_t>(c);
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

std::string config_hash_of(const std::string& config_json_text) {
  // nlohmann stores object members key-sorted, so dump() is canonical.
  const nlohmann::json j = parse_json(config_json_text, "config");
  return hex64(fnv1a64(j.dump()));
}

std::string iso_utc_timestamp_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string(buf);
}

MetricReport compute_metric_report(const std::vector<PredictionSet>& preds,
                                   int bins, const KernelSpec& kernel) {
  if (preds.empty()) throw input_error("metric report needs >= 1 environment");
  MetricReport report;
  report.bins = bins;
  report.max_ece = 0.0;
  double ece_sum = 0.0;
  std::size_t total = 0;
  for (const auto& p : preds) {
    p.validate();
    PerEnvMetrics m;
    m.ece_value = ece(p, bins);
    m.mmce_value = mmce(p, kernel);
    const BrierDecomposition d = brier_decomposition(p);
    m.brier = d.brier;
    m.cal = d.cal;
    m.ref = d.ref;
    ece_sum += m.ece_value;
    report.max_ece = std::max(report.max_ece, m.ece_value);
    report.per_env.emplace_back(p.env_id, m);
    total += static_cast<std::size_t>(p.confidences.size());
  }
  report.mean_ece = ece_sum / static_cast<double>(preds.size());
  report.clove_value = clove(preds, kernel);

  // IRMv1 needs pre-link scores; recover them as logit(confidence) with the
  // same probability clamp the landscape evaluator uses.
  std::vector<LogitSet> logit_sets;
  logit_sets.reserve(preds.size());
  for (const auto& p : preds) {
    LogitSet ls;
    ls.env_id = p.env_id;
    ls.labels = p.labels;
    ls.logits.resize(p.confidences.size());
    for (Eigen::Index i = 0; i < p.confidences.size(); ++i) {
      const double f =
          std::clamp(p.confidences(i), 1e-12, 1.0 - 1e-12);
      ls.logits(i) = std::log(f / (1.0 - f));
    }
    logit_sets.push_back(std::move(ls));
  }
  report.irmv1_value = irmv1_penalty(logit_sets);

  PredictionSet pooled;
  pooled.env_id = "pooled";
  pooled.confidences.resize(static_cast<Eigen::Index>(total));
  pooled.labels.resize(static_cast<Eigen::Index>(total));
  Eigen::Index at = 0;
  for (const auto& p : preds) {
    pooled.confidences.segment(at, p.confidences.size()) = p.confidences;
    pooled.labels.segment(at, p.labels.size()) = p.labels;
    at += p.confidences.size();
  }
  report.pooled.total = total;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < pooled.confidences.size(); ++i) {
    const double predicted = pooled.confidences(i) >= 0.5 ? 1.0 : 0.0;
    if (predicted == pooled.labels(i)) ++correct;
  }
  report.pooled.accuracy =
      static_cast<double>(correct) / static_cast<double>(total);
  report.pooled.ece_value = ece(pooled, bins);
  report.pooled.brier = brier_decomposition(pooled).brier;
  return report;
}

std::string render_metric_report(const MetricReport& report,
                                 const RunMeta& meta) {
  std::string out = envelope(meta);
  out += "  \"bins\": " + std::to_string(report.bins) + ",\n";
  out += "  \"per_env\": {\n";
  for (std::size_t e = 0; e < report.per_env.size(); ++e) {
    const auto& [id, m] = report.per_env[e];
    out += "    " + json_quote(id) + ": {\"ece\": " + fmt_double(m.ece_value) +
           ", \"mmce\": " + fmt_double(m.mmce_value) +
           ", \"brier\": " + fmt_double(m.brier) +
           ", \"cal\": " + fmt_double(m.cal) +
           ", \"ref\": " + fmt_double(m.ref) + "}";
    out += e + 1 < report.per_env.size() ? ",\n" : "\n";
  }
  out += "  },\n";
  out += "  \"mean_ece\": " + fmt_double(report.mean_ece) + ",\n";
  out += "  \"max_ece\": " + fmt_double(report.max_ece) + ",\n";
  out += "  \"clove\": " + fmt_double(report.clove_value) + ",\n";
  out += "  \"irmv1\": " + fmt_double(report.irmv1_value) + ",\n";
  out += "  \"pooled\": {\"accuracy\": " + fmt_double(report.pooled.accuracy) +
         ", \"ece\": " + fmt_double(report.pooled.ece_value) +
         ", \"brier\": " + fmt_double(report.pooled.brier) +
         ", \"count\": " + std::to_string(report.pooled.total) + "}\n";
  out += "}\n";
  return out;
}

std::string render_reliability_csv(const ReliabilityBins& bins) {
  std::string out = "bin_lo,bin_hi,count,conf,acc\n";
  for (const auto& b : bins.bins) {
    out += fmt_double(b.lo) + "," + fmt_double(b.hi) + "," +
           std::to_string(b.count) + "," + fmt_double(b.conf) + "," +
           fmt_double(b.acc) + "\n";
  }
  return out;
}

std::string render_monotone_map(const MonotoneMap& map) {
  return "{\"interp\": " +
         json_quote(map.interp == MonotoneMap::Interp::step ? "step" : "linear") +
         ", \"knots\": " + num_array(map.knots) +
         ", \"values\": " + num_array(map.values) + "}";
}

MonotoneMap parse_monotone_map(const std::string& text) {
  const nlohmann::json j = parse_json(text, "monotone map");
  MonotoneMap map;
  if (!j.contains("interp") || !j["interp"].is_string())
    throw input_error("monotone map needs a string 'interp' field");
  const std::string interp = j["interp"].get<std::string>();
  if (interp == "step") {
    map.interp = MonotoneMap::Interp::step;
  } else if (interp == "linear") {
    map.interp = MonotoneMap::Interp::linear;
  } else {
    throw input_error("unknown interpolation rule: " + interp);
  }
  map.knots = number_list(j, "knots");
  map.values = number_list(j, "values");
  map.validate();
  return map;
}

std::string render_platt_map(const PlattMap& map) {
  return "{\"a\": " + fmt_double(map.a) + ", \"b\": " + fmt_double(map.b) +
         "}";
}

PlattMap parse_platt_map(const std::string& text) {
  const nlohmann::json j = parse_json(text, "platt map");
  if (!j.contains("a") || !j["a"].is_number() || !j.contains("b") ||
      !j["b"].is_number())
    throw input_error("platt map needs numeric 'a' and 'b' fields");
  PlattMap map;
  map.a = j["a"].get<double>();
  map.b = j["b"].get<double>();
  return map;
}

std::string render_calibration_report(const CalibrationReport& report,
                                      const RunMeta& meta) {
  std::string out = envelope(meta);
  out += "  \"mode\": " + json_quote(report.mode) + ",\n";
  if (report.mode == "platt") {
    out += "  \"platt\": " + render_platt_map(report.platt) + ",\n";
  } else {
    out += "  \"map\": " + render_monotone_map(report.map) + ",\n";
  }
  out += "  \"objective\": " + fmt_double(report.objective) + ",\n";
  out += "  \"converged\": " + bool_text(report.converged) + ",\n";
  out += "  \"iterations\": " + std::to_string(report.iterations) + ",\n";
  out += "  \"warning\": " + json_quote(report.warning) + "\n";
  out += "}\n";
  return out;
}

std::string render_model(const Model& model) {
  const char* family = model.family == ModelFamily::linear ? "linear"
                       : model.family == ModelFamily::mlp ? "mlp"
                                                          : "two_moment";
  return "{\"family\": " + json_quote(family) +
         ", \"input_dim\": " + std::to_string(model.input_dim) +
         ", \"hidden\": " + index_array(model.hidden) +
         ", \"params\": " + num_array(model.params) + "}";
}

Model parse_model(const std::string& text) {
  const nlohmann::json j = parse_json(text, "model");
  Model model;
  if (!j.contains("family") || !j["family"].is_string())
    throw input_error("model needs a string 'family' field");
  const std::string family = j["family"].get<std::string>();
  if (family == "linear") {
    model.family = ModelFamily::linear;
  } else if (family == "mlp") {
    model.family = ModelFamily::mlp;
  } else if (family == "two_moment") {
    model.family = ModelFamily::two_moment;
  } else {
    throw input_error("unknown model family: " + family);
  }
  if (!j.contains("input_dim") || !j["input_dim"].is_number_integer())
    throw input_error("model needs an integer 'input_dim' field");
  model.input_dim = j["input_dim"].get<Eigen::Index>();
  if (j.contains("hidden")) {
    if (!j["hidden"].is_array())
      throw input_error("model 'hidden' field must be an array");
    for (const auto& v : j["hidden"]) {
      if (!v.is_number_integer())
        throw input_error("model 'hidden' entries must be integers");
      model.hidden.push_back(v.get<Eigen::Index>());
    }
  }
  const std::vector<double> params = number_list(j, "params");
  model.params = Eigen::Map<const Eigen::VectorXd>(
      params.data(), static_cast<Eigen::Index>(params.size()));
  model.validate();
  return model;
}

std::string render_train_report(const TrainResult& result,
                                const RunMeta& meta) {
  std::string out = envelope(meta);
  out += "  \"model\": " + render_model(result.model) + ",\n";
  out += "  \"steps\": " + std::to_string(result.trace.size()) + ",\n";
  const TraceRow last = result.trace.empty() ? TraceRow{} : result.trace.back();
  out += "  \"final_objective\": " + fmt_double(last.objective) + ",\n";
  out += "  \"final_base_loss\": " + fmt_double(last.base_loss) + ",\n";
  out += "  \"final_penalty\": " + fmt_double(last.penalty) + "\n";
  out += "}\n";
  return out;
}

std::string render_trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "step,objective,base_loss,penalty\n";
  for (const auto& row : trace) {
    out += std::to_string(row.step) + "," + fmt_double(row.objective) + "," +
           fmt_double(row.base_loss) + "," + fmt_double(row.penalty) + "\n";
  }
  return out;
}

std::string render_landscape_csv(const TwoBitLandscape& landscape) {
  std::string out = "p1,p2,train_loss";
  for (std::size_t e = 0; e < landscape.num_envs; ++e)
    out += ",mmce_e" + std::to_string(e + 1);
  for (std::size_t e = 0; e < landscape.num_envs; ++e)
    out += ",irmv1_e" + std::to_string(e + 1);
  out += "\n";
  const std::size_t n = landscape.axis.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t flat = i * n + j;
      out += fmt_double(landscape.axis[i]) + "," +
             fmt_double(landscape.axis[j]) + "," +
             fmt_double(landscape.train_loss[flat]);
      for (std::size_t e = 0; e < landscape.num_envs; ++e)
        out += "," + fmt_double(landscape.mmce[e][flat]);
      for (std::size_t e = 0; e < landscape.num_envs; ++e)
        out += "," + fmt_double(landscape.irmv1[e][flat]);
      out += "\n";
    }
  }
  return out;
}

std::string render_selection_report(const SelectionReport& report,
                                    const RunMeta& meta) {
  std::string out = envelope(meta);
  out += "  \"mode\": " + json_quote(report.mode) + ",\n";
  out += "  \"bins\": " + std::to_string(report.bins) + ",\n";
  out += "  \"acc_threshold\": " + fmt_double(report.acc_threshold) + ",\n";
  out += "  \"env_ids\": " + string_array(report.env_ids) + ",\n";
  out += "  \"models\": [\n";
  for (std::size_t j = 0; j < report.entries.size(); ++j) {
    const auto& entry = report.entries[j];
    out += "    {\"model_id\": " + json_quote(entry.model_id) +
           ", \"per_env_ece\": " + num_array(entry.per_env_ece) +
           ", \"worst_ece\": " + fmt_double(entry.worst_ece) +
           ", \"mean_ece\": " + fmt_double(entry.mean_ece) +
           ", \"val_accuracy\": " + fmt_double(entry.val_accuracy) + "}";
    out += j + 1 < report.entries.size() ? ",\n" : "\n";
  }
  out += "  ],\n";
  out += "  \"selected\": " + bool_text(report.selected) + ",\n";
  out += "  \"chosen_id\": " + json_quote(report.chosen_id) + ",\n";
  out += "  \"chosen_index\": " + std::to_string(report.chosen_index) + ",\n";
  out += "  \"diagnostic\": " + json_quote(report.diagnostic) + ",\n";
  out += "  \"recalibration\": [\n";
  for (std::size_t j = 0; j < report.recalibration.size(); ++j) {
    out += "    " + render_monotone_map(report.recalibration[j]);
    out += j + 1 < report.recalibration.size() ? ",\n" : "\n";
  }
  out += "  ]\n";
  out += "}\n";
  return out;
}

std::string render_selection_csv(const SelectionReport& report) {
  std::string out = "model_id,env_id,ece,val_acc\n";
  for (const auto& entry : report.entries) {
    for (std::size_t e = 0; e < report.env_ids.size(); ++e) {
      out += entry.model_id + "," + report.env_ids[e] + "," +
             fmt_double(entry.per_env_ece[e]) + "," +
             fmt_double(entry.val_accuracy) + "\n";
    }
  }
  return out;
}

std::string render_theorem1_report(const Theorem1Report& report,
                                   const RunMeta& meta) {
  std::string out = envelope(meta);
  out += "  \"theorem\": 1,\n";
  out += "  \"mode\": " + json_quote(report.mode) + ",\n";
  out += "  \"preconditions\": " + preconditions_object(report.preconditions) +
         ",\n";
  // The general-position probes collapse to one summary line: the weakest
  // rank seen across all sampled probe points.
  out += "  \"rank_checks\": [";
  if (!report.general_position.checks.empty()) {
    RankCheck summary = report.general_position.checks.front();
    for (const auto& c : report.general_position.checks) {
      summary.rank = std::min(summary.rank, c.rank);
      summary.passes = summary.passes && c.passes;
    }
    out += rank_check_object(summary);
  }
  out += "],\n";
  out += "  \"refused\": " + bool_text(report.refused) + ",\n";
  out += "  \"refusal_reason\": " + json_quote(report.refusal_reason) + ",\n";
  out += "  \"best_root\": {\"w\": " + num_array(report.best.w) +
         ", \"t\": " + fmt_double(report.best.t) +
         ", \"residual\": " + fmt_double(report.best.residual_norm) + "},\n";
  out += "  \"spurious_norm\": " + fmt_double(report.spurious_norm) + ",\n";
  out += "  \"floor_min_residual\": " + fmt_double(report.floor_min_residual) +
         ",\n";
  out += "  \"ratio_by_lambda\": [";
  for (std::size_t i = 0; i < report.ratio_by_lambda.size(); ++i) {
    if (i > 0) out += ", ";
    out += "[" + fmt_double(report.ratio_by_lambda[i].first) + "," +
           fmt_double(report.ratio_by_lambda[i].second) + "]";
  }
  out += "],\n";
  out += "  \"train_scores\": [";
  for (std::size_t i = 0; i < report.train_scores.size(); ++i) {
    const TrainCandidateScores& row = report.train_scores[i];
    if (i > 0) out += ", ";
    out += "{\"lambda\": " + fmt_double(row.lambda) +
           ", \"objective_penalized\": " + fmt_double(row.objective_penalized) +
           ", \"objective_erm\": " + fmt_double(row.objective_erm) +
           ", \"objective_restricted\": " +
           fmt_double(row.objective_restricted) + ", \"chosen\": " +
           json_quote(row.chosen) + "}";
  }
  out += "],\n";
  out += "  \"passes\": " + bool_text(report.passes) + "\n";
  out += "}\n";
  return out;
}

std::string render_theorem2_report(const Theorem2Report& report,
                                   const RunMeta& meta) {
  std::string out = envelope(meta);
  out += "  \"theorem\": 2,\n";
  out += "  \"preconditions\": " + preconditions_object(report.preconditions) +
         ",\n";
  out += "  \"rank_checks\": [";
  for (std::size_t i = 0; i < report.rank_checks.size(); ++i) {
    if (i > 0) out += ", ";
    out += rank_check_object(report.rank_checks[i]);
  }
  out += "],\n";
  out += "  \"refused\": " + bool_text(report.refused) + ",\n";
  out += "  \"refusal_reason\": " + json_quote(report.refusal_reason) + ",\n";
  out += "  \"best_root\": {\"w\": " + num_array(report.best.w) +
         ", \"t\": " + fmt_double(report.best.t) +
         ", \"t2\": " + fmt_double(report.best.t2) +
         ", \"t3\": " + fmt_double(report.best.t3) +
         ", \"residual\": " + fmt_double(report.best.residual_norm) + "},\n";
  out += "  \"causal_rel_err\": " + fmt_double(report.causal_rel_err) + ",\n";
  out += "  \"spurious_norm\": " + fmt_double(report.spurious_norm) + ",\n";
  out += "  \"floor_min_residual\": " + fmt_double(report.floor_min_residual) +
         ",\n";
  out += "  \"passes\": " + bool_text(report.passes) + "\n";
  out += "}\n";
  return out;
}

}  // namespace domcal
