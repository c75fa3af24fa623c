// domcal: command-line front end for the multi-domain calibration toolkit.
//
// Subcommands: generate, train, calibrate, evaluate, select, verify,
// landscape. Global flags --seed, --config, --out. Exit codes: 0 success,
// 2 input validation, 64 usage, 70 numeric failure.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "domcal/calibrate.hpp"
#include "domcal/env_data.hpp"
#include "domcal/errors.hpp"
#include "domcal/metrics.hpp"
#include "domcal/models.hpp"
#include "domcal/selection.hpp"
#include "domcal/serialize.hpp"
#include "domcal/theory.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitInput = 2;
constexpr int kExitUsage = 64;
constexpr int kExitNumeric = 70;

// ---------- file helpers ----------

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw domcal::input_error("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw domcal::input_error("cannot write file: " + path.string());
  out << text;
  if (!out) throw domcal::input_error("write failed: " + path.string());
}

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw domcal::input_error("cannot create output directory: " + out);
  return dir;
}

domcal::BundleFormat format_of(const std::string& path) {
  return path.size() >= 5 && path.substr(path.size() - 5) == ".json"
             ? domcal::BundleFormat::json
             : domcal::BundleFormat::csv;
}

// ---------- JSON extraction ----------

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw domcal::input_error("config " + path +
                              " is not valid JSON: " + e.what());
  }
}

double json_number(const json& j, const std::string& key,
                   const std::string& where) {
  if (!j.contains(key) || !j[key].is_number())
    throw domcal::input_error(where + " needs numeric field '" + key + "'");
  return j[key].get<double>();
}

Eigen::VectorXd json_vector(const json& j, const std::string& key,
                            const std::string& where) {
  if (!j.contains(key) || !j[key].is_array())
    throw domcal::input_error(where + " needs array field '" + key + "'");
  const auto& a = j[key];
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number())
      throw domcal::input_error(where + " field '" + key +
                                "' has a non-numeric entry");
    v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd json_matrix(const json& j, const std::string& key,
                            const std::string& where) {
  if (!j.contains(key) || !j[key].is_array() || j[key].empty())
    throw domcal::input_error(where + " needs matrix field '" + key + "'");
  const auto& rows = j[key];
  const std::size_t cols = rows[0].is_array() ? rows[0].size() : 0;
  if (cols == 0)
    throw domcal::input_error(where + " field '" + key +
                              "' must be an array of rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].is_array() || rows[r].size() != cols)
      throw domcal::input_error(where + " field '" + key +
                                "' has ragged rows");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!rows[r][c].is_number())
        throw domcal::input_error(where + " field '" + key +
                                  "' has a non-numeric entry");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          rows[r][c].get<double>();
    }
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

// ---------- environment spec parsing ----------

domcal::GaussianEnvSpecA parse_spec_a(const json& j) {
  domcal::GaussianEnvSpecA spec;
  spec.eta = json_number(j, "eta", "setting-a spec");
  spec.mu_ns = json_vector(j, "mu_ns", "setting-a spec");
  spec.sigma_ns = json_matrix(j, "sigma_ns", "setting-a spec");
  if (!j.contains("envs") || !j["envs"].is_array() || j["envs"].empty())
    throw domcal::input_error("setting-a spec needs a nonempty 'envs' array");
  for (std::size_t e = 0; e < j["envs"].size(); ++e) {
    const std::string where = "setting-a env " + std::to_string(e);
    spec.mu_sp.push_back(json_vector(j["envs"][e], "mu_sp", where));
    spec.sigma_sp.push_back(json_matrix(j["envs"][e], "sigma_sp", where));
  }
  spec.validate();
  return spec;
}

domcal::GaussianEnvSpecB parse_spec_b(const json& j) {
  domcal::GaussianEnvSpecB spec;
  spec.w_c_star = json_vector(j, "w_c_star", "setting-b spec");
  spec.sigma_y2 = json_number(j, "sigma_y2", "setting-b spec");
  if (!j.contains("envs") || !j["envs"].is_array() || j["envs"].empty())
    throw domcal::input_error("setting-b spec needs a nonempty 'envs' array");
  for (std::size_t e = 0; e < j["envs"].size(); ++e) {
    const std::string where = "setting-b env " + std::to_string(e);
    spec.mu_c.push_back(json_vector(j["envs"][e], "mu_c", where));
    spec.sigma_c.push_back(json_matrix(j["envs"][e], "sigma_c", where));
    spec.mu_sp.push_back(json_vector(j["envs"][e], "mu_sp", where));
    spec.sigma_sp.push_back(json_matrix(j["envs"][e], "sigma_sp", where));
  }
  spec.validate();
  return spec;
}

std::vector<domcal::TwoBitEnvSpec> parse_two_bit_envs(const json& envs) {
  if (!envs.is_array() || envs.empty())
    throw domcal::input_error("two-bit spec needs a nonempty 'envs' array");
  std::vector<domcal::TwoBitEnvSpec> out;
  for (std::size_t e = 0; e < envs.size(); ++e) {
    const std::string where = "two-bit env " + std::to_string(e);
    domcal::TwoBitEnvSpec spec;
    spec.alpha = json_number(envs[e], "alpha", where);
    spec.beta = json_number(envs[e], "beta", where);
    spec.validate();
    out.push_back(spec);
  }
  return out;
}

// ---------- prediction CSV (env,f,y) ----------

struct NamedFit {
  std::string id;
  domcal::FitSample sample;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

bool parse_strict_double(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && s.size() > 0;
}

std::vector<NamedFit> parse_predictions(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) -> void {
    throw domcal::input_error(path + ":" + std::to_string(lineno) + ": " +
                              what);
  };
  if (!std::getline(in, line)) fail("empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "env,f,y") fail("header must be exactly 'env,f,y'");

  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 3) fail("expected 3 fields");
    double f = 0.0, y = 0.0;
    if (!parse_strict_double(fields[1], f)) fail("bad number for f");
    if (!parse_strict_double(fields[2], y)) fail("bad number for y");
    if (!(y >= 0.0 && y <= 1.0)) fail("target y must lie in [0,1]");
    auto [it, inserted] = rows.try_emplace(fields[0]);
    if (inserted) order.push_back(fields[0]);
    it->second.first.push_back(f);
    it->second.second.push_back(y);
  }
  if (order.empty()) throw domcal::input_error(path + ": no data rows");

  std::vector<NamedFit> out;
  for (const auto& id : order) {
    const auto& [fv, yv] = rows.at(id);
    NamedFit nf;
    nf.id = id;
    nf.sample.f = Eigen::Map<const Eigen::VectorXd>(
        fv.data(), static_cast<Eigen::Index>(fv.size()));
    nf.sample.y = Eigen::Map<const Eigen::VectorXd>(
        yv.data(), static_cast<Eigen::Index>(yv.size()));
    out.push_back(std::move(nf));
  }
  return out;
}

// ---------- shared option plumbing ----------

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::string config_path;
  std::string out = ".";
};

domcal::RunMeta make_meta(const json& resolved, std::uint64_t seed) {
  domcal::RunMeta meta;
  meta.config_hash = domcal::hex64(domcal::fnv1a64(resolved.dump()));
  meta.seed = seed;
  meta.timestamp = domcal::iso_utc_timestamp_now();
  return meta;
}

void write_sidecar(const fs::path& dir, const json& resolved) {
  write_text_file(dir / "config.json", resolved.dump(2) + "\n");
}

// Worst-environment mean squared error after a fitted map.
template <typename MapT>
double worst_env_mse(const MapT& map, const std::vector<NamedFit>& envs) {
  double worst = 0.0;
  for (const auto& e : envs) {
    const Eigen::VectorXd z = domcal::apply(map, e.sample.f);
    worst = std::max(worst, (z - e.sample.y).squaredNorm() /
                                static_cast<double>(z.size()));
  }
  return worst;
}

// ---------- generate ----------

struct GenerateOpts {
  std::string setting;
  std::vector<double> alphas;
  std::vector<double> betas;
  std::size_t n = 1000;
  std::string format = "csv";
};

int run_generate(const GenerateOpts& opts, const GlobalOpts& global) {
  const json config = load_config(global.config_path);
  std::string setting = opts.setting;
  if (setting.empty() && config.contains("setting") &&
      config["setting"].is_string())
    setting = config["setting"].get<std::string>();
  if (setting.empty())
    throw domcal::input_error(
        "generate needs --setting (or 'setting' in the config): "
        "one of a, b, two-bit");
  if (opts.format != "csv" && opts.format != "json")
    throw domcal::input_error("format must be csv or json");

  const fs::path dir = prepare_out_dir(global.out);
  json resolved;
  resolved["setting"] = setting;
  resolved["n_per_env"] = opts.n;
  resolved["format"] = opts.format;
  resolved["seed"] = global.seed;

  domcal::EnvironmentBundle bundle;
  if (setting == "two-bit") {
    std::vector<domcal::TwoBitEnvSpec> specs;
    if (!opts.alphas.empty() || !opts.betas.empty()) {
      if (opts.alphas.size() != opts.betas.size() || opts.alphas.empty())
        throw domcal::input_error(
            "--alpha and --beta must be given the same number of times");
      for (std::size_t e = 0; e < opts.alphas.size(); ++e) {
        domcal::TwoBitEnvSpec spec;
        spec.alpha = opts.alphas[e];
        spec.beta = opts.betas[e];
        spec.validate();
        specs.push_back(spec);
      }
    } else if (config.contains("envs")) {
      specs = parse_two_bit_envs(config["envs"]);
    } else {
      throw domcal::input_error(
          "two-bit generation needs --alpha/--beta or 'envs' in the config");
    }
    json envs = json::array();
    for (const auto& s : specs)
      envs.push_back(json{{"alpha", s.alpha}, {"beta", s.beta}});
    resolved["envs"] = envs;
    bundle = domcal::generate_two_bit_bundle(specs, opts.n, global.seed);
  } else if (setting == "a") {
    const domcal::GaussianEnvSpecA spec = parse_spec_a(config);
    resolved["eta"] = spec.eta;
    resolved["mu_ns"] = vector_to_json(spec.mu_ns);
    resolved["sigma_ns"] = matrix_to_json(spec.sigma_ns);
    json envs = json::array();
    for (std::size_t e = 0; e < spec.num_envs(); ++e)
      envs.push_back(json{{"mu_sp", vector_to_json(spec.mu_sp[e])},
                          {"sigma_sp", matrix_to_json(spec.sigma_sp[e])}});
    resolved["envs"] = envs;
    bundle = domcal::generate_setting_a(spec, opts.n, global.seed);
  } else if (setting == "b") {
    const domcal::GaussianEnvSpecB spec = parse_spec_b(config);
    resolved["w_c_star"] = vector_to_json(spec.w_c_star);
    resolved["sigma_y2"] = spec.sigma_y2;
    json envs = json::array();
    for (std::size_t e = 0; e < spec.num_envs(); ++e)
      envs.push_back(json{{"mu_c", vector_to_json(spec.mu_c[e])},
                          {"sigma_c", matrix_to_json(spec.sigma_c[e])},
                          {"mu_sp", vector_to_json(spec.mu_sp[e])},
                          {"sigma_sp", matrix_to_json(spec.sigma_sp[e])}});
    resolved["envs"] = envs;
    bundle = domcal::generate_setting_b(spec, opts.n, global.seed);
  } else {
    throw domcal::input_error("unknown setting: " + setting +
                              " (expected a, b, or two-bit)");
  }

  const fs::path data_path = dir / ("data." + opts.format);
  domcal::save_bundle(bundle, data_path.string(),
                      opts.format == "json" ? domcal::BundleFormat::json
                                            : domcal::BundleFormat::csv);
  write_sidecar(dir, resolved);
  std::cout << "wrote " << data_path.string() << ": "
            << bundle.environments.size() << " environments, " << opts.n
            << " rows each\n";
  return 0;
}

// ---------- train ----------

struct TrainOpts {
  std::string data;
  std::string family = "linear";
  std::vector<Eigen::Index> hidden;
  std::string base_loss = "cross_entropy";
  std::string penalty = "none";
  double lambda = 0.0;
  double gamma = 2.5;
  double lr = 0.1;
  std::size_t steps = 200;
  std::size_t batch = 512;
  std::string optimizer = "sgd";
};

void merge_train_config(const json& config, TrainOpts& opts,
                        const CLI::App* cmd) {
  auto absent = [&](const char* flag) { return cmd->count(flag) == 0; };
  if (config.contains("family") && absent("--family"))
    opts.family = config["family"].get<std::string>();
  if (config.contains("hidden") && absent("--hidden")) {
    opts.hidden.clear();
    for (const auto& h : config["hidden"])
      opts.hidden.push_back(h.get<Eigen::Index>());
  }
  if (config.contains("base_loss") && absent("--base-loss"))
    opts.base_loss = config["base_loss"].get<std::string>();
  if (config.contains("penalty") && absent("--penalty"))
    opts.penalty = config["penalty"].get<std::string>();
  if (config.contains("lambda") && absent("--lambda"))
    opts.lambda = config["lambda"].get<double>();
  if (config.contains("gamma") && absent("--gamma"))
    opts.gamma = config["gamma"].get<double>();
  if (config.contains("lr") && absent("--lr"))
    opts.lr = config["lr"].get<double>();
  if (config.contains("steps") && absent("--steps"))
    opts.steps = config["steps"].get<std::size_t>();
  if (config.contains("batch") && absent("--batch"))
    opts.batch = config["batch"].get<std::size_t>();
  if (config.contains("optimizer") && absent("--optimizer"))
    opts.optimizer = config["optimizer"].get<std::string>();
}

domcal::ObjectiveSpec objective_from(const TrainOpts& opts) {
  domcal::ObjectiveSpec spec;
  if (opts.base_loss == "cross_entropy") {
    spec.base_loss = domcal::BaseLoss::cross_entropy;
  } else if (opts.base_loss == "squared") {
    spec.base_loss = domcal::BaseLoss::squared;
  } else {
    throw domcal::input_error("unknown base loss: " + opts.base_loss);
  }
  if (opts.penalty == "none") {
    spec.penalty = domcal::PenaltyKind::none;
  } else if (opts.penalty == "clove") {
    spec.penalty = domcal::PenaltyKind::clove;
  } else if (opts.penalty == "irmv1") {
    spec.penalty = domcal::PenaltyKind::irmv1;
  } else {
    throw domcal::input_error("unknown penalty: " + opts.penalty);
  }
  spec.lambda = opts.lambda;
  spec.kernel.gamma = opts.gamma;
  return spec;
}

int run_train(TrainOpts opts, const GlobalOpts& global, const CLI::App* cmd) {
  const json config = load_config(global.config_path);
  merge_train_config(config, opts, cmd);
  if (opts.data.empty()) throw domcal::input_error("train needs --data");

  const domcal::EnvironmentBundle bundle =
      domcal::load_bundle(opts.data, format_of(opts.data));

  domcal::Model init;
  if (opts.family == "linear") {
    init = domcal::Model::linear(bundle.feature_dim());
  } else if (opts.family == "mlp") {
    init = domcal::Model::mlp(bundle.feature_dim(),
                              opts.hidden.empty()
                                  ? std::vector<Eigen::Index>{8}
                                  : opts.hidden,
                              global.seed);
  } else if (opts.family == "two_moment") {
    init = domcal::Model::two_moment(
        Eigen::VectorXd::Zero(bundle.feature_dim()), 1.0);
  } else {
    throw domcal::input_error("unknown model family: " + opts.family);
  }

  const domcal::ObjectiveSpec ospec = objective_from(opts);
  domcal::TrainHyper hyper;
  hyper.lr = opts.lr;
  hyper.steps = opts.steps;
  hyper.batch = opts.batch;
  hyper.seed = global.seed;
  if (opts.optimizer == "sgd") {
    hyper.optimizer = domcal::Optimizer::sgd;
  } else if (opts.optimizer == "adagrad") {
    hyper.optimizer = domcal::Optimizer::adagrad;
  } else if (opts.optimizer == "adam") {
    hyper.optimizer = domcal::Optimizer::adam;
  } else {
    throw domcal::input_error("unknown optimizer: " + opts.optimizer);
  }

  const domcal::TrainResult result =
      domcal::train(init, bundle, ospec, hyper);

  json resolved;
  resolved["command"] = "train";
  resolved["data"] = opts.data;
  resolved["family"] = opts.family;
  json hidden = json::array();
  for (const auto h : opts.hidden) hidden.push_back(h);
  resolved["hidden"] = hidden;
  resolved["base_loss"] = opts.base_loss;
  resolved["penalty"] = opts.penalty;
  resolved["lambda"] = opts.lambda;
  resolved["gamma"] = opts.gamma;
  resolved["lr"] = opts.lr;
  resolved["steps"] = opts.steps;
  resolved["batch"] = opts.batch;
  resolved["optimizer"] = opts.optimizer;
  resolved["seed"] = global.seed;

  const fs::path dir = prepare_out_dir(global.out);
  const domcal::RunMeta meta = make_meta(resolved, global.seed);
  write_text_file(dir / "model.json",
                  domcal::render_model(result.model) + "\n");
  write_text_file(dir / "trace.csv", domcal::render_trace_csv(result.trace));
  write_text_file(dir / "train_report.json",
                  domcal::render_train_report(result, meta));
  write_sidecar(dir, resolved);

  const domcal::TraceRow last =
      result.trace.empty() ? domcal::TraceRow{} : result.trace.back();
  std::cout << "trained " << opts.family << " for " << opts.steps
            << " steps: objective " << last.objective << " (base "
            << last.base_loss << ", penalty " << last.penalty << ")\n";
  return 0;
}

// ---------- calibrate ----------

struct CalibrateOpts {
  std::string preds;
  std::string data;
  std::string model;
  std::string mode = "naive";
};

std::vector<NamedFit> calibration_inputs(const CalibrateOpts& opts) {
  if (!opts.preds.empty()) return parse_predictions(opts.preds);
  if (opts.data.empty() || opts.model.empty())
    throw domcal::input_error(
        "calibrate needs --preds, or --data together with --model");
  const domcal::EnvironmentBundle bundle =
      domcal::load_bundle(opts.data, format_of(opts.data));
  const domcal::Model model =
      domcal::parse_model(read_text_file(opts.model));
  std::vector<NamedFit> out;
  for (const auto& env : bundle.environments) {
    NamedFit nf;
    nf.id = env.id;
    nf.sample.f = domcal::forward(model, env.features);
    nf.sample.y = env.labels;
    out.push_back(std::move(nf));
  }
  return out;
}

int run_calibrate(const CalibrateOpts& opts, const GlobalOpts& global) {
  const json config = load_config(global.config_path);
  const std::vector<NamedFit> envs = calibration_inputs(opts);

  domcal::CalibrationReport report;
  report.mode = opts.mode;
  std::string map_text;
  if (opts.mode == "naive") {
    std::size_t total = 0;
    for (const auto& e : envs)
      total += static_cast<std::size_t>(e.sample.f.size());
    Eigen::VectorXd f(static_cast<Eigen::Index>(total));
    Eigen::VectorXd y(static_cast<Eigen::Index>(total));
    Eigen::Index at = 0;
    for (const auto& e : envs) {
      f.segment(at, e.sample.f.size()) = e.sample.f;
      y.segment(at, e.sample.y.size()) = e.sample.y;
      at += e.sample.f.size();
    }
    report.map = domcal::fit_isotonic(f, y);
    report.objective = worst_env_mse(report.map, envs);
    map_text = domcal::render_monotone_map(report.map);
  } else if (opts.mode == "robust") {
    domcal::RobustOptions ropts;
    if (config.contains("max_iters"))
      ropts.max_iters = config["max_iters"].get<std::size_t>();
    if (config.contains("stability_tol"))
      ropts.stability_tol = config["stability_tol"].get<double>();
    std::vector<domcal::FitSample> samples;
    for (const auto& e : envs) samples.push_back(e.sample);
    const domcal::RobustFitResult fit =
        domcal::calibrate_robust(samples, ropts);
    report.map = fit.map;
    report.objective = fit.objective;
    report.converged = fit.converged;
    report.iterations = static_cast<int>(fit.iterations);
    if (!fit.converged) {
      report.warning =
          "robust calibration stopped at the iteration budget before "
          "stabilizing";
      std::cerr << "warning: " << report.warning << "\n";
    }
    map_text = domcal::render_monotone_map(report.map);
  } else if (opts.mode == "platt") {
    std::size_t total = 0;
    for (const auto& e : envs)
      total += static_cast<std::size_t>(e.sample.f.size());
    domcal::PredictionSet pooled;
    pooled.env_id = "pooled";
    pooled.confidences.resize(static_cast<Eigen::Index>(total));
    pooled.labels.resize(static_cast<Eigen::Index>(total));
    Eigen::Index at = 0;
    for (const auto& e : envs) {
      pooled.confidences.segment(at, e.sample.f.size()) = e.sample.f;
      pooled.labels.segment(at, e.sample.y.size()) = e.sample.y;
      at += e.sample.f.size();
    }
    report.platt = domcal::fit_platt(pooled);
    report.objective = worst_env_mse(report.platt, envs);
    map_text = domcal::render_platt_map(report.platt);
  } else {
    throw domcal::input_error("unknown calibration mode: " + opts.mode +
                              " (expected naive, robust, or platt)");
  }

  json resolved;
  resolved["command"] = "calibrate";
  resolved["mode"] = opts.mode;
  resolved["preds"] = opts.preds;
  resolved["data"] = opts.data;
  resolved["model"] = opts.model;
  resolved["seed"] = global.seed;

  const fs::path dir = prepare_out_dir(global.out);
  const domcal::RunMeta meta = make_meta(resolved, global.seed);
  write_text_file(dir / "calibration.json",
                  domcal::render_calibration_report(report, meta));
  write_text_file(dir / "map.json", map_text + "\n");
  write_sidecar(dir, resolved);
  std::cout << "calibrated (" << opts.mode << "): worst-environment mse "
            << report.objective
            << (report.converged ? "" : " [not converged]") << "\n";
  return 0;
}

// ---------- evaluate ----------

struct EvaluateOpts {
  std::string data;
  std::string model;
  std::string recal;
  int bins = 10;
  double gamma = 2.5;
};

int run_evaluate(const EvaluateOpts& opts, const GlobalOpts& global) {
  const json config = load_config(global.config_path);
  if (opts.data.empty() || opts.model.empty())
    throw domcal::input_error("evaluate needs --data and --model");

  const domcal::EnvironmentBundle bundle =
      domcal::load_bundle(opts.data, format_of(opts.data));
  const domcal::Model model = domcal::parse_model(read_text_file(opts.model));

  bool have_monotone = false, have_platt = false;
  domcal::MonotoneMap mono;
  domcal::PlattMap platt;
  if (!opts.recal.empty()) {
    const std::string text = read_text_file(opts.recal);
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw domcal::input_error("recalibration map " + opts.recal +
                                " is not valid JSON: " + e.what());
    }
    if (j.contains("interp")) {
      mono = domcal::parse_monotone_map(text);
      have_monotone = true;
    } else if (j.contains("a")) {
      platt = domcal::parse_platt_map(text);
      have_platt = true;
    } else {
      throw domcal::input_error("recalibration map " + opts.recal +
                                " is neither a monotone map nor a platt map");
    }
  }

  std::vector<domcal::PredictionSet> preds;
  for (const auto& env : bundle.environments) {
    domcal::PredictionSet p;
    p.env_id = env.id;
    p.confidences = domcal::forward(model, env.features);
    if (have_monotone) p.confidences = domcal::apply(mono, p.confidences);
    if (have_platt) p.confidences = domcal::apply(platt, p.confidences);
    p.labels = env.labels;
    preds.push_back(std::move(p));
  }

  domcal::KernelSpec kernel;
  kernel.gamma = opts.gamma;
  const domcal::MetricReport report =
      domcal::compute_metric_report(preds, opts.bins, kernel);

  json resolved;
  resolved["command"] = "evaluate";
  resolved["data"] = opts.data;
  resolved["model"] = opts.model;
  resolved["recal"] = opts.recal;
  resolved["bins"] = opts.bins;
  resolved["gamma"] = opts.gamma;
  resolved["seed"] = global.seed;
  if (config.contains("landscape")) resolved["landscape"] = config["landscape"];

  const fs::path dir = prepare_out_dir(global.out);
  const domcal::RunMeta meta = make_meta(resolved, global.seed);
  write_text_file(dir / "metrics.json",
                  domcal::render_metric_report(report, meta));

  std::size_t total = 0;
  for (const auto& p : preds)
    total += static_cast<std::size_t>(p.confidences.size());
  domcal::PredictionSet pooled;
  pooled.env_id = "pooled";
  pooled.confidences.resize(static_cast<Eigen::Index>(total));
  pooled.labels.resize(static_cast<Eigen::Index>(total));
  Eigen::Index at = 0;
  for (const auto& p : preds) {
    pooled.confidences.segment(at, p.confidences.size()) = p.confidences;
    pooled.labels.segment(at, p.labels.size()) = p.labels;
    at += p.confidences.size();
  }
  write_text_file(dir / "reliability.csv",
                  domcal::render_reliability_csv(
                      domcal::reliability_bins(pooled, opts.bins)));

  if (config.contains("landscape")) {
    const json& ls = config["landscape"];
    const std::vector<domcal::TwoBitEnvSpec> specs =
        parse_two_bit_envs(ls.contains("envs") ? ls["envs"] : json());
    const int points = ls.contains("points") ? ls["points"].get<int>() : 401;
    const domcal::TwoBitLandscape grid =
        domcal::two_bit_population_penalties(specs, points, kernel);
    write_text_file(dir / "landscape.csv", domcal::render_landscape_csv(grid));
  }
  write_sidecar(dir, resolved);

  std::cout << "evaluated " << bundle.environments.size()
            << " environments: accuracy " << report.pooled.accuracy
            << ", mean ece " << report.mean_ece << ", max ece "
            << report.max_ece << ", clove " << report.clove_value << "\n";
  return 0;
}

// ---------- select ----------

struct SelectOpts {
  std::string data;
  std::vector<std::string> models;
  std::string mode = "worst";
  double acc_threshold = 0.0;
  int bins = 10;
};

int run_select(const SelectOpts& opts, const GlobalOpts& global) {
  const json config = load_config(global.config_path);
  if (opts.data.empty()) throw domcal::input_error("select needs --data");

  domcal::CandidatePool pool;
  pool.validation = domcal::load_bundle(opts.data, format_of(opts.data));
  if (!opts.models.empty()) {
    for (const auto& path : opts.models) {
      domcal::Candidate c;
      c.id = fs::path(path).stem().string();
      c.model = domcal::parse_model(read_text_file(path));
      pool.models.push_back(std::move(c));
    }
  } else if (config.contains("models") && config["models"].is_array()) {
    for (const auto& m : config["models"]) {
      if (!m.contains("id") || !m.contains("path"))
        throw domcal::input_error(
            "config 'models' entries need 'id' and 'path'");
      domcal::Candidate c;
      c.id = m["id"].get<std::string>();
      c.model = domcal::parse_model(read_text_file(m["path"].get<std::string>()));
      pool.models.push_back(std::move(c));
    }
  } else {
    throw domcal::input_error(
        "select needs --models, or a 'models' list in the config");
  }

  domcal::SelectionReport report;
  if (opts.mode == "worst") {
    report = domcal::select_worst_case_ece(pool, opts.bins);
  } else if (opts.mode == "threshold") {
    report =
        domcal::select_threshold_avg_ece(pool, opts.acc_threshold, opts.bins);
  } else {
    throw domcal::input_error("unknown selection mode: " + opts.mode +
                              " (expected worst or threshold)");
  }

  json resolved;
  resolved["command"] = "select";
  resolved["data"] = opts.data;
  json ids = json::array();
  for (const auto& c : pool.models) ids.push_back(c.id);
  resolved["model_ids"] = ids;
  resolved["mode"] = opts.mode;
  resolved["acc_threshold"] = opts.acc_threshold;
  resolved["bins"] = opts.bins;
  resolved["seed"] = global.seed;

  const fs::path dir = prepare_out_dir(global.out);
  const domcal::RunMeta meta = make_meta(resolved, global.seed);
  write_text_file(dir / "selection.json",
                  domcal::render_selection_report(report, meta));
  write_text_file(dir / "selection.csv",
                  domcal::render_selection_csv(report));
  write_sidecar(dir, resolved);

  if (report.selected) {
    std::cout << "selected " << report.chosen_id << " (criterion "
              << (opts.mode == "worst"
                      ? report.entries[report.chosen_index].worst_ece
                      : report.entries[report.chosen_index].mean_ece)
              << ")\n";
  } else {
    std::cout << "no model selected: " << report.diagnostic << "\n";
  }
  return 0;
}

// ---------- verify ----------

struct VerifyOpts {
  int theorem = 0;
  std::string mode = "constraint";
  int starts = 50;
  int floor_probes = 1000;
  int gp_probes = 200;
};

int run_verify(const VerifyOpts& opts, const GlobalOpts& global) {
  if (global.config_path.empty())
    throw domcal::input_error(
        "verify needs --config pointing at an environment spec");
  const json config = load_config(global.config_path);

  json resolved = config;
  resolved["command"] = "verify";
  resolved["theorem"] = opts.theorem;
  resolved["mode"] = opts.mode;
  resolved["seed"] = global.seed;
  const fs::path dir = prepare_out_dir(global.out);
  const domcal::RunMeta meta = make_meta(resolved, global.seed);

  bool passes = false;
  bool refused = false;
  std::string reason;
  if (opts.theorem == 1) {
    const domcal::GaussianEnvSpecA spec = parse_spec_a(config);
    domcal::Theorem1Mode mode;
    if (opts.mode == "constraint") {
      mode = domcal::Theorem1Mode::constraint_search;
    } else if (opts.mode == "train") {
      mode = domcal::Theorem1Mode::train_clove;
    } else {
      throw domcal::input_error("unknown verify mode: " + opts.mode +
                                " (expected constraint or train)");
    }
    domcal::Theorem1Options topts;
    topts.num_starts = opts.starts;
    topts.floor_probes = opts.floor_probes;
    topts.gp_probes = opts.gp_probes;
    topts.seed = global.seed;
    if (config.contains("lambdas")) {
      topts.lambdas.clear();
      for (const auto& l : config["lambdas"])
        topts.lambdas.push_back(l.get<double>());
    }
    if (config.contains("n_per_env"))
      topts.n_per_env = config["n_per_env"].get<std::size_t>();
    if (config.contains("hyper")) {
      const json& h = config["hyper"];
      if (h.contains("lr")) topts.hyper.lr = h["lr"].get<double>();
      if (h.contains("steps"))
        topts.hyper.steps = h["steps"].get<std::size_t>();
      if (h.contains("batch"))
        topts.hyper.batch = h["batch"].get<std::size_t>();
      if (h.contains("optimizer")) {
        const std::string o = h["optimizer"].get<std::string>();
        if (o == "sgd") topts.hyper.optimizer = domcal::Optimizer::sgd;
        else if (o == "adagrad") topts.hyper.optimizer = domcal::Optimizer::adagrad;
        else if (o == "adam") topts.hyper.optimizer = domcal::Optimizer::adam;
        else throw domcal::input_error("unknown optimizer: " + o);
      }
      topts.hyper.seed = global.seed;
    }
    const domcal::Theorem1Report report =
        domcal::verify_theorem1(spec, mode, topts);
    write_text_file(dir / "verification.json",
                    domcal::render_theorem1_report(report, meta));
    passes = report.passes;
    refused = report.refused;
    reason = report.refusal_reason;
  } else if (opts.theorem == 2) {
    const domcal::GaussianEnvSpecB spec = parse_spec_b(config);
    domcal::Theorem2Options topts;
    topts.num_starts = opts.starts;
    topts.floor_probes = opts.floor_probes;
    topts.seed = global.seed;
    const domcal::Theorem2Report report =
        domcal::verify_theorem2(spec, topts);
    write_text_file(dir / "verification.json",
                    domcal::render_theorem2_report(report, meta));
    passes = report.passes;
    refused = report.refused;
    reason = report.refusal_reason;
  } else {
    throw domcal::input_error("--theorem must be 1 or 2");
  }
  write_sidecar(dir, resolved);

  if (refused) {
    std::cout << "refused: " << reason << "\n";
  } else {
    std::cout << "passes: " << (passes ? "true" : "false") << "\n";
  }
  return 0;
}

// ---------- landscape ----------

struct LandscapeOpts {
  std::vector<double> alphas;
  std::vector<double> betas;
  int points = 401;
  double gamma = 2.5;
};

int run_landscape(const LandscapeOpts& opts, const GlobalOpts& global) {
  const json config = load_config(global.config_path);
  std::vector<domcal::TwoBitEnvSpec> specs;
  if (!opts.alphas.empty() || !opts.betas.empty()) {
    if (opts.alphas.size() != opts.betas.size() || opts.alphas.empty())
      throw domcal::input_error(
          "--alpha and --beta must be given the same number of times");
    for (std::size_t e = 0; e < opts.alphas.size(); ++e) {
      domcal::TwoBitEnvSpec spec;
      spec.alpha = opts.alphas[e];
      spec.beta = opts.betas[e];
      spec.validate();
      specs.push_back(spec);
    }
  } else if (config.contains("envs")) {
    specs = parse_two_bit_envs(config["envs"]);
  } else {
    throw domcal::input_error(
        "landscape needs --alpha/--beta or 'envs' in the config");
  }

  domcal::KernelSpec kernel;
  kernel.gamma = opts.gamma;
  const domcal::TwoBitLandscape grid =
      domcal::two_bit_population_penalties(specs, opts.points, kernel);

  json resolved;
  resolved["command"] = "landscape";
  json envs = json::array();
  for (const auto& s : specs)
    envs.push_back(json{{"alpha", s.alpha}, {"beta", s.beta}});
  resolved["envs"] = envs;
  resolved["points"] = opts.points;
  resolved["gamma"] = opts.gamma;
  resolved["seed"] = global.seed;

  const fs::path dir = prepare_out_dir(global.out);
  write_text_file(dir / "landscape.csv", domcal::render_landscape_csv(grid));
  write_sidecar(dir, resolved);

  // Report where the worst-environment penalty bottoms out, for orientation.
  const std::size_t n = grid.axis.size();
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_flat = 0;
  for (std::size_t flat = 0; flat < n * n; ++flat) {
    double worst = 0.0;
    for (std::size_t e = 0; e < grid.num_envs; ++e)
      worst = std::max(worst, grid.mmce[e][flat]);
    if (worst < best) {
      best = worst;
      best_flat = flat;
    }
  }
  std::cout << "wrote landscape over " << n << "x" << n
            << " grid; min worst-environment mmce " << best << " at p1="
            << grid.axis[best_flat / n] << ", p2=" << grid.axis[best_flat % n]
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"domcal: multi-domain calibration toolkit"};
  app.require_subcommand(1);

  GlobalOpts global;
  app.add_option("--seed", global.seed, "random seed (default 0)");
  app.add_option("--config", global.config_path, "JSON config file");
  app.add_option("--out", global.out, "output directory (default .)");

  GenerateOpts gen_opts;
  auto* gen = app.add_subcommand("generate", "synthesize environment bundles");
  gen->fallthrough();
  gen->add_option("--setting", gen_opts.setting, "a, b, or two-bit");
  gen->add_option("--alpha", gen_opts.alphas, "two-bit flip rate for x1");
  gen->add_option("--beta", gen_opts.betas, "two-bit flip rate for x2");
  gen->add_option("--n", gen_opts.n, "rows per environment");
  gen->add_option("--format", gen_opts.format, "csv or json");

  TrainOpts train_opts;
  auto* tr = app.add_subcommand("train", "fit a model on a bundle");
  tr->fallthrough();
  tr->add_option("--data", train_opts.data, "environment bundle (csv/json)");
  tr->add_option("--family", train_opts.family, "linear, mlp, or two_moment");
  tr->add_option("--hidden", train_opts.hidden, "mlp hidden widths");
  tr->add_option("--base-loss", train_opts.base_loss,
                 "cross_entropy or squared");
  tr->add_option("--penalty", train_opts.penalty, "none, clove, or irmv1");
  tr->add_option("--lambda", train_opts.lambda, "penalty weight");
  tr->add_option("--gamma", train_opts.gamma, "rbf kernel width");
  tr->add_option("--lr", train_opts.lr, "learning rate");
  tr->add_option("--steps", train_opts.steps, "training steps");
  tr->add_option("--batch", train_opts.batch,
                 "per-environment batch size (0 = full)");
  tr->add_option("--optimizer", train_opts.optimizer,
                 "sgd, adagrad, or adam");

  CalibrateOpts cal_opts;
  auto* cal = app.add_subcommand("calibrate", "fit a recalibration map");
  cal->fallthrough();
  cal->add_option("--preds", cal_opts.preds, "predictions csv (env,f,y)");
  cal->add_option("--data", cal_opts.data, "environment bundle (with --model)");
  cal->add_option("--model", cal_opts.model, "model json (with --data)");
  cal->add_option("--mode", cal_opts.mode, "naive, robust, or platt");

  EvaluateOpts eval_opts;
  auto* ev = app.add_subcommand("evaluate", "score a model on a bundle");
  ev->fallthrough();
  ev->add_option("--data", eval_opts.data, "environment bundle");
  ev->add_option("--model", eval_opts.model, "model json");
  ev->add_option("--recal", eval_opts.recal, "recalibration map json");
  ev->add_option("--bins", eval_opts.bins, "reliability bins");
  ev->add_option("--gamma", eval_opts.gamma, "rbf kernel width");

  SelectOpts sel_opts;
  auto* sel = app.add_subcommand("select", "pick a model from a pool");
  sel->fallthrough();
  sel->add_option("--data", sel_opts.data, "validation bundle");
  sel->add_option("--models", sel_opts.models, "candidate model json files");
  sel->add_option("--mode", sel_opts.mode, "worst or threshold");
  sel->add_option("--acc-threshold", sel_opts.acc_threshold,
                  "validation accuracy floor (threshold mode)");
  sel->add_option("--bins", sel_opts.bins, "reliability bins");

  VerifyOpts ver_opts;
  auto* ver = app.add_subcommand("verify", "check the theory numerically");
  ver->fallthrough();
  ver->add_option("--theorem", ver_opts.theorem, "1 or 2")->required();
  ver->add_option("--mode", ver_opts.mode,
                  "constraint or train (theorem 1 only)");
  ver->add_option("--starts", ver_opts.starts, "search restarts");
  ver->add_option("--floor-probes", ver_opts.floor_probes,
                  "residual floor probe count");
  ver->add_option("--gp-probes", ver_opts.gp_probes,
                  "general-position probe count");

  LandscapeOpts ls_opts;
  auto* ls = app.add_subcommand("landscape",
                                "exact two-bit penalty landscape grid");
  ls->fallthrough();
  ls->add_option("--alpha", ls_opts.alphas, "two-bit flip rate for x1");
  ls->add_option("--beta", ls_opts.betas, "two-bit flip rate for x2");
  ls->add_option("--points", ls_opts.points, "grid points per axis");
  ls->add_option("--gamma", ls_opts.gamma, "rbf kernel width");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_generate(gen_opts, global);
    if (tr->parsed()) return run_train(train_opts, global, tr);
    if (cal->parsed()) return run_calibrate(cal_opts, global);
    if (ev->parsed()) return run_evaluate(eval_opts, global);
    if (sel->parsed()) return run_select(sel_opts, global);
    if (ver->parsed()) return run_verify(ver_opts, global);
    if (ls->parsed()) return run_landscape(ls_opts, global);
  } catch (const domcal::input_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const domcal::numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
