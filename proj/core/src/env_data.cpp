// Environment bundle ingestion and the three synthetic generators.
#include "domcal/env_data.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "domcal/errors.hpp"
#include "domcal/linalg.hpp"
#include "text_io.hpp"

namespace domcal {

namespace {

using nlohmann::json;

[[noreturn]] void parse_fail(const std::string& path, std::size_t line,
                             const std::string& what) {
  throw input_error(path + ":" + std::to_string(line) + ": " + what);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error(path + ": cannot open for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error(path + ": cannot open for writing");
  out << body;
  if (!out) throw input_error(path + ": write failed");
}

EnvironmentBundle parse_csv(const std::string& path, const std::string& body) {
  std::istringstream in(body);
  std::string line;
  if (!std::getline(in, line)) throw input_error(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = detail::split(line, ',');
  if (header.size() < 3 || header[0] != "env" || header[1] != "y")
    parse_fail(path, 1, "header must be env,y,x0,...");
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 2] != "x" + std::to_string(j))
      parse_fail(path, 1, "feature column " + std::to_string(j) +
                              " must be named x" + std::to_string(j));
  }

  std::vector<std::string> env_order;
  std::unordered_map<std::string, std::size_t> env_index;
  std::vector<std::vector<double>> rows;        // flattened feature rows
  std::vector<std::vector<double>> labels;      // per env
  std::vector<std::vector<std::size_t>> owner;  // per env -> row indices

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = detail::split(line, ',');
    if (fields.size() != d + 2)
      parse_fail(path, line_no,
                 "expected " + std::to_string(d + 2) + " fields, got " +
                     std::to_string(fields.size()));
    const std::string& id = fields[0];
    if (id.empty()) parse_fail(path, line_no, "empty env id");

    double y = 0.0;
    if (!detail::parse_double(fields[1], y))
      parse_fail(path, line_no, "bad label '" + fields[1] + "'");
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j) {
      if (!detail::parse_double(fields[j + 2], row[j]))
        parse_fail(path, line_no, "bad feature '" + fields[j + 2] + "'");
    }

    auto it = env_index.find(id);
    if (it == env_index.end()) {
      it = env_index.emplace(id, env_order.size()).first;
      env_order.push_back(id);
      labels.emplace_back();
      owner.emplace_back();
    }
    labels[it->second].push_back(y);
    owner[it->second].push_back(rows.size());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw input_error(path + ": no data rows");

  EnvironmentBundle bundle;
  for (std::size_t e = 0; e < env_order.size(); ++e) {
    Environment env;
    env.id = env_order[e];
    const std::size_t n = owner[e].size();
    env.features.resize(static_cast<Eigen::Index>(n),
                        static_cast<Eigen::Index>(d));
    env.labels.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = rows[owner[e][i]];
      for (std::size_t j = 0; j < d; ++j)
        env.features(static_cast<Eigen::Index>(i),
                     static_cast<Eigen::Index>(j)) = row[j];
      env.labels(static_cast<Eigen::Index>(i)) = labels[e][i];
    }
    bundle.environments.push_back(std::move(env));
  }
  bundle.validate();
  return bundle;
}

EnvironmentBundle parse_json_bundle(const std::string& path,
                                    const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw input_error(path + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("environments") ||
      !doc["environments"].is_array())
    throw input_error(path + ": expected object with 'environments' array");

  EnvironmentBundle bundle;
  std::size_t idx = 0;
  for (const auto& entry : doc["environments"]) {
    const std::string where = path + ": environments[" + std::to_string(idx) + "]";
    if (!entry.is_object() || !entry.contains("id") ||
        !entry.contains("features") || !entry.contains("labels"))
      throw input_error(where + ": need id, features, labels");
    if (!entry["id"].is_string())
      throw input_error(where + ": id must be a string");
    const auto& feats = entry["features"];
    const auto& labs = entry["labels"];
    if (!feats.is_array() || !labs.is_array())
      throw input_error(where + ": features and labels must be arrays");
    if (feats.empty()) throw input_error(where + ": empty environment");
    if (feats.size() != labs.size())
      throw input_error(where + ": features/labels length mismatch");

    Environment env;
    env.id = entry["id"].get<std::string>();
    const std::size_t n = feats.size();
    std::size_t d = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = feats[i];
      if (!row.is_array())
        throw input_error(where + ": features[" + std::to_string(i) +
                          "] must be an array");
      if (i == 0) {
        d = row.size();
        if (d == 0) throw input_error(where + ": zero-width feature row");
        env.features.resize(static_cast<Eigen::Index>(n),
                            static_cast<Eigen::Index>(d));
        env.labels.resize(static_cast<Eigen::Index>(n));
      } else if (row.size() != d) {
        throw input_error(where + ": inconsistent feature count at row " +
                          std::to_string(i));
      }
      for (std::size_t j = 0; j < d; ++j) {
        if (!row[j].is_number())
          throw input_error(where + ": non-numeric feature at row " +
                            std::to_string(i));
        env.features(static_cast<Eigen::Index>(i),
                     static_cast<Eigen::Index>(j)) = row[j].get<double>();
      }
      if (!labs[i].is_number())
        throw input_error(where + ": non-numeric label at row " +
                          std::to_string(i));
      env.labels(static_cast<Eigen::Index>(i)) = labs[i].get<double>();
    }
    bundle.environments.push_back(std::move(env));
    ++idx;
  }
  if (bundle.environments.empty())
    throw input_error(path + ": no environments");
  bundle.validate();
  return bundle;
}

std::string render_csv(const EnvironmentBundle& bundle) {
  const Eigen::Index d = bundle.feature_dim();
  std::string out = "env,y";
  for (Eigen::Index j = 0; j < d; ++j) out += ",x" + std::to_string(j);
  out += "\n";
  for (const auto& env : bundle.environments) {
    if (env.id.find(',') != std::string::npos ||
        env.id.find('\n') != std::string::npos ||
        env.id.find('\r') != std::string::npos)
      throw input_error("env id '" + env.id + "' not representable in CSV");
    for (Eigen::Index i = 0; i < env.labels.size(); ++i) {
      out += env.id;
      out += ',';
      out += detail::fmt_double(env.labels(i));
      for (Eigen::Index j = 0; j < d; ++j) {
        out += ',';
        out += detail::fmt_double(env.features(i, j));
      }
      out += '\n';
    }
  }
  return out;
}

std::string render_json(const EnvironmentBundle& bundle) {
  std::string out = "{\"environments\":[";
  bool first_env = true;
  for (const auto& env : bundle.environments) {
    if (!first_env) out += ',';
    first_env = false;
    out += "{\"id\":\"" + detail::escape_json(env.id) + "\",\"features\":[";
    for (Eigen::Index i = 0; i < env.features.rows(); ++i) {
      if (i > 0) out += ',';
      out += '[';
      for (Eigen::Index j = 0; j < env.features.cols(); ++j) {
        if (j > 0) out += ',';
        out += detail::fmt_double(env.features(i, j));
      }
      out += ']';
    }
    out += "],\"labels\":[";
    for (Eigen::Index i = 0; i < env.labels.size(); ++i) {
      if (i > 0) out += ',';
      out += detail::fmt_double(env.labels(i));
    }
    out += "]}";
  }
  out += "]}\n";
  return out;
}

// Draws a standard normal vector and maps it through mean + L z.
Eigen::VectorXd gaussian_draw(const Eigen::VectorXd& mean,
                              const Eigen::MatrixXd& chol_lower, Rng& rng) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + chol_lower * z;
}

// Rademacher-style sign: -1 with probability delta, +1 otherwise.
int rad_sign(double delta, Rng& rng) { return rng.u01() < delta ? -1 : 1; }

TwoBitSample sample_two_bit(const TwoBitEnvSpec& spec, std::size_t n,
                            Rng& rng) {
  TwoBitSample s;
  s.features.resize(static_cast<Eigen::Index>(n), 2);
  s.labels.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rad_sign(0.5, rng);
    const int x1 = y * rad_sign(spec.alpha, rng);
    const int x2 = y * rad_sign(spec.beta, rng);
    const auto r = static_cast<Eigen::Index>(i);
    s.features(r, 0) = x1;
    s.features(r, 1) = x2;
    s.labels(r) = y > 0 ? 1.0 : 0.0;
  }
  return s;
}

}  // namespace

void EnvironmentBundle::validate() const {
  if (environments.empty()) throw input_error("bundle has no environments");
  std::unordered_set<std::string> seen;
  const Eigen::Index d = environments.front().features.cols();
  for (const auto& env : environments) {
    if (env.id.empty()) throw input_error("environment with empty id");
    if (!seen.insert(env.id).second)
      throw input_error("duplicate env id '" + env.id + "'");
    if (env.features.rows() < 1)
      throw input_error("environment '" + env.id + "' is empty");
    if (env.features.cols() != d)
      throw input_error("environment '" + env.id +
                        "' has mismatched feature dim");
    if (env.labels.size() != env.features.rows())
      throw input_error("environment '" + env.id +
                        "' labels/features length mismatch");
  }
}

void GaussianEnvSpecA::validate() const {
  // The closed ends are the degenerate Bernoulli priors (all labels equal);
  // the generators handle them exactly, so they are allowed.
  if (!(eta >= 0.0 && eta <= 1.0))
    throw input_error("label rate eta must lie in [0,1]");
  if (mu_ns.size() < 1) throw input_error("mu_ns must be nonempty");
  if (sigma_ns.rows() != mu_ns.size() || sigma_ns.cols() != mu_ns.size())
    throw input_error("sigma_ns shape must match mu_ns");
  if (mu_sp.empty()) throw input_error("need at least one environment");
  if (sigma_sp.size() != mu_sp.size())
    throw input_error("mu_sp/sigma_sp count mismatch");
  const Eigen::Index dsp = mu_sp.front().size();
  if (dsp < 1) throw input_error("mu_sp entries must be nonempty");
  for (std::size_t i = 0; i < mu_sp.size(); ++i) {
    if (mu_sp[i].size() != dsp)
      throw input_error("mu_sp dimensions differ across environments");
    if (sigma_sp[i].rows() != dsp || sigma_sp[i].cols() != dsp)
      throw input_error("sigma_sp shape mismatch in environment " +
                        std::to_string(i));
  }
}

void GaussianEnvSpecB::validate() const {
  if (w_c_star.size() < 1) throw input_error("w_c_star must be nonempty");
  if (sigma_y2 < 0.0) throw input_error("sigma_y2 must be >= 0");
  if (mu_c.empty()) throw input_error("need at least one environment");
  if (sigma_c.size() != mu_c.size() || mu_sp.size() != mu_c.size() ||
      sigma_sp.size() != mu_c.size())
    throw input_error("per-environment parameter counts differ");
  const Eigen::Index dc = w_c_star.size();
  const Eigen::Index dsp = mu_sp.front().size();
  if (dsp < 1) throw input_error("mu_sp entries must be nonempty");
  for (std::size_t i = 0; i < mu_c.size(); ++i) {
    if (mu_c[i].size() != dc || sigma_c[i].rows() != dc ||
        sigma_c[i].cols() != dc)
      throw input_error("causal block shape mismatch in environment " +
                        std::to_string(i));
    if (mu_sp[i].size() != dsp || sigma_sp[i].rows() != dsp ||
        sigma_sp[i].cols() != dsp)
      throw input_error("spurious block shape mismatch in environment " +
                        std::to_string(i));
  }
}

void TwoBitEnvSpec::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0 && beta >= 0.0 && beta <= 1.0))
    throw input_error("flip probabilities must lie in [0,1]");
}

EnvironmentBundle load_bundle(const std::string& path, BundleFormat format) {
  const std::string body = read_file(path);
  return format == BundleFormat::csv ? parse_csv(path, body)
                                     : parse_json_bundle(path, body);
}

void save_bundle(const EnvironmentBundle& bundle, const std::string& path,
                 BundleFormat format) {
  bundle.validate();
  write_file(path,
             format == BundleFormat::csv ? render_csv(bundle)
                                         : render_json(bundle));
}

EnvironmentBundle generate_setting_a(const GaussianEnvSpecA& spec,
                                     std::size_t n_per_env,
                                     std::uint64_t seed) {
  spec.validate();
  if (n_per_env < 1) throw input_error("n_per_env must be >= 1");
  Rng rng(seed);
  const Eigen::MatrixXd chol_ns =
      cholesky_spd(spec.sigma_ns, 1e-10, "sigma_ns");
  const Eigen::Index d = spec.d_ns() + spec.d_sp();

  EnvironmentBundle bundle;
  for (std::size_t e = 0; e < spec.num_envs(); ++e) {
    const Eigen::MatrixXd chol_sp = cholesky_spd(
        spec.sigma_sp[e], 1e-10, ("sigma_sp[" + std::to_string(e) + "]").c_str());
    Environment env;
    env.id = "e" + std::to_string(e);
    env.features.resize(static_cast<Eigen::Index>(n_per_env), d);
    env.labels.resize(static_cast<Eigen::Index>(n_per_env));
    for (std::size_t i = 0; i < n_per_env; ++i) {
      const double y = rng.u01() < spec.eta ? 1.0 : 0.0;
      const double s = y - 0.5;
      const Eigen::VectorXd x_ns = gaussian_draw(s * spec.mu_ns, chol_ns, rng);
      const Eigen::VectorXd x_sp =
          gaussian_draw(s * spec.mu_sp[e], chol_sp, rng);
      const auto r = static_cast<Eigen::Index>(i);
      env.features.row(r).head(spec.d_ns()) = x_ns.transpose();
      env.features.row(r).tail(spec.d_sp()) = x_sp.transpose();
      env.labels(r) = y;
    }
    bundle.environments.push_back(std::move(env));
  }
  return bundle;
}

EnvironmentBundle generate_setting_b(const GaussianEnvSpecB& spec,
                                     std::size_t n_per_env,
                                     std::uint64_t seed) {
  spec.validate();
  if (n_per_env < 1) throw input_error("n_per_env must be >= 1");
  Rng rng(seed);
  const double sigma_y = std::sqrt(spec.sigma_y2);
  const Eigen::Index d = spec.d_c() + spec.d_sp();

  EnvironmentBundle bundle;
  for (std::size_t e = 0; e < spec.num_envs(); ++e) {
    const Eigen::MatrixXd chol_c = cholesky_spd(
        spec.sigma_c[e], 1e-10, ("sigma_c[" + std::to_string(e) + "]").c_str());
    const Eigen::MatrixXd chol_sp = cholesky_spd(
        spec.sigma_sp[e], 1e-10, ("sigma_sp[" + std::to_string(e) + "]").c_str());
    Environment env;
    env.id = "e" + std::to_string(e);
    env.features.resize(static_cast<Eigen::Index>(n_per_env), d);
    env.labels.resize(static_cast<Eigen::Index>(n_per_env));
    for (std::size_t i = 0; i < n_per_env; ++i) {
      const Eigen::VectorXd x_c = gaussian_draw(spec.mu_c[e], chol_c, rng);
      const double y = spec.w_c_star.dot(x_c) + sigma_y * rng.normal();
      const Eigen::VectorXd x_sp =
          gaussian_draw(y * spec.mu_sp[e], chol_sp, rng);
      const auto r = static_cast<Eigen::Index>(i);
      env.features.row(r).head(spec.d_c()) = x_c.transpose();
      env.features.row(r).tail(spec.d_sp()) = x_sp.transpose();
      env.labels(r) = y;
    }
    bundle.environments.push_back(std::move(env));
  }
  return bundle;
}

TwoBitSample generate_two_bit(const TwoBitEnvSpec& spec, std::size_t n,
                              std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw input_error("n must be >= 1");
  Rng rng(seed);
  return sample_two_bit(spec, n, rng);
}

EnvironmentBundle generate_two_bit_bundle(
    const std::vector<TwoBitEnvSpec>& specs, std::size_t n_per_env,
    std::uint64_t seed) {
  if (specs.empty()) throw input_error("need at least one environment");
  if (n_per_env < 1) throw input_error("n_per_env must be >= 1");
  for (const auto& s : specs) s.validate();
  Rng rng(seed);
  EnvironmentBundle bundle;
  for (std::size_t e = 0; e < specs.size(); ++e) {
    TwoBitSample s = sample_two_bit(specs[e], n_per_env, rng);
    Environment env;
    env.id = "e" + std::to_string(e);
    env.features = std::move(s.features);
    env.labels = std::move(s.labels);
    bundle.environments.push_back(std::move(env));
  }
  return bundle;
}

double two_bit_posterior(const TwoBitEnvSpec& spec, int x1, int x2) {
  spec.validate();
  if ((x1 != 1 && x1 != -1) || (x2 != 1 && x2 != -1))
    throw input_error("two-bit features must be +1 or -1");
  const double q1 = x1 == 1 ? 1.0 - spec.alpha : spec.alpha;
  const double q2 = x2 == 1 ? 1.0 - spec.beta : spec.beta;
  const double num = q1 * q2;
  const double den = q1 * q2 + (1.0 - q1) * (1.0 - q2);
  if (den <= 0.0)
    throw numeric_error("two-bit posterior undefined: zero-probability cell");
  return num / den;
}

}  // namespace domcal
