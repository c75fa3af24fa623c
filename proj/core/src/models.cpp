// Model evaluation, penalized objectives, analytic gradients, training loop,
// and the exact two-bit population landscape.
#include "domcal/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "domcal/errors.hpp"
#include "domcal/rng.hpp"

namespace domcal {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

// mean of log(1+exp(z)) - y*z, evaluated stably.
double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

std::vector<Index> layer_widths(const Model& m) {
  std::vector<Index> w;
  w.push_back(m.input_dim);
  for (Index h : m.hidden) w.push_back(h);
  w.push_back(1);
  return w;
}

struct MlpCache {
  std::vector<MatrixXd> activations;  // [0]=input, then post-ReLU per hidden
  std::vector<MatrixXd> pre;          // pre-activation per layer
};

VectorXd mlp_logits(const Model& m, const MatrixXd& X, MlpCache* cache) {
  const auto widths = layer_widths(m);
  MatrixXd a = X;
  if (cache) cache->activations.push_back(a);
  Index offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Index in = widths[l], out = widths[l + 1];
    Eigen::Map<const RowMajorMatrix> W(m.params.data() + offset, out, in);
    offset += in * out;
    Eigen::Map<const VectorXd> b(m.params.data() + offset, out);
    offset += out;
    MatrixXd z = a * W.transpose();
    z.rowwise() += b.transpose();
    if (cache) cache->pre.push_back(z);
    if (l + 2 < widths.size()) {
      a = z.cwiseMax(0.0);
      if (cache) cache->activations.push_back(a);
    } else {
      a = std::move(z);
    }
  }
  return a.col(0);
}

// Accumulates d(objective)/d(params) from per-sample d(objective)/d(logit).
void mlp_backprop(const Model& m, const MlpCache& cache, const VectorXd& dz,
                  VectorXd& grad) {
  const auto widths = layer_widths(m);
  const auto layers = widths.size() - 1;
  // Parameter offsets per layer.
  std::vector<Index> w_off(layers), b_off(layers);
  Index offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    w_off[l] = offset;
    offset += widths[l] * widths[l + 1];
    b_off[l] = offset;
    offset += widths[l + 1];
  }
  MatrixXd delta = dz;  // n x 1
  for (std::size_t l = layers; l-- > 0;) {
    const Index in = widths[l], out = widths[l + 1];
    Eigen::Map<RowMajorMatrix> gW(grad.data() + w_off[l], out, in);
    Eigen::Map<VectorXd> gb(grad.data() + b_off[l], out);
    gW += delta.transpose() * cache.activations[l];
    gb += delta.colwise().sum().transpose();
    if (l > 0) {
      Eigen::Map<const RowMajorMatrix> W(m.params.data() + w_off[l], out, in);
      MatrixXd back = delta * W;  // n x in
      delta = back.cwiseProduct(
          (cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
}

// MMCE value and (optionally) d(value)/d(prediction), with correctness flags
// constant. Samples sharing (confidence r, correctness c) are grouped; the
// pair sum then runs over groups, an exact regrouping of the double sum.
struct MmceEval {
  double value = 0.0;
  VectorXd d_df;
};

MmceEval mmce_value_grad(const VectorXd& p, const VectorXd& y,
                         const KernelSpec& kernel, bool unbiased,
                         bool want_grad) {
  const Index m = p.size();
  struct Group {
    double r = 0.0;
    double s_per = 0.0;   // per-sample c - r, constant within the group
    double s_tot = 0.0;   // n_g * s_per
    double count = 0.0;   // n_g
  };
  std::map<std::pair<double, double>, std::size_t> index;  // (r, c) -> group
  std::vector<Group> groups;
  std::vector<std::size_t> owner(static_cast<std::size_t>(m));
  std::vector<double> sign(static_cast<std::size_t>(m));  // dr/df per sample
  for (Index i = 0; i < m; ++i) {
    const double f = p(i);
    const double r = std::max(f, 1.0 - f);
    const double predicted = f >= 0.5 ? 1.0 : 0.0;
    const double c = predicted == y(i) ? 1.0 : 0.0;
    auto [it, inserted] = index.emplace(std::make_pair(r, c), groups.size());
    if (inserted) groups.push_back(Group{r, c - r, 0.0, 0.0});
    groups[it->second].s_tot += c - r;
    groups[it->second].count += 1.0;
    owner[static_cast<std::size_t>(i)] = it->second;
    sign[static_cast<std::size_t>(i)] = f >= 0.5 ? 1.0 : -1.0;
  }
  const double md = static_cast<double>(m);
  if (unbiased && m < 2) return MmceEval{0.0, VectorXd::Zero(m)};
  const double scale = unbiased ? 1.0 / (md * (md - 1.0)) : 1.0 / (md * md);

  double total = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    total += groups[g].s_tot * groups[g].s_tot;
    for (std::size_t h = 0; h < g; ++h)
      total += 2.0 * groups[g].s_tot * groups[h].s_tot *
               kernel(groups[g].r, groups[h].r);
  }
  // Diagonal pairs contribute sum_i s_i^2 since k(r,r) = 1; the unbiased
  // form removes them and carries no clamp (its population target is >= 0
  // but the estimate itself may go negative).
  double diag = 0.0;
  if (unbiased)
    for (const Group& g : groups) diag += g.count * g.s_per * g.s_per;
  MmceEval out;
  out.value = unbiased ? (total - diag) * scale
                       : std::max(0.0, total * scale);
  if (!want_grad) return out;

  // S_g = sum_h k(r_g,r_h) * s_tot_h * (-1 - 2*gamma*s_per_g*(r_g - r_h));
  // then d(value)/df_i = sign_i * 2*scale * (S_{group(i)} [+ s_i unbiased]).
  std::vector<double> s_of_group(groups.size(), 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double acc = 0.0;
    for (std::size_t h = 0; h < groups.size(); ++h) {
      const double k = kernel(groups[g].r, groups[h].r);
      acc += k * groups[h].s_tot *
             (-1.0 - 2.0 * kernel.gamma * groups[g].s_per *
                         (groups[g].r - groups[h].r));
    }
    s_of_group[g] = acc;
  }
  out.d_df.resize(m);
  for (Index i = 0; i < m; ++i) {
    const std::size_t g = owner[static_cast<std::size_t>(i)];
    double acc = s_of_group[g];
    // d(diagonal)/df_i = -2 * s_i * sign_i folds in as +s_per after the
    // shared sign_i * 2 * scale factor below.
    if (unbiased) acc += groups[g].s_per;
    out.d_df(i) = sign[static_cast<std::size_t>(i)] * 2.0 * scale * acc;
  }
  return out;
}

struct EnvRef {
  const MatrixXd* X;
  const VectorXd* y;
};

void check_binary(const VectorXd& y) {
  for (Index i = 0; i < y.size(); ++i)
    if (y(i) != 0.0 && y(i) != 1.0)
      throw input_error("classifier objectives need {0,1} labels");
}

ObjectiveParts eval_objective(const Model& model,
                              const std::vector<EnvRef>& envs,
                              const ObjectiveSpec& spec, VectorXd* grad) {
  ObjectiveParts parts;
  if (grad) {
    grad->resize(model.params.size());
    grad->setZero();
  }
  const Index d = model.input_dim;
  for (const EnvRef& env : envs) {
    const MatrixXd& X = *env.X;
    const VectorXd& y = *env.y;
    if (X.cols() != d) throw input_error("feature width does not match model");
    if (X.rows() == 0) throw input_error("empty environment");
    const auto n = static_cast<double>(X.rows());

    if (model.family == ModelFamily::two_moment) {
      if (spec.penalty != PenaltyKind::none)
        throw input_error("penalties require a classifier model");
      if (spec.base_loss != BaseLoss::squared)
        throw input_error("two-moment regressor trains on squared loss");
      const VectorXd f = X * model.params.head(d);
      const VectorXd resid = f - y;
      parts.base += resid.squaredNorm() / n;
      if (grad) grad->head(d) += (2.0 / n) * (X.transpose() * resid);
      continue;
    }

    check_binary(y);
    MlpCache cache;
    VectorXd z;
    if (model.family == ModelFamily::linear) {
      z = (X * model.params.head(d)).array() + model.params(d);
    } else {
      z = mlp_logits(model, X, grad ? &cache : nullptr);
    }
    VectorXd p(z.size());
    for (Index i = 0; i < z.size(); ++i) p(i) = sigmoid(z(i));

    VectorXd dz = VectorXd::Zero(z.size());
    if (spec.base_loss == BaseLoss::cross_entropy) {
      double loss = 0.0;
      for (Index i = 0; i < z.size(); ++i)
        loss += softplus(z(i)) - y(i) * z(i);
      parts.base += loss / n;
      if (grad) dz = (p - y) / n;
    } else {
      parts.base += (p - y).squaredNorm() / n;
      if (grad)
        dz = (2.0 / n) *
             (p - y).cwiseProduct(p.cwiseProduct(VectorXd::Ones(p.size()) - p));
    }

    if (spec.penalty == PenaltyKind::clove) {
      MmceEval me = mmce_value_grad(p, y, spec.kernel, spec.unbiased_penalty,
                                    grad != nullptr);
      parts.penalty += me.value;
      if (grad)
        dz += spec.lambda *
              me.d_df.cwiseProduct(
                  p.cwiseProduct(VectorXd::Ones(p.size()) - p));
    } else if (spec.penalty == PenaltyKind::irmv1) {
      const double g = (p - y).cwiseProduct(z).mean();
      parts.penalty += g * g;
      if (grad) {
        VectorXd dgdz =
            (p.cwiseProduct(VectorXd::Ones(p.size()) - p).cwiseProduct(z) +
             (p - y)) /
            n;
        dz += (2.0 * g * spec.lambda) * dgdz;
      }
    }

    if (grad) {
      if (model.family == ModelFamily::linear) {
        grad->head(d) += X.transpose() * dz;
        (*grad)(d) += dz.sum();
      } else {
        mlp_backprop(model, cache, dz, *grad);
      }
    }
  }
  parts.total = parts.base + spec.lambda * parts.penalty;
  return parts;
}

std::vector<EnvRef> bundle_refs(const EnvironmentBundle& bundle) {
  std::vector<EnvRef> refs;
  refs.reserve(bundle.environments.size());
  for (const auto& env : bundle.environments)
    refs.push_back(EnvRef{&env.features, &env.labels});
  return refs;
}

constexpr double kProbFloor = 1e-12;

double clamp_prob(double p) {
  return std::min(1.0 - kProbFloor, std::max(kProbFloor, p));
}

// The four feature patterns in a fixed order: (+1,+1), (+1,-1), (-1,+1),
// (-1,-1). An odd classifier valued (p1, p2) on the first two takes
// (1-p2, 1-p1) on the last two.
struct TwoBitTables {
  std::array<double, 4> prob;       // P(x) under the environment
  std::array<double, 4> posterior;  // P(Y=+1 | x)
};

TwoBitTables two_bit_tables(const TwoBitEnvSpec& env) {
  constexpr std::array<std::array<int, 2>, 4> patterns{
      {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};
  TwoBitTables t{};
  for (std::size_t k = 0; k < 4; ++k) {
    const int x1 = patterns[k][0], x2 = patterns[k][1];
    const double q1 = x1 == 1 ? 1.0 - env.alpha : env.alpha;
    const double q2 = x2 == 1 ? 1.0 - env.beta : env.beta;
    const double joint_pos = 0.5 * q1 * q2;
    const double joint_neg = 0.5 * (1.0 - q1) * (1.0 - q2);
    t.prob[k] = joint_pos + joint_neg;
    t.posterior[k] = t.prob[k] > 0.0 ? joint_pos / t.prob[k] : 0.0;
  }
  return t;
}

TwoBitPointScores point_scores(const TwoBitTables& t, double p1, double p2,
                               const KernelSpec& kernel) {
  const std::array<double, 4> f{p1, p2, 1.0 - p2, 1.0 - p1};
  TwoBitPointScores out;
  std::array<double, 4> r{}, s{};  // confidence and mass*(correct-rate - r)
  double irm_grad = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const double fc = clamp_prob(f[k]);
    out.cross_entropy +=
        t.prob[k] * (-t.posterior[k] * std::log(fc) -
                     (1.0 - t.posterior[k]) * std::log1p(-fc));
    r[k] = std::max(f[k], 1.0 - f[k]);
    const double correct_rate =
        f[k] >= 0.5 ? t.posterior[k] : 1.0 - t.posterior[k];
    s[k] = t.prob[k] * (correct_rate - r[k]);
    const double z = std::log(fc) - std::log1p(-fc);
    irm_grad += t.prob[k] * (f[k] - t.posterior[k]) * z;
  }
  double total = 0.0;
  for (std::size_t a = 0; a < 4; ++a) {
    total += s[a] * s[a];
    for (std::size_t b = 0; b < a; ++b)
      total += 2.0 * s[a] * s[b] * kernel(r[a], r[b]);
  }
  out.mmce = std::max(0.0, total);
  out.irmv1 = irm_grad * irm_grad;
  return out;
}

}  // namespace

Model Model::linear(Index input_dim) {
  Model m;
  m.family = ModelFamily::linear;
  m.input_dim = input_dim;
  m.params = VectorXd::Zero(input_dim + 1);
  m.validate();
  return m;
}

Model Model::linear(const VectorXd& w, double b) {
  Model m;
  m.family = ModelFamily::linear;
  m.input_dim = w.size();
  m.params.resize(w.size() + 1);
  m.params.head(w.size()) = w;
  m.params(w.size()) = b;
  m.validate();
  return m;
}

Model Model::two_moment(const VectorXd& w, double c) {
  Model m;
  m.family = ModelFamily::two_moment;
  m.input_dim = w.size();
  m.params.resize(w.size() + 1);
  m.params.head(w.size()) = w;
  m.params(w.size()) = c;
  m.validate();
  return m;
}

Model Model::mlp(Index input_dim, std::vector<Index> hidden,
                 std::uint64_t seed) {
  Model m;
  m.family = ModelFamily::mlp;
  m.input_dim = input_dim;
  m.hidden = std::move(hidden);
  m.params = VectorXd::Zero(m.expected_params());
  Rng rng(seed);
  const auto widths = layer_widths(m);
  Index offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Index in = widths[l], out = widths[l + 1];
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (Index k = 0; k < in * out; ++k)
      m.params(offset + k) = scale * rng.normal();
    offset += in * out + out;  // biases stay zero
  }
  m.validate();
  return m;
}

Eigen::Index Model::expected_params() const {
  if (family != ModelFamily::mlp) return input_dim + 1;
  Index total = 0;
  Index prev = input_dim;
  for (Index h : hidden) {
    total += prev * h + h;
    prev = h;
  }
  total += prev + 1;
  return total;
}

void Model::validate() const {
  if (input_dim < 1) throw input_error("model needs input_dim >= 1");
  if (family != ModelFamily::mlp && !hidden.empty())
    throw input_error("hidden widths only apply to the mlp family");
  for (Index h : hidden)
    if (h < 1) throw input_error("hidden widths must be >= 1");
  if (params.size() != expected_params())
    throw input_error("parameter vector has wrong length");
  if (family == ModelFamily::two_moment && !(params(input_dim) > 0.0))
    throw input_error("variance estimate c must be positive");
}

void ObjectiveSpec::validate() const {
  if (lambda < 0.0) throw input_error("lambda must be >= 0");
  if (penalty == PenaltyKind::clove) kernel.validate();
}

void TrainHyper::validate() const {
  if (!(lr > 0.0)) throw input_error("learning rate must be positive");
  if (steps < 1) throw input_error("need at least one training step");
}

VectorXd forward(const Model& model, const MatrixXd& features) {
  model.validate();
  if (features.cols() != model.input_dim)
    throw input_error("feature width does not match model");
  if (model.family == ModelFamily::two_moment)
    return features * model.params.head(model.input_dim);
  VectorXd z = logits(model, features);
  for (Index i = 0; i < z.size(); ++i) z(i) = sigmoid(z(i));
  return z;
}

VectorXd logits(const Model& model, const MatrixXd& features) {
  model.validate();
  if (features.cols() != model.input_dim)
    throw input_error("feature width does not match model");
  if (model.family == ModelFamily::two_moment)
    throw input_error("the regressor has no logits");
  if (model.family == ModelFamily::linear)
    return (features * model.params.head(model.input_dim)).array() +
           model.params(model.input_dim);
  return mlp_logits(model, features, nullptr);
}

ObjectiveParts objective_parts(const Model& model,
                               const EnvironmentBundle& bundle,
                               const ObjectiveSpec& spec) {
  model.validate();
  spec.validate();
  bundle.validate();
  return eval_objective(model, bundle_refs(bundle), spec, nullptr);
}

double objective(const Model& model, const EnvironmentBundle& bundle,
                 const ObjectiveSpec& spec) {
  return objective_parts(model, bundle, spec).total;
}

VectorXd gradient(const Model& model, const EnvironmentBundle& bundle,
                  const ObjectiveSpec& spec) {
  model.validate();
  spec.validate();
  bundle.validate();
  VectorXd grad;
  eval_objective(model, bundle_refs(bundle), spec, &grad);
  return grad;
}

TrainResult train(const Model& init, const EnvironmentBundle& bundle,
                  const ObjectiveSpec& spec, const TrainHyper& hyper) {
  init.validate();
  spec.validate();
  hyper.validate();
  bundle.validate();
  if (bundle.feature_dim() != init.input_dim)
    throw input_error("bundle feature width does not match model");

  Rng rng(hyper.seed);
  TrainResult result;
  result.model = init;
  result.trace.reserve(hyper.steps);
  VectorXd& params = result.model.params;
  VectorXd accum = VectorXd::Zero(params.size());  // adagrad
  VectorXd m1 = VectorXd::Zero(params.size());     // adam
  VectorXd m2 = VectorXd::Zero(params.size());

  std::vector<MatrixXd> batch_x(bundle.environments.size());
  std::vector<VectorXd> batch_y(bundle.environments.size());
  VectorXd grad;
  for (std::size_t step = 0; step < hyper.steps; ++step) {
    std::vector<EnvRef> refs;
    refs.reserve(bundle.environments.size());
    for (std::size_t e = 0; e < bundle.environments.size(); ++e) {
      const auto& env = bundle.environments[e];
      const auto n = static_cast<std::size_t>(env.features.rows());
      if (hyper.batch == 0 || hyper.batch >= n) {
        refs.push_back(EnvRef{&env.features, &env.labels});
      } else {
        batch_x[e].resize(static_cast<Index>(hyper.batch), env.features.cols());
        batch_y[e].resize(static_cast<Index>(hyper.batch));
        for (std::size_t i = 0; i < hyper.batch; ++i) {
          const auto pick = static_cast<Index>(rng.below(n));
          batch_x[e].row(static_cast<Index>(i)) = env.features.row(pick);
          batch_y[e](static_cast<Index>(i)) = env.labels(pick);
        }
        refs.push_back(EnvRef{&batch_x[e], &batch_y[e]});
      }
    }
    const ObjectiveParts parts =
        eval_objective(result.model, refs, spec, &grad);
    if (!std::isfinite(parts.total))
      throw numeric_error("non-finite objective at step " +
                          std::to_string(step));
    result.trace.push_back(
        TraceRow{step, parts.total, parts.base, parts.penalty});

    switch (hyper.optimizer) {
      case Optimizer::sgd:
        params -= hyper.lr * grad;
        break;
      case Optimizer::adagrad:
        accum += grad.cwiseProduct(grad);
        params -= hyper.lr *
                  grad.cwiseQuotient(
                      (accum.array().sqrt() + hyper.adam_eps).matrix());
        break;
      case Optimizer::adam: {
        const auto t = static_cast<double>(step + 1);
        m1 = hyper.adam_beta1 * m1 + (1.0 - hyper.adam_beta1) * grad;
        m2 = hyper.adam_beta2 * m2 +
             (1.0 - hyper.adam_beta2) * grad.cwiseProduct(grad);
        const VectorXd m1h = m1 / (1.0 - std::pow(hyper.adam_beta1, t));
        const VectorXd m2h = m2 / (1.0 - std::pow(hyper.adam_beta2, t));
        params -= hyper.lr * m1h.cwiseQuotient(
                                 (m2h.array().sqrt() + hyper.adam_eps).matrix());
        break;
      }
    }
  }
  return result;
}

TwoBitPointScores two_bit_point_scores(const TwoBitEnvSpec& env, double p1,
                                       double p2, const KernelSpec& kernel) {
  env.validate();
  kernel.validate();
  if (!(p1 >= 0.0 && p1 <= 1.0 && p2 >= 0.0 && p2 <= 1.0))
    throw input_error("classifier probabilities must lie in [0,1]");
  return point_scores(two_bit_tables(env), p1, p2, kernel);
}

TwoBitLandscape two_bit_population_penalties(
    const std::vector<TwoBitEnvSpec>& envs, int points_per_axis,
    const KernelSpec& kernel) {
  if (envs.empty()) throw input_error("need at least one environment");
  if (points_per_axis < 2) throw input_error("grid needs >= 2 points per axis");
  kernel.validate();
  std::vector<TwoBitTables> tables;
  tables.reserve(envs.size());
  for (const auto& e : envs) {
    e.validate();
    tables.push_back(two_bit_tables(e));
  }

  TwoBitLandscape out;
  out.num_envs = envs.size();
  const auto n = static_cast<std::size_t>(points_per_axis);
  out.axis.resize(n);
  for (std::size_t k = 0; k < n; ++k)
    out.axis[k] =
        static_cast<double>(k) / static_cast<double>(points_per_axis - 1);
  out.train_loss.assign(n * n, 0.0);
  out.mmce.assign(envs.size(), std::vector<double>(n * n, 0.0));
  out.irmv1.assign(envs.size(), std::vector<double>(n * n, 0.0));

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t flat = i * n + j;
      double loss = 0.0;
      for (std::size_t e = 0; e < envs.size(); ++e) {
        const TwoBitPointScores s =
            point_scores(tables[e], out.axis[i], out.axis[j], kernel);
        loss += s.cross_entropy;
        out.mmce[e][flat] = s.mmce;
        out.irmv1[e][flat] = s.irmv1;
      }
      out.train_loss[flat] = loss;
    }
  }
  return out;
}

}  // namespace domcal
