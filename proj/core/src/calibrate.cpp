// Calibrator implementations.
#include "domcal/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "domcal/errors.hpp"

namespace domcal {

namespace {

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Exact grouping of equal prediction values into (knot, target mean, weight).
struct Grouped {
  std::vector<double> knots;
  std::vector<double> targets;
  std::vector<double> weights;
};

Grouped group_by_value(const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
  std::map<double, std::pair<double, double>> acc;  // f -> (sum y, count)
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    auto& a = acc[f(i)];
    a.first += y(i);
    a.second += 1.0;
  }
  Grouped g;
  g.knots.reserve(acc.size());
  for (const auto& [knot, a] : acc) {
    g.knots.push_back(knot);
    g.targets.push_back(a.first / a.second);
    g.weights.push_back(a.second);
  }
  return g;
}

void check_fit_input(const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
  if (f.size() == 0) throw input_error("empty fit input");
  if (f.size() != y.size()) throw input_error("f/y length mismatch");
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (!std::isfinite(f(i)))
      throw input_error("non-finite prediction at index " + std::to_string(i));
    if (!(y(i) >= 0.0 && y(i) <= 1.0))
      throw input_error("target out of [0,1] at index " + std::to_string(i));
  }
}

}  // namespace

void MonotoneMap::validate() const {
  if (knots.empty()) throw input_error("monotone map needs at least one knot");
  if (knots.size() != values.size())
    throw input_error("knots/values length mismatch");
  for (std::size_t i = 0; i < knots.size(); ++i) {
    if (!std::isfinite(knots[i])) throw input_error("non-finite knot");
    if (!(values[i] >= 0.0 && values[i] <= 1.0))
      throw input_error("map value out of [0,1]");
    if (i > 0) {
      if (!(knots[i] > knots[i - 1]))
        throw input_error("knots must be strictly ascending");
      if (values[i] < values[i - 1])
        throw input_error("values must be nondecreasing");
    }
  }
}

double MonotoneMap::operator()(double x) const {
  if (x <= knots.front()) return values.front();
  if (x >= knots.back()) return values.back();
  // First knot strictly greater than x; x lies in [knots[j-1], knots[j]).
  const auto it = std::upper_bound(knots.begin(), knots.end(), x);
  const auto j = static_cast<std::size_t>(it - knots.begin());
  if (interp == Interp::step) return values[j - 1];
  const double span = knots[j] - knots[j - 1];
  const double t = (x - knots[j - 1]) / span;
  return values[j - 1] + t * (values[j] - values[j - 1]);
}

double PlattMap::operator()(double f) const {
  const double clipped = std::min(1.0 - 1e-6, std::max(1e-6, f));
  const double z = std::log(clipped / (1.0 - clipped));
  return sigmoid(a * z + b);
}

Eigen::VectorXd apply(const MonotoneMap& map, const Eigen::VectorXd& preds) {
  map.validate();
  Eigen::VectorXd out(preds.size());
  for (Eigen::Index i = 0; i < preds.size(); ++i) out(i) = map(preds(i));
  return out;
}

Eigen::VectorXd apply(const PlattMap& map, const Eigen::VectorXd& preds) {
  Eigen::VectorXd out(preds.size());
  for (Eigen::Index i = 0; i < preds.size(); ++i) out(i) = map(preds(i));
  return out;
}

std::vector<double> pava(const std::vector<double>& targets,
                         const std::vector<double>& weights) {
  if (targets.empty()) throw input_error("empty isotonic input");
  if (targets.size() != weights.size())
    throw input_error("targets/weights length mismatch");
  for (double w : weights)
    if (!(w > 0.0)) throw input_error("weights must be positive");

  // Stack of merged blocks, each carrying its weighted mean.
  struct Block {
    double mean;
    double weight;
    std::size_t size;
  };
  std::vector<Block> stack;
  stack.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Block blk{targets[i], weights[i], 1};
    while (!stack.empty() && stack.back().mean >= blk.mean) {
      const Block& prev = stack.back();
      blk.mean = (prev.mean * prev.weight + blk.mean * blk.weight) /
                 (prev.weight + blk.weight);
      blk.weight += prev.weight;
      blk.size += prev.size;
      stack.pop_back();
    }
    stack.push_back(blk);
  }
  std::vector<double> fitted;
  fitted.reserve(targets.size());
  for (const Block& blk : stack)
    fitted.insert(fitted.end(), blk.size, blk.mean);
  return fitted;
}

MonotoneMap fit_isotonic(const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
  check_fit_input(f, y);
  Grouped g = group_by_value(f, y);
  std::vector<double> fitted = pava(g.targets, g.weights);
  for (double& v : fitted) v = clip01(v);
  MonotoneMap map;
  map.knots = std::move(g.knots);
  map.values = std::move(fitted);
  map.interp = MonotoneMap::Interp::linear;
  map.validate();
  return map;
}

MonotoneMap fit_isotonic(const PredictionSet& preds) {
  preds.validate();
  return fit_isotonic(preds.confidences, preds.labels);
}

PlattMap fit_platt(const PredictionSet& preds) {
  preds.validate();
  const Eigen::Index n = preds.confidences.size();
  const double mean_y = preds.labels.mean();
  if (mean_y == 0.0 || mean_y == 1.0)
    throw input_error("Platt scaling needs both classes present");

  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double clipped =
        std::min(1.0 - 1e-6, std::max(1e-6, preds.confidences(i)));
    z(i) = std::log(clipped / (1.0 - clipped));
  }
  const Eigen::VectorXd& y = preds.labels;

  const auto loss = [&](double a, double b) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = a * z(i) + b;
      // Stable cross-entropy: log(1+exp(u)) - y*u.
      const double softplus = u > 0.0 ? u + std::log1p(std::exp(-u))
                                      : std::log1p(std::exp(u));
      total += softplus - y(i) * u;
    }
    return total / static_cast<double>(n);
  };

  double a = 1.0, b = 0.0;
  double current = loss(a, b);
  for (int iter = 0; iter < 200; ++iter) {
    double ga = 0.0, gb = 0.0, haa = 0.0, hab = 0.0, hbb = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = sigmoid(a * z(i) + b);
      const double r = p - y(i);
      const double w = p * (1.0 - p);
      ga += r * z(i);
      gb += r;
      haa += w * z(i) * z(i);
      hab += w * z(i);
      hbb += w;
    }
    const auto dn = static_cast<double>(n);
    ga /= dn; gb /= dn; haa /= dn; hab /= dn; hbb /= dn;
    if (std::max(std::abs(ga), std::abs(gb)) < 1e-8) break;

    // Solve the 2x2 Newton system with a tiny ridge for degenerate inputs.
    const double ridge = 1e-12 * (1.0 + haa + hbb);
    double det = (haa + ridge) * (hbb + ridge) - hab * hab;
    if (!(det > 0.0)) det = ridge;
    double da = -((hbb + ridge) * ga - hab * gb) / det;
    double db = -((haa + ridge) * gb - hab * ga) / det;

    double step = 1.0;
    for (int halving = 0; halving < 40; ++halving) {
      const double trial = loss(a + step * da, b + step * db);
      if (trial <= current) {
        a += step * da;
        b += step * db;
        current = trial;
        break;
      }
      step *= 0.5;
    }
  }
  return PlattMap{a, b};
}

MonotoneMap calibrate_naive(const std::vector<PredictionSet>& envs) {
  if (envs.empty()) throw input_error("need at least one environment");
  Eigen::Index total = 0;
  for (const auto& e : envs) {
    e.validate();
    total += e.confidences.size();
  }
  Eigen::VectorXd f(total), y(total);
  Eigen::Index at = 0;
  for (const auto& e : envs) {
    f.segment(at, e.confidences.size()) = e.confidences;
    y.segment(at, e.labels.size()) = e.labels;
    at += e.confidences.size();
  }
  return fit_isotonic(f, y);
}

RobustFitResult calibrate_robust(const std::vector<FitSample>& envs,
                                 const RobustOptions& options) {
  if (envs.empty()) throw input_error("need at least one environment");
  for (const auto& e : envs) check_fit_input(e.f, e.y);

  // Pooled distinct prediction points are the decision grid.
  std::map<double, std::size_t> knot_index;
  for (const auto& e : envs)
    for (Eigen::Index i = 0; i < e.f.size(); ++i) knot_index.emplace(e.f(i), 0);
  std::vector<double> knots;
  knots.reserve(knot_index.size());
  for (auto& [k, idx] : knot_index) {
    idx = knots.size();
    knots.push_back(k);
  }
  const std::size_t num_knots = knots.size();
  const std::size_t num_envs = envs.size();

  // Per-env sufficient statistics at each knot: count, target mean, plus the
  // within-knot variance term that the decision variables cannot remove.
  std::vector<Eigen::VectorXd> w(num_envs), ybar(num_envs);
  std::vector<double> irreducible(num_envs, 0.0), inv_n(num_envs, 0.0);
  for (std::size_t e = 0; e < num_envs; ++e) {
    w[e] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_knots));
    Eigen::VectorXd ysum =
        Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_knots));
    Eigen::VectorXd ysq =
        Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_knots));
    for (Eigen::Index i = 0; i < envs[e].f.size(); ++i) {
      const auto k =
          static_cast<Eigen::Index>(knot_index.at(envs[e].f(i)));
      w[e](k) += 1.0;
      ysum(k) += envs[e].y(i);
      ysq(k) += envs[e].y(i) * envs[e].y(i);
    }
    ybar[e] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_knots));
    inv_n[e] = 1.0 / static_cast<double>(envs[e].f.size());
    for (Eigen::Index k = 0; k < w[e].size(); ++k) {
      if (w[e](k) > 0.0) {
        ybar[e](k) = ysum(k) / w[e](k);
        irreducible[e] += ysq(k) - w[e](k) * ybar[e](k) * ybar[e](k);
      }
    }
    irreducible[e] *= inv_n[e];
  }

  const auto env_objective = [&](const Eigen::VectorXd& z, std::size_t e) {
    double quad = 0.0;
    for (Eigen::Index k = 0; k < z.size(); ++k) {
      if (w[e](k) > 0.0) {
        const double d = z(k) - ybar[e](k);
        quad += w[e](k) * d * d;
      }
    }
    return inv_n[e] * quad + irreducible[e];
  };
  const auto worst = [&](const Eigen::VectorXd& z, std::size_t& argmax) {
    double best = -1.0;
    argmax = 0;
    for (std::size_t e = 0; e < num_envs; ++e) {
      const double v = env_objective(z, e);
      if (v > best) {
        best = v;
        argmax = e;
      }
    }
    return best;
  };
  const auto project = [&](Eigen::VectorXd z) {
    std::vector<double> t(z.data(), z.data() + z.size());
    const std::vector<double> unit(t.size(), 1.0);
    std::vector<double> fitted = pava(t, unit);
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = clip01(fitted[k]);
    return z;
  };

  // Warm start at the pooled isotonic fit: its knot grid is exactly ours, so
  // the first iterate already matches naive pooling and the best iterate can
  // only improve on it.
  Eigen::Index pooled_n = 0;
  for (const auto& e : envs) pooled_n += e.f.size();
  Eigen::VectorXd pooled_f(pooled_n), pooled_y(pooled_n);
  Eigen::Index at = 0;
  for (const auto& e : envs) {
    pooled_f.segment(at, e.f.size()) = e.f;
    pooled_y.segment(at, e.y.size()) = e.y;
    at += e.f.size();
  }
  const MonotoneMap naive = fit_isotonic(pooled_f, pooled_y);
  Eigen::VectorXd z(static_cast<Eigen::Index>(num_knots));
  for (std::size_t k = 0; k < num_knots; ++k) z(static_cast<Eigen::Index>(k)) = naive.values[k];

  RobustFitResult result;
  Eigen::VectorXd z_best = z;
  std::size_t active = 0;
  double f_best = worst(z, active);
  // Adaptive level control: aim each Polyak step at f_best - delta. When a
  // probe window passes without meaningful progress the level offset delta is
  // halved and the iterate restarts from the incumbent; when the whole ladder
  // (delta down to the stability tolerance) is exhausted, it restarts at the
  // coarse level from the refined incumbent. The fit is declared stable once
  // a complete ladder pass fails to improve the record by the tolerance.
  double delta = options.target_slack;
  double f_mark = f_best;
  double ladder_best = f_best;
  const std::size_t probe =
      std::max<std::size_t>(50, options.stability_window / 10);
  // Window average of the iterates. Subgradient steps on a max objective
  // zigzag across the locus where two environments tie; the average of the
  // window's iterates sits on that locus (monotone vectors in the box are
  // closed under averaging) and is scored as a candidate record of its own.
  Eigen::VectorXd z_avg = Eigen::VectorXd::Zero(z.size());
  std::size_t avg_count = 0;
  std::size_t iter = 0;
  bool stable = false;
  for (; iter < options.max_iters; ++iter) {
    const double f_now = worst(z, active);
    if (f_now < f_best) {
      f_best = f_now;
      z_best = z;
    }
    if (iter > 0 && iter % probe == 0) {
      if (avg_count > 0) {
        const Eigen::VectorXd mean = z_avg / static_cast<double>(avg_count);
        std::size_t avg_active = 0;
        const double f_mean = worst(mean, avg_active);
        if (f_mean < f_best) {
          f_best = f_mean;
          z_best = mean;
        }
      }
      z_avg.setZero();
      avg_count = 0;
      if (f_mark - f_best < 0.25 * delta) {
        if (delta <= options.stability_tol) {
          if (ladder_best - f_best < options.stability_tol) {
            stable = true;
            break;
          }
          ladder_best = f_best;
          delta = options.target_slack;
          z = z_best;
        } else {
          // Halve the level but keep the current iterate: slow drift along
          // the tied-environment locus survives the level change, while a
          // snap back to the incumbent would discard it.
          delta *= 0.5;
        }
      }
      f_mark = f_best;
    }

    Eigen::VectorXd grad(z.size());
    for (Eigen::Index k = 0; k < z.size(); ++k)
      grad(k) = w[active](k) > 0.0
                    ? 2.0 * inv_n[active] * w[active](k) * (z(k) - ybar[active](k))
                    : 0.0;
    const double gnorm2 = grad.squaredNorm();
    if (gnorm2 == 0.0) {
      // The active environment is exactly fit; the max cannot go lower.
      stable = true;
      break;
    }
    const double step = (f_now - f_best + delta) / gnorm2;
    z = project(z - step * grad);
    z_avg += z;
    ++avg_count;
  }

  result.map.knots = std::move(knots);
  result.map.values.assign(z_best.data(), z_best.data() + z_best.size());
  result.map.interp = MonotoneMap::Interp::linear;
  result.map.validate();
  result.objective = f_best;
  result.converged = stable;
  result.iterations = iter;
  return result;
}

RobustFitResult calibrate_robust(const std::vector<PredictionSet>& envs,
                                 const RobustOptions& options) {
  std::vector<FitSample> samples;
  samples.reserve(envs.size());
  for (const auto& e : envs) {
    e.validate();
    samples.push_back(FitSample{e.confidences, e.labels});
  }
  return calibrate_robust(samples, options);
}

}  // namespace domcal
