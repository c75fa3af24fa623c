#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <domcal/env_data.hpp>
#include <domcal/errors.hpp>

#include "support/oracles.hpp"

using namespace domcal;

namespace {

EnvironmentBundle tiny_bundle() {
  EnvironmentBundle bundle;
  Environment a;
  a.id = "a";
  a.features = Eigen::MatrixXd{{0.25, -1.5}, {2.0, 0.125}};
  a.labels = Eigen::VectorXd{{1.0, 0.0}};
  Environment b;
  b.id = "b";
  b.features = Eigen::MatrixXd{{-0.75, 3.0}, {0.0, 1.0 / 3.0}};
  b.labels = Eigen::VectorXd{{0.0, 1.0}};
  bundle.environments = {a, b};
  return bundle;
}

bool bundles_identical(const EnvironmentBundle& x, const EnvironmentBundle& y) {
  if (x.environments.size() != y.environments.size()) return false;
  for (std::size_t e = 0; e < x.environments.size(); ++e) {
    const auto& p = x.environments[e];
    const auto& q = y.environments[e];
    if (p.id != q.id) return false;
    if (p.features.rows() != q.features.rows() ||
        p.features.cols() != q.features.cols())
      return false;
    if (p.features != q.features || p.labels != q.labels) return false;
  }
  return true;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("bundle validation rejects broken invariants") {
  EnvironmentBundle bundle = tiny_bundle();
  CHECK_NOTHROW(bundle.validate());

  SUBCASE("duplicate environment ids") {
    bundle.environments[1].id = "a";
    CHECK_THROWS_AS(bundle.validate(), input_error);
  }
  SUBCASE("mismatched feature widths") {
    bundle.environments[1].features = Eigen::MatrixXd::Zero(2, 3);
    CHECK_THROWS_AS(bundle.validate(), input_error);
  }
  SUBCASE("empty environment") {
    bundle.environments[0].features = Eigen::MatrixXd(0, 2);
    bundle.environments[0].labels = Eigen::VectorXd(0);
    CHECK_THROWS_AS(bundle.validate(), input_error);
  }
  SUBCASE("label/feature row mismatch") {
    bundle.environments[0].labels = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(bundle.validate(), input_error);
  }
}

TEST_CASE("csv grouping splits rows by environment column") {
  const auto path = temp_file("bundle_groups.csv");
  {
    std::ofstream out(path);
    out << "env,y,x0,x1\n";
    out << "a,1,0.25,-1.5\n";
    out << "b,0,-0.75,3\n";
    out << "a,0,2,0.125\n";
    out << "b,1,0,0.5\n";
  }
  const EnvironmentBundle bundle = load_bundle(path.string(), BundleFormat::csv);
  REQUIRE(bundle.environments.size() == 2);
  CHECK(bundle.environments[0].id == "a");
  CHECK(bundle.environments[1].id == "b");
  CHECK(bundle.environments[0].features.rows() == 2);
  CHECK(bundle.environments[1].features.rows() == 2);
  CHECK(bundle.environments[0].features(1, 0) == 2.0);
  CHECK(bundle.environments[1].labels(1) == 1.0);
}

TEST_CASE("csv row with a missing feature column reports its line") {
  const auto path = temp_file("bundle_broken.csv");
  {
    std::ofstream out(path);
    out << "env,y,x0,x1\n";
    out << "a,1,0.25,-1.5\n";
    out << "a,0,2\n";  // one feature short
  }
  CHECK_THROWS_WITH_AS(load_bundle(path.string(), BundleFormat::csv),
                       doctest::Contains(":3:"), input_error);
}

TEST_CASE("csv and json round trips preserve bundles bit-exactly") {
  const EnvironmentBundle bundle = tiny_bundle();
  for (auto format : {BundleFormat::csv, BundleFormat::json}) {
    const auto path =
        temp_file(format == BundleFormat::csv ? "rt.csv" : "rt.json");
    save_bundle(bundle, path.string(), format);
    const EnvironmentBundle back = load_bundle(path.string(), format);
    CHECK(bundles_identical(bundle, back));
  }
}

TEST_CASE("json round trip of a generated bundle is identical") {
  const GaussianEnvSpecA spec = testsupport::random_spec_a(3, 2, 2, 3);
  const EnvironmentBundle bundle = generate_setting_a(spec, 50, 7);
  const auto path = temp_file("gen_rt.json");
  save_bundle(bundle, path.string(), BundleFormat::json);
  const EnvironmentBundle back = load_bundle(path.string(), BundleFormat::json);
  CHECK(bundles_identical(bundle, back));
}

TEST_CASE("anti-causal gaussian generator") {
  GaussianEnvSpecA spec = testsupport::random_spec_a(11, 3, 2, 4);

  SUBCASE("label prior one makes every label one") {
    spec.eta = 1.0;
    const EnvironmentBundle bundle = generate_setting_a(spec, 200, 1);
    for (const auto& env : bundle.environments)
      CHECK(env.labels.minCoeff() == 1.0);
  }

  SUBCASE("identical seeds reproduce the bundle, distinct seeds do not") {
    const EnvironmentBundle b1 = generate_setting_a(spec, 100, 5);
    const EnvironmentBundle b2 = generate_setting_a(spec, 100, 5);
    const EnvironmentBundle b3 = generate_setting_a(spec, 100, 6);
    CHECK(bundles_identical(b1, b2));
    CHECK_FALSE(bundles_identical(b1, b3));
  }

  SUBCASE("shared-block mean among positive labels matches the moments") {
    // Labels enter the shared block as (y - 1/2) * mu_ns, so conditioned on
    // y = 1 each coordinate has mean mu_ns/2 and unit-ish variance from the
    // random SPD covariance.
    spec.eta = 0.5;
    const std::size_t n = 100000;
    const EnvironmentBundle bundle = generate_setting_a(spec, n, 2);
    const auto& env = bundle.environments[0];
    std::vector<Eigen::Index> pos;
    for (Eigen::Index i = 0; i < env.labels.size(); ++i)
      if (env.labels(i) == 1.0) pos.push_back(i);
    REQUIRE(pos.size() > n / 3);
    for (Eigen::Index d = 0; d < spec.d_ns(); ++d) {
      double mean = 0.0;
      for (const auto i : pos) mean += env.features(i, d);
      mean /= static_cast<double>(pos.size());
      const double sd = std::sqrt(spec.sigma_ns(d, d) /
                                  static_cast<double>(pos.size()));
      CHECK(std::abs(mean - 0.5 * spec.mu_ns(d)) < 3.0 * sd);
    }
  }

  SUBCASE("non-spd shared covariance is rejected by name") {
    spec.sigma_ns(0, 0) = -1.0;
    CHECK_THROWS_WITH_AS(generate_setting_a(spec, 10, 0),
                         doctest::Contains("sigma_ns"), input_error);
  }
}

TEST_CASE("regression generator") {
  GaussianEnvSpecB spec = testsupport::random_spec_b(13, 2, 2, 3);

  SUBCASE("noiseless limit reproduces the causal linear rule") {
    spec.sigma_y2 = 0.0;
    for (auto& s : spec.sigma_c) s = 1e-12 * Eigen::MatrixXd::Identity(2, 2);
    const EnvironmentBundle bundle = generate_setting_b(spec, 500, 3);
    const auto& env = bundle.environments[0];
    for (Eigen::Index i = 0; i < env.labels.size(); ++i) {
      const double yhat = spec.w_c_star.dot(env.features.row(i).head(2));
      CHECK(std::abs(env.labels(i) - yhat) < 1e-6);
    }
  }

  SUBCASE("label mean and spurious covariance match the analytic moments") {
    const std::size_t n = 100000;
    const EnvironmentBundle bundle = generate_setting_b(spec, n, 9);
    for (std::size_t e = 0; e < spec.num_envs(); ++e) {
      const auto& env = bundle.environments[e];
      const double var_y =
          spec.w_c_star.dot(spec.sigma_c[e] * spec.w_c_star) + spec.sigma_y2;
      const double mean_y = spec.w_c_star.dot(spec.mu_c[e]);
      const double y_mean_emp = env.labels.mean();
      CHECK(std::abs(y_mean_emp - mean_y) <
            3.0 * std::sqrt(var_y / static_cast<double>(n)));

      // Cov(x_sp, y) = Var(y) * mu_sp, coordinate by coordinate.
      for (Eigen::Index d = 0; d < spec.d_sp(); ++d) {
        const Eigen::Index col = spec.d_c() + d;
        double cov = 0.0;
        const double x_mean = env.features.col(col).mean();
        for (Eigen::Index i = 0; i < env.labels.size(); ++i)
          cov += (env.features(i, col) - x_mean) * (env.labels(i) - y_mean_emp);
        cov /= static_cast<double>(n);
        const double expected = var_y * spec.mu_sp[e](d);
        const double var_x = spec.mu_sp[e](d) * spec.mu_sp[e](d) * var_y +
                             spec.sigma_sp[e](d, d);
        const double se = std::sqrt((var_x * var_y + expected * expected) /
                                    static_cast<double>(n));
        CHECK(std::abs(cov - expected) < 3.0 * se);
      }
    }
  }
}

TEST_CASE("two-bit generator") {
  SUBCASE("zero flip rates copy the sign label into both features") {
    const TwoBitSample sample = generate_two_bit({.alpha = 0.0, .beta = 0.0},
                                                 500, 4);
    for (Eigen::Index i = 0; i < sample.labels.size(); ++i) {
      const double sign = sample.labels(i) == 1.0 ? 1.0 : -1.0;
      CHECK(sample.features(i, 0) == sign);
      CHECK(sample.features(i, 1) == sign);
    }
  }

  SUBCASE("half flip rate decorrelates the feature from the label") {
    const std::size_t n = 100000;
    const TwoBitSample sample = generate_two_bit({.alpha = 0.5, .beta = 0.1},
                                                 n, 8);
    double corr = 0.0;
    for (Eigen::Index i = 0; i < sample.labels.size(); ++i) {
      const double sign = sample.labels(i) == 1.0 ? 1.0 : -1.0;
      corr += sample.features(i, 0) * sign;
    }
    corr /= static_cast<double>(n);
    CHECK(std::abs(corr) < 3.0 / std::sqrt(static_cast<double>(n)));
  }

  SUBCASE("flip rate 0.1 leaves nine in ten features agreeing") {
    const std::size_t n = 100000;
    const TwoBitSample sample = generate_two_bit({.alpha = 0.1, .beta = 0.3},
                                                 n, 15);
    double agree = 0.0;
    for (Eigen::Index i = 0; i < sample.labels.size(); ++i) {
      const double sign = sample.labels(i) == 1.0 ? 1.0 : -1.0;
      agree += sample.features(i, 0) == sign ? 1.0 : 0.0;
    }
    agree /= static_cast<double>(n);
    CHECK(std::abs(agree - 0.9) <
          3.0 * std::sqrt(0.9 * 0.1 / static_cast<double>(n)));
  }

  SUBCASE("flip probabilities outside [0,1] are rejected") {
    CHECK_THROWS_AS(generate_two_bit({.alpha = -0.1, .beta = 0.0}, 10, 0),
                    input_error);
    CHECK_THROWS_AS(generate_two_bit({.alpha = 0.0, .beta = 1.5}, 10, 0),
                    input_error);
  }
}

TEST_CASE("two-bit posterior") {
  SUBCASE("uninformative features give one half everywhere") {
    const TwoBitEnvSpec spec{.alpha = 0.5, .beta = 0.5};
    for (int x1 : {-1, 1})
      for (int x2 : {-1, 1})
        CHECK(two_bit_posterior(spec, x1, x2) == doctest::Approx(0.5));
  }

  SUBCASE("pinned hand-computed value") {
    const TwoBitEnvSpec spec{.alpha = 0.1, .beta = 0.2};
    CHECK(two_bit_posterior(spec, 1, 1) ==
          doctest::Approx(0.72 / 0.74).epsilon(1e-12));
  }

  SUBCASE("label symmetry: posteriors of mirrored inputs sum to one") {
    const TwoBitEnvSpec spec{.alpha = 0.15, .beta = 0.35};
    for (int x1 : {-1, 1})
      for (int x2 : {-1, 1})
        CHECK(two_bit_posterior(spec, x1, x2) +
                  two_bit_posterior(spec, -x1, -x2) ==
              doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("matches the brute-force joint table on a parameter grid") {
    for (int ai = 0; ai <= 10; ++ai) {
      for (int bi = 0; bi <= 10; ++bi) {
        const TwoBitEnvSpec spec{.alpha = ai / 10.0, .beta = bi / 10.0};
        // Both-features-flipped-with-certainty corner cases divide by zero
        // probability only when the observation itself is impossible; skip
        // the impossible observations.
        for (int x1 : {-1, 1}) {
          for (int x2 : {-1, 1}) {
            const double p1 = 0.5 * (x1 == 1 ? 1 - spec.alpha : spec.alpha) *
                                  (x2 == 1 ? 1 - spec.beta : spec.beta) +
                              0.5 * (x1 == 1 ? spec.alpha : 1 - spec.alpha) *
                                  (x2 == 1 ? spec.beta : 1 - spec.beta);
            if (p1 == 0.0) continue;
            CHECK(two_bit_posterior(spec, x1, x2) ==
                  doctest::Approx(testsupport::two_bit_posterior_table(
                                      spec, x1, x2))
                      .epsilon(1e-12));
          }
        }
      }
    }
  }
}

TEST_CASE("two-bit bundle spans its environments deterministically") {
  const std::vector<TwoBitEnvSpec> envs = {{.alpha = 0.1, .beta = 0.05},
                                           {.alpha = 0.1, .beta = 0.25}};
  const EnvironmentBundle b1 = generate_two_bit_bundle(envs, 300, 21);
  const EnvironmentBundle b2 = generate_two_bit_bundle(envs, 300, 21);
  REQUIRE(b1.environments.size() == 2);
  CHECK(b1.environments[0].id == "e0");
  CHECK(b1.environments[1].id == "e1");
  CHECK(bundles_identical(b1, b2));
  CHECK(b1.feature_dim() == 2);
}
