#include <doctest.h>

#include <cmath>
#include <random>

#include <boost/math/distributions/gamma.hpp>

#include "oracles/numeric.hpp"
#include "stimfeat/error.hpp"
#include "stimfeat/metrics.hpp"

using namespace stimfeat;

namespace {

VariationalState single_unit_state(int T, int K) {
  VariationalState s;
  s.baseline = GammaArray(1, 1, 50.0, 100.0);
  s.gain = GammaArray(1, K, 1.0, 1.0);
  s.gain_hyper.assign(static_cast<std::size_t>(K), HyperPosterior{});
  s.covariate_shape = Eigen::ArrayXXd(1, 0);
  s.covariate_eps = Eigen::MatrixXd(1, 0);
  for (int k = 0; k < K; ++k) {
    ChainPosterior c;
    c.xi = Eigen::VectorXd::Constant(T, 0.5);
    s.chains.push_back(c);
  }
  return s;
}

}  // namespace

TEST_CASE("normalized_mutual_info: identical and independent variables") {
  Eigen::VectorXi z(8);
  z << 0, 1, 0, 1, 1, 0, 1, 0;
  CHECK(normalized_mutual_info(z.cast<double>(), z) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(normalized_mutual_info(Eigen::VectorXd::Constant(8, 0.5), z)) < 1e-12);
  CHECK(normalized_mutual_info(Eigen::VectorXd::Constant(8, 0.3), Eigen::VectorXi::Zero(8)) == 0.0);
}

TEST_CASE("normalized_mutual_info: hand-computed 2x2 joint at T=8") {
  Eigen::VectorXi z(8);
  z << 1, 1, 1, 0, 0, 0, 0, 0;
  Eigen::VectorXd xi(8);
  xi << 1, 1, 0, 0, 0, 0, 1, 0;
  // Joint counts: (z=1, on)=2, (z=1, off)=1, (z=0, on)=1, (z=0, off)=4.
  const double p11 = 2.0 / 8, p10 = 1.0 / 8, p01 = 1.0 / 8, p00 = 4.0 / 8;
  const double pz = 3.0 / 8, pq = 3.0 / 8;
  const double mi = p11 * std::log(p11 / (pz * pq)) + p10 * std::log(p10 / (pz * (1 - pq))) +
                    p01 * std::log(p01 / ((1 - pz) * pq)) + p00 * std::log(p00 / ((1 - pz) * (1 - pq)));
  const double h = -(pz * std::log(pz) + (1 - pz) * std::log(1 - pz));
  CHECK(normalized_mutual_info(xi, z) == doctest::Approx(mi / h).epsilon(1e-13));
}

TEST_CASE("normalized_mutual_info: label swap invariance and length check") {
  Eigen::VectorXi z(6);
  z << 0, 1, 1, 0, 1, 0;
  Eigen::VectorXd xi(6);
  xi << 0.1, 0.8, 0.7, 0.3, 0.9, 0.2;
  CHECK(normalized_mutual_info(xi, z) == doctest::Approx(normalized_mutual_info((1.0 - xi.array()).matrix(), z)));
  CHECK_THROWS_AS(normalized_mutual_info(Eigen::VectorXd::Zero(5), z), InputError);
}

TEST_CASE("match_features: dominant diagonal and permutations") {
  Eigen::MatrixXd m(2, 3);
  m << 0.9, 0.1, 0.2, 0.05, 0.8, 0.3;
  CHECK(match_features(m) == std::vector<int>{0, 1});

  Eigen::MatrixXd base = Eigen::MatrixXd::Identity(4, 4) * 0.9 + Eigen::MatrixXd::Constant(4, 4, 0.05);
  const std::vector<int> perm{2, 0, 3, 1};
  Eigen::MatrixXd shuffled(4, 4);
  for (int j = 0; j < 4; ++j) shuffled.col(perm[j]) = base.col(j);
  const auto a = match_features(shuffled);
  for (int i = 0; i < 4; ++i) CHECK(a[i] == perm[i]);
}

TEST_CASE("match_features: optimal total equals brute force") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::MatrixXd m(3, 5);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 5; ++j) m(i, j) = u(rng);
    const auto a = match_features(m);
    double total = 0.0;
    std::vector<bool> used(5, false);
    for (int i = 0; i < 3; ++i) {
      REQUIRE(a[i] >= 0);
      CHECK_FALSE(used[a[i]]);
      used[a[i]] = true;
      total += m(i, a[i]);
    }
    CHECK(total == doctest::Approx(oracle::brute_force_assignment(m)).epsilon(1e-12));
  }
}

TEST_CASE("match_features: more true features than inferred leaves rows unmatched") {
  Eigen::MatrixXd m(3, 2);
  m << 0.9, 0.0, 0.1, 0.2, 0.0, 0.7;
  const auto a = match_features(m);
  CHECK(a == std::vector<int>{0, -1, 1});
}

TEST_CASE("nmi_report: perfect recovery with a spare chain") {
  Eigen::MatrixXi z(6, 2);
  z << 1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 0, 1;
  Eigen::MatrixXd xi(6, 3);
  xi.col(0) = z.col(1).cast<double>();
  xi.col(1) = Eigen::VectorXd::Constant(6, 0.5);
  xi.col(2) = z.col(0).cast<double>();
  const NmiReport r = nmi_report(xi, z);
  CHECK(r.assignment == std::vector<int>{2, 0});
  CHECK(r.matched == std::vector<bool>{true, false, true});
  CHECK(r.total == doctest::Approx(2.0));
}

TEST_CASE("is_unused_feature: thresholds") {
  HyperPosterior near_one{{50.0, 1.0}, {100.0, 100.0}};
  CHECK(is_unused_feature(near_one, Eigen::VectorXd::Constant(10, 0.5)));
  CHECK_FALSE(is_unused_feature(near_one, Eigen::VectorXd::Constant(10, 0.01)));
  HyperPosterior far{{50.0, 1.0}, {100.0, 150.0}};
  CHECK_FALSE(is_unused_feature(far, Eigen::VectorXd::Constant(10, 0.5)));
  CHECK(population_gain_mean(far) == doctest::Approx(1.5));
}

TEST_CASE("predicted_rate: point-mass posteriors give the plug-in rate") {
  VariationalState s = single_unit_state(3, 1);
  s.baseline = GammaArray(1, 1, 2e12, 1e12);
  s.gain = GammaArray(1, 1, 3e12, 1e12);
  s.chains[0].xi = Eigen::VectorXd::Ones(3);
  const RateSummary r = predicted_rate(s, Eigen::MatrixXd(3, 0), 1, 0, 200, 3);
  CHECK(r.mean == doctest::Approx(6.0).epsilon(1e-5));
  CHECK(r.upper - r.lower < 1e-4);
  CHECK_FALSE(r.few_draws);
  CHECK(predicted_rate(s, Eigen::MatrixXd(3, 0), 1, 0, 10, 3).few_draws);
}

TEST_CASE("predicted_rate: baseline-only interval matches gamma quantiles") {
  VariationalState s = single_unit_state(2, 0);
  const RateSummary r = predicted_rate(s, Eigen::MatrixXd(2, 0), 0, 0, 200000, 5);
  const boost::math::gamma_distribution<double> q(50.0, 1.0 / 100.0);
  CHECK(r.mean == doctest::Approx(0.5).epsilon(0.005));
  CHECK(r.lower == doctest::Approx(boost::math::quantile(q, 0.025)).epsilon(0.01));
  CHECK(r.upper == doctest::Approx(boost::math::quantile(q, 0.975)).epsilon(0.01));
}

TEST_CASE("predicted_rate: excluding an unused chain leaves the interval unchanged") {
  VariationalState s = single_unit_state(4, 2);
  s.gain = GammaArray(1, 2, 1.0, 1.0);
  s.gain.shape(0, 0) = 20.0;
  s.gain.rate(0, 0) = 10.0;
  s.gain.shape(0, 1) = 4000.0;  // unused: gain tightly around 1
  s.gain.rate(0, 1) = 4000.0;
  s.chains[0].xi = Eigen::VectorXd::Constant(4, 0.7);
  const RateSummary all = predicted_rate(s, Eigen::MatrixXd(4, 0), 2, 0, 20000, 9);
  const RateSummary less = predicted_rate(s, Eigen::MatrixXd(4, 0), 2, 0, 20000, 9, {1});
  CHECK(less.mean == doctest::Approx(all.mean).epsilon(0.01));
  CHECK(less.lower == doctest::Approx(all.lower).epsilon(0.02));
  CHECK(less.upper == doctest::Approx(all.upper).epsilon(0.02));
}

TEST_CASE("predicted_rate: rejects a non-positive draw count") {
  const VariationalState s = single_unit_state(2, 0);
  CHECK_THROWS_AS(predicted_rate(s, Eigen::MatrixXd(2, 0), 0, 0, 0, 1), ConfigError);
}
