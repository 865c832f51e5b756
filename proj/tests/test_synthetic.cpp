#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include <boost/math/distributions/chi_squared.hpp>

#include "stimfeat/error.hpp"
#include "stimfeat/synthetic.hpp"

using namespace stimfeat;

namespace {

// Lengths of completed runs of `state`; runs touching either end are dropped.
std::vector<int> run_lengths(const Eigen::VectorXi& z, int state) {
  std::vector<int> out;
  int start = 0;
  for (int t = 1; t <= z.size(); ++t) {
    if (t == z.size() || z(t) != z(t - 1)) {
      if (z(start) == state && start > 0 && t < z.size()) out.push_back(t - start);
      start = t;
    }
  }
  return out;
}

// Upper-tail p-value of Pearson's statistic over cells 1..last-1 plus a tail cell.
double chi_square_p(const std::vector<int>& lengths, const std::vector<double>& pmf) {
  const int last = static_cast<int>(pmf.size());
  std::vector<double> observed(static_cast<std::size_t>(last), 0.0);
  for (int d : lengths) observed[static_cast<std::size_t>(std::min(d, last) - 1)] += 1.0;
  double stat = 0.0;
  int cells = 0;
  double tail_p = 1.0;
  for (int i = 0; i < last; ++i) {
    const double p = i + 1 < last ? pmf[static_cast<std::size_t>(i)] : tail_p;
    tail_p -= pmf[static_cast<std::size_t>(i)];
    const double expected = p * static_cast<double>(lengths.size());
    if (expected < 1e-9) continue;
    stat += (observed[static_cast<std::size_t>(i)] - expected) * (observed[static_cast<std::size_t>(i)] - expected) /
            expected;
    ++cells;
  }
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(cells - 1), stat));
}

}  // namespace

TEST_CASE("baseline-only data has the configured mean count per bin") {
  GeneratorConfig g;
  g.U = 100;
  g.T = 5000;
  g.K = 0;
  g.R = 0;
  g.baseline_shape = 0.0;
  g.overdispersion = std::numeric_limits<double>::infinity();
  const SyntheticData data = generate(g, 12);
  const double n = static_cast<double>(data.obs.size());
  const double expected = g.baseline_hz * g.dt;
  const double mean = data.obs.count().mean();
  CHECK(std::abs(mean - expected) < 3.0 * std::sqrt(expected / n));
  CHECK((data.truth.theta.array() == 1.0).all());
  CHECK(data.truth.baseline.isApproxToConstant(expected));
}

TEST_CASE("generation is a pure function of config and seed") {
  GeneratorConfig g;
  g.U = 8;
  g.T = 300;
  g.K = 2;
  g.R = 2;
  g.presentations = 2;
  const SyntheticData a = generate(g, 5);
  const SyntheticData b = generate(g, 5);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].t == b.records[i].t);
    CHECK(a.records[i].u == b.records[i].u);
    CHECK(a.records[i].n == b.records[i].n);
  }
  CHECK(a.truth.z == b.truth.z);
  CHECK(a.truth.gains == b.truth.gains);
  CHECK(a.truth.covariates == b.truth.covariates);
  CHECK(a.truth.theta == b.truth.theta);
  CHECK_FALSE(generate(g, 6).truth.z == a.truth.z);
}

TEST_CASE("full-size defaults give the expected shapes") {
  const SyntheticData data = generate(GeneratorConfig{}, 3);
  CHECK(data.truth.z.rows() == 10000);
  CHECK(data.truth.z.cols() == 3);
  CHECK(data.truth.gains.rows() == 100);
  CHECK(data.truth.covariates.cols() == 3);
  CHECK(data.truth.covariate_gains.rows() == 100);
  CHECK(data.truth.theta.size() == 1000000);
  CHECK((data.truth.gains.array() > 0.0).all());
  CHECK(data.obs.R() == 3);
  CHECK((data.obs.presentations() == 1.0).all());
}

TEST_CASE("cell means match the true rate within Monte Carlo error") {
  GeneratorConfig g;
  g.U = 10;
  g.T = 100;
  g.K = 2;
  g.R = 1;
  g.presentations = 400;
  const SyntheticData data = generate(g, 9);
  const double s = g.overdispersion;
  double sum_z2 = 0.0;
  int cells = 0;
  for (int t = 0; t < g.T; ++t) {
    for (int u = 0; u < g.U; ++u) {
      const double rate = data.truth.rate(t, u);
      const double m = data.obs.cell_counts()(t, u) / data.obs.presentations()(t, u);
      const double se = std::sqrt((rate + rate * rate / s) / g.presentations);
      sum_z2 += (m - rate) * (m - rate) / (se * se);
      ++cells;
    }
  }
  CHECK(sum_z2 / cells == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("Markov feature dwells are geometric") {
  GeneratorConfig g;
  g.U = 1;
  g.T = 100000;
  g.K = 1;
  g.R = 0;
  const SyntheticData data = generate(g, 21);
  for (const auto& [state, leave] : std::map<int, double>{{0, g.p_on}, {1, g.p_off}}) {
    std::vector<double> pmf;
    for (int d = 1; d <= 40; ++d) pmf.push_back(leave * std::pow(1.0 - leave, d - 1));
    const std::vector<int> runs = run_lengths(data.truth.z.col(0), state);
    CHECK(runs.size() > 1000);
    CHECK(chi_square_p(runs, pmf) > 0.001);
  }
}

TEST_CASE("semi-Markov feature dwells follow the truncated log-normal") {
  GeneratorConfig g;
  g.U = 1;
  g.T = 100000;
  g.K = 1;
  g.R = 0;
  g.semi_markov = true;
  g.D = 40;
  const SyntheticData data = generate(g, 22);
  for (const auto& [state, mu] : std::map<int, double>{{0, g.dwell_mu_off}, {1, g.dwell_mu_on}}) {
    std::vector<double> pmf;
    double total = 0.0;
    for (int d = 1; d <= g.D; ++d) {
      const double z = (std::log(d) - mu) / g.dwell_sigma;
      pmf.push_back(std::exp(-0.5 * z * z) / d);
      total += pmf.back();
    }
    for (double& p : pmf) p /= total;
    const std::vector<int> runs = run_lengths(data.truth.z.col(0), state);
    CHECK(*std::max_element(runs.begin(), runs.end()) <= g.D);
    CHECK(chi_square_p(runs, pmf) > 0.001);
  }
}

TEST_CASE("generator config validation and JSON round trip") {
  GeneratorConfig g;
  g.p_on = 0.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = GeneratorConfig{};
  g.U = 0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = GeneratorConfig{};
  g.semi_markov = true;
  g.dwell_sigma = 0.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);

  g = GeneratorConfig{};
  g.K = 5;
  g.semi_markov = true;
  g.overdispersion = std::numeric_limits<double>::infinity();
  const GeneratorConfig back = generator_config_from_json(to_json(g));
  CHECK(back.K == 5);
  CHECK(back.semi_markov);
  CHECK(std::isinf(back.overdispersion));
}
