#include "stimfeat/synthetic.hpp"

#include <cmath>
#include <random>
#include <string>

#include "stimfeat/error.hpp"

namespace stimfeat {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

bool positive(double v) { return std::isfinite(v) && v > 0.0; }
bool probability(double p) { return std::isfinite(p) && p > 0.0 && p <= 1.0; }

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

double gamma_draw(std::mt19937_64& rng, double shape, double rate) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

Eigen::VectorXi markov_path(int T, double p_on, double p_off, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXi z(T);
  int state = unif(rng) < p_on / (p_on + p_off) ? 1 : 0;
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      const double flip = state == 1 ? p_off : p_on;
      if (unif(rng) < flip) state = 1 - state;
    }
    z(t) = state;
  }
  return z;
}

Eigen::VectorXi semi_markov_path(int T, const GeneratorConfig& cfg, std::mt19937_64& rng) {
  std::vector<std::discrete_distribution<int>> dwell;
  std::vector<double> mean_dwell;
  for (double mu : {cfg.dwell_mu_off, cfg.dwell_mu_on}) {
    std::vector<double> w(static_cast<std::size_t>(cfg.D));
    double m = 0.0;
    double total = 0.0;
    for (int d = 1; d <= cfg.D; ++d) {
      const double z = (std::log(d) - mu) / cfg.dwell_sigma;
      w[static_cast<std::size_t>(d - 1)] = std::exp(-0.5 * z * z) / d;
      m += d * w[static_cast<std::size_t>(d - 1)];
      total += w[static_cast<std::size_t>(d - 1)];
    }
    dwell.emplace_back(w.begin(), w.end());
    mean_dwell.push_back(m / total);
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int state = unif(rng) < mean_dwell[1] / (mean_dwell[0] + mean_dwell[1]) ? 1 : 0;
  Eigen::VectorXi z(T);
  int t = 0;
  while (t < T) {
    const int d = dwell[static_cast<std::size_t>(state)](rng) + 1;
    for (int i = 0; i < d && t < T; ++i) z(t++) = state;
    state = 1 - state;
  }
  return z;
}

}  // namespace

void GeneratorConfig::validate() const {
  require(U >= 1 && T >= 1, "U and T must be at least 1");
  require(K >= 0 && R >= 0, "K and R must be non-negative");
  require(presentations >= 1, "presentations must be at least 1");
  require(positive(dt) && positive(baseline_hz), "dt and baseline_hz must be positive");
  require(std::isfinite(baseline_shape), "baseline_shape must be finite");
  require(positive(gain_shape) && positive(gain_rate), "gain prior must be positive");
  require(probability(p_on) && probability(p_off), "p_on and p_off must lie in (0, 1]");
  require(!semi_markov || D >= 1, "D must be at least 1");
  require(!semi_markov || (std::isfinite(dwell_mu_off) && std::isfinite(dwell_mu_on) && positive(dwell_sigma)),
          "dwell parameters must be finite with positive sigma");
  require(probability(covariate_p_on) && probability(covariate_p_off), "covariate switching probabilities must lie in (0, 1]");
  require(std::isfinite(covariate_amplitude) && covariate_amplitude >= 0.0, "covariate_amplitude must be non-negative");
  require(positive(covariate_gain_shape) && positive(covariate_gain_rate), "covariate gain prior must be positive");
  require(overdispersion > 0.0, "overdispersion must be positive or infinite");
}

GeneratorConfig generator_config_from_json(const nlohmann::json& root) {
  const nlohmann::json& j = root.contains("generate") ? root.at("generate") : root;
  GeneratorConfig cfg;
  try {
    read(j, "U", cfg.U);
    read(j, "T", cfg.T);
    read(j, "K", cfg.K);
    read(j, "R", cfg.R);
    read(j, "presentations", cfg.presentations);
    read(j, "dt", cfg.dt);
    read(j, "baseline_hz", cfg.baseline_hz);
    read(j, "baseline_shape", cfg.baseline_shape);
    read(j, "gain_shape", cfg.gain_shape);
    read(j, "gain_rate", cfg.gain_rate);
    read(j, "p_on", cfg.p_on);
    read(j, "p_off", cfg.p_off);
    read(j, "semi_markov", cfg.semi_markov);
    read(j, "D", cfg.D);
    read(j, "dwell_mu_off", cfg.dwell_mu_off);
    read(j, "dwell_mu_on", cfg.dwell_mu_on);
    read(j, "dwell_sigma", cfg.dwell_sigma);
    read(j, "covariate_p_on", cfg.covariate_p_on);
    read(j, "covariate_p_off", cfg.covariate_p_off);
    read(j, "covariate_amplitude", cfg.covariate_amplitude);
    read(j, "covariate_gain_shape", cfg.covariate_gain_shape);
    read(j, "covariate_gain_rate", cfg.covariate_gain_rate);
    if (j.contains("overdispersion")) {
      const auto& s = j.at("overdispersion");
      if (s.is_null() || (s.is_string() && (s == "inf" || s == "none"))) {
        cfg.overdispersion = std::numeric_limits<double>::infinity();
      } else {
        cfg.overdispersion = s.get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed generator config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const GeneratorConfig& cfg) {
  nlohmann::json j = {
      {"U", cfg.U},
      {"T", cfg.T},
      {"K", cfg.K},
      {"R", cfg.R},
      {"presentations", cfg.presentations},
      {"dt", cfg.dt},
      {"baseline_hz", cfg.baseline_hz},
      {"baseline_shape", cfg.baseline_shape},
      {"gain_shape", cfg.gain_shape},
      {"gain_rate", cfg.gain_rate},
      {"p_on", cfg.p_on},
      {"p_off", cfg.p_off},
      {"semi_markov", cfg.semi_markov},
      {"D", cfg.D},
      {"dwell_mu_off", cfg.dwell_mu_off},
      {"dwell_mu_on", cfg.dwell_mu_on},
      {"dwell_sigma", cfg.dwell_sigma},
      {"covariate_p_on", cfg.covariate_p_on},
      {"covariate_p_off", cfg.covariate_p_off},
      {"covariate_amplitude", cfg.covariate_amplitude},
      {"covariate_gain_shape", cfg.covariate_gain_shape},
      {"covariate_gain_rate", cfg.covariate_gain_rate},
  };
  if (std::isinf(cfg.overdispersion)) {
    j["overdispersion"] = "inf";
  } else {
    j["overdispersion"] = cfg.overdispersion;
  }
  return j;
}

SyntheticData generate(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  GroundTruth g;
  const int T = cfg.T;
  const int U = cfg.U;

  g.z.resize(T, cfg.K);
  for (int k = 0; k < cfg.K; ++k) {
    Eigen::Matrix2d A;
    A << 1.0 - cfg.p_on, cfg.p_on, cfg.p_off, 1.0 - cfg.p_off;
    g.transition.push_back(A);
    g.initial.emplace_back(cfg.p_off / (cfg.p_on + cfg.p_off), cfg.p_on / (cfg.p_on + cfg.p_off));
    g.z.col(k) = cfg.semi_markov ? semi_markov_path(T, cfg, rng) : markov_path(T, cfg.p_on, cfg.p_off, rng);
  }

  g.covariates.resize(T, cfg.R);
  for (int r = 0; r < cfg.R; ++r) {
    g.covariates.col(r) =
        cfg.covariate_amplitude * markov_path(T, cfg.covariate_p_on, cfg.covariate_p_off, rng).cast<double>();
  }

  const double per_bin = cfg.baseline_hz * cfg.dt;
  g.baseline.resize(U);
  for (int u = 0; u < U; ++u) {
    g.baseline(u) = cfg.baseline_shape > 0.0 ? gamma_draw(rng, cfg.baseline_shape, cfg.baseline_shape / per_bin)
                                             : per_bin;
  }
  g.gains.resize(U, cfg.K);
  for (int k = 0; k < cfg.K; ++k) {
    for (int u = 0; u < U; ++u) g.gains(u, k) = gamma_draw(rng, cfg.gain_shape, cfg.gain_rate);
  }
  g.covariate_gains.resize(U, cfg.R);
  for (int r = 0; r < cfg.R; ++r) {
    for (int u = 0; u < U; ++u) {
      g.covariate_gains(u, r) = gamma_draw(rng, cfg.covariate_gain_shape, cfg.covariate_gain_rate);
    }
  }

  Eigen::MatrixXd log_rate = Eigen::MatrixXd::Zero(T, U);
  log_rate.rowwise() += g.baseline.array().log().matrix().transpose();
  if (cfg.K > 0) log_rate += g.z.cast<double>() * g.gains.array().log().matrix().transpose();
  if (cfg.R > 0) log_rate += g.covariates * g.covariate_gains.array().log().matrix().transpose();
  g.rate = log_rate.array().exp().matrix();

  SyntheticData out;
  const std::size_t total = static_cast<std::size_t>(T) * U * cfg.presentations;
  out.records.reserve(total);
  g.theta.resize(static_cast<Eigen::Index>(total));
  const bool noisy = std::isfinite(cfg.overdispersion);
  Eigen::Index m = 0;
  for (int t = 0; t < T; ++t) {
    for (int u = 0; u < U; ++u) {
      for (int p = 0; p < cfg.presentations; ++p) {
        const double theta = noisy ? gamma_draw(rng, cfg.overdispersion, cfg.overdispersion) : 1.0;
        const double mean = g.rate(t, u) * theta;
        const std::int64_t n = mean > 0.0 ? std::poisson_distribution<std::int64_t>(mean)(rng) : 0;
        g.theta(m++) = theta;
        out.records.push_back({t, u, n});
      }
    }
  }
  out.obs = build_observation_set(out.records, g.covariates, Dims{T, U});
  out.truth = std::move(g);
  return out;
}

}  // namespace stimfeat
