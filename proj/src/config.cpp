#include "stimfeat/config.hpp"

#include <string>

#include "stimfeat/error.hpp"

namespace stimfeat {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

void validate_hierarchy(const HierarchyPrior& h, const std::string& name) {
  require(positive(h.a_c) && positive(h.b_c) && positive(h.a_d) && positive(h.b_d),
          name + " hierarchy hyperparameters must be positive");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

HierarchyPrior hierarchy_from_json(const nlohmann::json& j, HierarchyPrior h) {
  read(j, "a_c", h.a_c);
  read(j, "b_c", h.b_c);
  read(j, "a_d", h.a_d);
  read(j, "b_d", h.b_d);
  return h;
}

nlohmann::json hierarchy_to_json(const HierarchyPrior& h) {
  return {{"a_c", h.a_c}, {"b_c", h.b_c}, {"a_d", h.a_d}, {"b_d", h.b_d}};
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void ModelConfig::validate() const {
  require(K >= 0, "K must be non-negative");
  require(!semi_markov || D >= 1, "D must be at least 1 for semi-Markov chains");
  require(std::isfinite(init_jitter) && init_jitter >= 0.0, "init_jitter must be non-negative");
  require(threads >= 1, "threads must be at least 1");
  validate_hierarchy(priors.baseline, "baseline");
  validate_hierarchy(priors.feature, "feature");
  require((priors.covariate_a.array() > 0.0).all() && (priors.covariate_b.array() > 0.0).all(),
          "covariate prior parameters must be positive");
  require(positive(priors.overdispersion_a) && positive(priors.overdispersion_b),
          "overdispersion prior parameters must be positive");
  require((priors.initial_state.array() > 0.0).all(), "initial-state pseudo-counts must be positive");
  require((priors.transition.array() > 0.0).all(), "transition pseudo-counts must be positive");
  require(positive(priors.duration.lambda) && positive(priors.duration.alpha) && positive(priors.duration.beta) &&
              std::isfinite(priors.duration.mu),
          "duration Normal-Gamma prior must have positive lambda, alpha, beta");
  require(positive(convergence.tolerance), "tolerance must be positive");
  require(convergence.max_sweeps >= 1, "max_sweeps must be at least 1");
  require(convergence.restarts >= 1, "restarts must be at least 1");
}

Eigen::Vector2d ModelConfig::initial_state_prior() const {
  if (pin_initial_state) return {1000.0, 1.0};
  return priors.initial_state;
}

ModelConfig model_config_from_json(const nlohmann::json& root) {
  const nlohmann::json& j = root.contains("model") ? root.at("model") : root;
  ModelConfig cfg;
  try {
    read(j, "K", cfg.K);
    read(j, "semi_markov", cfg.semi_markov);
    read(j, "D", cfg.D);
    read(j, "overdispersion", cfg.overdispersion);
    read(j, "autocorrelated_noise", cfg.autocorrelated_noise);
    read(j, "pin_initial_state", cfg.pin_initial_state);
    read(j, "exact_gamma_ratio", cfg.exact_gamma_ratio);
    read(j, "monitor_blocks", cfg.monitor_blocks);
    read(j, "init_jitter", cfg.init_jitter);
    read(j, "threads", cfg.threads);
    if (j.contains("shape_bound")) {
      const auto b = j.at("shape_bound").get<std::string>();
      require(b == "robbins" || b == "stirling", "shape_bound must be \"robbins\" or \"stirling\"");
      cfg.shape_bound = b == "robbins" ? ShapeBound::kRobbins : ShapeBound::kStirling;
    }
    if (j.contains("chain_init")) {
      const auto c = j.at("chain_init").get<std::string>();
      require(c == "spectral" || c == "uniform", "chain_init must be \"spectral\" or \"uniform\"");
      cfg.chain_init = c == "spectral" ? ChainInit::kSpectral : ChainInit::kUniform;
    }
    if (j.contains("priors")) {
      const auto& p = j.at("priors");
      if (p.contains("baseline")) cfg.priors.baseline = hierarchy_from_json(p.at("baseline"), cfg.priors.baseline);
      if (p.contains("feature")) cfg.priors.feature = hierarchy_from_json(p.at("feature"), cfg.priors.feature);
      if (p.contains("covariate")) {
        const auto& c = p.at("covariate");
        if (c.contains("a")) cfg.priors.covariate_a = vector_from_json(c.at("a"));
        if (c.contains("b")) cfg.priors.covariate_b = vector_from_json(c.at("b"));
      }
      if (p.contains("overdispersion")) {
        read(p.at("overdispersion"), "a", cfg.priors.overdispersion_a);
        read(p.at("overdispersion"), "b", cfg.priors.overdispersion_b);
      }
      if (p.contains("initial_state")) {
        const auto v = p.at("initial_state").get<std::vector<double>>();
        require(v.size() == 2, "initial_state prior needs 2 entries");
        cfg.priors.initial_state = {v[0], v[1]};
      }
      if (p.contains("transition")) {
        const auto rows = p.at("transition").get<std::vector<std::vector<double>>>();
        require(rows.size() == 2 && rows[0].size() == 2 && rows[1].size() == 2, "transition prior must be 2x2");
        cfg.priors.transition << rows[0][0], rows[0][1], rows[1][0], rows[1][1];
      }
      if (p.contains("duration")) {
        const auto& d = p.at("duration");
        read(d, "mu", cfg.priors.duration.mu);
        read(d, "lambda", cfg.priors.duration.lambda);
        read(d, "alpha", cfg.priors.duration.alpha);
        read(d, "beta", cfg.priors.duration.beta);
      }
    }
    if (j.contains("convergence")) {
      const auto& c = j.at("convergence");
      read(c, "tolerance", cfg.convergence.tolerance);
      read(c, "max_sweeps", cfg.convergence.max_sweeps);
      read(c, "restarts", cfg.convergence.restarts);
      read(c, "seed", cfg.convergence.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  nlohmann::json p = {
      {"baseline", hierarchy_to_json(cfg.priors.baseline)},
      {"feature", hierarchy_to_json(cfg.priors.feature)},
      {"covariate", {{"a", to_std(cfg.priors.covariate_a)}, {"b", to_std(cfg.priors.covariate_b)}}},
      {"overdispersion", {{"a", cfg.priors.overdispersion_a}, {"b", cfg.priors.overdispersion_b}}},
      {"initial_state", {cfg.priors.initial_state(0), cfg.priors.initial_state(1)}},
      {"transition",
       {{cfg.priors.transition(0, 0), cfg.priors.transition(0, 1)},
        {cfg.priors.transition(1, 0), cfg.priors.transition(1, 1)}}},
      {"duration",
       {{"mu", cfg.priors.duration.mu},
        {"lambda", cfg.priors.duration.lambda},
        {"alpha", cfg.priors.duration.alpha},
        {"beta", cfg.priors.duration.beta}}},
  };
  return {
      {"K", cfg.K},
      {"semi_markov", cfg.semi_markov},
      {"D", cfg.D},
      {"overdispersion", cfg.overdispersion},
      {"autocorrelated_noise", cfg.autocorrelated_noise},
      {"pin_initial_state", cfg.pin_initial_state},
      {"exact_gamma_ratio", cfg.exact_gamma_ratio},
      {"monitor_blocks", cfg.monitor_blocks},
      {"init_jitter", cfg.init_jitter},
      {"threads", cfg.threads},
      {"shape_bound", cfg.shape_bound == ShapeBound::kRobbins ? "robbins" : "stirling"},
      {"chain_init", cfg.chain_init == ChainInit::kSpectral ? "spectral" : "uniform"},
      {"priors", p},
      {"convergence",
       {{"tolerance", cfg.convergence.tolerance},
        {"max_sweeps", cfg.convergence.max_sweeps},
        {"restarts", cfg.convergence.restarts},
        {"seed", cfg.convergence.seed}}},
  };
}

}  // namespace stimfeat
