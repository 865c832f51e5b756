#include "stimfeat/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "stimfeat/error.hpp"
#include "stimfeat/nonconjugate.hpp"
#include "stimfeat/special.hpp"

namespace stimfeat {

GammaArray VariationalState::covariate_gain() const {
  GammaArray g;
  g.shape = covariate_shape;
  g.rate = covariate_shape * (-covariate_eps.array()).exp();
  return g;
}

Eigen::MatrixXd VariationalState::xi() const {
  const Eigen::Index T = chains.empty() ? 0 : chains.front().length();
  Eigen::MatrixXd out(T, K());
  for (int k = 0; k < K(); ++k) out.col(k) = chains[static_cast<std::size_t>(k)].xi;
  return out;
}

namespace {

// T x K marginals; xi() alone cannot size the K = 0 case.
Eigen::MatrixXd chain_marginals(const VariationalState& s, int T) {
  return s.K() > 0 ? s.xi() : Eigen::MatrixXd(T, 0);
}

}  // namespace

Eigen::ArrayXXd feature_product(const Eigen::MatrixXd& xi, const Eigen::ArrayXXd& gain_mean, int exclude) {
  Eigen::ArrayXXd F = Eigen::ArrayXXd::Ones(xi.rows(), gain_mean.rows());
  for (Eigen::Index k = 0; k < xi.cols(); ++k) {
    if (k == exclude) continue;
    F *= 1.0 + (xi.col(k) * (gain_mean.col(k) - 1.0).matrix().transpose()).array();
  }
  return F;
}

Eigen::ArrayXXd covariate_product(const Eigen::MatrixXd& X, const Eigen::ArrayXXd& shape, const Eigen::MatrixXd& eps,
                                  bool exact, int exclude) {
  const Eigen::Index T = X.rows();
  const Eigen::Index U = shape.rows();
  Eigen::MatrixXd log_g = Eigen::MatrixXd::Zero(T, U);
  for (Eigen::Index r = 0; r < X.cols(); ++r) {
    if (r == exclude) continue;
    log_g += X.col(r) * eps.col(r).transpose();
    if (exact) {
      for (Eigen::Index u = 0; u < U; ++u) {
        const double a = shape(u, r);
        const double base = log_gamma(a);
        const double la = std::log(a);
        for (Eigen::Index t = 0; t < T; ++t) {
          const double x = X(t, r);
          if (x != 0.0) log_g(t, u) += log_gamma(a + x) - base - x * la;
        }
      }
    }
  }
  return log_g.array().exp();
}

namespace {

void theta_statistics(const ObservationSet& obs, const ModelConfig& cfg, const VariationalState& state,
                      Eigen::ArrayXd& mean, Eigen::ArrayXd& elog) {
  if (!cfg.overdispersion) {
    mean = Eigen::ArrayXd::Ones(obs.size());
    elog = Eigen::ArrayXd::Zero(obs.size());
  } else if (cfg.autocorrelated_noise) {
    mean = autocorrelated_theta_mean(obs, state.theta);
    elog = autocorrelated_theta_expected_log(obs, state.theta);
  } else {
    mean = state.theta.mean().col(0);
    elog = state.theta.expected_log().col(0);
  }
}

}  // namespace

RateCache build_rate_cache(const ObservationSet& obs, const ModelConfig& cfg, const VariationalState& state) {
  RateCache c;
  c.H = state.baseline.mean().col(0);
  c.F = feature_product(chain_marginals(state, obs.T()), state.gain.mean());
  c.G = covariate_product(obs.covariates(), state.covariate_shape, state.covariate_eps, cfg.exact_gamma_ratio);
  theta_statistics(obs, cfg, state, c.theta_mean, c.theta_elog);
  c.exposure = cell_exposure(obs, c.theta_mean);
  return c;
}

double cache_incoherence(const ObservationSet& obs, const ModelConfig& cfg, const VariationalState& state,
                         const RateCache& cache) {
  const RateCache fresh = build_rate_cache(obs, cfg, state);
  double worst = (fresh.H - cache.H).abs().maxCoeff();
  worst = std::max(worst, (fresh.F - cache.F).abs().maxCoeff());
  worst = std::max(worst, (fresh.G - cache.G).abs().maxCoeff());
  worst = std::max(worst, (fresh.exposure - cache.exposure).abs().maxCoeff());
  if (obs.size() > 0) worst = std::max(worst, (fresh.theta_mean - cache.theta_mean).abs().maxCoeff());
  return worst;
}

namespace {

double chain_elbo(const ChainPosterior& chain, const MarkovPosterior& markov,
                  const std::array<NormalGamma, 2>* dwell, int D) {
  double value = chain.logZ - chain.xi.dot(chain.eta.col(1));
  value += chain.initial_marginal().dot(markov.expected_log_initial() - chain.logpi_tilde);
  if (!markov.forced_alternation) {
    value += (chain.transition_counts().array() * (markov.expected_log_transition() - chain.logA_tilde).array()).sum();
  }
  if (dwell != nullptr) {
    const Eigen::MatrixX2d nu = duration_log_potentials(*dwell, D);
    value += (chain.duration_counts.array() * (nu - chain.duration_log_potential).array()).sum();
  }
  return value;
}

}  // namespace

ElboTerms compute_elbo_terms(const ObservationSet& obs, const ModelConfig& cfg, const VariationalState& state,
                             const RateCache& cache) {
  ElboTerms e;
  const Eigen::ArrayXXd& N = obs.cell_counts();
  const int K = state.K();

  // Expected Poisson log-likelihood.
  Eigen::MatrixXd elog_rate = Eigen::MatrixXd::Zero(obs.T(), obs.U());
  elog_rate.rowwise() += state.baseline.expected_log().col(0).matrix().transpose();
  if (K > 0) elog_rate += state.xi() * state.gain.expected_log().matrix().transpose();
  if (obs.R() > 0) elog_rate += obs.covariates() * state.covariate_gain().expected_log().matrix().transpose();
  e.poisson = (obs.count() * cache.theta_elog).sum() + (N * elog_rate.array()).sum() -
              (cache.exposure * cache.expected_rate()).sum();

  if (cfg.overdispersion) {
    e.overdispersion = overdispersion_elbo(obs, state.theta, state.unit_shape, cfg.priors.overdispersion_a,
                                           cfg.priors.overdispersion_b, cfg.shape_bound);
  }
  e.baseline = hierarchy_elbo(state.baseline, state.baseline_hyper, cfg.priors.baseline, cfg.shape_bound);
  for (int k = 0; k < K; ++k) {
    GammaArray col;
    col.shape = state.gain.shape.col(k);
    col.rate = state.gain.rate.col(k);
    e.features +=
        hierarchy_elbo(col, state.gain_hyper[static_cast<std::size_t>(k)], cfg.priors.feature, cfg.shape_bound);
  }
  const GammaArray cov = state.covariate_gain();
  for (Eigen::Index u = 0; u < cov.rows(); ++u) {
    for (Eigen::Index r = 0; r < cov.cols(); ++r) {
      e.covariates += cov.at(u, r).neg_kl(cfg.priors.covariate_shape(static_cast<int>(r)),
                                          cfg.priors.covariate_rate(static_cast<int>(r)));
    }
  }
  const Eigen::Vector2d initial_prior = cfg.initial_state_prior();
  for (int k = 0; k < K; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    e.markov += state.markov[ks].neg_kl(initial_prior, cfg.priors.transition);
    e.chains += chain_elbo(state.chains[ks], state.markov[ks], cfg.semi_markov ? &state.dwell[ks] : nullptr, cfg.D);
    if (cfg.semi_markov) {
      e.durations += state.dwell[ks][0].neg_kl(cfg.priors.duration) + state.dwell[ks][1].neg_kl(cfg.priors.duration);
    }
  }
  return e;
}

double compute_elbo(const ObservationSet& obs, const ModelConfig& cfg, const VariationalState& state,
                    const RateCache& cache) {
  const ElboTerms e = compute_elbo_terms(obs, cfg, state, cache);
  const std::pair<const char*, double> blocks[] = {
      {"poisson", e.poisson},       {"overdispersion", e.overdispersion}, {"baseline", e.baseline},
      {"features", e.features},     {"covariates", e.covariates},         {"markov", e.markov},
      {"chains", e.chains},         {"durations", e.durations},
  };
  for (const auto& [name, v] : blocks) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ELBO term in block '") + name + "'");
  }
  return e.total();
}

namespace {

// Leading left singular vectors of the per-unit standardized rate matrix, with the
// covariates projected out, that clear the Marchenko-Pastur edge for a T x U noise
// matrix.
Eigen::MatrixXd signal_components(const ObservationSet& obs) {
  const int U = obs.U();
  const int T = obs.T();
  if (T < 2) return Eigen::MatrixXd(T, 0);
  const Eigen::ArrayXXd& M = obs.presentations();
  const Eigen::ArrayXXd rate = (M > 0).select(obs.cell_counts() / M.max(1.0), 0.0);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(T, U);
  for (int u = 0; u < U; ++u) {
    const Eigen::Array<bool, Eigen::Dynamic, 1> seen = M.col(u) > 0;
    const double n = seen.cast<double>().sum();
    if (n < 2) continue;
    const double mean = rate.col(u).sum() / n;
    const Eigen::ArrayXd centred = seen.select(rate.col(u) - mean, 0.0);
    const double var = centred.square().sum() / (n - 1);
    if (var > 0) z.col(u) = (centred / std::sqrt(var)).matrix();
  }
  int dof = T - 1;
  if (obs.R() > 0) {
    const Eigen::MatrixXd X = obs.covariates().rowwise() - obs.covariates().colwise().mean();
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    z -= X * qr.solve(z);
    dof -= static_cast<int>(qr.rank());
  }
  if (dof < 1) return Eigen::MatrixXd(T, 0);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinU);
  const double edge = std::pow(1.0 + std::sqrt(static_cast<double>(U) / T), 2.0) * dof;
  const Eigen::ArrayXd ev = svd.singularValues().array().square();
  int above = 0;
  while (above < ev.size() && ev(above) > edge) ++above;
  // Cut at the widest eigengap among the components above the edge; the
  // multiplicative model leaves weaker interaction components behind the features.
  int n = 0;
  double widest = 0.0;
  for (int i = 0; i < above; ++i) {
    const double next = i + 1 < ev.size() ? std::max(ev(i + 1), edge) : edge;
    if (ev(i) / next > widest) {
      widest = ev(i) / next;
      n = i + 1;
    }
  }
  if (n == 0) return Eigen::MatrixXd(T, 0);

  // The leading components mix the features. Unmix them by symmetric fixed-point
  // ICA on the whitened scores with a skewness contrast, since sparse binary
  // features give skewed rate responses, then orient each source to positive skew.
  const Eigen::MatrixXd x = svd.matrixU().leftCols(n) * std::sqrt(static_cast<double>(T));
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(n, n);
  for (int it = 0; it < 500; ++it) {
    const Eigen::MatrixXd y = x * w.transpose();
    Eigen::MatrixXd next = (y.array().square().matrix().transpose() * x) / T;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(next * next.transpose());
    next = es.eigenvectors() * es.eigenvalues().cwiseMax(1e-300).cwiseInverse().cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose() * next;
    const double moved = 1.0 - (next * w.transpose()).diagonal().cwiseAbs().minCoeff();
    w = next;
    if (moved < 1e-12) break;
  }
  Eigen::MatrixXd sources = x * w.transpose();
  for (int i = 0; i < n; ++i) {
    if (sources.col(i).array().cube().sum() < 0) sources.col(i) *= -1.0;
  }
  return sources;
}

}  // namespace

VariationalState init_posteriors(const ObservationSet& obs, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.2, 0.8);
  auto jitter = [&]() { return cfg.init_jitter > 0.0 ? std::exp(cfg.init_jitter * normal(rng)) : 1.0; };

  const int U = obs.U();
  const int T = obs.T();
  const int K = cfg.K;
  const int R = obs.R();
  const Priors& p = cfg.priors;

  // Uncertain shapes start at their prior mean with the concentration n sites would
  // give them, which keeps E[1/c] finite under the Robbins bound.
  auto shape_start = [](double a, double b, double n) {
    const double alpha = a + 0.5 * n;
    return GammaPosterior{alpha, b * alpha / a};
  };

  VariationalState s;
  s.unit_shape = GammaArray(U, 1, p.overdispersion_a, p.overdispersion_b);
  const Eigen::ArrayXd per_unit = obs.unit_observation_counts();
  for (int u = 0; u < U; ++u) {
    s.unit_shape.set(u, 0, shape_start(p.overdispersion_a, p.overdispersion_b, per_unit(u)));
  }
  const double s_mean = p.overdispersion_a / p.overdispersion_b;
  s.theta = GammaArray(cfg.overdispersion ? obs.size() : 0, 1, s_mean, s_mean);

  s.baseline_hyper = {shape_start(p.baseline.a_c, p.baseline.b_c, U), {p.baseline.a_d, p.baseline.b_d}};
  s.baseline = GammaArray(U, 1, s.baseline_hyper.site_shape(), s.baseline_hyper.site_rate());
  for (int u = 0; u < U; ++u) s.baseline.rate(u) *= jitter();

  const HyperPosterior gain_prior{shape_start(p.feature.a_c, p.feature.b_c, U), {p.feature.a_d, p.feature.b_d}};
  s.gain_hyper.assign(static_cast<std::size_t>(K), gain_prior);
  s.gain = GammaArray(U, K, gain_prior.site_shape(), gain_prior.site_rate());
  for (int k = 0; k < K; ++k) {
    for (int u = 0; u < U; ++u) s.gain.rate(u, k) *= jitter();
  }

  s.covariate_shape = Eigen::ArrayXXd(U, R);
  for (int r = 0; r < R; ++r) s.covariate_shape.col(r).setConstant(p.covariate_shape(r));
  s.covariate_eps = Eigen::MatrixXd::Zero(U, R);

  const Eigen::MatrixXd components =
      cfg.chain_init == ChainInit::kSpectral && K > 0 ? signal_components(obs) : Eigen::MatrixXd(T, 0);
  const Eigen::Vector2d initial_prior = cfg.initial_state_prior();
  const std::array<NormalGamma, 2> dwell_prior{p.duration, p.duration};
  for (int k = 0; k < K; ++k) {
    Eigen::MatrixX2d eta = Eigen::MatrixX2d::Zero(T, 2);
    Eigen::VectorXd q(T);
    if (k < components.cols()) {
      // Rank-map the component onto [0.2, 0.8] so the start is no more confident
      // than the uniform scheme.
      const Eigen::VectorXd& y = components.col(k);
      std::vector<int> order(static_cast<std::size_t>(T));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return y(a) < y(b); });
      for (int i = 0; i < T; ++i) q(order[static_cast<std::size_t>(i)]) = 0.2 + 0.6 * (i + 0.5) / T;
    } else {
      for (int t = 0; t < T; ++t) q(t) = uniform(rng);
    }
    for (int t = 0; t < T; ++t) eta(t, 1) = std::log(q(t) / (1.0 - q(t)));
    s.markov.push_back(MarkovPosterior::from_prior(initial_prior, p.transition, cfg.semi_markov));
    if (cfg.semi_markov) {
      s.dwell.push_back(dwell_prior);
      s.chains.push_back(smooth_semi_markov(eta, forced_alternation_log_transition(), Eigen::Vector2d::Zero(),
                                            duration_log_potentials(dwell_prior, cfg.D)));
    } else {
      s.chains.push_back(smooth_markov(eta, Eigen::Matrix2d::Zero(), Eigen::Vector2d::Zero()));
    }
  }
  return s;
}

Engine::Engine(const ObservationSet& obs, const ModelConfig& cfg, std::uint64_t seed)
    : Engine(obs, cfg, init_posteriors(obs, cfg, seed)) {}

Engine::Engine(const ObservationSet& obs, const ModelConfig& cfg, VariationalState state)
    : obs_(obs), cfg_(cfg), state_(std::move(state)) {
  cache_ = build_rate_cache(obs_, cfg_, state_);
}

SufficientStats Engine::stats() const { return {obs_.cell_counts(), cache_.exposure}; }

void Engine::refresh_theta() {
  theta_statistics(obs_, cfg_, state_, cache_.theta_mean, cache_.theta_elog);
  cache_.exposure = cell_exposure(obs_, cache_.theta_mean);
}

void Engine::refresh_F() { cache_.F = feature_product(chain_marginals(state_, obs_.T()), state_.gain.mean()); }

void Engine::refresh_G() {
  cache_.G = covariate_product(obs_.covariates(), state_.covariate_shape, state_.covariate_eps,
                               cfg_.exact_gamma_ratio);
}

void Engine::update_baselines() {
  state_.baseline = stimfeat::update_baselines(stats(), cache_.F, cache_.G, state_.baseline_hyper);
  cache_.H = state_.baseline.mean().col(0);
}

void Engine::update_baseline_hyper() {
  state_.baseline_hyper =
      update_population_hyperparams(state_.baseline, state_.baseline_hyper, cfg_.priors.baseline, cfg_.shape_bound);
}

void Engine::update_gains(int k) {
  const Eigen::ArrayXXd F_excl = feature_product(state_.xi(), state_.gain.mean(), k);
  const GammaArray g = update_feature_gains(stats(), cache_.H, F_excl, cache_.G, state_.chains[static_cast<std::size_t>(k)].xi,
                                            state_.gain_hyper[static_cast<std::size_t>(k)]);
  state_.gain.shape.col(k) = g.shape;
  state_.gain.rate.col(k) = g.rate;
  refresh_F();
}

void Engine::update_gain_hyper(int k) {
  GammaArray col;
  col.shape = state_.gain.shape.col(k);
  col.rate = state_.gain.rate.col(k);
  auto& h = state_.gain_hyper[static_cast<std::size_t>(k)];
  h = update_population_hyperparams(col, h, cfg_.priors.feature, cfg_.shape_bound);
}

void Engine::update_markov(int k) {
  const auto ks = static_cast<std::size_t>(k);
  state_.markov[ks] =
      update_chain_priors(state_.chains[ks], cfg_.initial_state_prior(), cfg_.priors.transition, cfg_.semi_markov);
}

void Engine::update_chain(int k) {
  const auto ks = static_cast<std::size_t>(k);
  const Eigen::ArrayXXd F_excl = feature_product(state_.xi(), state_.gain.mean(), k);
  GammaArray col;
  col.shape = state_.gain.shape.col(k);
  col.rate = state_.gain.rate.col(k);
  const Eigen::MatrixX2d eta = compute_emissions(stats(), cache_.H, F_excl, cache_.G, col);
  const auto& m = state_.markov[ks];
  if (cfg_.semi_markov) {
    state_.chains[ks] = smooth_semi_markov(eta, m.expected_log_transition(), m.expected_log_initial(),
                                           duration_log_potentials(state_.dwell[ks], cfg_.D));
  } else {
    state_.chains[ks] = smooth_markov(eta, m.expected_log_transition(), m.expected_log_initial());
  }
  refresh_F();
}

void Engine::update_dwell(int k) {
  if (!cfg_.semi_markov) return;
  const auto ks = static_cast<std::size_t>(k);
  const DurationProblem problem{state_.chains[ks].duration_counts, cfg_.priors.duration};
  const auto before = duration_objective(problem, state_.dwell[ks]);
  const auto next = update_duration_hyperparams(problem, state_.dwell[ks]);
  if (duration_objective(problem, next) >= before) state_.dwell[ks] = next;
}

void Engine::update_covariates() {
  if (obs_.R() == 0) return;
  CovariateProblem problem;
  problem.X = obs_.covariates();
  problem.shape = covariate_shape_update(obs_, cfg_.priors);
  problem.prior_rate.resize(obs_.R());
  for (int r = 0; r < obs_.R(); ++r) problem.prior_rate(r) = cfg_.priors.covariate_rate(r);
  problem.weights = cache_.exposure * (cache_.F.rowwise() * cache_.H.transpose());
  if (cfg_.exact_gamma_ratio) {
    // Γ(α+x)/(Γ(α) α^x) does not depend on ε; fold it into the weights.
    problem.weights *= covariate_product(obs_.covariates(), problem.shape,
                                         Eigen::MatrixXd::Zero(obs_.U(), obs_.R()), true);
  }
  const CovariateUpdate upd = update_covariate_rates(problem, state_.covariate_eps);
  state_.covariate_shape = problem.shape;
  state_.covariate_eps = upd.eps;
  refresh_G();
}

void Engine::update_overdispersion() {
  if (!cfg_.overdispersion) return;
  const Eigen::ArrayXd s_mean = state_.unit_shape.mean().col(0);
  if (cfg_.autocorrelated_noise) {
    state_.theta = update_autocorrelated_gains(obs_, state_.theta, s_mean, cache_.expected_rate());
  } else {
    state_.theta = stimfeat::update_overdispersion(obs_, s_mean, cache_.expected_rate());
  }
  refresh_theta();
}

void Engine::update_unit_shape() {
  if (!cfg_.overdispersion) return;
  state_.unit_shape =
      stimfeat::update_unit_shape(obs_, state_.theta, cfg_.priors.overdispersion_a, cfg_.priors.overdispersion_b,
                                  cfg_.shape_bound, &state_.unit_shape);
}

void Engine::sweep(std::vector<BlockDelta>* blocks) {
  double last = blocks ? elbo() : 0.0;
  auto mark = [&](std::string name) {
    if (!blocks) return;
    const double now = elbo();
    blocks->push_back({std::move(name), now - last});
    last = now;
  };
  update_baselines();
  mark("baseline");
  update_baseline_hyper();
  mark("baseline_hyper");
  for (int k = 0; k < state_.K(); ++k) {
    const std::string tag = "[" + std::to_string(k) + "]";
    update_gains(k);
    mark("gain" + tag);
    update_gain_hyper(k);
    mark("gain_hyper" + tag);
    update_markov(k);
    mark("markov" + tag);
    update_chain(k);
    mark("chain" + tag);
    if (cfg_.semi_markov) {
      update_dwell(k);
      mark("dwell" + tag);
    }
  }
  if (obs_.R() > 0) {
    update_covariates();
    mark("covariates");
  }
  if (cfg_.overdispersion) {
    update_overdispersion();
    mark("overdispersion");
    update_unit_shape();
    mark("unit_shape");
  }
}

std::vector<double> FitResult::elbo_trace(int restart) const {
  if (restart < 0) restart = best_restart;
  std::vector<double> out;
  for (const auto& rec : trace) {
    if (rec.restart == restart) out.push_back(rec.elbo);
  }
  return out;
}

std::uint64_t restart_seed(std::uint64_t base, int restart) {
  // splitmix64 of base + restart
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(restart + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RestartDiagnostics run_restart(const ObservationSet& obs, const ModelConfig& cfg, int restart,
                               VariationalState* final_state, std::vector<TraceRecord>* trace) {
  RestartDiagnostics diag;
  diag.restart = restart;
  diag.seed = restart_seed(cfg.convergence.seed, restart);
  const auto start = std::chrono::steady_clock::now();
  auto seconds = [&]() { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  try {
    Engine engine(obs, cfg, diag.seed);
    double previous = engine.elbo();
    diag.initial_elbo = previous;
    diag.final_elbo = previous;
    if (trace) trace->push_back({restart, 0, previous, seconds(), {}});
    for (int sweep = 1; sweep <= cfg.convergence.max_sweeps; ++sweep) {
      std::vector<BlockDelta> blocks;
      engine.sweep(cfg.monitor_blocks ? &blocks : nullptr);
      const double current = engine.elbo();
      diag.sweeps = sweep;
      diag.final_elbo = current;
      if (trace) trace->push_back({restart, sweep, current, seconds(), std::move(blocks)});
      const double change = std::abs(current - previous) / std::max(std::abs(current), 1e-300);
      previous = current;
      if (change < cfg.convergence.tolerance) {
        diag.converged = true;
        break;
      }
    }
    if (final_state) *final_state = engine.state();
  } catch (const NumericalError& e) {
    diag.error = e.what();
  }
  return diag;
}

FitResult fit(const ObservationSet& obs, const ModelConfig& cfg) {
  cfg.validate();
  const int n = cfg.convergence.restarts;
  std::vector<RestartDiagnostics> diags(static_cast<std::size_t>(n));
  std::vector<VariationalState> states(static_cast<std::size_t>(n));
  std::vector<std::vector<TraceRecord>> traces(static_cast<std::size_t>(n));

  auto work = [&](int r) {
    const auto rs = static_cast<std::size_t>(r);
    diags[rs] = run_restart(obs, cfg, r, &states[rs], &traces[rs]);
  };
  const int workers = std::min(cfg.threads, n);
  if (workers <= 1) {
    for (int r = 0; r < n; ++r) work(r);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (int r = w; r < n; r += workers) work(r);
      });
    }
    for (auto& th : pool) th.join();
  }

  FitResult result;
  for (int r = 0; r < n; ++r) {
    const auto& d = diags[static_cast<std::size_t>(r)];
    if (!d.error.empty()) continue;
    if (result.best_restart < 0 || d.final_elbo > diags[static_cast<std::size_t>(result.best_restart)].final_elbo) {
      result.best_restart = r;
    }
  }
  if (result.best_restart < 0) throw NumericalError("every restart failed: " + diags.front().error);
  result.state = std::move(states[static_cast<std::size_t>(result.best_restart)]);
  for (auto& t : traces) {
    for (auto& rec : t) result.trace.push_back(std::move(rec));
  }
  result.restarts = std::move(diags);
  return result;
}

}  // namespace stimfeat
