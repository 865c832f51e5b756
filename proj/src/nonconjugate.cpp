#include "stimfeat/nonconjugate.hpp"

#include <cmath>
#include <numbers>

#include "stimfeat/chain.hpp"
#include "stimfeat/error.hpp"
#include "stimfeat/special.hpp"

namespace stimfeat {

Eigen::ArrayXXd covariate_shape_update(const ObservationSet& obs, const Priors& priors) {
  const int R = obs.R();
  Eigen::ArrayXXd shape = (obs.cell_counts().matrix().transpose() * obs.covariates()).array();
  for (int r = 0; r < R; ++r) shape.col(r) += priors.covariate_shape(r);
  if (!(shape > 0.0).all()) throw NumericalError("covariate shape must be positive; negative covariates need larger a_x");
  return shape;
}

double covariate_unit_objective(const CovariateProblem& p, Eigen::Index u, const Eigen::VectorXd& eps,
                                Eigen::VectorXd* grad) {
  const Eigen::ArrayXd shape = p.shape.row(u).transpose();
  const Eigen::ArrayXd e = eps.array().exp();
  double value = (shape * eps.array() - p.prior_rate.array() * e).sum();
  const Eigen::VectorXd rate = (p.X * eps).array().exp().matrix();
  const Eigen::VectorXd w = p.weights.col(u).matrix();
  const Eigen::VectorXd wr = w.cwiseProduct(rate);
  value -= wr.sum();
  if (grad) *grad = (shape - p.prior_rate.array() * e).matrix() - p.X.transpose() * wr;
  if (!std::isfinite(value)) throw NumericalError("non-finite covariate objective for unit " + std::to_string(u));
  return value;
}

double covariate_objective(const CovariateProblem& p, const Eigen::MatrixXd& eps, Eigen::MatrixXd* grad) {
  const Eigen::Index U = p.shape.rows();
  if (grad) grad->resize(U, p.shape.cols());
  double total = 0.0;
  Eigen::VectorXd g;
  for (Eigen::Index u = 0; u < U; ++u) {
    total += covariate_unit_objective(p, u, eps.row(u).transpose(), grad ? &g : nullptr);
    if (grad) grad->row(u) = g.transpose();
  }
  return total;
}

CovariateUpdate update_covariate_rates(const CovariateProblem& p, const Eigen::MatrixXd& eps_previous,
                                       const LbfgsOptions& opt) {
  const Eigen::Index U = p.shape.rows();
  const Eigen::Index R = p.shape.cols();
  CovariateUpdate out;
  out.eps = eps_previous;
  if (R == 0) {
    out.posterior = GammaArray(U, 0, 1.0, 1.0);
    return out;
  }
  for (Eigen::Index u = 0; u < U; ++u) {
    auto negated = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
      double v;
      try {
        v = covariate_unit_objective(p, u, x, &g);
      } catch (const NumericalError&) {
        return std::numeric_limits<double>::infinity();
      }
      g = -g;
      return -v;
    };
    const auto res = minimize_lbfgs(negated, Eigen::VectorXd::Zero(R), opt);
    if (!res.converged) ++out.unconverged_units;
    const double previous = covariate_unit_objective(p, u, eps_previous.row(u).transpose());
    if (-res.value >= previous) out.eps.row(u) = res.x.transpose();
  }
  out.posterior.shape = p.shape;
  out.posterior.rate = p.shape * (-out.eps.array()).exp();
  return out;
}

double duration_objective(const DurationProblem& p, const std::array<NormalGamma, 2>& dwell) {
  return duration_objective_packed(p, pack_duration(dwell));
}

Eigen::VectorXd pack_duration(const std::array<NormalGamma, 2>& dwell) {
  Eigen::VectorXd x(8);
  for (int j = 0; j < 2; ++j) {
    const auto& ng = dwell[static_cast<std::size_t>(j)];
    x.segment<4>(4 * j) << ng.mu, std::log(ng.lambda), std::log(ng.alpha), std::log(ng.beta);
  }
  return x;
}

std::array<NormalGamma, 2> unpack_duration(const Eigen::VectorXd& x) {
  std::array<NormalGamma, 2> out;
  for (int j = 0; j < 2; ++j) {
    out[static_cast<std::size_t>(j)] = {x(4 * j), std::exp(x(4 * j + 1)), std::exp(x(4 * j + 2)),
                                        std::exp(x(4 * j + 3))};
  }
  return out;
}

namespace {

// Value and gradient in (μ, λ, α, β) for one state.
double state_objective(const Eigen::VectorXd& counts, const NormalGamma& q, const NormalGamma& prior,
                       Eigen::Vector4d* grad) {
  const double mu = q.mu, lam = q.lambda, a = q.alpha, b = q.beta;
  const double kappa = lam / (1.0 + lam);
  const auto D = counts.size();
  const double total = counts.sum();

  double value = 0.0;
  Eigen::Vector4d g = Eigen::Vector4d::Zero();

  // Expected log-density of the observed dwells.
  const double psi_a = digamma(a);
  const double tri_a = trigamma(a);
  for (Eigen::Index i = 0; i < D; ++i) {
    const double w = counts(i);
    if (w == 0.0) continue;
    const int d = static_cast<int>(i) + 1;
    const double x = std::log(static_cast<double>(d));
    const double dx = x - mu;
    value += w * duration_expected_log_pmf(q, d);
    g(0) += w * (a / b) * dx;
    g(1) += w * 0.5 / (lam * lam);
    g(2) += w * (0.5 * tri_a - 0.5 * dx * dx / b);
    g(3) += w * (-0.5 / b + 0.5 * a * dx * dx / (b * b));
  }

  // Truncation: -total * log Σ_d E[p(d)].
  if (total > 0.0) {
    double mass = 0.0;
    Eigen::Vector4d dmass = Eigen::Vector4d::Zero();
    const double psi_half = digamma(a + 0.5);
    for (Eigen::Index i = 0; i < D; ++i) {
      const int d = static_cast<int>(i) + 1;
      const double x = std::log(static_cast<double>(d));
      const double dx = x - mu;
      const double bh = 1.0 + 0.5 * kappa * dx * dx / b;
      const double pd = duration_pmf_expectation(q, d);
      mass += pd;
      dmass(0) += pd * (a + 0.5) * kappa * dx / (b * bh);
      dmass(1) += pd * (0.5 * (1.0 / lam - 1.0 / (1.0 + lam)) -
                        (a + 0.5) / bh * dx * dx / (2.0 * b) / ((1.0 + lam) * (1.0 + lam)));
      dmass(2) += pd * (psi_half - psi_a - std::log(bh));
      dmass(3) += pd * (-0.5 / b + (a + 0.5) * kappa * dx * dx / (2.0 * b * b * bh));
    }
    value -= total * std::log(mass);
    g -= total * dmass / mass;
  }

  // -KL(q || prior) = E_q log p - E_q log q.
  value += q.neg_kl(prior);
  const double dm = mu - prior.mu;
  g(0) += -prior.lambda * (a / b) * dm;
  g(1) += prior.lambda / (2.0 * lam * lam) - 1.0 / (2.0 * lam);
  g(2) += (prior.alpha - 0.5) * tri_a - prior.beta / b - 0.5 * prior.lambda * dm * dm / b -
          ((a - 0.5) * tri_a - 1.0);
  g(3) += -(prior.alpha - 0.5) / b + prior.beta * a / (b * b) + 0.5 * prior.lambda * a * dm * dm / (b * b) -
          0.5 / b;

  if (grad) *grad = g;
  return value;
}

}  // namespace

double duration_objective_packed(const DurationProblem& p, const Eigen::VectorXd& params, Eigen::VectorXd* grad) {
  const auto dwell = unpack_duration(params);
  if (grad) grad->resize(8);
  double value = 0.0;
  for (int j = 0; j < 2; ++j) {
    const auto& q = dwell[static_cast<std::size_t>(j)];
    Eigen::Vector4d g;
    value += state_objective(p.counts.col(j), q, p.prior, grad ? &g : nullptr);
    if (grad) {
      // Chain rule through the log parameterization.
      grad->segment<4>(4 * j) << g(0), g(1) * q.lambda, g(2) * q.alpha, g(3) * q.beta;
    }
  }
  return value;
}

std::array<NormalGamma, 2> update_duration_hyperparams(const DurationProblem& p,
                                                       const std::array<NormalGamma, 2>& current,
                                                       const LbfgsOptions& opt) {
  if (p.counts.sum() <= 0.0) return {p.prior, p.prior};
  auto negated = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    if (!x.allFinite() || (x.array().abs() > 50.0).any()) return std::numeric_limits<double>::infinity();
    const double v = duration_objective_packed(p, x, &g);
    g = -g;
    return -v;
  };
  const auto res = minimize_lbfgs(negated, pack_duration(current), opt);
  return unpack_duration(res.x);
}

}  // namespace stimfeat
