#include "stimfeat/gamma_updates.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <boost/math/tools/minima.hpp>

#include "stimfeat/error.hpp"

namespace stimfeat {

namespace {

void check(const GammaArray& g, const char* site) {
  if (!g.valid()) throw NumericalError(std::string("non-finite or non-positive posterior in ") + site);
}

}  // namespace

double shape_normalizer_bound(const GammaPosterior& q, ShapeBound bound) {
  if (bound == ShapeBound::kStirling) return q.mean() - 1.0 + 0.5 * q.expected_log();
  if (q.shape <= 1.0) return -std::numeric_limits<double>::infinity();
  const double inv_mean = q.rate / (q.shape - 1.0);
  return q.mean() + 0.5 * q.expected_log() - 0.5 * std::log(2.0 * std::numbers::pi) - inv_mean / 12.0;
}

double shape_site_objective(const GammaPosterior& q, double linear, double n, double a, double b, ShapeBound bound) {
  const double bound_terms = n > 0.0 ? n * shape_normalizer_bound(q, bound) : 0.0;
  return bound_terms + linear * q.mean() + q.neg_kl(a, b);
}

GammaPosterior update_shape_site(double linear, double n, double a, double b, ShapeBound bound,
                                 const GammaPosterior* current) {
  // Closed form when the bound is linear in (c, log c): rate = b - linear - n.
  const double rho = b - linear - n;
  if (!std::isfinite(rho) || rho <= 0.0) throw NumericalError("non-positive shape-site rate");
  GammaPosterior best{a + 0.5 * n, rho};
  if (bound == ShapeBound::kRobbins && n > 0.0) {
    // For fixed shape α the stationary rate solves (n/12)/(α-1) β² + (a + n/2) β - α ρ = 0;
    // the profile in α is searched by Brent on log(α - 1).
    const double b0 = a + 0.5 * n;
    auto profile = [&](double t) {
      const double alpha = 1.0 + std::exp(t);
      const double a0 = n / (12.0 * (alpha - 1.0));
      const double beta = 2.0 * alpha * rho / (b0 + std::sqrt(b0 * b0 + 4.0 * a0 * alpha * rho));
      return GammaPosterior{alpha, beta};
    };
    auto negative = [&](double t) { return -shape_site_objective(profile(t), linear, n, a, b, bound); };
    const double t0 = std::log(std::max(b0 - 1.0, 1e-3));
    const auto [t, value] = boost::math::tools::brent_find_minima(negative, t0 - 25.0, t0 + 10.0, 52);
    (void)value;
    best = profile(t);
  }
  if (current && current->valid() &&
      shape_site_objective(*current, linear, n, a, b, bound) > shape_site_objective(best, linear, n, a, b, bound)) {
    return *current;
  }
  return best;
}

Eigen::ArrayXXd cell_exposure(const ObservationSet& obs, const Eigen::ArrayXd& theta_mean) {
  Eigen::ArrayXXd w = Eigen::ArrayXXd::Zero(obs.T(), obs.U());
  for (Eigen::Index m = 0; m < obs.size(); ++m) w(obs.time(m), obs.unit(m)) += theta_mean(m);
  return w;
}

GammaArray update_overdispersion(const ObservationSet& obs, const Eigen::ArrayXd& unit_shape_mean,
                                 const Eigen::ArrayXXd& expected_rate) {
  if (!expected_rate.allFinite()) throw NumericalError("non-finite expected rate in overdispersion update");
  GammaArray out(obs.size(), 1, 1.0, 1.0);
  for (Eigen::Index m = 0; m < obs.size(); ++m) {
    const double s = unit_shape_mean(obs.unit(m));
    out.shape(m) = s + obs.count(m);
    out.rate(m) = s + expected_rate(obs.time(m), obs.unit(m));
  }
  check(out, "overdispersion");
  return out;
}

GammaArray update_unit_shape(const ObservationSet& obs, const GammaArray& theta, double a, double b,
                             ShapeBound bound, const GammaArray* current) {
  const Eigen::ArrayXXd excess = theta.mean() - theta.expected_log() - 1.0;
  Eigen::ArrayXd n = Eigen::ArrayXd::Zero(obs.U());
  Eigen::ArrayXd total = Eigen::ArrayXd::Zero(obs.U());
  for (Eigen::Index m = 0; m < obs.size(); ++m) {
    if (excess(m) < -1e-12) throw NumericalError("negative overdispersion excess in unit-shape update");
    n(obs.unit(m)) += 1.0;
    total(obs.unit(m)) += std::max(excess(m), 0.0);
  }
  GammaArray out(obs.U(), 1, a, b);
  for (int u = 0; u < obs.U(); ++u) {
    // Σ E[log θ - θ] = -(excess + n)
    const GammaPosterior prev = current ? current->at(u) : GammaPosterior{a, b};
    out.set(u, 0, update_shape_site(-(total(u) + n(u)), n(u), a, b, bound, current ? &prev : nullptr));
  }
  check(out, "unit shape");
  return out;
}

GammaArray update_baselines(const SufficientStats& stats, const Eigen::ArrayXXd& F, const Eigen::ArrayXXd& G,
                            const HyperPosterior& hyper) {
  GammaArray out;
  out.shape = (hyper.site_shape() + stats.counts.colwise().sum()).transpose();
  out.rate = (hyper.site_rate() + (stats.exposure * F * G).colwise().sum()).transpose();
  check(out, "baseline");
  return out;
}

GammaArray update_feature_gains(const SufficientStats& stats, const Eigen::ArrayXd& H,
                                const Eigen::ArrayXXd& F_excluding, const Eigen::ArrayXXd& G,
                                const Eigen::VectorXd& xi, const HyperPosterior& hyper) {
  GammaArray out;
  const Eigen::ArrayXd on_counts = stats.counts.matrix().transpose() * xi;
  const Eigen::ArrayXd on_rate = (stats.exposure * F_excluding * G).matrix().transpose() * xi;
  out.shape = hyper.site_shape() + on_counts;
  out.rate = hyper.site_rate() + H * on_rate;
  check(out, "feature gain");
  return out;
}

HyperPosterior update_population_hyperparams(const GammaArray& sites, const HyperPosterior& current,
                                             const HierarchyPrior& prior, ShapeBound bound) {
  const double n_sites = static_cast<double>(sites.rows());
  const Eigen::ArrayXd mean = sites.mean().col(0);
  const Eigen::ArrayXd elog = sites.expected_log().col(0);

  HyperPosterior next = current;
  // Each term is E[dλ - log(dλ) - 1] >= 0.
  const double increment =
      (current.d.mean() * mean - elog - current.d.expected_log() - 1.0).sum();
  if (!std::isfinite(increment) || increment < -1e-9 * std::max(1.0, n_sites)) {
    throw NumericalError("hyperparameter c-rate increment is negative (" + std::to_string(increment) + ")");
  }
  next.c = update_shape_site(-(std::max(increment, 0.0) + n_sites), n_sites, prior.a_c, prior.b_c, bound, &current.c);
  next.d = {prior.a_d + n_sites * next.c.mean(), prior.b_d + next.c.mean() * mean.sum()};
  if (!next.c.valid() || !next.d.valid()) throw NumericalError("invalid hyperparameter posterior");
  return next;
}

double hierarchy_elbo(const GammaArray& sites, const HyperPosterior& hyper, const HierarchyPrior& prior,
                      ShapeBound bound) {
  const double c = hyper.c.mean();
  const double d = hyper.d.mean();
  const Eigen::ArrayXXd elog = sites.expected_log();
  const auto n = static_cast<double>(sites.shape.size());
  const double site_terms = ((c - 1.0) * elog - c * d * sites.mean() + sites.entropy()).sum() +
                            n * (c * hyper.d.expected_log() + shape_normalizer_bound(hyper.c, bound));
  return site_terms + hyper.c.neg_kl(prior.a_c, prior.b_c) + hyper.d.neg_kl(prior.a_d, prior.b_d);
}

double overdispersion_elbo(const ObservationSet& obs, const GammaArray& theta, const GammaArray& unit_shape,
                           double a, double b, ShapeBound bound) {
  const Eigen::ArrayXd s_mean = unit_shape.mean().col(0);
  Eigen::ArrayXd s_bound(unit_shape.rows());
  for (Eigen::Index u = 0; u < unit_shape.rows(); ++u) s_bound(u) = shape_normalizer_bound(unit_shape.at(u), bound);
  const Eigen::ArrayXd elog = theta.expected_log().col(0);
  const Eigen::ArrayXd mean = theta.mean().col(0);
  const Eigen::ArrayXd ent = theta.entropy().col(0);
  double total = 0.0;
  for (Eigen::Index m = 0; m < theta.rows(); ++m) {
    const int u = obs.unit(m);
    total += (s_mean(u) - 1.0) * elog(m) - s_mean(u) * mean(m) + s_bound(u) + ent(m);
  }
  for (Eigen::Index u = 0; u < unit_shape.rows(); ++u) total += unit_shape.at(u).neg_kl(a, b);
  return total;
}

Eigen::ArrayXd autocorrelated_theta_mean(const ObservationSet& obs, const GammaArray& phi) {
  Eigen::ArrayXd out(obs.size());
  const Eigen::ArrayXd mean = phi.mean().col(0);
  for (const auto& idx : obs.by_unit()) {
    double running = 1.0;
    for (const auto m : idx) {
      running *= mean(m);
      out(m) = running;
    }
  }
  return out;
}

Eigen::ArrayXd autocorrelated_theta_expected_log(const ObservationSet& obs, const GammaArray& phi) {
  Eigen::ArrayXd out(obs.size());
  const Eigen::ArrayXd elog = phi.expected_log().col(0);
  for (const auto& idx : obs.by_unit()) {
    double running = 0.0;
    for (const auto m : idx) {
      running += elog(m);
      out(m) = running;
    }
  }
  return out;
}

GammaArray update_autocorrelated_gains(const ObservationSet& obs, const GammaArray& phi,
                                       const Eigen::ArrayXd& unit_shape_mean, const Eigen::ArrayXXd& expected_rate) {
  if (!expected_rate.allFinite()) throw NumericalError("non-finite expected rate in autocorrelated update");
  GammaArray out = phi;
  for (int u = 0; u < obs.U(); ++u) {
    const auto& idx = obs.by_unit()[u];
    const auto n = idx.size();
    if (n == 0) continue;
    const double s = unit_shape_mean(u);
    // Suffix sums built from the pre-sweep means of later innovations:
    //   counts_j = Σ_{τ≥j} N_τ,  rate_j = Σ_{τ≥j} E[Λ_τ] Π_{j<τ'≤τ} E[φ_τ'].
    std::vector<double> suffix_counts(n + 1, 0.0);
    std::vector<double> suffix_rate(n + 1, 0.0);
    for (std::size_t j = n; j-- > 0;) {
      const auto m = idx[j];
      const double next_mean = j + 1 < n ? phi.shape(idx[j + 1]) / phi.rate(idx[j + 1]) : 0.0;
      suffix_counts[j] = suffix_counts[j + 1] + obs.count(m);
      suffix_rate[j] = expected_rate(obs.time(m), u) + next_mean * suffix_rate[j + 1];
    }
    double prefix = 1.0;  // Π_{τ'<j} E[φ_τ'] using already-updated factors
    for (std::size_t j = 0; j < n; ++j) {
      const auto m = idx[j];
      out.shape(m) = s + suffix_counts[j];
      out.rate(m) = s + prefix * suffix_rate[j];
      prefix *= out.shape(m) / out.rate(m);
    }
  }
  check(out, "autocorrelated gain");
  return out;
}

}  // namespace stimfeat
