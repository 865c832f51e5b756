#include "stimfeat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "stimfeat/error.hpp"

namespace stimfeat {

double binary_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

double normalized_mutual_info(const Eigen::VectorXd& xi, const Eigen::VectorXi& z_true) {
  if (xi.size() != z_true.size()) {
    throw InputError("length mismatch: inferred " + std::to_string(xi.size()) + ", true " +
                     std::to_string(z_true.size()));
  }
  if (xi.size() == 0) return 0.0;
  Eigen::Matrix2d joint = Eigen::Matrix2d::Zero();
  for (Eigen::Index t = 0; t < xi.size(); ++t) {
    const int i = z_true(t) != 0 ? 1 : 0;
    joint(i, 1) += xi(t);
    joint(i, 0) += 1.0 - xi(t);
  }
  joint /= static_cast<double>(xi.size());
  const Eigen::Vector2d px = joint.rowwise().sum();
  const Eigen::RowVector2d py = joint.colwise().sum();
  const double hx = binary_entropy(px(1));
  const double hy = binary_entropy(py(1));
  if (hx <= 0.0 || hy <= 0.0) return 0.0;
  double mi = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      if (joint(i, j) > 0.0) mi += joint(i, j) * std::log(joint(i, j) / (px(i) * py(j)));
    }
  }
  return std::clamp(mi / std::sqrt(hx * hy), 0.0, 1.0);
}

Eigen::MatrixXd nmi_matrix(const Eigen::MatrixXd& xi, const Eigen::MatrixXi& z_true) {
  Eigen::MatrixXd out(z_true.cols(), xi.cols());
  for (Eigen::Index i = 0; i < z_true.cols(); ++i) {
    for (Eigen::Index j = 0; j < xi.cols(); ++j) out(i, j) = normalized_mutual_info(xi.col(j), z_true.col(i));
  }
  return out;
}

std::vector<int> match_features(const Eigen::MatrixXd& score) {
  const int rows = static_cast<int>(score.rows());
  const int cols = static_cast<int>(score.cols());
  std::vector<int> out(static_cast<std::size_t>(rows), -1);
  if (rows == 0 || cols == 0) return out;
  // Hungarian method (potentials form) on a square cost matrix, padding with zeros.
  const int n = std::max(rows, cols);
  const double top = score.maxCoeff();
  auto cost = [&](int i, int j) { return (i < rows && j < cols) ? top - score(i, j) : top; };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (int j = 1; j <= n; ++j) {
    const int i = p[j] - 1;
    if (i < rows && j - 1 < cols) out[static_cast<std::size_t>(i)] = j - 1;
  }
  return out;
}

NmiReport nmi_report(const Eigen::MatrixXd& xi, const Eigen::MatrixXi& z_true) {
  NmiReport r;
  r.nmi = nmi_matrix(xi, z_true);
  r.assignment = match_features(r.nmi);
  r.matched.assign(static_cast<std::size_t>(xi.cols()), false);
  for (std::size_t i = 0; i < r.assignment.size(); ++i) {
    const int j = r.assignment[i];
    if (j < 0) continue;
    r.matched[static_cast<std::size_t>(j)] = true;
    r.total += r.nmi(static_cast<Eigen::Index>(i), j);
  }
  r.true_entropy.resize(z_true.cols());
  for (Eigen::Index i = 0; i < z_true.cols(); ++i) r.true_entropy(i) = binary_entropy(z_true.col(i).cast<double>().mean());
  r.inferred_entropy.resize(xi.cols());
  for (Eigen::Index j = 0; j < xi.cols(); ++j) r.inferred_entropy(j) = binary_entropy(xi.col(j).mean());
  return r;
}

double population_gain_mean(const HyperPosterior& hyper) { return hyper.d.rate / hyper.d.shape; }

bool is_unused_feature(const HyperPosterior& hyper, const Eigen::VectorXd& xi, const UnusedRule& rule) {
  const double g = population_gain_mean(hyper);
  if (g < rule.gain_low || g > rule.gain_high) return false;
  double h = 0.0;
  for (Eigen::Index t = 0; t < xi.size(); ++t) h += binary_entropy(xi(t));
  return xi.size() > 0 && h / static_cast<double>(xi.size()) > rule.min_entropy;
}

RateSummary predicted_rate(const VariationalState& state, const Eigen::MatrixXd& covariates, int t, int u,
                           int n_draws, std::uint64_t seed, const std::vector<int>& exclude) {
  if (n_draws < 1) throw ConfigError("n_draws must be positive");
  RateSummary out;
  out.few_draws = n_draws < 100;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto gamma = [&](double shape, double rate) { return std::gamma_distribution<double>(shape, 1.0 / rate)(rng); };
  const GammaArray cov = state.covariate_gain();
  std::vector<double> draws(static_cast<std::size_t>(n_draws));
  for (auto& d : draws) {
    double rate = gamma(state.baseline.shape(u), state.baseline.rate(u));
    for (int k = 0; k < state.K(); ++k) {
      const double gain = gamma(state.gain.shape(u, k), state.gain.rate(u, k));
      const bool on = unif(rng) < state.chains[static_cast<std::size_t>(k)].xi(t);
      if (on && std::find(exclude.begin(), exclude.end(), k) == exclude.end()) rate *= gain;
    }
    for (Eigen::Index r = 0; r < cov.cols(); ++r) {
      const double x = covariates(t, r);
      const double gain = gamma(cov.shape(u, r), cov.rate(u, r));
      if (x != 0.0) rate *= std::pow(gain, x);
    }
    d = rate;
  }
  double sum = 0.0;
  for (double d : draws) sum += d;
  out.mean = sum / n_draws;
  std::sort(draws.begin(), draws.end());
  auto quantile = [&](double q) {
    const double pos = q * (n_draws - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, draws.size() - 1);
    return draws[lo] + (pos - static_cast<double>(lo)) * (draws[hi] - draws[lo]);
  };
  out.lower = quantile(0.025);
  out.upper = quantile(0.975);
  return out;
}

}  // namespace stimfeat
