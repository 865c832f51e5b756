#pragma once

// Exact smoothing for a single latent chain with S states.
//
// forward_backward: first-order Markov chain, scaled recursions.
// hsmm_forward_backward: explicit-duration (semi-Markov) chain in log space.
// Both take log-potentials, which need not be normalized; logZ is the log of
// the sum over all paths of exp(total potential).

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "stimfeat/error.hpp"

namespace stimfeat {

template <int S>
using StateTable = Eigen::Matrix<double, Eigen::Dynamic, S>;
template <int S>
using TransitionMatrix = Eigen::Matrix<double, S, S>;
template <int S>
using StateVector = Eigen::Matrix<double, S, 1>;

template <int S>
struct ChainMarginals {
  /// T x S smoothed marginals.
  StateTable<S> xi;
  /// Two-slice marginals, T - 1 entries; Xi[t](i, j) = P(z_t = i, z_{t+1} = j).
  std::vector<TransitionMatrix<S>> Xi;
  double logZ = 0.0;
};

template <int S>
struct SegmentMarginals : ChainMarginals<S> {
  /// D x S expected number of completed dwells of length d + 1 in state j.
  StateTable<S> duration_counts;

  /// Dwell distribution conditioned on entering each state; zero columns stay zero.
  StateTable<S> duration_conditional() const {
    StateTable<S> c = duration_counts;
    for (int j = 0; j < S; ++j) {
      const double total = c.col(j).sum();
      if (total > 0.0) c.col(j) /= total;
    }
    return c;
  }
};

namespace detail {

struct LogAccumulator {
  double max = -std::numeric_limits<double>::infinity();
  double sum = 0.0;

  void add(double v) {
    if (v == -std::numeric_limits<double>::infinity()) return;
    if (v <= max) {
      sum += std::exp(v - max);
    } else {
      sum = sum * std::exp(max - v) + 1.0;
      max = v;
    }
  }
  double value() const {
    return sum > 0.0 ? max + std::log(sum) : -std::numeric_limits<double>::infinity();
  }
};

}  // namespace detail

template <int S>
ChainMarginals<S> forward_backward(const StateTable<S>& eta, const TransitionMatrix<S>& logA,
                                   const StateVector<S>& logpi) {
  const Eigen::Index T = eta.rows();
  if (T == 0) throw InputError("forward_backward: empty sequence");
  if (eta.array().isNaN().any() || logA.array().isNaN().any() || logpi.array().isNaN().any()) {
    throw NumericalError("forward_backward: NaN potential");
  }
  const TransitionMatrix<S> A = logA.array().exp().matrix();
  const StateVector<S> pi = logpi.array().exp().matrix();

  StateTable<S> e(T, S);
  Eigen::VectorXd shift(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    shift(t) = eta.row(t).maxCoeff();
    if (!std::isfinite(shift(t))) throw NumericalError("forward_backward: degenerate emission at t=" + std::to_string(t));
    e.row(t) = (eta.row(t).array() - shift(t)).exp();
  }

  StateTable<S> alpha(T, S);
  Eigen::VectorXd scale(T);
  auto normalize = [&](Eigen::Index t) {
    scale(t) = alpha.row(t).sum();
    if (!(scale(t) > 0.0) || !std::isfinite(scale(t))) {
      throw NumericalError("forward_backward: zero-probability prefix at t=" + std::to_string(t));
    }
    alpha.row(t) /= scale(t);
  };
  alpha.row(0) = pi.transpose().cwiseProduct(e.row(0));
  normalize(0);
  for (Eigen::Index t = 1; t < T; ++t) {
    alpha.row(t) = (alpha.row(t - 1) * A).cwiseProduct(e.row(t));
    normalize(t);
  }

  StateTable<S> beta(T, S);
  beta.row(T - 1).setOnes();
  for (Eigen::Index t = T - 1; t-- > 0;) {
    beta.row(t) = (A * e.row(t + 1).cwiseProduct(beta.row(t + 1)).transpose()).transpose() / scale(t + 1);
  }

  ChainMarginals<S> out;
  out.logZ = scale.array().log().sum() + shift.sum();
  out.xi = alpha.cwiseProduct(beta);
  out.Xi.resize(static_cast<std::size_t>(T - 1));
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    const StateVector<S> next = e.row(t + 1).cwiseProduct(beta.row(t + 1)).transpose() / scale(t + 1);
    out.Xi[static_cast<std::size_t>(t)] = (alpha.row(t).transpose() * next.transpose()).cwiseProduct(A);
  }
  return out;
}

/// Explicit-duration smoothing. `log_duration` is D x S (row d-1 holds the
/// dwell potential of length d). Every path is a sequence of complete dwells
/// covering 0..T-1 exactly; consecutive dwells are joined through logA.
template <int S>
SegmentMarginals<S> hsmm_forward_backward(const StateTable<S>& eta, const TransitionMatrix<S>& logA,
                                          const StateVector<S>& logpi, const StateTable<S>& log_duration) {
  const Eigen::Index T = eta.rows();
  const Eigen::Index D = log_duration.rows();
  if (D < 1) throw ConfigError("hsmm_forward_backward: maximum dwell D must be at least 1");
  if (T == 0) throw InputError("hsmm_forward_backward: empty sequence");
  if (!eta.allFinite()) throw NumericalError("hsmm_forward_backward: non-finite emission potential");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  // cum(t, j) = Σ_{s<t} eta(s, j)
  StateTable<S> cum = StateTable<S>::Zero(T + 1, S);
  for (Eigen::Index t = 0; t < T; ++t) cum.row(t + 1) = cum.row(t) + eta.row(t);

  StateTable<S> logF(T, S);  // dwell in j ends at t
  StateTable<S> logB(T, S);  // dwell in j starts at t
  logB.row(0) = logpi.transpose();
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int j = 0; j < S; ++j) {
      detail::LogAccumulator acc;
      for (Eigen::Index d = 1; d <= std::min<Eigen::Index>(D, t + 1); ++d) {
        acc.add(logB(t - d + 1, j) + log_duration(d - 1, j) + cum(t + 1, j) - cum(t + 1 - d, j));
      }
      logF(t, j) = acc.value();
    }
    if (t + 1 < T) {
      for (int j = 0; j < S; ++j) {
        detail::LogAccumulator acc;
        for (int i = 0; i < S; ++i) acc.add(logF(t, i) + logA(i, j));
        logB(t + 1, j) = acc.value();
      }
    }
  }
  detail::LogAccumulator total;
  for (int j = 0; j < S; ++j) total.add(logF(T - 1, j));
  const double logZ = total.value();
  if (!std::isfinite(logZ)) throw NumericalError("hsmm_forward_backward: no segmentation has positive weight");

  // logG(t, j): emissions t..T-1 given a dwell in j starts at t.
  // logOut(t, j): emissions t..T-1 given a dwell in j ended at t-1.
  StateTable<S> logG = StateTable<S>::Constant(T + 1, S, kNegInf);
  StateTable<S> logOut = StateTable<S>::Constant(T + 1, S, kNegInf);
  logOut.row(T).setZero();
  for (Eigen::Index t = T; t-- > 0;) {
    for (int j = 0; j < S; ++j) {
      detail::LogAccumulator acc;
      for (Eigen::Index d = 1; d <= std::min<Eigen::Index>(D, T - t); ++d) {
        acc.add(log_duration(d - 1, j) + cum(t + d, j) - cum(t, j) + logOut(t + d, j));
      }
      logG(t, j) = acc.value();
    }
    if (t > 0) {
      for (int j = 0; j < S; ++j) {
        detail::LogAccumulator acc;
        for (int k = 0; k < S; ++k) acc.add(logA(j, k) + logG(t, k));
        logOut(t, j) = acc.value();
      }
    }
  }

  SegmentMarginals<S> out;
  out.logZ = logZ;
  out.duration_counts = StateTable<S>::Zero(D, S);
  StateTable<S> diff = StateTable<S>::Zero(T + 1, S);
  for (Eigen::Index s = 0; s < T; ++s) {
    for (int j = 0; j < S; ++j) {
      if (logB(s, j) == kNegInf) continue;
      for (Eigen::Index d = 1; d <= std::min<Eigen::Index>(D, T - s); ++d) {
        const double lp = logB(s, j) + log_duration(d - 1, j) + cum(s + d, j) - cum(s, j) + logOut(s + d, j) - logZ;
        if (lp == kNegInf) continue;
        const double p = std::exp(lp);
        diff(s, j) += p;
        diff(s + d, j) -= p;
        out.duration_counts(d - 1, j) += p;
      }
    }
  }
  out.xi.resize(T, S);
  StateVector<S> running = StateVector<S>::Zero();
  for (Eigen::Index t = 0; t < T; ++t) {
    running += diff.row(t).transpose();
    out.xi.row(t) = running.cwiseMax(0.0).transpose();
  }

  out.Xi.resize(static_cast<std::size_t>(T - 1));
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    TransitionMatrix<S> boundary;
    for (int i = 0; i < S; ++i) {
      for (int j = 0; j < S; ++j) boundary(i, j) = std::exp(logF(t, i) + logA(i, j) + logG(t + 1, j) - logZ);
    }
    TransitionMatrix<S> xi2 = boundary;
    for (int j = 0; j < S; ++j) xi2(j, j) += std::max(0.0, out.xi(t, j) - boundary.row(j).sum());
    out.Xi[static_cast<std::size_t>(t)] = xi2;
  }
  return out;
}

}  // namespace stimfeat
