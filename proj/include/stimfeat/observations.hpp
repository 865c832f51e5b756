#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace stimfeat {

/// One presentation of stimulus time `t` to unit `u` with `n` events.
struct CountRecord {
  int t = 0;
  int u = 0;
  std::int64_t n = 0;
};

/// Explicit dimensions; when absent they are inferred from the records.
struct Dims {
  int T = 0;
  int U = 0;
};

/// Validated event-count data plus the per-cell views the updates consume.
///
/// Records keep their input order; for each unit that order is taken as the
/// experiment clock (used only by the autocorrelated-noise model).
class ObservationSet {
 public:
  ObservationSet() = default;

  int T() const { return T_; }
  int U() const { return U_; }
  int R() const { return static_cast<int>(covariates_.cols()); }
  Eigen::Index size() const { return time_.size(); }

  const Eigen::ArrayXi& time() const { return time_; }
  const Eigen::ArrayXi& unit() const { return unit_; }
  const Eigen::ArrayXd& count() const { return count_; }
  int time(Eigen::Index m) const { return time_(m); }
  int unit(Eigen::Index m) const { return unit_(m); }
  double count(Eigen::Index m) const { return count_(m); }

  /// T x R covariate table (x_tr).
  const Eigen::MatrixXd& covariates() const { return covariates_; }
  /// T x U summed counts N_tu.
  const Eigen::ArrayXXd& cell_counts() const { return cell_counts_; }
  /// T x U presentation counts M_tu.
  const Eigen::ArrayXXd& presentations() const { return presentations_; }
  /// Observation indices per unit, in record order.
  const std::vector<std::vector<Eigen::Index>>& by_unit() const { return by_unit_; }
  /// Observation indices per stimulus time, in record order.
  const std::vector<std::vector<Eigen::Index>>& by_time() const { return by_time_; }

  /// Number of observations of each unit.
  Eigen::ArrayXd unit_observation_counts() const;

  friend ObservationSet build_observation_set(const std::vector<CountRecord>&, const Eigen::MatrixXd&,
                                              std::optional<Dims>);

 private:
  int T_ = 0;
  int U_ = 0;
  Eigen::ArrayXi time_;
  Eigen::ArrayXi unit_;
  Eigen::ArrayXd count_;
  Eigen::MatrixXd covariates_;
  Eigen::ArrayXXd cell_counts_;
  Eigen::ArrayXXd presentations_;
  std::vector<std::vector<Eigen::Index>> by_unit_;
  std::vector<std::vector<Eigen::Index>> by_time_;
};

/// Validates and indexes raw records. `covariates` is T x R (R may be 0; an
/// empty 0 x 0 table means no covariates). T comes from `dims`, else from the
/// covariate row count when non-empty, else from max(t) + 1; likewise for U.
///
/// Throws InputError naming the offending record on a bad index or count.
ObservationSet build_observation_set(const std::vector<CountRecord>& records,
                                     const Eigen::MatrixXd& covariates = Eigen::MatrixXd(),
                                     std::optional<Dims> dims = std::nullopt);

}  // namespace stimfeat
