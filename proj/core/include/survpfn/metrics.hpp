#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "survpfn/matrix.hpp"

namespace survpfn {

/// Step survival curve on a strictly increasing grid. The value at grid point
/// g_k holds on [g_k, g_{k+1}); before the first grid time the curve is 1.
struct SurvivalCurve {
  std::vector<double> grid;
  std::vector<double> values;

  void validate() const;
  [[nodiscard]] double at(double t) const noexcept;
};

/// Right-continuous step lookup of one row of a survival matrix.
double survival_at(std::span<const double> grid, std::span<const double> values, double t) noexcept;

/// Product-limit estimate. Only times with at least one event are stored.
struct KmEstimate {
  std::vector<double> times;
  std::vector<double> at_risk;
  std::vector<double> events;
  std::vector<double> survival;

  [[nodiscard]] double at(double t) const noexcept;
};

KmEstimate km_estimate(std::span<const double> times, std::span<const int> events);
/// KM of the censoring distribution: events 1 - delta.
KmEstimate censoring_km(std::span<const double> times, std::span<const int> events);

/// Harrell's C with strict inequalities; risk ties earn no credit. Empty when
/// there is no comparable pair.
std::optional<double> concordance_index(std::span<const double> risk, std::span<const double> times,
                                        std::span<const int> events);

inline constexpr double kIpcwFloor = 0.05;

struct BrierResult {
  double value = 0.0;
  bool floored = false;  // some censoring weight hit the floor
};

/// IPCW Brier score at time u. `surv` holds one row per subject on `grid`.
BrierResult brier_score(const Matrix& surv, std::span<const double> grid,
                        std::span<const double> times, std::span<const int> events,
                        const KmEstimate& censor_km, double u, double floor = kIpcwFloor);

/// (1/tau) * trapezoid integral of BS(u) over the nodes {0} U {g in grid : 0 < g < tau} U {tau}.
BrierResult integrated_brier(const Matrix& surv, std::span<const double> grid,
                             std::span<const double> times, std::span<const int> events,
                             const KmEstimate& censor_km, double tau, double floor = kIpcwFloor);

/// 90th percentile (type 7) of training-side observed times.
double default_horizon(std::span<const double> train_times);

/// Chi-square D-calibration statistic with the censored mass spread uniformly
/// over [0, S_i]. `surv_at_time` is each subject's S(t_i | x_i).
double d_calibration(std::span<const double> surv_at_time, std::span<const int> events,
                     std::size_t n_bins = 10);
/// Per-bin masses behind the statistic.
std::vector<double> d_calibration_bins(std::span<const double> surv_at_time,
                                       std::span<const int> events, std::size_t n_bins = 10);

/// Restricted mean of a KM curve on [0, limit].
double km_restricted_mean(const KmEstimate& km, double limit);

/// Pseudo-observation MAE. Uncensored: target t_i, weight 1. Censored:
/// jackknife pseudo-value of the KM restricted mean (restricted at the largest
/// observed time), weight 1 - S_KM(t_i). Empty when all weights vanish.
std::optional<double> mae_po(std::span<const double> predicted, std::span<const double> times,
                             std::span<const int> events);

/// Two-group log-rank chi-square statistic; 0 when the pooled sample has no events.
double log_rank(std::span<const double> times_a, std::span<const int> events_a,
                std::span<const double> times_b, std::span<const int> events_b);

/// First grid time with S <= 0.5, else the last grid time.
double median_survival_time(const SurvivalCurve& curve);
double median_survival_time(std::span<const double> grid, std::span<const double> values);

struct MetricReport {
  std::optional<double> ibs;
  std::optional<double> ci;
  std::optional<double> dcal;
  std::optional<double> mae;
  std::optional<double> logrank;
  bool ipcw_floored = false;
  double horizon = 0.0;
};

/// All five metrics for predicted curves on a test split. Censoring KM and the
/// IBS horizon come from the training side.
MetricReport evaluate_predictions(const Matrix& surv, std::span<const double> grid,
                                  std::span<const double> train_times,
                                  std::span<const int> train_events,
                                  std::span<const double> test_times,
                                  std::span<const int> test_events,
                                  std::optional<double> horizon = std::nullopt);

/// JSON object with explicit nulls for undefined values.
std::string to_json(const MetricReport& report);

}  // namespace survpfn
