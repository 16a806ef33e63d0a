#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "survpfn/dataset.hpp"
#include "survpfn/matrix.hpp"
#include "survpfn/rng.hpp"
#include "survpfn/tabular.hpp"

namespace survpfn {

/// Prior families. `kitchen_sink` only appears in configs: a sampled DgpSpec
/// always carries the concrete child family. `exponential` is a small
/// single-covariate proportional-hazards prior used for sanity training.
enum class PriorFamily { naive, survival_distribution, mixture, kitchen_sink, exponential };
enum class CensoringKind { uniform, random, administrative, conditional_independent };
enum class MixtureComponent { weibull, lognormal };

const char* to_string(PriorFamily f) noexcept;
const char* to_string(CensoringKind c) noexcept;
const char* to_string(MixtureComponent m) noexcept;
PriorFamily prior_family_from_string(const std::string& s);
CensoringKind censoring_from_string(const std::string& s);

double softplus(double x) noexcept;

// ---------------------------------------------------------------------------
// Bernstein maps

/// Monotone Bernstein polynomial on [0,1] with control points b_0=0 <= ... <= b_K=1
/// built from softmax-normalized increments of the coefficients.
class BernsteinMap {
 public:
  explicit BernsteinMap(std::span<const double> coefficients);

  [[nodiscard]] std::size_t knots() const noexcept { return increments_.size(); }
  [[nodiscard]] std::span<const double> increments() const noexcept { return increments_; }
  [[nodiscard]] std::span<const double> control_points() const noexcept { return control_; }

 private:
  std::vector<double> increments_;
  std::vector<double> control_;
};

/// f(u) = sum_j b_j C(K,j) u^j (1-u)^(K-j). Throws for u outside [0,1].
double bernstein_eval(const BernsteinMap& map, double u);

/// tau = t_max * f(u) for a given uniform draw.
double survdist_time_at(const BernsteinMap& map, double t_max, double u);
double sample_survdist_time(const BernsteinMap& map, double t_max, Rng& rng);

// ---------------------------------------------------------------------------
// Weibull / lognormal mixtures

/// One row's hidden mixture values (a_j, b_j, r_j), j = 1..K.
struct MixtureParams {
  MixtureComponent component = MixtureComponent::weibull;
  std::vector<double> a, b, r;

  /// Reads (a_1, b_1, r_1, ..., a_K, b_K, r_K).
  static MixtureParams from_hidden(MixtureComponent component, std::span<const double> hidden);

  [[nodiscard]] std::size_t size() const noexcept { return r.size(); }
  /// Softmax of r.
  [[nodiscard]] std::vector<double> weights() const;
  /// Weibull: shape softplus(a)+0.1, scale softplus(b)+0.1.
  /// Lognormal: mu softplus(a), sigma softplus(b).
  [[nodiscard]] double first_param(std::size_t j) const;
  [[nodiscard]] double second_param(std::size_t j) const;
};

/// Time from component `j` given a uniform draw (Weibull) or a standard normal
/// draw (lognormal).
double mixture_component_time(const MixtureParams& p, std::size_t j, double draw);
double sample_mixture_time(const MixtureParams& p, Rng& rng);

// ---------------------------------------------------------------------------
// DGP specs

struct PriorConfig {
  PriorFamily family = PriorFamily::kitchen_sink;
  /// Child weights (naive, survival_distribution, mixture) for kitchen_sink.
  std::array<double, 3> kitchen_sink_weights{0.4, 0.4, 0.2};
  /// Weights (uniform, random, administrative, conditional_independent).
  std::array<double, 4> censoring_weights{1.0, 1.0, 1.0, 1.0};
  std::size_t min_dim = 1;
  std::size_t max_dim = 20;
  double min_t_max = 1.0;  // log-uniform
  double max_t_max = 100.0;
  double min_rate = 0.02;
  double max_rate = 0.98;
  std::size_t min_knots = 4;
  std::size_t max_knots = 16;
  std::vector<std::size_t> mixture_counts{2, 3, 5};
  /// Rows generated to calibrate the censoring scale; 0 calibrates on the task itself.
  std::size_t calibration_rows = 512;
  GeneratorRanges generator{};

  void validate() const;

  /// One standard-normal covariate, exponential events with a random log-hazard
  /// slope, uniform censoring.
  static PriorConfig simple_exponential();
};

/// One draw theta from the prior: everything needed to simulate a task.
struct DgpSpec {
  std::uint64_t seed = 0;
  PriorFamily family = PriorFamily::naive;
  bool from_kitchen_sink = false;
  std::size_t dim = 1;
  MlpSpec covariate_mlp;
  MlpSpec event_mlp;
  MlpSpec censor_mlp;
  CensoringKind censoring = CensoringKind::uniform;
  double target_censoring_rate = 0.3;
  double t_max = 10.0;
  std::size_t event_knots = 0;
  std::size_t censor_knots = 0;
  MixtureComponent mixture_component = MixtureComponent::weibull;
  std::size_t mixture_count = 0;
  /// Administrative end time; derived from the event times when unset.
  std::optional<double> admin_end;
  // exponential family
  double exp_base_rate = 1.0;
  double exp_event_coef = 0.0;
  double exp_censor_coef = 0.0;
  std::size_t calibration_rows = 512;

  /// Hidden width the family needs per row from a table generator.
  [[nodiscard]] std::size_t hidden_width(bool censor_branch) const noexcept;
};

DgpSpec sample_dgp(RngStream rng, const PriorConfig& cfg);

/// Latent event times for the rows of X (standardized covariates).
std::vector<double> sample_event_times(const DgpSpec& spec, const Matrix& X, RngStream rng);

/// Unscaled censoring times. Only reads `rng` and, for the uniform and
/// administrative mechanisms, the event-time range.
std::vector<double> apply_censoring(const DgpSpec& spec, const Matrix& X,
                                    std::span<const double> event_times, RngStream rng);

/// C_i = a* - A_i. Throws when a* <= 0.
std::vector<double> administrative_censoring(double admin_end, std::span<const double> entry_times);

struct CalibrationResult {
  double scale = 1.0;
  double achieved_rate = 0.0;
  double residual = 0.0;  // |achieved - target|
  bool clamped = false;
  bool monotone = true;
};

/// Empirical censoring rate of (E, s*C): fraction of rows with s*C_i < E_i.
double censoring_rate_at(std::span<const double> event_times,
                         std::span<const double> censor_times, double scale) noexcept;

/// Finds s in [2^-20, 2^20] by bisection on log2(s) so that the censoring rate of
/// (E, s*C) matches `target` within `tolerance`.
CalibrationResult calibrate_scale(std::span<const double> event_times,
                                  std::span<const double> censor_times, double target,
                                  double tolerance = 0.02);

/// Draws an n_probe-row probe from `spec` and calibrates the censoring scale on it.
CalibrationResult calibrate_censoring_rate(const DgpSpec& spec, double target, RngStream rng,
                                           std::size_t n_probe);

struct TaskSummary {
  PriorFamily family = PriorFamily::naive;
  bool from_kitchen_sink = false;
  CensoringKind censoring = CensoringKind::uniform;
  std::size_t dim = 0;
  double target_censoring_rate = 0.0;
  double censor_scale = 1.0;
  double t_max = 0.0;
  std::uint64_t seed = 0;
};

/// One synthetic task: observed context plus queries with latent times.
/// Latent (e, c) are also kept for the context rows; they feed prior
/// diagnostics and are never given to the model.
struct TaskSample {
  SurvivalDataset context;
  std::vector<double> context_event_latent;
  std::vector<double> context_censor_latent;
  Matrix query_x;
  std::vector<double> query_event;
  std::vector<double> query_censor;
  TaskSummary summary;

  [[nodiscard]] std::size_t n_context() const noexcept { return context.size(); }
  [[nodiscard]] std::size_t n_query() const noexcept { return query_x.rows(); }
};

TaskSample sample_task(const DgpSpec& spec, std::size_t n_ctx, std::size_t n_q, RngStream rng);

/// Convenience: sample_dgp then sample_task, both keyed off `rng`.
TaskSample sample_prior_task(const PriorConfig& cfg, std::size_t n_ctx, std::size_t n_q,
                             RngStream rng);

}  // namespace survpfn
