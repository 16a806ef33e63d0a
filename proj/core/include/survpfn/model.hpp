#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "survpfn/matrix.hpp"
#include "survpfn/timewarp.hpp"

namespace survpfn {

/// Transformer hyperparameters. Defaults are the desk-scale configuration;
/// width 384 / 20 layers / 1024 bins is reachable but slow on a CPU.
struct ModelConfig {
  std::size_t d_max = 20;
  std::size_t width = 64;
  std::size_t layers = 3;
  std::size_t heads = 2;
  std::size_t bins = 64;
  std::size_t ffn = 128;
  std::uint64_t seed = 0;
  /// Parallel attention + SwiGLU blocks with RMS query-key normalization,
  /// instead of sequential pre-norm blocks with a GELU MLP.
  bool parallel_swiglu = false;
  /// Initialize the output head to zero so every histogram starts uniform.
  bool zero_head = true;

  void validate() const;
  [[nodiscard]] std::size_t head_dim() const noexcept { return width / heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class TokenRole : std::uint8_t { context, query };

/// Embedded tokens for one task: context rows first, then queries.
struct TokenBatch {
  Matrix tokens;                // N x width, at the parameters used to embed
  std::size_t n_context = 0;
  std::size_t n_query = 0;
  std::vector<TokenRole> roles;
  // Raw token inputs, kept for the embedding gradient.
  Matrix features;                // N x d_max, padded and scaled covariates
  std::vector<double> time;       // normalized model-space time (0 for queries)
  std::vector<double> indicator;  // delta for context rows, query indicator otherwise

  [[nodiscard]] std::size_t size() const noexcept { return roles.size(); }
};

/// Probabilities over L transformed-time bins for one query.
struct HistogramPrediction {
  std::vector<double> probs;
  std::vector<double> log_probs;

  [[nodiscard]] std::size_t bins() const noexcept { return probs.size(); }
};

/// Flat parameter view with a matching gradient vector.
struct GradientBundle {
  std::span<const double> parameters;
  std::vector<double> gradient;

  [[nodiscard]] std::size_t parameter_count() const noexcept { return gradient.size(); }
};

/// Context rows already mapped to model-space time.
struct ContextInput {
  const Matrix& x;
  std::span<const double> z;
  std::span<const int> event;
};

struct QueryInput {
  const Matrix& x;
  std::span<const int> indicator;
};

class PfnModel {
 public:
  explicit PfnModel(ModelConfig cfg);
  PfnModel(ModelConfig cfg, std::vector<double> parameters);

  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] std::span<const double> parameters() const noexcept { return params_; }
  [[nodiscard]] std::span<double> parameters() noexcept { return params_; }
  [[nodiscard]] std::size_t parameter_count() const noexcept { return params_.size(); }
  /// Parameter count implied by a configuration.
  static std::size_t parameter_count(const ModelConfig& cfg);

  /// Linear token embeddings summed per token; no positional information.
  /// Model-space times are clamped to the binner range and rescaled to [-1, 1].
  /// With `canonical_order`, context rows are first sorted lexicographically by
  /// (x, z, event) so the result does not depend on the input row order.
  [[nodiscard]] TokenBatch embed_tokens(const ContextInput& context, const QueryInput& queries,
                                        const Binner& binner, bool canonical_order = false) const;

  /// One histogram per query token. Tokens are re-embedded from the raw inputs
  /// with the current parameters. Context tokens attend to all context
  /// tokens; query tokens attend to context tokens only.
  [[nodiscard]] std::vector<HistogramPrediction> forward(const TokenBatch& batch) const;

  /// Mean over queries of -sum_l target_l * log q_l, times `scale`.
  /// Adds scale * d(mean loss)/d(params) into `grad` (length parameter_count()).
  double loss_and_gradient(const TokenBatch& batch, std::span<const std::vector<double>> targets,
                           std::span<double> grad, double scale = 1.0) const;

  /// Loss without gradient, evaluated by the same forward pass.
  [[nodiscard]] double loss(const TokenBatch& batch,
                            std::span<const std::vector<double>> targets) const;

  struct Layout;

 private:
  ModelConfig cfg_;
  std::vector<double> params_;
};

/// Exact gradient of the mean per-query loss for `targets` (one dense target
/// distribution per query).
GradientBundle backward(const PfnModel& model, const TokenBatch& batch,
                        std::span<const std::vector<double>> targets);

// ---------------------------------------------------------------------------
// Losses and targets

/// One-hot target for a 1-based bin.
std::vector<double> one_hot_target(std::size_t bins, std::size_t bin);

/// Gaussian-smoothed target: mass of N(g(r), sigma^2) over each bin, with the
/// tails folded into the end bins and the result renormalized to sum 1.
std::vector<double> smoothed_target(double r, double sigma, const TimeTransform& transform,
                                    const Binner& binner);

/// -log q_l. `bin` is 1-based.
double nll_loss(const HistogramPrediction& pred, std::size_t bin);

double sce_loss(const HistogramPrediction& pred, double r, double sigma,
                const TimeTransform& transform, const Binner& binner);

/// -sum_l target_l log q_l.
double cross_entropy(const HistogramPrediction& pred, std::span<const double> target);

/// Tail sum S(tau_k) = sum_{l > k} q_l for k in 0..L. S(tau_0) = 1 and S(tau_L) = 0
/// exactly.
double ppsd(const HistogramPrediction& pred, std::size_t k);

/// All tail sums S(tau_0..tau_L), length L + 1, nonincreasing.
std::vector<double> ppsd_curve(const HistogramPrediction& pred);

/// Survival curves for each query on grid `grid`. Fits the transform and binner
/// on the context times only, runs the model with query indicator 1 and
/// evaluates each tail-sum step curve right-continuously: S(t) = S(tau_k) with
/// k = #{l : tau_l <= t}.
Matrix predict_survival(const PfnModel& model, TransformKind kind, const Matrix& context_x,
                        std::span<const double> context_time, std::span<const int> context_event,
                        const Matrix& query_x, std::span<const double> grid,
                        bool canonical_order = false);

/// Evaluates the step curve from tail sums at raw time t.
double step_survival(std::span<const double> tail, std::span<const double> upper_times, double t);

}  // namespace survpfn
