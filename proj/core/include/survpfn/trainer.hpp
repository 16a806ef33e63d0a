#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "survpfn/checkpoint.hpp"
#include "survpfn/dataset.hpp"
#include "survpfn/model.hpp"
#include "survpfn/prior.hpp"
#include "survpfn/rng.hpp"

namespace survpfn {

enum class LossKind { nll, sce };
enum class QuerySchedule { event_only, both, random };

const char* to_string(LossKind k) noexcept;
const char* to_string(QuerySchedule s) noexcept;
LossKind loss_kind_from_string(const std::string& s);
QuerySchedule schedule_from_string(const std::string& s);

struct TrainConfig {
  std::size_t tasks_per_step = 8;
  std::size_t queries_per_task = 16;
  std::size_t min_context = 32;
  std::size_t max_context = 256;
  std::size_t steps = 1000;
  double learning_rate = 3e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossKind loss = LossKind::nll;
  double sce_sigma = 0.1;  // model-space std of the smoothed target
  QuerySchedule schedule = QuerySchedule::event_only;
  TransformKind transform = TransformKind::lognormal2normal;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 200;
  std::size_t keep_last = 10;
  std::size_t workers = 1;
  /// Sort context rows canonically before embedding.
  bool deterministic = false;
  PriorConfig prior{};
  ModelConfig model{};

  void validate() const;
};

/// One supervised query: row `query` of the task, its indicator and raw target time.
struct QueryTarget {
  std::size_t query = 0;
  int indicator = 1;
  double time = 0.0;  // e* when indicator = 1, c* otherwise
};

/// event_only: one target per query with indicator 1. both: two targets per
/// query, indicators 0 then 1. random: indicator ~ Bernoulli(context event rate).
std::vector<QueryTarget> make_query_targets(QuerySchedule schedule, const TaskSample& task,
                                            Rng& rng);

/// A task ready for the model: the transform and binner fitted on context
/// times, the embedded tokens (queries repeated per target) and dense targets.
struct PreparedTask {
  TimeTransform transform;
  std::vector<QueryTarget> targets;
  TokenBatch batch;
  std::vector<std::vector<double>> target_dists;
};

/// Transform fitted on the observed context times of `context`. Throws
/// LeakageError for held-out data.
TimeTransform fit_context_transform(TransformKind kind, const SurvivalDataset& context);

/// Builds targets, fits the transform through fit_context_transform and embeds
/// the tokens. Query latents only enter the targets.
PreparedTask prepare_task(const PfnModel& model, const TaskSample& task, const TrainConfig& cfg,
                          Rng& rng);

/// Decoupled-weight-decay Adam update in place.
void adamw_update(std::span<double> params, std::span<const double> grad, AdamState& state,
                  const TrainConfig& cfg);

/// The stream all randomness of step `step`, task `task` comes from.
RngStream task_stream(const TrainConfig& cfg, std::uint64_t step, std::size_t task);

struct StepResult {
  double loss = 0.0;
  std::size_t targets = 0;
};

/// Loss and mean gradient over all targets of step `step`, without updating.
/// Tasks are drawn from task_stream(cfg, step, b) and may be generated on
/// `cfg.workers` threads; gradients are reduced in task order.
StepResult step_gradient(const PfnModel& model, const TrainConfig& cfg, std::uint64_t step,
                         std::vector<double>& grad);

/// One optimization step: step_gradient then adamw_update. Throws NumericError
/// naming the task seed when the loss or gradient is not finite.
StepResult train_step(PfnModel& model, AdamState& state, const TrainConfig& cfg,
                      std::uint64_t step);

/// Validation dataset for checkpoint selection, already split 70/30.
struct ValidationSplit {
  std::string name;
  SurvivalDataset train;
  SurvivalDataset test;
};

/// Sum_D sqrt(N_D) * IBS_D / Sum_D sqrt(N_D). Infinite when any IBS is.
double weighted_ibs(std::span<const std::size_t> sizes, std::span<const double> ibs);

/// IBS of `model` on one split: continuous grid and horizon from training rows.
double validation_ibs(const PfnModel& model, TransformKind kind, const ValidationSplit& split,
                      bool canonical = false);

struct Selection {
  std::size_t index = 0;
  std::vector<double> scores;
};

/// Argmin of the weighted IBS; the first index wins ties. A checkpoint that
/// throws on any dataset scores +inf.
Selection select_checkpoint(std::span<const Checkpoint> checkpoints,
                            std::span<const ValidationSplit> validation);

struct TrainLogEntry {
  std::uint64_t step = 0;
  double loss = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

struct TrainOutcome {
  Checkpoint last;
  std::optional<Checkpoint> best;
  std::optional<double> best_score;
  std::vector<TrainLogEntry> log;
  std::vector<std::string> checkpoint_files;
};

struct TrainOptions {
  /// Directory for checkpoints and train_log.jsonl; nothing is written when empty.
  std::string out_dir;
  std::vector<ValidationSplit> validation;
  std::optional<Checkpoint> resume;
  std::function<void(const TrainLogEntry&)> on_step;
};

/// Runs cfg.steps steps (continuing after resume->step when resuming).
TrainOutcome train(const TrainConfig& cfg, const TrainOptions& opt = {});

}  // namespace survpfn
