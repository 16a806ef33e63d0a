#include "survpfn/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>

#include "json.hpp"
#include "survpfn/bench.hpp"
#include "survpfn/errors.hpp"
#include "survpfn/metrics.hpp"

namespace survpfn {

const char* to_string(LossKind k) noexcept { return k == LossKind::nll ? "nll" : "sce"; }

const char* to_string(QuerySchedule s) noexcept {
  switch (s) {
    case QuerySchedule::event_only: return "event_only";
    case QuerySchedule::both: return "both";
    case QuerySchedule::random: return "random";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "nll") return LossKind::nll;
  if (s == "sce") return LossKind::sce;
  throw ConfigError("unknown loss kind: " + s);
}

QuerySchedule schedule_from_string(const std::string& s) {
  if (s == "event_only") return QuerySchedule::event_only;
  if (s == "both") return QuerySchedule::both;
  if (s == "random") return QuerySchedule::random;
  throw ConfigError("unknown query schedule: " + s);
}

void TrainConfig::validate() const {
  if (tasks_per_step == 0 || queries_per_task == 0)
    throw ConfigError("train: tasks_per_step and queries_per_task must be >= 1");
  if (min_context < 4 || max_context > 2048 || min_context > max_context)
    throw ConfigError("train: context range must lie within [4, 2048]");
  if (!(learning_rate > 0.0) || !(weight_decay >= 0.0))
    throw ConfigError("train: learning_rate must be > 0 and weight_decay >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
    throw ConfigError("train: invalid Adam constants");
  if (loss == LossKind::sce && !(sce_sigma > 0.0)) throw ConfigError("train: sce_sigma must be > 0");
  if (checkpoint_every == 0) throw ConfigError("train: checkpoint_every must be >= 1");
  if (workers == 0) throw ConfigError("train: workers must be >= 1");
  try {
    model.validate();
    prior.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (prior.max_dim > model.d_max) throw ConfigError("train: prior max_dim exceeds model d_max");
}

std::vector<QueryTarget> make_query_targets(QuerySchedule schedule, const TaskSample& task, Rng& rng) {
  if (task.n_query() == 0) throw std::invalid_argument("make_query_targets: task has no queries");
  std::vector<QueryTarget> out;
  double event_rate = 1.0;
  if (schedule == QuerySchedule::random && task.n_context() > 0)
    event_rate = 1.0 - task.context.censoring_rate();
  for (std::size_t q = 0; q < task.n_query(); ++q) {
    switch (schedule) {
      case QuerySchedule::event_only:
        out.push_back({q, 1, task.query_event[q]});
        break;
      case QuerySchedule::both:
        out.push_back({q, 0, task.query_censor[q]});
        out.push_back({q, 1, task.query_event[q]});
        break;
      case QuerySchedule::random: {
        const int ind = rng.bernoulli(event_rate) ? 1 : 0;
        out.push_back({q, ind, ind ? task.query_event[q] : task.query_censor[q]});
        break;
      }
    }
  }
  return out;
}

TimeTransform fit_context_transform(TransformKind kind, const SurvivalDataset& context) {
  require_fit_side(context, "time transform");
  return TimeTransform::fit(kind, context.time);
}

PreparedTask prepare_task(const PfnModel& model, const TaskSample& task, const TrainConfig& cfg, Rng& rng) {
  PreparedTask p;
  p.targets = make_query_targets(cfg.schedule, task, rng);
  p.transform = fit_context_transform(cfg.transform, task.context);
  const Binner binner = make_binner(p.transform, model.config().bins);

  const auto& ctx = task.context;
  std::vector<double> z(ctx.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = p.transform.forward(ctx.time[i]);

  Matrix qx(p.targets.size(), task.query_x.cols());
  std::vector<int> indicator;
  for (std::size_t k = 0; k < p.targets.size(); ++k) {
    const auto& t = p.targets[k];
    auto src = task.query_x.row(t.query);
    std::copy(src.begin(), src.end(), qx.row(k).begin());
    indicator.push_back(t.indicator);
    if (cfg.loss == LossKind::nll)
      p.target_dists.push_back(one_hot_target(binner.bins(), bin_index(binner, p.transform, t.time)));
    else
      p.target_dists.push_back(smoothed_target(t.time, cfg.sce_sigma, p.transform, binner));
  }
  p.batch = model.embed_tokens({ctx.x, z, ctx.event}, {qx, indicator}, binner, cfg.deterministic);
  return p;
}

void adamw_update(std::span<double> params, std::span<const double> grad, AdamState& s,
                  const TrainConfig& cfg) {
  if (s.m.size() != params.size()) s.m.assign(params.size(), 0.0);
  if (s.v.size() != params.size()) s.v.assign(params.size(), 0.0);
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * grad[i];
    s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = s.m[i] / c1, vhat = s.v[i] / c2;
    params[i] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * params[i]);
  }
}

RngStream task_stream(const TrainConfig& cfg, std::uint64_t step, std::size_t task) {
  return RngStream{cfg.seed, fnv1a64("train")}.child(step).child(task);
}

StepResult step_gradient(const PfnModel& model, const TrainConfig& cfg, std::uint64_t step,
                         std::vector<double>& grad) {
  const std::size_t B = cfg.tasks_per_step, P = model.parameter_count();
  std::vector<std::vector<double>> grads(B);
  std::vector<double> losses(B, 0.0);
  std::vector<std::size_t> counts(B, 0);
  std::vector<std::uint64_t> seeds(B, 0);
  std::vector<std::exception_ptr> errors(B);

  auto run = [&](std::size_t b) {
    try {
      const RngStream s = task_stream(cfg, step, b);
      Rng size_rng(s.child("context_size"));
      const auto n_ctx = static_cast<std::size_t>(size_rng.uniform_int(
          static_cast<std::int64_t>(cfg.min_context), static_cast<std::int64_t>(cfg.max_context)));
      const TaskSample task = sample_prior_task(cfg.prior, n_ctx, cfg.queries_per_task, s);
      seeds[b] = task.summary.seed;
      Rng target_rng(s.child("targets"));
      const PreparedTask p = prepare_task(model, task, cfg, target_rng);
      grads[b].assign(P, 0.0);
      losses[b] = model.loss_and_gradient(p.batch, p.target_dists, grads[b]);
      counts[b] = p.targets.size();
    } catch (...) {
      errors[b] = std::current_exception();
    }
  };

  const std::size_t W = std::min(cfg.workers, B);
  if (W <= 1) {
    for (std::size_t b = 0; b < B; ++b) run(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < W; ++w)
      pool.emplace_back([&] {
        for (std::size_t b = next++; b < B; b = next++) run(b);
      });
    for (auto& th : pool) th.join();
  }

  StepResult out;
  for (std::size_t b = 0; b < B; ++b) {
    if (errors[b]) std::rethrow_exception(errors[b]);
    out.targets += counts[b];
  }
  grad.assign(P, 0.0);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double w = static_cast<double>(counts[b]) / static_cast<double>(out.targets);
    bool finite = std::isfinite(losses[b]);
    for (std::size_t i = 0; i < P && finite; ++i) finite = std::isfinite(grads[b][i]);
    if (!finite)
      throw NumericError("non-finite loss at step " + std::to_string(step) + ", task " + std::to_string(b) +
                         " (dgp seed " + std::to_string(seeds[b]) + ")");
    loss += w * losses[b];
    for (std::size_t i = 0; i < P; ++i) grad[i] += w * grads[b][i];
  }
  out.loss = loss;
  return out;
}

StepResult train_step(PfnModel& model, AdamState& state, const TrainConfig& cfg, std::uint64_t step) {
  std::vector<double> grad;
  const StepResult r = step_gradient(model, cfg, step, grad);
  adamw_update(model.parameters(), grad, state, cfg);
  return r;
}

double weighted_ibs(std::span<const std::size_t> sizes, std::span<const double> ibs) {
  if (sizes.size() != ibs.size() || sizes.empty())
    throw std::invalid_argument("weighted_ibs: need one IBS per dataset");
  double num = 0.0, den = 0.0;
  for (std::size_t d = 0; d < sizes.size(); ++d) {
    if (!std::isfinite(ibs[d])) return std::numeric_limits<double>::infinity();
    const double w = std::sqrt(static_cast<double>(sizes[d]));
    num += w * ibs[d];
    den += w;
  }
  return num / den;
}

double validation_ibs(const PfnModel& model, TransformKind kind, const ValidationSplit& split,
                      bool canonical) {
  const auto& tr = split.train;
  const auto& te = split.test;
  const auto grid = continuous_grid(tr);
  const Matrix surv = predict_survival(model, kind, tr.x, tr.time, tr.event, te.x, grid, canonical);
  const KmEstimate ckm = censoring_km(tr.time, tr.event);
  return integrated_brier(surv, grid, te.time, te.event, ckm, default_horizon(tr.time)).value;
}

Selection select_checkpoint(std::span<const Checkpoint> checkpoints,
                            std::span<const ValidationSplit> validation) {
  if (checkpoints.empty() || validation.empty())
    throw std::invalid_argument("select_checkpoint: need >= 1 checkpoint and >= 1 dataset");
  Selection sel;
  std::vector<std::size_t> sizes;
  for (const auto& v : validation) sizes.push_back(v.train.size() + v.test.size());
  for (const auto& ck : checkpoints) {
    double score = std::numeric_limits<double>::infinity();
    try {
      const PfnModel model = ck.model();
      std::vector<double> ibs;
      for (const auto& v : validation) ibs.push_back(validation_ibs(model, ck.transform, v));
      score = weighted_ibs(sizes, ibs);
    } catch (const std::exception&) {
    }
    sel.scores.push_back(score);
  }
  for (std::size_t i = 1; i < sel.scores.size(); ++i)
    if (sel.scores[i] < sel.scores[sel.index]) sel.index = i;
  return sel;
}

TrainOutcome train(const TrainConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  PfnModel model = opt.resume ? opt.resume->model() : PfnModel(cfg.model);
  if (model.config() != cfg.model) throw ConfigError("train: resume checkpoint has a different model config");
  AdamState state;
  std::uint64_t start = 0;
  if (opt.resume) {
    start = opt.resume->step;
    if (opt.resume->optimizer) state = *opt.resume->optimizer;
  }

  namespace fs = std::filesystem;
  std::ofstream log;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    log.open(fs::path(opt.out_dir) / "train_log.jsonl",
             opt.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot write training log in " + opt.out_dir);
  }

  TrainOutcome out;
  std::vector<std::string> recent;
  auto snapshot = [&](std::uint64_t steps_done) {
    return Checkpoint{cfg.model, {model.parameters().begin(), model.parameters().end()},
                      cfg.transform, steps_done, cfg.seed, state};
  };

  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t step = start; step < cfg.steps; ++step) {
    const StepResult r = train_step(model, state, cfg, step);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const TrainLogEntry entry{step, r.loss, wall, cfg.seed};
    out.log.push_back(entry);
    if (log) {
      nlohmann::ordered_json j{{"step", step}, {"loss", r.loss}};
      // Wall time is the only nondeterministic field; omitted in deterministic mode.
      j["wall_seconds"] = cfg.deterministic ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(wall);
      j["seed"] = cfg.seed;
      log << j.dump() << '\n' << std::flush;
    }
    if (opt.on_step) opt.on_step(entry);

    const bool last = step + 1 == cfg.steps;
    if ((step + 1) % cfg.checkpoint_every != 0 && !last) continue;
    Checkpoint ck = snapshot(step + 1);
    if (!opt.validation.empty()) {
      const Checkpoint one[] = {ck};
      const double score = select_checkpoint(one, opt.validation).scores[0];
      if (!out.best_score || score < *out.best_score) {
        out.best_score = score;
        out.best = ck;
        if (!opt.out_dir.empty()) save_checkpoint((fs::path(opt.out_dir) / "best.spfn").string(), ck);
      }
    }
    if (!opt.out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%08llu.spfn", static_cast<unsigned long long>(step + 1));
      const std::string path = (fs::path(opt.out_dir) / name).string();
      save_checkpoint(path, ck);
      recent.push_back(path);
      while (recent.size() > cfg.keep_last) {
        fs::remove(recent.front());
        recent.erase(recent.begin());
      }
    }
  }
  out.checkpoint_files = recent;
  out.last = snapshot(std::max<std::uint64_t>(cfg.steps, start));
  if (!opt.out_dir.empty()) save_checkpoint((fs::path(opt.out_dir) / "last.spfn").string(), out.last);
  return out;
}

}  // namespace survpfn
