#include <benchmark/benchmark.h>

#include <vector>

#include "survpfn/diagnostics.hpp"
#include "survpfn/metrics.hpp"
#include "survpfn/model.hpp"
#include "survpfn/prior.hpp"
#include "survpfn/rng.hpp"

using namespace survpfn;

namespace {

TaskSample prior_task(std::size_t n) {
  return sample_prior_task(PriorConfig{}, n, 16, RngStream{1, n});
}

void BM_SamplePriorTask(benchmark::State& state) {
  const PriorConfig prior;
  std::uint64_t k = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(
        sample_prior_task(prior, static_cast<std::size_t>(state.range(0)), 16, RngStream{2, k++}));
}
BENCHMARK(BM_SamplePriorTask)->Arg(256)->Arg(1024);

struct ModelCase {
  PfnModel model;
  TokenBatch batch;
  std::vector<std::vector<double>> targets;
};

ModelCase model_case(std::size_t n_ctx) {
  ModelConfig cfg;
  cfg.zero_head = false;
  PfnModel model(cfg);
  const TaskSample t = prior_task(n_ctx);
  const auto tw = TimeTransform::fit(TransformKind::lognormal2normal, t.context.time);
  const auto binner = make_binner(tw, cfg.bins);
  std::vector<double> z;
  for (double v : t.context.time) z.push_back(tw.forward(v));
  std::vector<int> ind(t.n_query(), 1);
  TokenBatch batch = model.embed_tokens({t.context.x, z, t.context.event}, {t.query_x, ind}, binner);
  std::vector<std::vector<double>> targets(t.n_query(), one_hot_target(cfg.bins, cfg.bins / 2));
  return {std::move(model), std::move(batch), std::move(targets)};
}

void BM_Forward(benchmark::State& state) {
  const auto c = model_case(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(c.model.forward(c.batch));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(256);

void BM_LossAndGradient(benchmark::State& state) {
  const auto c = model_case(static_cast<std::size_t>(state.range(0)));
  std::vector<double> grad(c.model.parameter_count());
  for (auto _ : state) benchmark::DoNotOptimize(c.model.loss_and_gradient(c.batch, c.targets, grad));
}
BENCHMARK(BM_LossAndGradient)->Arg(64)->Arg(256);

void BM_IntegratedBrier(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(RngStream{3, 0});
  std::vector<double> t(n);
  std::vector<int> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = rng.log_uniform(0.1, 10.0);
    e[i] = rng.bernoulli(0.7) ? 1 : 0;
  }
  const KmEstimate km = km_estimate(t, e);
  const KmEstimate gkm = censoring_km(t, e);
  std::vector<double> grid(100);
  for (std::size_t g = 0; g < grid.size(); ++g) grid[g] = 0.1 * static_cast<double>(g);
  Matrix surv(n, grid.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t g = 0; g < grid.size(); ++g) surv(i, g) = km.at(grid[g]);
  const double tau = default_horizon(t);
  for (auto _ : state) benchmark::DoNotOptimize(integrated_brier(surv, grid, t, e, gkm, tau));
}
BENCHMARK(BM_IntegratedBrier)->Arg(200)->Arg(1000);

void BM_Concordance(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(RngStream{4, 0});
  std::vector<double> t(n), risk(n);
  std::vector<int> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = rng.uniform();
    risk[i] = rng.normal();
    e[i] = rng.bernoulli(0.7) ? 1 : 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(concordance_index(risk, t, e));
}
BENCHMARK(BM_Concordance)->Arg(200)->Arg(1000);

void BM_DiagnoseTask(benchmark::State& state) {
  const TaskSample t = prior_task(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(diagnose_task(t));
}
BENCHMARK(BM_DiagnoseTask)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
