// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "support.hpp"
#include "survpfn/bench.hpp"
#include "survpfn/diagnostics.hpp"
#include "survpfn/metrics.hpp"
#include "survpfn/model.hpp"
#include "survpfn/prior.hpp"
#include "survpfn/trainer.hpp"

using namespace survpfn;
namespace oracle = survpfn::oracle;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

HistogramPrediction random_histogram(Rng& rng, std::size_t bins) {
  HistogramPrediction p;
  double z = 0.0;
  for (std::size_t l = 0; l < bins; ++l) {
    p.probs.push_back(std::exp(3.0 * rng.normal()));
    z += p.probs.back();
  }
  for (double& q : p.probs) {
    q /= z;
    p.log_probs.push_back(std::log(q));
  }
  return p;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  double worst = 0.0;
  for (bool swiglu : {false, true}) {
    ModelConfig c;
    c.d_max = 4;
    c.width = 16;
    c.layers = 2;
    c.heads = 2;
    c.bins = 8;
    c.ffn = 32;
    c.seed = 101;
    c.zero_head = false;
    c.parallel_swiglu = swiglu;
    PfnModel model(c);
    Rng rng(RngStream{1, swiglu ? 1u : 0u});
    const Binner binner(-4.0, 4.0, 8);
    const auto batch = testing::embed(model, testing::random_batch(rng, 4, 6, 2, binner), binner);

    std::vector<std::vector<double>> nll;
    for (int j = 0; j < 2; ++j)
      nll.push_back(one_hot_target(8, static_cast<std::size_t>(rng.uniform_int(1, 8))));
    const auto tw = TimeTransform::lognormal(0.3, 1.2);
    std::vector<std::vector<double>> sce{smoothed_target(rng.log_uniform(0.2, 5.0), 0.5, tw, binner),
                                         smoothed_target(rng.log_uniform(0.2, 5.0), 0.2, tw, binner)};
    worst = std::max(worst, testing::max_gradient_error(model, batch, nll));
    worst = std::max(worst, testing::max_gradient_error(model, batch, sce));
  }
  return {worst < 1e-4, fmt("max relative error %.3g (< 1e-4), both block variants, NLL and SCE", worst)};
}

Outcome architecture() {
  Rng rng(RngStream{2, 0});
  double perm_err = 0.0, sum_err = 0.0;
  bool canonical_exact = true, isolation_exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig c;
    c.heads = static_cast<std::size_t>(rng.uniform_int(1, 3));
    c.width = c.heads * static_cast<std::size_t>(rng.uniform_int(2, 8));
    c.layers = static_cast<std::size_t>(rng.uniform_int(1, 3));
    c.ffn = static_cast<std::size_t>(rng.uniform_int(4, 32));
    c.bins = static_cast<std::size_t>(rng.uniform_int(2, 16));
    c.d_max = static_cast<std::size_t>(rng.uniform_int(1, 6));
    c.parallel_swiglu = rng.bernoulli(0.5);
    c.zero_head = false;
    c.seed = static_cast<std::uint64_t>(trial);
    const PfnModel model(c);
    const Binner binner(-3.0, 3.0, c.bins);
    const auto d = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(c.d_max)));
    const auto n_ctx = static_cast<std::size_t>(rng.uniform_int(1, 24));
    const auto n_q = static_cast<std::size_t>(rng.uniform_int(2, 6));
    const auto b = testing::random_batch(rng, d, n_ctx, n_q, binner);
    const auto base = model.forward(testing::embed(model, b, binner));
    const auto canon = model.forward(testing::embed(model, b, binner, true));

    for (const auto& p : base)
      sum_err = std::max(sum_err, std::abs(std::accumulate(p.probs.begin(), p.probs.end(), 0.0) - 1.0));

    std::vector<std::size_t> order(n_ctx);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n_ctx; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
    auto perm = b;
    for (std::size_t i = 0; i < n_ctx; ++i) {
      for (std::size_t k = 0; k < d; ++k) perm.ctx_x(i, k) = b.ctx_x(order[i], k);
      perm.z[i] = b.z[order[i]];
      perm.event[i] = b.event[order[i]];
    }
    const auto shuffled = model.forward(testing::embed(model, perm, binner));
    const auto shuffled_canon = model.forward(testing::embed(model, perm, binner, true));
    for (std::size_t j = 0; j < n_q; ++j) {
      for (std::size_t l = 0; l < c.bins; ++l)
        perm_err = std::max(perm_err, std::abs(shuffled[j].probs[l] - base[j].probs[l]));
      canonical_exact = canonical_exact && shuffled_canon[j].probs == canon[j].probs;
    }

    // Keep a random nonempty subset of queries, then append fresh ones.
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < n_q; ++j)
      if (rng.bernoulli(0.5)) keep.push_back(j);
    if (keep.empty()) keep.push_back(0);
    const std::size_t extra = static_cast<std::size_t>(rng.uniform_int(0, 3));
    auto sub = b;
    sub.q_x = Matrix(keep.size() + extra, d);
    sub.indicator.clear();
    for (std::size_t j = 0; j < keep.size(); ++j) {
      for (std::size_t k = 0; k < d; ++k) sub.q_x(j, k) = b.q_x(keep[j], k);
      sub.indicator.push_back(b.indicator[keep[j]]);
    }
    for (std::size_t j = 0; j < extra; ++j) {
      for (std::size_t k = 0; k < d; ++k) sub.q_x(keep.size() + j, k) = rng.normal();
      sub.indicator.push_back(rng.bernoulli(0.5) ? 1 : 0);
    }
    const auto out = model.forward(testing::embed(model, sub, binner));
    for (std::size_t j = 0; j < keep.size(); ++j)
      isolation_exact = isolation_exact && out[j].probs == base[keep[j]].probs;
  }
  const bool pass = perm_err < 1e-6 && canonical_exact && isolation_exact && sum_err < 1e-9;
  return {pass, fmt("100 pairs: permutation %.2g (< 1e-6), canonical bit-exact %s, query isolation "
                    "bit-exact %s, |sum - 1| %.2g (< 1e-9)",
                    perm_err, canonical_exact ? "yes" : "no", isolation_exact ? "yes" : "no", sum_err)};
}

Outcome ppsd_algebra() {
  Rng rng(RngStream{3, 0});
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto L = static_cast<std::size_t>(rng.uniform_int(1, 1024));
    const auto p = random_histogram(rng, L);
    const auto s = ppsd_curve(p);
    bool ok = s.size() == L + 1 && s.front() == 1.0 && s.back() == 0.0;
    for (std::size_t k = 1; ok && k <= L; ++k) ok = s[k] <= s[k - 1];
    for (std::size_t k = 0; ok && k <= L; k += std::max<std::size_t>(1, L / 7)) ok = ppsd(p, k) == s[k] || k == 0;
    bad += ok ? 0 : 1;
  }
  return {bad == 0, fmt("1000 histograms, %d violations of S(0)=1, S(L)=0, nonincreasing", bad)};
}

Outcome loss_limit() {
  Rng rng(RngStream{4, 0});
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto L = static_cast<std::size_t>(rng.uniform_int(2, 256));
    const auto p = random_histogram(rng, L);
    const auto tw = TimeTransform::lognormal(rng.normal(), rng.log_uniform(0.2, 3.0));
    const Binner binner(-4.0, 4.0, L);
    const double r = tw.inverse(rng.uniform(-4.5, 4.5));
    const std::size_t bin = bin_index(binner, tw, r);
    worst = std::max(worst, std::abs(sce_loss(p, r, 1e-6, tw, binner) - nll_loss(p, bin)));
  }
  return {worst < 1e-4, fmt("1000 pairs: max |SCE(1e-6) - NLL| %.3g (< 1e-4)", worst)};
}

Outcome transforms() {
  Rng rng(RngStream{5, 0});
  double round_trip = 0.0, sigma_err = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 80));
    const double scale = rng.log_uniform(1e-3, 1e3);
    const double spread = rng.log_uniform(0.05, 2.0);
    std::vector<double> t(n);
    for (double& v : t) v = scale * std::exp(spread * rng.normal());
    const double lo = *std::min_element(t.begin(), t.end());
    const double hi = *std::max_element(t.begin(), t.end());

    const auto ln = TimeTransform::fit(TransformKind::lognormal2normal, t);
    const auto tq = TimeTransform::fit(TransformKind::time2quantile, t);
    for (int k = 0; k < 4; ++k) {
      const double a = rng.uniform(lo, hi);
      const double b = rng.log_uniform(lo * 1e-2, hi * 1e2);
      round_trip = std::max(round_trip, std::abs(tq.inverse(tq.forward(a)) - a) / std::max(1.0, a));
      round_trip = std::max(round_trip, std::abs(ln.inverse(ln.forward(a)) - a) / std::max(1.0, a));
      round_trip = std::max(round_trip, std::abs(ln.inverse(ln.forward(b)) - b) / std::max(1.0, b));
    }

    double m = 0.0;
    for (double v : t) m += v;
    m /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : t) ss += (v - m) * (v - m);
    const double s2 = ss / static_cast<double>(n - 1);
    const double direct = std::log1p(s2 / (m * m));
    if (std::sqrt(direct) > kSigmaFloor)
      sigma_err = std::max(sigma_err, std::abs(ln.sigma() * ln.sigma() - direct) / std::max(1.0, direct));
  }
  const bool pass = round_trip <= 1e-9 && sigma_err <= 1e-12;
  return {pass, fmt("10k fits: round trip %.3g (<= 1e-9 relative), sigma^2 error %.3g (<= 1e-12)",
                    round_trip, sigma_err)};
}

Outcome metric_oracles() {
  Rng rng(RngStream{6, 0});
  double worst = 0.0;
  int undefined_mismatch = 0;
  auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = testing::random_metric_case(rng, 50, 50);
    const double tau = default_horizon(c.train.t);
    const auto gkm = censoring_km(c.train.t, c.train.d);
    track(integrated_brier(c.surv, c.grid, c.test.t, c.test.d, gkm, tau).value,
          oracle::ibs(c.surv_rows, c.grid, c.test, c.train, tau, 0.05));

    std::vector<double> med, risk, own;
    for (std::size_t i = 0; i < c.test.t.size(); ++i) {
      med.push_back(median_survival_time(c.grid, c.surv.row(i)));
      risk.push_back(-med.back());
      own.push_back(oracle::step(c.grid, c.surv_rows[i], c.test.t[i]));
    }
    bool defined = false;
    const double ci_ref = oracle::concordance(risk, c.test, &defined);
    const auto ci = concordance_index(risk, c.test.t, c.test.d);
    if (ci.has_value() != defined) ++undefined_mismatch;
    if (ci && defined) track(*ci, ci_ref);

    track(d_calibration(own, c.test.d), oracle::dcal(own, c.test.d));

    const double mae_ref = oracle::mae_po(med, c.test, &defined);
    const auto mae = mae_po(med, c.test.t, c.test.d);
    if (mae.has_value() != defined) ++undefined_mismatch;
    if (mae && defined) track(*mae, mae_ref);

    const oracle::Sample pred{med, std::vector<int>(med.size(), 1)};
    track(log_rank(c.test.t, c.test.d, med, pred.d), oracle::log_rank(c.test, pred));

    const auto km = km_estimate(c.test.t, c.test.d);
    for (double u = 0.0; u < 11.0; u += 0.25) track(km.at(u), oracle::km(c.test, u));
  }
  return {worst < 1e-10 && undefined_mismatch == 0,
          fmt("200 datasets of 50: max |diff| %.3g (< 1e-10) over CI, IBS, D-cal, MAE-PO, log-rank, KM",
              worst)};
}

std::vector<TaskSample> default_tasks() {
  std::vector<TaskSample> tasks;
  const PriorConfig prior;
  for (std::uint64_t k = 0; k < 200; ++k)
    tasks.push_back(sample_prior_task(prior, 1024, 1, RngStream{7, k}));
  return tasks;
}

Outcome identifiability(const std::vector<TaskSample>& tasks) {
  std::vector<double> cmi;
  for (const auto& t : tasks) cmi.push_back(diagnose_task(t).cmi);
  const double med = percentile(cmi, 0.5), p95 = percentile(cmi, 0.95);

  Rng rng(RngStream{7, 1'000'000});
  Matrix x(2048, 2);
  std::vector<double> e(2048);
  for (std::size_t i = 0; i < 2048; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    e[i] = std::exp(0.5 * x(i, 0) + rng.normal());
  }
  const double control = estimate_cmi(e, e, x);
  return {med < 0.05 && p95 < 0.15 && control > 1.0,
          fmt("200 tasks x 1024 rows: median %.4f (< 0.05), p95 %.4f (< 0.15); C=E control %.3f (> 1)",
              med, p95, control)};
}

Outcome diversity(const std::vector<TaskSample>& tasks) {
  std::set<int> deciles;
  for (const auto& t : tasks)
    deciles.insert(std::min(9, static_cast<int>(std::floor(10.0 * t.context.censoring_rate()))));

  const PriorConfig prior;
  double worst = 0.0;
  int probes = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const RngStream s{8, k};
    const DgpSpec spec = sample_dgp(s.child("theta"), prior);
    for (double target : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const auto r = calibrate_censoring_rate(spec, target, s.child(static_cast<std::uint64_t>(target * 10)), 4096);
      worst = std::max(worst, r.residual);
      ++probes;
    }
  }
  return {deciles.size() == 10 && worst <= 0.02,
          fmt("%zu/10 censoring-rate deciles occupied; %d calibrations on 4096-row probes, max residual "
              "%.4f (<= 0.02)",
              deciles.size(), probes, worst)};
}

double true_survival_error(const PfnModel& m, const DgpSpec& spec, const TaskSample& t,
                           std::size_t n_ctx, std::span<const double> grid) {
  std::vector<std::size_t> rows(n_ctx);
  std::iota(rows.begin(), rows.end(), 0);
  const SurvivalDataset c = t.context.subset(rows);
  const Matrix s = predict_survival(m, TransformKind::lognormal2normal, c.x, c.time, c.event, t.query_x, grid);
  double err = 0.0;
  for (std::size_t q = 0; q < t.n_query(); ++q) {
    const double rate = spec.exp_base_rate * std::exp(spec.exp_event_coef * t.query_x(q, 0));
    for (std::size_t g = 0; g < grid.size(); ++g) err += std::abs(s(q, g) - std::exp(-rate * grid[g]));
  }
  return err / static_cast<double>(t.n_query() * grid.size());
}

Outcome learning() {
  TrainConfig cfg;
  cfg.prior = PriorConfig::simple_exponential();
  cfg.model.d_max = 1;
  cfg.model.width = 32;
  cfg.model.layers = 2;
  cfg.model.heads = 2;
  cfg.model.ffn = 64;
  cfg.model.bins = 32;
  cfg.tasks_per_step = 8;
  cfg.queries_per_task = 16;
  cfg.min_context = 16;
  cfg.max_context = 256;
  cfg.steps = 1000;
  cfg.learning_rate = 3e-4;
  cfg.checkpoint_every = cfg.steps;
  cfg.deterministic = true;
  const PfnModel m = train(cfg).last.model();

  const int M = 100;
  double ibs_model = 0.0, ibs_km = 0.0, err32 = 0.0, err256 = 0.0;
  for (int k = 0; k < M; ++k) {
    const RngStream s{12345, static_cast<std::uint64_t>(k)};
    const DgpSpec spec = sample_dgp(s.child("theta"), cfg.prior);
    const TaskSample t = sample_task(spec, 256, 64, s.child("task"));
    const auto grid = continuous_grid(std::span<const double>(t.context.time));
    std::vector<double> tt;
    std::vector<int> te;
    for (std::size_t q = 0; q < t.n_query(); ++q) {
      tt.push_back(std::min(t.query_event[q], t.query_censor[q]));
      te.push_back(t.query_event[q] <= t.query_censor[q] ? 1 : 0);
    }
    const Matrix pred =
        predict_survival(m, TransformKind::lognormal2normal, t.context.x, t.context.time, t.context.event, t.query_x, grid);
    const KmEstimate km = km_estimate(t.context.time, t.context.event);
    Matrix base(t.n_query(), grid.size());
    for (std::size_t q = 0; q < t.n_query(); ++q)
      for (std::size_t g = 0; g < grid.size(); ++g) base(q, g) = km.at(grid[g]);
    const KmEstimate gkm = censoring_km(t.context.time, t.context.event);
    const double tau = default_horizon(t.context.time);
    ibs_model += integrated_brier(pred, grid, tt, te, gkm, tau).value / M;
    ibs_km += integrated_brier(base, grid, tt, te, gkm, tau).value / M;

    std::vector<double> sorted(t.context.time);
    std::sort(sorted.begin(), sorted.end());
    err32 += true_survival_error(m, spec, t, 32, sorted) / M;
    err256 += true_survival_error(m, spec, t, 256, sorted) / M;
  }
  const double gain = 1.0 - ibs_model / ibs_km;
  return {gain >= 0.10 && err256 < err32,
          fmt("1000 steps: IBS %.4f vs marginal KM %.4f (gain %.1f%%, >= 10%%); mean |S - S_true| "
              "%.4f at 256 < %.4f at 32",
              ibs_model, ibs_km, 100.0 * gain, err256, err32)};
}

Outcome protocol() {
  const std::vector<double> t{1, 2, 3, 4, 5, 6, 7, 8, 9};
  const std::vector<int> e(9, 1);
  const bool grid_ok = quantile_grid(t, e, 3, true) == std::vector<double>{1 - 1e-5, 5, 9};
  const auto row = rank_models(std::vector<std::optional<double>>{0.1, 0.1, 0.2, std::nullopt},
                               Direction::lower_better);
  const bool rank_ok = row.ranks == std::vector<std::optional<int>>{1, 1, 3, 4};
  const std::size_t sizes[] = {4, 16};
  const double ibs[] = {0.2, 0.1};
  const double w = weighted_ibs(sizes, ibs);
  const bool w_ok = w == (2 * 0.2 + 4 * 0.1) / 6.0 && std::abs(w - 0.13333) < 5e-6;
  return {grid_ok && rank_ok && w_ok,
          fmt("quantile grid %s, ranks {1,1,3,4} %s, weighted IBS %.5f", grid_ok ? "ok" : "wrong",
              rank_ok ? "ok" : "wrong", w)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int k) { return only.empty() || only.count(k) > 0; };

  // Criteria 7 and 8 share one task set; generation is timed with whichever runs first.
  std::vector<TaskSample> tasks;
  auto prior_tasks = [&]() -> const std::vector<TaskSample>& {
    if (tasks.empty()) tasks = default_tasks();
    return tasks;
  };

  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", 30.0, gradients},
      {2, "architecture invariants", 0.0, architecture},
      {3, "tail-sum survival algebra", 0.0, ppsd_algebra},
      {4, "smoothed loss limit", 0.0, loss_limit},
      {5, "transform round trips", 0.0, transforms},
      {6, "metric oracle equivalence", 120.0, metric_oracles},
      {7, "prior identifiability", 300.0, [&] { return identifiability(prior_tasks()); }},
      {8, "prior diversity", 0.0, [&] { return diversity(prior_tasks()); }},
      {9, "learning sanity and consistency trend", 1800.0, learning},
      {10, "protocol arithmetic", 0.0, protocol},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0.0 && secs > c.budget_seconds) {
      out.pass = false;
      out.detail += fmt("; over budget %.0f s", c.budget_seconds);
    }
    std::printf("%s criterion %2d (%s): %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", c.id, c.name,
                out.detail.c_str(), secs);
    std::fflush(stdout);
    failures += out.pass ? 0 : 1;
  }
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
