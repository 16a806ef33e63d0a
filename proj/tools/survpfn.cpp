// survpfn: command-line front end for prior generation, training, prediction,
// evaluation, benchmarking and prior diagnostics.

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "survpfn/bench.hpp"
#include "survpfn/checkpoint.hpp"
#include "survpfn/config.hpp"
#include "survpfn/diagnostics.hpp"
#include "survpfn/errors.hpp"
#include "survpfn/metrics.hpp"
#include "survpfn/task_io.hpp"
#include "survpfn/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace survpfn;

namespace {

struct Globals {
  std::string config_path;
  std::string out = "survpfn_out";
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  bool deterministic = false;
  int verbosity = 0;
};

struct Run {
  std::string command;
  Globals g;
  Config config;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;

  fs::path out(const std::string& name) const { return fs::path(g.out) / name; }
  void note(const std::string& msg) const {
    if (g.verbosity > 0) std::cerr << "[" << command << "] " << msg << '\n';
  }
  void produced(const fs::path& p) { artifacts.push_back(p.string()); }
};

std::string num(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return fnv1a64_bytes(bytes);
}

void write_text(Run& run, const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  run.produced(path);
}

Run make_run(const std::string& command, const Globals& g) {
  Run run{command, g, {}, 0, {}};
  run.config = g.config_path.empty() ? Config::parse("", "<defaults>", process_environment())
                                     : Config::load(g.config_path);
  run.seed = g.seed ? *g.seed : run.config.get_size("seed").value_or(0);
  fs::create_directories(g.out);
  return run;
}

void write_manifest(Run& run) {
  json m;
  m["subcommand"] = run.command;
  m["config_path"] = run.g.config_path;
  m["out"] = run.g.out;
  m["seed"] = run.seed;
  m["workers"] = run.g.workers;
  m["deterministic"] = run.g.deterministic;
  m["verbosity"] = run.g.verbosity;
  m["resolved_config"] = run.config.to_toml();
  json arts = json::array();
  std::sort(run.artifacts.begin(), run.artifacts.end());
  for (const auto& a : run.artifacts) {
    if (!fs::exists(a)) continue;
    arts.push_back({{"path", fs::relative(a, run.g.out).generic_string()}, {"fnv1a64", hex64(file_checksum(a))}});
  }
  m["artifacts"] = arts;
  std::ofstream(run.out("manifest.json"), std::ios::trunc) << m.dump(2) << '\n';
}

// Runs f(i) for i < n on up to `workers` threads; results are written by index.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  const std::size_t W = std::max<std::size_t>(1, std::min(workers, n));
  if (W == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < W; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------

void cmd_gen_prior(const Globals& g) {
  Run run = make_run("gen-prior", g);
  run.config.check_keys("gen_prior", {"tasks", "n_context", "n_query", "binary"});
  const PriorConfig prior = prior_config_from(run.config);
  const std::size_t n = run.config.get_size("gen_prior.tasks").value_or(10);
  const std::size_t n_ctx = run.config.get_size("gen_prior.n_context").value_or(64);
  const std::size_t n_q = run.config.get_size("gen_prior.n_query").value_or(16);
  if (n_ctx == 0 || n_q == 0) throw ConfigError("gen_prior: n_context and n_query must be >= 1");
  std::vector<TaskSample> tasks(n);
  const RngStream root{run.seed, fnv1a64("gen-prior")};
  parallel_for(n, g.workers, [&](std::size_t k) { tasks[k] = sample_prior_task(prior, n_ctx, n_q, root.child(k)); });
  write_tasks_jsonl(run.out("tasks.jsonl").string(), tasks);
  run.produced(run.out("tasks.jsonl"));
  if (run.config.get_bool("gen_prior.binary").value_or(false)) {
    write_tasks_binary(run.out("tasks.bin").string(), tasks);
    run.produced(run.out("tasks.bin"));
  }
  json summary = json::array();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = tasks[k].summary;
    summary.push_back({{"task", k},
                       {"family", to_string(s.family)},
                       {"from_kitchen_sink", s.from_kitchen_sink},
                       {"censoring", to_string(s.censoring)},
                       {"dim", s.dim},
                       {"target_censoring_rate", s.target_censoring_rate},
                       {"observed_censoring_rate", tasks[k].context.censoring_rate()},
                       {"seed", s.seed}});
  }
  write_text(run, run.out("generation.json"), summary.dump(2) + "\n");
  run.note("wrote " + std::to_string(n) + " tasks");
  write_manifest(run);
}

std::vector<ValidationSplit> validation_splits(const std::vector<std::string>& paths, std::uint64_t seed) {
  std::vector<ValidationSplit> out;
  for (const auto& p : paths) {
    auto data = load_dataset(p);
    auto [tr, te] = split(data, 0.7, seed);
    out.push_back({fs::path(p).stem().string(), std::move(tr), std::move(te)});
  }
  return out;
}

void cmd_train(const Globals& g, const std::string& resume) {
  Run run = make_run("train", g);
  TrainConfig cfg = train_config_from(run.config);
  if (g.seed || !run.config.has("train.seed")) cfg.seed = run.seed;
  if (g.workers > 1) cfg.workers = g.workers;
  if (g.deterministic) cfg.deterministic = true;
  cfg.validate();

  TrainOptions opt;
  opt.out_dir = g.out;
  if (auto v = run.config.get_strings("train.validation")) opt.validation = validation_splits(*v, 0);
  if (!resume.empty()) opt.resume = load_checkpoint(resume);
  const auto t0 = std::chrono::steady_clock::now();
  opt.on_step = [&](const TrainLogEntry& e) {
    if (g.verbosity > 0 && (e.step % 50 == 0 || e.step + 1 == cfg.steps))
      std::cerr << "[train] step " << e.step << " loss " << e.loss << '\n';
  };
  const TrainOutcome result = train(cfg, opt);
  for (const auto& f : result.checkpoint_files) run.produced(f);
  run.produced(run.out("last.spfn"));
  run.produced(run.out("train_log.jsonl"));
  if (result.best) run.produced(run.out("best.spfn"));
  json summary{{"steps", cfg.steps},
               {"final_loss", result.log.empty() ? json(nullptr) : json(result.log.back().loss)},
               {"best_weighted_ibs", result.best_score ? json(*result.best_score) : json(nullptr)},
               {"best_step", result.best ? json(result.best->step) : json(nullptr)}};
  write_text(run, run.out("train_summary.json"), summary.dump(2) + "\n");
  run.note("done in " + num(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
  write_manifest(run);
}

std::string survival_csv(const Matrix& surv, std::span<const double> grid) {
  std::string s;
  for (std::size_t k = 0; k < grid.size(); ++k) s += (k ? "," : "") + num(grid[k]);
  s += '\n';
  for (std::size_t r = 0; r < surv.rows(); ++r) {
    for (std::size_t k = 0; k < grid.size(); ++k) s += (k ? "," : "") + num(surv(r, k));
    s += '\n';
  }
  return s;
}

std::pair<std::vector<double>, Matrix> read_survival_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  auto parse_row = [&](const std::string& line, std::size_t lineno) {
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double x = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), x);
      if (ec != std::errc() || p != cell.data() + cell.size())
        throw DataError(path + ":" + std::to_string(lineno) + ": not a number: " + cell);
      v.push_back(x);
    }
    return v;
  };
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  const auto grid = parse_row(line, 1);
  Matrix m(0, grid.size());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto row = parse_row(line, lineno);
    if (row.size() != grid.size()) throw DataError(path + ":" + std::to_string(lineno) + ": wrong width");
    m.push_row(row);
  }
  return {grid, m};
}

struct DataArgs {
  std::string data;
  std::optional<std::uint64_t> split_seed;
  std::string checkpoint;
  std::string predictions;
  bool km = false;
};

void cmd_predict(const Globals& g, const DataArgs& a) {
  Run run = make_run("predict", g);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto data = load_dataset(a.data);
  if (data.dim() > ck.config.d_max)
    throw DataError(a.data + " has " + std::to_string(data.dim()) + " features after preprocessing; checkpoint accepts at most " +
                    std::to_string(ck.config.d_max));
  const auto [train, test] = split(data, 0.7, a.split_seed.value_or(run.seed));
  const auto grid = continuous_grid(train);
  const Matrix surv = pfn_bench_model("pfn", ck, g.deterministic).predict(train, test, grid);
  write_text(run, run.out("survival.csv"), survival_csv(surv, grid));
  write_manifest(run);
}

void cmd_eval(const Globals& g, const DataArgs& a) {
  Run run = make_run("eval", g);
  const auto data = load_dataset(a.data);
  const auto [train, test] = split(data, 0.7, a.split_seed.value_or(run.seed));
  std::vector<double> grid;
  Matrix surv;
  if (!a.predictions.empty()) {
    std::tie(grid, surv) = read_survival_csv(a.predictions);
    if (surv.rows() != test.size())
      throw DataError("predictions have " + std::to_string(surv.rows()) + " rows; the test split has " +
                      std::to_string(test.size()));
  } else {
    grid = continuous_grid(train);
    const BenchModel model = a.km ? km_baseline() : pfn_bench_model("pfn", load_checkpoint(a.checkpoint), g.deterministic);
    surv = model.predict(train, test, grid);
  }
  const MetricReport rep = evaluate_predictions(surv, grid, train.time, train.event, test.time, test.event);
  write_text(run, run.out("metrics.json"), to_json(rep) + "\n");
  std::cout << to_json(rep) << '\n';
  write_manifest(run);
}

void cmd_bench(const Globals& g) {
  Run run = make_run("bench", g);
  const Config& c = run.config;
  c.check_keys("bench", {"datasets", "seeds", "checkpoints", "names", "include_km", "bootstrap"});
  const auto datasets = c.get_strings("bench.datasets");
  if (!datasets || datasets->empty()) throw ConfigError("bench.datasets must list at least one CSV");
  std::vector<std::uint64_t> seeds;
  for (double s : c.get_doubles("bench.seeds").value_or(std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9})) {
    if (s < 0 || s != std::floor(s)) throw ConfigError("bench.seeds must be nonnegative integers");
    seeds.push_back(static_cast<std::uint64_t>(s));
  }
  std::vector<BenchModel> models;
  if (c.get_bool("bench.include_km").value_or(true)) models.push_back(km_baseline());
  const auto cks = c.get_strings("bench.checkpoints").value_or(std::vector<std::string>{});
  const auto names = c.get_strings("bench.names").value_or(std::vector<std::string>{});
  for (std::size_t k = 0; k < cks.size(); ++k)
    models.push_back(pfn_bench_model(k < names.size() ? names[k] : fs::path(cks[k]).stem().string(),
                                     load_checkpoint(cks[k]), g.deterministic));
  if (models.empty()) throw ConfigError("bench: no models configured");

  std::vector<std::pair<std::string, SurvivalDataset>> data;
  for (const auto& p : *datasets) data.emplace_back(fs::path(p).stem().string(), load_dataset(p));

  struct Job {
    std::size_t d, s, m;
  };
  std::vector<Job> plan;
  for (std::size_t d = 0; d < data.size(); ++d)
    for (std::size_t s = 0; s < seeds.size(); ++s)
      for (std::size_t m = 0; m < models.size(); ++m) plan.push_back({d, s, m});
  std::vector<JobResult> results(plan.size());
  parallel_for(plan.size(), g.workers, [&](std::size_t i) {
    const Job& j = plan[i];
    results[i] = run_job(data[j.d].second, data[j.d].first, seeds[j.s], models[j.m]);
  });

  fs::create_directories(run.out("runs"));
  for (const auto& r : results) {
    json j{{"dataset", r.dataset}, {"seed", r.seed}, {"model", r.model}};
    j["metrics"] = r.report ? json::parse(to_json(*r.report)) : json(nullptr);
    j["error"] = r.error.empty() ? json(nullptr) : json(r.error);
    write_text(run, run.out("runs") / (r.dataset + "__" + r.model + "__" + std::to_string(r.seed) + ".json"),
               j.dump(2) + "\n");
    if (!r.error.empty()) run.note("failed " + r.dataset + "/" + r.model + "/" + std::to_string(r.seed) + ": " + r.error);
  }
  const RankTable table = build_rank_table(results);
  write_text(run, run.out("ranks.csv"), rank_table_csv(table));
  const auto summary = summarize_ranks(table, RngStream{run.seed, fnv1a64("bootstrap")},
                                       c.get_size("bench.bootstrap").value_or(10000));
  json s = json::array();
  for (const auto& m : summary) {
    json per;
    for (const auto& [metric, ci] : m.per_metric) per[metric] = {ci.median, ci.lo, ci.hi};
    s.push_back({{"model", m.model},
                 {"overall", {m.overall.median, m.overall.lo, m.overall.hi}},
                 {"per_metric", per}});
  }
  write_text(run, run.out("rank_summary.json"), s.dump(2) + "\n");
  write_manifest(run);
}

void cmd_diag(const Globals& g, const std::string& tasks_path) {
  Run run = make_run("diag", g);
  run.config.check_keys("diag", {"tasks", "n_rows", "cells", "bins", "grid_points"});
  std::vector<TaskSample> tasks;
  if (!tasks_path.empty()) {
    tasks = tasks_path.ends_with(".bin") ? read_tasks_binary(tasks_path) : read_tasks_jsonl(tasks_path);
  } else {
    const PriorConfig prior = prior_config_from(run.config);
    const std::size_t n = run.config.get_size("diag.tasks").value_or(200);
    const std::size_t rows = run.config.get_size("diag.n_rows").value_or(1024);
    tasks.resize(n);
    const RngStream root{run.seed, fnv1a64("diag")};
    parallel_for(n, g.workers, [&](std::size_t k) { tasks[k] = sample_prior_task(prior, rows, 1, root.child(k)); });
  }
  QuantizerOptions q;
  q.cells = run.config.get_size("diag.cells").value_or(q.cells);
  q.bins = run.config.get_size("diag.bins").value_or(q.bins);
  q.seed = run.seed;
  std::vector<TaskDiagnostics> diags(tasks.size());
  parallel_for(tasks.size(), g.workers, [&](std::size_t k) { diags[k] = diagnose_task(tasks[k], q); });

  json per = json::array();
  std::vector<double> cmi;
  std::array<int, 10> deciles{};
  for (std::size_t k = 0; k < diags.size(); ++k) {
    const auto& d = diags[k];
    per.push_back({{"task", k},
                   {"family", to_string(tasks[k].summary.family)},
                   {"censoring", to_string(tasks[k].summary.censoring)},
                   {"censoring_rate", d.censoring_rate},
                   {"log10_cv", d.log10_cv},
                   {"conditional_entropy", d.conditional_entropy},
                   {"cmi", d.cmi}});
    cmi.push_back(d.cmi);
    ++deciles[std::min<std::size_t>(9, static_cast<std::size_t>(d.censoring_rate * 10.0))];
  }
  std::sort(cmi.begin(), cmi.end());
  auto pct = [&](double p) {
    const double h = (static_cast<double>(cmi.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, cmi.size() - 1);
    return cmi[lo] + (h - static_cast<double>(lo)) * (cmi[hi] - cmi[lo]);
  };
  json out{{"tasks", diags.size()},
           {"cmi_median", cmi.empty() ? json(nullptr) : json(pct(0.5))},
           {"cmi_p95", cmi.empty() ? json(nullptr) : json(pct(0.95))},
           {"censoring_deciles", deciles},
           {"per_task", per}};
  write_text(run, run.out("diagnostics.json"), out.dump(2) + "\n");

  if (tasks.size() >= 10) {
    const std::size_t G = run.config.get_size("diag.grid_points").value_or(21);
    if (G < 2) throw ConfigError("diag.grid_points must be >= 2");
    std::vector<double> grid;
    for (std::size_t k = 0; k < G; ++k) grid.push_back(static_cast<double>(k) / static_cast<double>(G - 1));
    const CurveBands b = curve_bands(tasks, grid);
    std::string csv = "curve,t,p10,p25,p50,p75,p90\n";
    auto emit = [&](const char* name, const Band& band) {
      for (std::size_t k = 0; k < grid.size(); ++k)
        csv += std::string(name) + "," + num(grid[k]) + "," + num(band.p10[k]) + "," + num(band.p25[k]) + "," +
               num(band.p50[k]) + "," + num(band.p75[k]) + "," + num(band.p90[k]) + "\n";
    };
    emit("event", b.event);
    emit("censor", b.censor);
    emit("km", b.km);
    write_text(run, run.out("bands.csv"), csv);
  }
  std::cout << "cmi median " << (cmi.empty() ? 0.0 : pct(0.5)) << " p95 " << (cmi.empty() ? 0.0 : pct(0.95)) << '\n';
  write_manifest(run);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prior-fitted survival analysis toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--config,-c", g.config_path, "TOML configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out,-o", g.out, "Output directory");
    sub->add_option("--seed", seed, "Master seed (overrides the config)");
    sub->add_option("--workers,-j", g.workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--deterministic", g.deterministic, "Canonical context order and no wall-clock fields");
    sub->add_flag("-v,--verbose", g.verbosity, "Progress messages on stderr");
  };

  auto* gen = app.add_subcommand("gen-prior", "Sample a synthetic task corpus");
  add_globals(gen);

  std::string resume;
  auto* tr = app.add_subcommand("train", "Train a model on prior tasks");
  add_globals(tr);
  tr->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

  DataArgs pa;
  auto* pr = app.add_subcommand("predict", "Survival curves for the test split of a dataset");
  add_globals(pr);
  pr->add_option("--checkpoint", pa.checkpoint)->required()->check(CLI::ExistingFile);
  pr->add_option("--data", pa.data)->required()->check(CLI::ExistingFile);
  pr->add_option("--split-seed", pa.split_seed, "Split seed (default: master seed)");

  DataArgs ea;
  auto* ev = app.add_subcommand("eval", "Metrics of a prediction on the test split");
  add_globals(ev);
  ev->add_option("--data", ea.data)->required()->check(CLI::ExistingFile);
  ev->add_option("--split-seed", ea.split_seed, "Split seed (default: master seed)");
  auto* src = ev->add_option_group("source", "Prediction source");
  src->add_option("--predictions", ea.predictions, "Survival CSV from `predict`")->check(CLI::ExistingFile);
  src->add_option("--checkpoint", ea.checkpoint)->check(CLI::ExistingFile);
  src->add_flag("--km", ea.km, "Kaplan-Meier baseline");
  src->require_option(1);

  auto* be = app.add_subcommand("bench", "Benchmark models over datasets and seeds");
  add_globals(be);

  std::string tasks_path;
  auto* di = app.add_subcommand("diag", "Prior diagnostics");
  add_globals(di);
  di->add_option("--tasks", tasks_path, "Task corpus (.jsonl or .bin); sampled from [prior] when absent")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  for (auto* sub : app.get_subcommands())
    if (sub->count("--seed") > 0) g.seed = seed;

  try {
    if (*gen) cmd_gen_prior(g);
    else if (*tr) cmd_train(g, resume);
    else if (*pr) cmd_predict(g, pa);
    else if (*ev) cmd_eval(g, ea);
    else if (*be) cmd_bench(g);
    else if (*di) cmd_diag(g, tasks_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const LeakageError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
