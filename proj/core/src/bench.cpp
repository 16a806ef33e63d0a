#include "survpfn/bench.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "survpfn/errors.hpp"
#include "survpfn/model.hpp"

namespace survpfn {

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t lineno) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  if (quoted) throw DataError("line " + std::to_string(lineno) + ": unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "null";
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

double median_sorted(const std::vector<double>& v) {
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double type7(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string fmt17(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

}  // namespace

RawTable read_table(const std::string& path, std::optional<std::set<std::string>> categorical) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  if (!categorical) {
    categorical.emplace();
    std::filesystem::path side(path);
    side.replace_extension(".json");
    if (std::filesystem::exists(side)) {
      std::ifstream js(side);
      try {
        const auto j = nlohmann::json::parse(js);
        if (j.contains("categorical"))
          for (const auto& c : j.at("categorical")) categorical->insert(c.get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        throw DataError(side.string() + ": " + e.what());
      }
    }
  }

  RawTable t;
  t.path = path;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  const auto header = split_csv_line(line, 1);
  std::optional<std::size_t> time_col, event_col;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = trim(header[c]);
    if (name == "time") {
      time_col = c;
    } else if (name == "event") {
      event_col = c;
    } else {
      feature_cols.push_back(c);
      t.names.push_back(name);
      t.categorical.push_back(categorical->count(name) > 0);
    }
  }
  if (!time_col || !event_col) throw DataError(path + ": reserved columns `time` and `event` are required");
  for (const auto& name : *categorical)
    if (std::find(t.names.begin(), t.names.end(), name) == t.names.end())
      throw DataError(path + ": categorical column `" + name + "` not found");

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const std::string where = path + ": row " + std::to_string(row);
    const auto cells = split_csv_line(line, row + 1);
    if (cells.size() != header.size()) throw DataError(where + ": expected " + std::to_string(header.size()) + " fields");
    const auto tv = parse_double(trim(cells[*time_col]));
    if (!tv || !std::isfinite(*tv) || *tv < 0.0) throw DataError(where + ": time must be a finite number >= 0");
    const auto ev = parse_double(trim(cells[*event_col]));
    if (!ev || (*ev != 0.0 && *ev != 1.0)) throw DataError(where + ": event must be 0 or 1");
    t.time.push_back(*tv);
    t.event.push_back(static_cast<int>(*ev));
    std::vector<std::optional<std::string>> feats;
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      const std::string v = trim(cells[feature_cols[k]]);
      if (is_missing(v)) {
        feats.emplace_back(std::nullopt);
        continue;
      }
      if (!t.categorical[k]) {
        const auto d = parse_double(v);
        if (!d || !std::isfinite(*d))
          throw DataError(where + ": column `" + t.names[k] + "` is not numeric");
      }
      feats.emplace_back(v);
    }
    t.cells.push_back(std::move(feats));
  }
  if (t.rows() == 0) throw DataError(path + ": no data rows");
  return t;
}

std::vector<ColumnInfo> Preprocessor::column_info(const RawTable& table) const {
  std::vector<ColumnInfo> info;
  for (std::size_t k = 0; k < columns.size(); ++k) {
    const auto& c = columns[k];
    if (c.categorical) {
      for (const auto& level : c.levels)
        info.push_back({table.names[k] + "=" + level, table.names[k], ColumnKind::categorical, false, level});
    } else {
      info.push_back({table.names[k], table.names[k], ColumnKind::numeric, false, {}});
    }
  }
  for (std::size_t k = 0; k < columns.size(); ++k)
    if (columns[k].has_missing)
      info.push_back({table.names[k] + "__missing", table.names[k],
                      columns[k].categorical ? ColumnKind::categorical : ColumnKind::numeric, true, {}});
  return info;
}

Preprocessor fit_preprocessor(const RawTable& table, std::span<const std::size_t> rows,
                              bool standardize) {
  Preprocessor p;
  p.standardize = standardize;
  const std::size_t F = table.names.size();
  p.columns.resize(F);
  for (std::size_t k = 0; k < F; ++k) {
    auto& col = p.columns[k];
    col.categorical = table.categorical[k];
    std::set<std::string> levels;
    for (const auto& r : table.cells) {
      if (!r[k]) col.has_missing = true;
      else if (col.categorical) levels.insert(*r[k]);
    }
    col.levels.assign(levels.begin(), levels.end());
    if (col.categorical) {
      std::map<std::string, std::size_t> freq;
      for (auto i : rows)
        if (table.cells[i][k]) ++freq[*table.cells[i][k]];
      std::size_t best = 0;
      for (const auto& [level, n] : freq)
        if (n > best) {
          best = n;
          col.mode = level;
        }
      if (best == 0 && !col.levels.empty()) col.mode = col.levels.front();
    } else {
      std::vector<double> vals;
      for (auto i : rows)
        if (table.cells[i][k]) vals.push_back(*parse_double(*table.cells[i][k]));
      std::sort(vals.begin(), vals.end());
      col.median = vals.empty() ? 0.0 : median_sorted(vals);
      if (standardize && !rows.empty()) {
        double mean = 0.0;
        for (auto i : rows) mean += table.cells[i][k] ? *parse_double(*table.cells[i][k]) : col.median;
        mean /= static_cast<double>(rows.size());
        double ss = 0.0;
        for (auto i : rows) {
          const double v = table.cells[i][k] ? *parse_double(*table.cells[i][k]) : col.median;
          ss += (v - mean) * (v - mean);
        }
        const double sd = std::sqrt(ss / static_cast<double>(rows.size()));
        col.mean = mean;
        col.sd = sd > 0.0 ? sd : 1.0;
      }
    }
  }
  return p;
}

SurvivalDataset encode_rows(const RawTable& table, std::span<const std::size_t> rows,
                            const Preprocessor& prep, DataRole role) {
  SurvivalDataset d;
  d.columns = prep.column_info(table);
  d.role = role;
  d.x = Matrix(rows.size(), d.columns.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& cells = table.cells[rows[r]];
    std::size_t c = 0;
    for (std::size_t k = 0; k < prep.columns.size(); ++k) {
      const auto& col = prep.columns[k];
      if (col.categorical) {
        const std::string& v = cells[k] ? *cells[k] : col.mode;
        for (const auto& level : col.levels) d.x(r, c++) = level == v ? 1.0 : 0.0;
      } else {
        double v = cells[k] ? *parse_double(*cells[k]) : col.median;
        if (prep.standardize) v = (v - col.mean) / col.sd;
        d.x(r, c++) = v;
      }
    }
    for (std::size_t k = 0; k < prep.columns.size(); ++k)
      if (prep.columns[k].has_missing) d.x(r, c++) = cells[k] ? 0.0 : 1.0;
    d.time.push_back(table.time[rows[r]]);
    d.event.push_back(table.event[rows[r]]);
    d.source_rows.push_back(rows[r]);
  }
  d.validate();
  return d;
}

SurvivalDataset dataset_from_table(RawTable table) {
  auto shared = std::make_shared<const RawTable>(std::move(table));
  std::vector<std::size_t> rows(shared->rows());
  std::iota(rows.begin(), rows.end(), 0);
  SurvivalDataset d = encode_rows(*shared, rows, fit_preprocessor(*shared, rows, false), DataRole::full);
  d.source = shared;
  return d;
}

SurvivalDataset load_dataset(const std::string& path) { return dataset_from_table(read_table(path)); }

void write_dataset_csv(const std::string& path, const SurvivalDataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t c = 0; c < data.dim(); ++c) {
    const std::string name = c < data.columns.size() ? data.columns[c].name : "x" + std::to_string(c);
    out << (name.find_first_of(",\"") != std::string::npos ? "\"" + name + "\"" : name) << ',';
  }
  out << "time,event\n";
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t c = 0; c < data.dim(); ++c) out << fmt17(data.x(r, c)) << ',';
    out << fmt17(data.time[r]) << ',' << data.event[r] << '\n';
  }
}

std::pair<SurvivalDataset, SurvivalDataset> split(const SurvivalDataset& data, double fraction,
                                                  std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split: fraction must be in (0, 1)");
  require_fit_side(data, "split");
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  if (n_train == 0 || n_train == n) throw DataError("split: one side would be empty");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(RngStream{seed, fnv1a64("split")});
  for (std::size_t i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  const std::span<const std::size_t> tr(perm.data(), n_train), te(perm.data() + n_train, n - n_train);

  if (data.source && data.source_rows.size() == n) {
    std::vector<std::size_t> src_tr, src_te;
    for (auto i : tr) src_tr.push_back(data.source_rows[i]);
    for (auto i : te) src_te.push_back(data.source_rows[i]);
    const Preprocessor prep = fit_preprocessor(*data.source, src_tr, true);
    auto train = encode_rows(*data.source, src_tr, prep, DataRole::train);
    auto test = encode_rows(*data.source, src_te, prep, DataRole::test);
    train.source = test.source = data.source;
    return {std::move(train), std::move(test)};
  }
  auto train = data.subset(tr);
  auto test = data.subset(te);
  train.role = DataRole::train;
  test.role = DataRole::test;
  return {std::move(train), std::move(test)};
}

std::vector<double> quantile_grid(std::span<const double> times, std::span<const int> events,
                                  std::optional<std::size_t> k, bool shift) {
  if (times.size() != events.size()) throw std::invalid_argument("quantile_grid: length mismatch");
  std::vector<double> ev;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (events[i]) ev.push_back(times[i]);
  if (ev.empty()) throw DataError("quantile_grid: no uncensored training times");
  std::sort(ev.begin(), ev.end());
  const std::size_t K =
      k.value_or(static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(ev.size())))));
  if (K == 0) throw std::invalid_argument("quantile_grid: K must be >= 1");
  std::vector<double> grid;
  for (std::size_t j = 0; j < K; ++j) {
    const double p = K == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(K - 1);
    const double q = type7(ev, p);
    if (grid.empty() || q > grid.back()) grid.push_back(q);
  }
  if (shift) grid.front() = std::max(*std::min_element(times.begin(), times.end()) - kGridShift, 0.0);
  return grid;
}

std::vector<double> quantile_grid(const SurvivalDataset& train, std::optional<std::size_t> k, bool shift) {
  require_fit_side(train, "quantile_grid");
  return quantile_grid(train.time, train.event, k, shift);
}

std::vector<double> continuous_grid(std::span<const double> times) {
  std::vector<double> g(times.begin(), times.end());
  g.push_back(0.0);
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

std::vector<double> continuous_grid(const SurvivalDataset& train) {
  require_fit_side(train, "continuous_grid");
  return continuous_grid(std::span<const double>(train.time));
}

std::span<const MetricDef> metric_defs() noexcept {
  static constexpr std::array<MetricDef, 5> defs{{{"IBS", Direction::lower_better},
                                                  {"CI", Direction::higher_better},
                                                  {"Dcal", Direction::lower_better},
                                                  {"MAE", Direction::lower_better},
                                                  {"LogRank", Direction::lower_better}}};
  return defs;
}

RankRow rank_models(std::span<const std::optional<double>> scores, Direction direction) {
  RankRow row;
  row.ranks.resize(scores.size());
  int worst = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!scores[i]) continue;
    int better = 0;
    for (const auto& other : scores)
      if (other && (direction == Direction::lower_better ? *other < *scores[i] : *other > *scores[i]))
        ++better;
    row.ranks[i] = better + 1;
    worst = std::max(worst, better + 1);
  }
  if (worst == 0) {
    row.is_void = true;
    return row;
  }
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!scores[i]) row.ranks[i] = worst + 1;
  return row;
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median_of: empty input");
  std::sort(v.begin(), v.end());
  return median_sorted(v);
}

MedianRankCI bootstrap_median_rank(std::span<const double> ranks, RngStream stream,
                                   std::size_t replicates) {
  if (ranks.empty()) throw std::invalid_argument("bootstrap_median_rank: no datasets");
  if (replicates == 0) throw std::invalid_argument("bootstrap_median_rank: replicates must be >= 1");
  MedianRankCI out;
  out.median = median_of({ranks.begin(), ranks.end()});
  Rng rng(stream);
  const auto n = static_cast<std::int64_t>(ranks.size());
  std::vector<double> medians(replicates), draw(ranks.size());
  for (std::size_t b = 0; b < replicates; ++b) {
    for (auto& v : draw) v = ranks[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
    std::sort(draw.begin(), draw.end());
    medians[b] = median_sorted(draw);
  }
  std::sort(medians.begin(), medians.end());
  out.lo = type7(medians, 0.025);
  out.hi = type7(medians, 0.975);
  return out;
}

BenchModel km_baseline() {
  return {"KM", [](const SurvivalDataset& train, const SurvivalDataset& test, std::span<const double> grid) {
            require_fit_side(train, "km_baseline");
            const KmEstimate km = km_estimate(train.time, train.event);
            Matrix s(test.size(), grid.size());
            for (std::size_t g = 0; g < grid.size(); ++g) {
              const double v = km.at(grid[g]);
              for (std::size_t r = 0; r < test.size(); ++r) s(r, g) = v;
            }
            return s;
          }};
}

BenchModel pfn_bench_model(std::string name, Checkpoint checkpoint, bool canonical) {
  auto ck = std::make_shared<const Checkpoint>(std::move(checkpoint));
  auto model = std::make_shared<const PfnModel>(ck->model());
  return {std::move(name), [ck, model, canonical](const SurvivalDataset& train, const SurvivalDataset& test,
                                                  std::span<const double> grid) {
            require_fit_side(train, "pfn context");
            if (train.dim() > ck->config.d_max)
              throw DataError("dataset has " + std::to_string(train.dim()) + " features; model accepts at most " +
                              std::to_string(ck->config.d_max));
            return predict_survival(*model, ck->transform, train.x, train.time, train.event, test.x, grid,
                                    canonical);
          }};
}

JobResult run_job(const SurvivalDataset& data, const std::string& dataset_name, std::uint64_t seed,
                  const BenchModel& model) {
  JobResult job{dataset_name, seed, model.name, std::nullopt, {}};
  try {
    const auto [train, test] = split(data, 0.7, seed);
    const auto grid = continuous_grid(train);
    const Matrix surv = model.predict(train, test, grid);
    if (surv.rows() != test.size() || surv.cols() != grid.size())
      throw NumericError("prediction has the wrong shape");
    for (double v : surv.data())
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw NumericError("prediction outside [0, 1]");
    job.report = evaluate_predictions(surv, grid, train.time, train.event, test.time, test.event);
  } catch (const std::exception& e) {
    job.error = e.what();
  }
  return job;
}

namespace {

std::optional<double> metric_value(const MetricReport& r, std::string_view name) {
  if (name == "IBS") return r.ibs;
  if (name == "CI") return r.ci;
  if (name == "Dcal") return r.dcal;
  if (name == "MAE") return r.mae;
  return r.logrank;
}

template <class T>
void add_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

}  // namespace

RankTable build_rank_table(std::span<const JobResult> jobs) {
  RankTable t;
  for (const auto& j : jobs) {
    add_unique(t.models, j.model);
    add_unique(t.datasets, j.dataset);
  }
  for (const auto& ds : t.datasets) {
    for (const auto& def : metric_defs()) {
      std::vector<std::optional<double>> scores;
      for (const auto& m : t.models) {
        double sum = 0.0;
        std::size_t n = 0;
        bool failed = false;
        for (const auto& j : jobs) {
          if (j.dataset != ds || j.model != m) continue;
          const auto v = j.report ? metric_value(*j.report, def.name) : std::nullopt;
          if (!v || !std::isfinite(*v)) failed = true;
          else {
            sum += *v;
            ++n;
          }
        }
        scores.push_back(failed || n == 0 ? std::nullopt : std::optional<double>(sum / static_cast<double>(n)));
      }
      t.rows[{ds, def.name}] = rank_models(scores, def.direction);
      t.scores[{ds, def.name}] = std::move(scores);
    }
  }
  return t;
}

std::vector<ModelSummary> summarize_ranks(const RankTable& table, RngStream rng, std::size_t replicates) {
  std::vector<ModelSummary> out;
  for (std::size_t m = 0; m < table.models.size(); ++m) {
    ModelSummary s;
    s.model = table.models[m];
    const RngStream ms = rng.child(s.model);
    std::vector<double> pooled;
    for (const auto& def : metric_defs()) {
      std::vector<double> ranks;
      for (const auto& ds : table.datasets) {
        const auto& row = table.rows.at({ds, def.name});
        if (!row.is_void) ranks.push_back(*row.ranks[m]);
      }
      if (ranks.empty()) continue;
      s.per_metric[def.name] = bootstrap_median_rank(ranks, ms.child(def.name), replicates);
      pooled.insert(pooled.end(), ranks.begin(), ranks.end());
    }
    if (!pooled.empty()) s.overall = bootstrap_median_rank(pooled, ms.child("overall"), replicates);
    out.push_back(std::move(s));
  }
  return out;
}

std::string rank_table_csv(const RankTable& table) {
  std::ostringstream os;
  os << "dataset,metric,model,score,rank,status\n";
  for (const auto& ds : table.datasets)
    for (const auto& def : metric_defs()) {
      const auto& row = table.rows.at({ds, def.name});
      const auto& scores = table.scores.at({ds, def.name});
      for (std::size_t m = 0; m < table.models.size(); ++m) {
        os << ds << ',' << def.name << ',' << table.models[m] << ',';
        if (scores[m]) os << fmt17(*scores[m]);
        os << ',';
        if (row.ranks[m]) os << *row.ranks[m];
        os << ',' << (row.is_void ? "void" : scores[m] ? "ok" : "failed") << '\n';
      }
    }
  return os.str();
}

}  // namespace survpfn
