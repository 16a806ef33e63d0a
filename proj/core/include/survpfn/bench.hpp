#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "survpfn/checkpoint.hpp"
#include "survpfn/dataset.hpp"
#include "survpfn/metrics.hpp"
#include "survpfn/rng.hpp"

namespace survpfn {

/// Parsed CSV before encoding. Feature cells keep their text; empty, "NA" and
/// "nan" cells are missing.
struct RawTable {
  std::string path;
  std::vector<std::string> names;
  std::vector<bool> categorical;
  std::vector<std::vector<std::optional<std::string>>> cells;  // rows x features
  std::vector<double> time;
  std::vector<int> event;

  [[nodiscard]] std::size_t rows() const noexcept { return time.size(); }
};

/// Reads a CSV with reserved `time` and `event` columns. Categorical columns are
/// listed in `<stem>.json` next to the CSV as {"categorical": [..]}, or passed
/// explicitly. Errors name the offending row (1-based, header excluded).
RawTable read_table(const std::string& path,
                    std::optional<std::set<std::string>> categorical = std::nullopt);

/// Encoding fitted on a set of rows.
///
/// The schema (category levels, which columns get a missing indicator) comes
/// from the whole table so every split has the same width. Medians, modes and
/// standardization moments come from the fitted rows only.
struct Preprocessor {
  struct Column {
    bool categorical = false;
    bool has_missing = false;
    std::vector<std::string> levels;  // sorted
    double median = 0.0;
    std::string mode;
    double mean = 0.0;
    double sd = 1.0;
  };
  std::vector<Column> columns;
  bool standardize = false;

  [[nodiscard]] std::vector<ColumnInfo> column_info(const RawTable& table) const;
};

Preprocessor fit_preprocessor(const RawTable& table, std::span<const std::size_t> rows,
                              bool standardize);
SurvivalDataset encode_rows(const RawTable& table, std::span<const std::size_t> rows,
                            const Preprocessor& prep, DataRole role);

/// One-hot encoding, median/mode imputation and missing indicators fitted on
/// all rows; no standardization. Keeps the table for split().
SurvivalDataset load_dataset(const std::string& path);
SurvivalDataset dataset_from_table(RawTable table);

/// Writes the encoded dataset as an all-numeric CSV (17 significant digits).
void write_dataset_csv(const std::string& path, const SurvivalDataset& data);

/// Seeded uniform shuffle then prefix split with floor(n * fraction) training
/// rows. Datasets loaded from CSV are re-encoded with statistics (imputation
/// and standardization) from the training rows; the test side is marked
/// DataRole::test.
std::pair<SurvivalDataset, SurvivalDataset> split(const SurvivalDataset& data, double fraction,
                                                  std::uint64_t seed);

inline constexpr double kGridShift = 1e-5;

/// K evenly spaced type-7 quantiles of the uncensored training times
/// (K = ceil(sqrt(#events)) when unset), deduplicated. With `shift`, the first
/// point becomes max(min training time - 1e-5, 0).
std::vector<double> quantile_grid(const SurvivalDataset& train,
                                  std::optional<std::size_t> k = std::nullopt, bool shift = false);
std::vector<double> quantile_grid(std::span<const double> times, std::span<const int> events,
                                  std::optional<std::size_t> k = std::nullopt, bool shift = false);

/// {0} U unique training times, strictly increasing.
std::vector<double> continuous_grid(std::span<const double> times);
std::vector<double> continuous_grid(const SurvivalDataset& train);

// ---------------------------------------------------------------------------
// Ranking

enum class Direction { lower_better, higher_better };

struct MetricDef {
  const char* name;
  Direction direction;
};

/// IBS, CI, Dcal, MAE, LogRank in report order.
std::span<const MetricDef> metric_defs() noexcept;

/// Ranks for one (dataset, metric) pair. Entry i is empty only in a void row.
struct RankRow {
  std::vector<std::optional<int>> ranks;
  bool is_void = false;
};

/// Min-tied ranks over completed models (nullopt scores are failures); every
/// failure gets worst completed rank + 1. All failures: void row.
RankRow rank_models(std::span<const std::optional<double>> scores, Direction direction);

struct MedianRankCI {
  double median = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Sample median (mean of the middle pair for even counts).
double median_of(std::vector<double> v);

/// Resamples `ranks` with replacement `replicates` times and reports the
/// observed median with the type-7 2.5 / 97.5 percentiles of the replicate medians.
MedianRankCI bootstrap_median_rank(std::span<const double> ranks, RngStream rng,
                                   std::size_t replicates = 10000);

// ---------------------------------------------------------------------------
// Benchmark jobs

/// A model under test: produces a survival matrix on `grid` for test rows.
struct BenchModel {
  std::string name;
  std::function<Matrix(const SurvivalDataset& train, const SurvivalDataset& test,
                       std::span<const double> grid)>
      predict;
};

/// Training-set Kaplan-Meier curve for every test row.
BenchModel km_baseline();
/// Checkpointed SurvivalPFN: the training split is the context.
BenchModel pfn_bench_model(std::string name, Checkpoint checkpoint, bool canonical = false);

struct JobResult {
  std::string dataset;
  std::uint64_t seed = 0;
  std::string model;
  std::optional<MetricReport> report;
  std::string error;  // set when the job failed
};

/// load -> split(0.7, seed) -> continuous grid -> predict -> metrics.
/// Exceptions and non-finite predictions become failed jobs.
JobResult run_job(const SurvivalDataset& data, const std::string& dataset_name,
                  std::uint64_t seed, const BenchModel& model);

struct RankTable {
  std::vector<std::string> models;
  std::vector<std::string> datasets;
  /// (dataset, metric) -> row; scores are seed means, failed when any seed failed.
  std::map<std::pair<std::string, std::string>, RankRow> rows;
  std::map<std::pair<std::string, std::string>, std::vector<std::optional<double>>> scores;
};

RankTable build_rank_table(std::span<const JobResult> jobs);

struct ModelSummary {
  std::string model;
  std::map<std::string, MedianRankCI> per_metric;
  MedianRankCI overall;
};

/// Median rank per metric over datasets and the overall rank pooled over metrics.
std::vector<ModelSummary> summarize_ranks(const RankTable& table, RngStream rng,
                                          std::size_t replicates = 10000);

/// CSV: dataset,metric,model,score,rank (void rows and failures marked).
std::string rank_table_csv(const RankTable& table);

}  // namespace survpfn
