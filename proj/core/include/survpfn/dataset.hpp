#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "survpfn/matrix.hpp"

namespace survpfn {

enum class ColumnKind { numeric, categorical };

/// Describes one encoded feature column.
struct ColumnInfo {
  std::string name;     // encoded name, e.g. "stage=II" or "age__missing"
  std::string source;   // originating CSV column
  ColumnKind kind = ColumnKind::numeric;
  bool missing_indicator = false;
  std::string level;    // category level for one-hot columns
};

/// Where a dataset sits relative to a train/test split. Statistics may only be
/// fitted on `full` or `train` data.
enum class DataRole { full, train, test };

struct RawTable;

/// Right-censored survival data: covariates X, observed times T, indicators D.
struct SurvivalDataset {
  Matrix x;
  std::vector<double> time;
  std::vector<int> event;
  std::vector<ColumnInfo> columns;
  DataRole role = DataRole::full;

  /// Original table and row ids when loaded from CSV; lets split() refit
  /// preprocessing on training rows only.
  std::shared_ptr<const RawTable> source;
  std::vector<std::size_t> source_rows;

  [[nodiscard]] std::size_t size() const noexcept { return time.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return x.cols(); }
  [[nodiscard]] double censoring_rate() const noexcept;

  /// Throws DataError on negative/non-finite times, non-binary events or
  /// inconsistent row counts.
  void validate() const;

  [[nodiscard]] SurvivalDataset subset(std::span<const std::size_t> rows) const;
};

/// Throws LeakageError when `data` is a held-out split. Call before fitting any
/// statistic (grids, transforms, censoring KM, preprocessing).
void require_fit_side(const SurvivalDataset& data, const char* what);

}  // namespace survpfn
