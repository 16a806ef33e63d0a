#include "survpfn/dataset.hpp"

#include <cmath>
#include <string>

#include "survpfn/errors.hpp"

namespace survpfn {

double SurvivalDataset::censoring_rate() const noexcept {
  if (event.empty()) return 0.0;
  std::size_t censored = 0;
  for (int d : event) censored += d == 0 ? 1 : 0;
  return static_cast<double>(censored) / static_cast<double>(event.size());
}

void SurvivalDataset::validate() const {
  if (event.size() != time.size() || x.rows() != time.size())
    throw DataError("dataset: row counts differ between covariates, times and events");
  if (!columns.empty() && columns.size() != x.cols())
    throw DataError("dataset: column metadata does not match the feature width");
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (!std::isfinite(time[i]) || time[i] < 0.0)
      throw DataError("dataset: row " + std::to_string(i) + " has an invalid time");
    if (event[i] != 0 && event[i] != 1)
      throw DataError("dataset: row " + std::to_string(i) + " has a non-binary event");
  }
}

SurvivalDataset SurvivalDataset::subset(std::span<const std::size_t> rows) const {
  SurvivalDataset out;
  out.x = x.select_rows(rows);
  out.columns = columns;
  out.role = role;
  out.source = source;
  for (auto r : rows) {
    out.time.push_back(time[r]);
    out.event.push_back(event[r]);
    if (!source_rows.empty()) out.source_rows.push_back(source_rows[r]);
  }
  return out;
}

void require_fit_side(const SurvivalDataset& data, const char* what) {
  if (data.role == DataRole::test)
    throw LeakageError(std::string(what) + " must not be fitted on held-out test rows");
}

}  // namespace survpfn
