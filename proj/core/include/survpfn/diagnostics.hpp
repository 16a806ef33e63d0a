#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "survpfn/matrix.hpp"
#include "survpfn/prior.hpp"

namespace survpfn {

struct QuantizerOptions {
  std::size_t cells = 8;   // k-means cells over standardized X
  /// Fewer cells are used on small samples: at most n / min_cell_rows (>= 1).
  std::size_t min_cell_rows = 128;
  std::size_t bins = 8;    // quantile bins per variable
  std::uint64_t seed = 0;  // k-means++ initialization
  std::size_t max_iterations = 100;
};

/// k-means labels for the rows of X after column standardization. Rows are
/// processed in a canonical (lexicographic) order so the labelling does not
/// depend on the input row order. Fewer cells are used when X has fewer
/// distinct rows.
std::vector<std::size_t> kmeans_cells(const Matrix& X, const QuantizerOptions& opt = {});

/// Quantile-bin labels: cut points at the empirical quantiles k/bins; tied
/// values always share a bin.
std::vector<std::size_t> quantile_bins(std::span<const double> v, std::size_t bins);

/// Plug-in I(E;C|X) in nats with the Miller-Madow correction taken over the full
/// quantizer grid (B bins per margin, B^2 joint). X is
/// quantized into k-means cells; E and C are binned by quantiles within each cell.
double estimate_cmi(std::span<const double> e, std::span<const double> c, const Matrix& X,
                    const QuantizerOptions& opt = {});

/// Plug-in E_X[H(T|X)] in nats, with T binned by global quantiles and X by the
/// same k-means cells.
double conditional_entropy(std::span<const double> t, const Matrix& X,
                           const QuantizerOptions& opt = {});

struct Dispersion {
  double log10_cv = 0.0;
  bool floored = false;  // CV or |mean| hit its floor
};

/// log10 of std(T)/|mean(T)| with the n-1 standard deviation, CV floored at 1e-12.
Dispersion observed_dispersion(std::span<const double> t);

struct TaskDiagnostics {
  double censoring_rate = 0.0;
  double log10_cv = 0.0;
  double conditional_entropy = 0.0;
  double cmi = 0.0;
};

TaskDiagnostics diagnose_task(const TaskSample& task, const QuantizerOptions& opt = {});

struct Band {
  std::vector<double> p10, p25, p50, p75, p90;
};

struct CurveBands {
  std::vector<double> grid;  // normalized time in [0, 1]
  Band event;                // P(E > t)
  Band censor;               // P(C > t)
  Band km;                   // Kaplan-Meier of the observed data
};

/// Pointwise percentile bands across tasks. Each task's time axis is divided by
/// its largest observed time.
CurveBands curve_bands(std::span<const TaskSample> tasks, std::span<const double> grid);

}  // namespace survpfn
