#include "survpfn/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "survpfn/metrics.hpp"
#include "survpfn/rng.hpp"

namespace survpfn {

namespace {

Matrix standardized(const Matrix& X) {
  Matrix z = X;
  const std::size_t n = X.rows();
  for (std::size_t c = 0; c < X.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += X(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (X(r, c) - mean) * (X(r, c) - mean);
    var /= static_cast<double>(n);
    const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
    for (std::size_t r = 0; r < n; ++r) z(r, c) = (X(r, c) - mean) * inv;
  }
  return z;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// Plug-in entropy in nats of a count table.
double entropy(const std::vector<double>& counts, double n) {
  double h = 0.0;
  for (double c : counts) {
    if (c <= 0.0) continue;
    const double p = c / n;
    h -= p * std::log(p);
  }
  return h;
}

double percentile(std::vector<double>& v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<std::size_t> kmeans_cells(const Matrix& X, const QuantizerOptions& opt) {
  const std::size_t n = X.rows(), d = X.cols();
  std::vector<std::size_t> labels(n, 0);
  const std::size_t cells =
      std::min(opt.cells, std::max<std::size_t>(1, opt.min_cell_rows ? n / opt.min_cell_rows : n));
  if (n == 0 || cells <= 1 || d == 0) return labels;
  const Matrix Z = standardized(X);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto ra = Z.row(a), rb = Z.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });

  // k-means++ seeding over the canonical order.
  Rng rng(RngStream{opt.seed, 0x4B4D}.child("kmeans"));
  Matrix centers;
  centers.push_row(Z.row(order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))]));
  std::vector<double> dist(n);
  while (centers.rows() < cells) {
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centers.rows(); ++c)
        best = std::min(best, sq_dist(Z.row(order[k]), centers.row(c)));
      dist[k] = best;
      total += best;
    }
    if (!(total > 0.0)) break;  // every row coincides with a center
    centers.push_row(Z.row(order[rng.categorical(dist)]));
  }

  const std::size_t K = centers.rows();
  std::vector<std::size_t> assign(n, 0);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t best_c = 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < K; ++c) {
        const double dd = sq_dist(Z.row(order[k]), centers.row(c));
        if (dd < best) {
          best = dd;
          best_c = c;
        }
      }
      if (assign[k] != best_c) changed = true;
      assign[k] = best_c;
    }
    if (!changed) break;
    Matrix sums(K, d);
    std::vector<double> counts(K, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      counts[assign[k]] += 1.0;
      auto row = Z.row(order[k]);
      for (std::size_t j = 0; j < d; ++j) sums(assign[k], j) += row[j];
    }
    for (std::size_t c = 0; c < K; ++c)
      if (counts[c] > 0.0)
        for (std::size_t j = 0; j < d; ++j) centers(c, j) = sums(c, j) / counts[c];
  }
  for (std::size_t k = 0; k < n; ++k) labels[order[k]] = assign[k];
  return labels;
}

std::vector<std::size_t> quantile_bins(std::span<const double> v, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("quantile_bins: bins must be >= 1");
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::vector<double> cuts;
  for (std::size_t k = 1; k < bins && n > 0; ++k) cuts.push_back(sorted[k * n / bins]);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Number of cut points at or below v: tied values land together.
    out[i] = static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), v[i]) -
                                      cuts.begin());
  }
  return out;
}

double estimate_cmi(std::span<const double> e, std::span<const double> c, const Matrix& X,
                    const QuantizerOptions& opt) {
  const std::size_t n = e.size();
  if (c.size() != n || X.rows() != n) throw std::invalid_argument("estimate_cmi: length mismatch");
  if (n < 64) throw std::invalid_argument("estimate_cmi: at least 64 rows required");
  const auto cells = kmeans_cells(X, opt);
  const std::size_t K = *std::max_element(cells.begin(), cells.end()) + 1;
  const std::size_t B = opt.bins;
  double cmi = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> ek, ck;
    for (std::size_t i = 0; i < n; ++i)
      if (cells[i] == k) {
        ek.push_back(e[i]);
        ck.push_back(c[i]);
      }
    if (ek.size() < 2) continue;
    const auto be = quantile_bins(ek, B), bc = quantile_bins(ck, B);
    std::vector<double> ce(B, 0.0), cc(B, 0.0), joint(B * B, 0.0);
    for (std::size_t i = 0; i < ek.size(); ++i) {
      ce[be[i]] += 1.0;
      cc[bc[i]] += 1.0;
      joint[be[i] * B + bc[i]] += 1.0;
    }
    const auto nk = static_cast<double>(ek.size());
    // Miller-Madow: each entropy gains (m - 1) / 2n, with m the number of cells
    // of its quantizer grid (B per margin, B^2 jointly).
    const auto b = static_cast<double>(B);
    const double mi = entropy(ce, nk) + entropy(cc, nk) - entropy(joint, nk) -
                      (b - 1.0) * (b - 1.0) / (2.0 * nk);
    cmi += nk / static_cast<double>(n) * mi;
  }
  return cmi;
}

double conditional_entropy(std::span<const double> t, const Matrix& X, const QuantizerOptions& opt) {
  const std::size_t n = t.size();
  if (X.rows() != n) throw std::invalid_argument("conditional_entropy: length mismatch");
  if (n < 64) throw std::invalid_argument("conditional_entropy: at least 64 rows required");
  const auto cells = kmeans_cells(X, opt);
  const auto bins = quantile_bins(t, opt.bins);
  const std::size_t K = *std::max_element(cells.begin(), cells.end()) + 1;
  std::vector<std::vector<double>> counts(K, std::vector<double>(opt.bins, 0.0));
  std::vector<double> sizes(K, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    counts[cells[i]][bins[i]] += 1.0;
    sizes[cells[i]] += 1.0;
  }
  double h = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    if (sizes[k] > 0.0) h += sizes[k] / static_cast<double>(n) * entropy(counts[k], sizes[k]);
  return h;
}

Dispersion observed_dispersion(std::span<const double> t) {
  if (t.size() < 2) throw std::invalid_argument("observed_dispersion: at least 2 rows required");
  double mean = 0.0;
  for (double v : t) mean += v;
  mean /= static_cast<double>(t.size());
  double ss = 0.0;
  for (double v : t) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(t.size() - 1));
  Dispersion out;
  double denom = std::abs(mean);
  if (!(denom > std::numeric_limits<double>::min())) {
    denom = std::numeric_limits<double>::min();
    out.floored = true;
  }
  double cv = sd / denom;
  if (!(cv >= 1e-12)) {
    cv = 1e-12;
    out.floored = true;
  }
  out.log10_cv = std::log10(cv);
  return out;
}

TaskDiagnostics diagnose_task(const TaskSample& task, const QuantizerOptions& opt) {
  TaskDiagnostics d;
  const auto& ctx = task.context;
  d.censoring_rate = ctx.censoring_rate();
  d.log10_cv = observed_dispersion(ctx.time).log10_cv;
  d.conditional_entropy = conditional_entropy(ctx.time, ctx.x, opt);
  d.cmi = estimate_cmi(task.context_event_latent, task.context_censor_latent, ctx.x, opt);
  return d;
}

CurveBands curve_bands(std::span<const TaskSample> tasks, std::span<const double> grid) {
  if (tasks.size() < 10) throw std::invalid_argument("curve_bands: at least 10 tasks required");
  const std::size_t G = grid.size();
  std::vector<std::vector<double>> ev(G), ce(G), km(G);
  auto tail = [](std::span<const double> v, double t) {
    double c = 0.0;
    for (double x : v)
      if (x > t) c += 1.0;
    return c / static_cast<double>(v.size());
  };
  for (const auto& task : tasks) {
    const auto& ctx = task.context;
    const double scale = *std::max_element(ctx.time.begin(), ctx.time.end());
    const KmEstimate k = km_estimate(ctx.time, ctx.event);
    for (std::size_t g = 0; g < G; ++g) {
      const double t = grid[g] * scale;
      ev[g].push_back(tail(task.context_event_latent, t));
      ce[g].push_back(tail(task.context_censor_latent, t));
      km[g].push_back(k.at(t));
    }
  }
  CurveBands out;
  out.grid.assign(grid.begin(), grid.end());
  auto fill = [&](std::vector<std::vector<double>>& src, Band& band) {
    for (std::size_t g = 0; g < G; ++g) {
      band.p10.push_back(percentile(src[g], 0.10));
      band.p25.push_back(percentile(src[g], 0.25));
      band.p50.push_back(percentile(src[g], 0.50));
      band.p75.push_back(percentile(src[g], 0.75));
      band.p90.push_back(percentile(src[g], 0.90));
    }
  };
  fill(ev, out.event);
  fill(ce, out.censor);
  fill(km, out.km);
  return out;
}

}  // namespace survpfn
