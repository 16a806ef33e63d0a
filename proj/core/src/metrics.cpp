#include "survpfn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "survpfn/errors.hpp"

namespace survpfn {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": length mismatch");
}

double quantile7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

void SurvivalCurve::validate() const {
  if (grid.size() != values.size() || grid.empty())
    throw std::invalid_argument("SurvivalCurve: grid and values must be nonempty and aligned");
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (k > 0 && !(grid[k] > grid[k - 1]))
      throw std::invalid_argument("SurvivalCurve: grid must be strictly increasing");
    if (!(values[k] >= 0.0 && values[k] <= 1.0))
      throw std::invalid_argument("SurvivalCurve: values must lie in [0,1]");
    if (k > 0 && values[k] > values[k - 1])
      throw std::invalid_argument("SurvivalCurve: values must be nonincreasing");
  }
}

double SurvivalCurve::at(double t) const noexcept { return survival_at(grid, values, t); }

double survival_at(std::span<const double> grid, std::span<const double> values,
                   double t) noexcept {
  const auto k = static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), t) -
                                          grid.begin());
  return k == 0 ? 1.0 : values[k - 1];
}

// ---------------------------------------------------------------------------

double KmEstimate::at(double t) const noexcept {
  const auto k = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) -
                                          times.begin());
  return k == 0 ? 1.0 : survival[k - 1];
}

KmEstimate km_estimate(std::span<const double> times, std::span<const int> events) {
  check_lengths(times.size(), events.size(), "km_estimate");
  if (times.empty()) throw std::invalid_argument("km_estimate: empty sample");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  KmEstimate km;
  double s = 1.0;
  auto remaining = static_cast<double>(times.size());
  for (std::size_t i = 0; i < order.size();) {
    const double t = times[order[i]];
    double d = 0.0, tied = 0.0;
    for (; i < order.size() && times[order[i]] == t; ++i) {
      tied += 1.0;
      if (events[order[i]] != 0) d += 1.0;
    }
    if (d > 0.0) {
      s *= 1.0 - d / remaining;
      km.times.push_back(t);
      km.at_risk.push_back(remaining);
      km.events.push_back(d);
      km.survival.push_back(s);
    }
    remaining -= tied;
  }
  return km;
}

KmEstimate censoring_km(std::span<const double> times, std::span<const int> events) {
  std::vector<int> flipped(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) flipped[i] = events[i] != 0 ? 0 : 1;
  return km_estimate(times, flipped);
}

// ---------------------------------------------------------------------------

std::optional<double> concordance_index(std::span<const double> risk,
                                        std::span<const double> times,
                                        std::span<const int> events) {
  check_lengths(risk.size(), times.size(), "concordance_index");
  check_lengths(events.size(), times.size(), "concordance_index");
  const std::size_t n = times.size();
  double comparable = 0.0, concordant = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (events[i] == 0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !(times[i] < times[j])) continue;
      comparable += 1.0;
      if (risk[i] > risk[j]) concordant += 1.0;
    }
  }
  if (comparable == 0.0) return std::nullopt;
  return concordant / comparable;
}

// ---------------------------------------------------------------------------

BrierResult brier_score(const Matrix& surv, std::span<const double> grid,
                        std::span<const double> times, std::span<const int> events,
                        const KmEstimate& censor_km, double u, double floor) {
  check_lengths(surv.rows(), times.size(), "brier_score");
  check_lengths(events.size(), times.size(), "brier_score");
  check_lengths(surv.cols(), grid.size(), "brier_score");
  if (times.empty()) throw std::invalid_argument("brier_score: empty test set");
  BrierResult res;
  const double g_u_raw = censor_km.at(u);
  const double g_u = std::max(g_u_raw, floor);
  if (g_u_raw < floor) res.floored = true;
  double total = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double s = survival_at(grid, surv.row(i), u);
    if (times[i] <= u && events[i] != 0) {
      const double g_raw = censor_km.at(times[i]);
      if (g_raw < floor) res.floored = true;
      total += s * s / std::max(g_raw, floor);
    } else if (times[i] > u) {
      total += (1.0 - s) * (1.0 - s) / g_u;
    }
  }
  res.value = total / static_cast<double>(times.size());
  return res;
}

BrierResult integrated_brier(const Matrix& surv, std::span<const double> grid,
                             std::span<const double> times, std::span<const int> events,
                             const KmEstimate& censor_km, double tau, double floor) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("integrated_brier: horizon must be positive and finite");
  std::vector<double> nodes{0.0};
  for (double g : grid)
    if (g > 0.0 && g < tau) nodes.push_back(g);
  nodes.push_back(tau);
  BrierResult res;
  double prev_u = 0.0, prev_bs = 0.0, area = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto bs = brier_score(surv, grid, times, events, censor_km, nodes[k], floor);
    res.floored = res.floored || bs.floored;
    if (k > 0) area += 0.5 * (bs.value + prev_bs) * (nodes[k] - prev_u);
    prev_u = nodes[k];
    prev_bs = bs.value;
  }
  res.value = area / tau;
  return res;
}

double default_horizon(std::span<const double> train_times) {
  if (train_times.empty()) throw std::invalid_argument("default_horizon: empty training times");
  return quantile7({train_times.begin(), train_times.end()}, 0.9);
}

// ---------------------------------------------------------------------------

std::vector<double> d_calibration_bins(std::span<const double> surv_at_time,
                                       std::span<const int> events, std::size_t n_bins) {
  check_lengths(surv_at_time.size(), events.size(), "d_calibration");
  if (n_bins == 0) throw std::invalid_argument("d_calibration: n_bins must be >= 1");
  const double width = 1.0 / static_cast<double>(n_bins);
  std::vector<double> mass(n_bins, 0.0);
  for (std::size_t i = 0; i < surv_at_time.size(); ++i) {
    const double s = surv_at_time[i];
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("d_calibration: values must lie in [0,1]");
    if (events[i] != 0) {
      const auto b = std::min(static_cast<std::size_t>(s * static_cast<double>(n_bins)), n_bins - 1);
      mass[b] += 1.0;
    } else if (s == 0.0) {
      mass[0] += 1.0;
    } else {
      for (std::size_t b = 0; b < n_bins; ++b) {
        const double lo = static_cast<double>(b) * width;
        const double hi = b + 1 == n_bins ? 1.0 : static_cast<double>(b + 1) * width;
        const double overlap = std::min(hi, s) - lo;
        if (overlap > 0.0) mass[b] += overlap / s;
      }
    }
  }
  return mass;
}

double d_calibration(std::span<const double> surv_at_time, std::span<const int> events,
                     std::size_t n_bins) {
  const auto mass = d_calibration_bins(surv_at_time, events, n_bins);
  const double expected = static_cast<double>(surv_at_time.size()) / static_cast<double>(n_bins);
  if (!(expected > 0.0)) return 0.0;
  double chi2 = 0.0;
  for (double o : mass) chi2 += (o - expected) * (o - expected) / expected;
  return chi2;
}

// ---------------------------------------------------------------------------

double km_restricted_mean(const KmEstimate& km, double limit) {
  double area = 0.0, prev_t = 0.0, s = 1.0;
  for (std::size_t k = 0; k < km.times.size() && km.times[k] < limit; ++k) {
    area += s * (km.times[k] - prev_t);
    prev_t = km.times[k];
    s = km.survival[k];
  }
  if (limit > prev_t) area += s * (limit - prev_t);
  return area;
}

std::optional<double> mae_po(std::span<const double> predicted, std::span<const double> times,
                             std::span<const int> events) {
  check_lengths(predicted.size(), times.size(), "mae_po");
  check_lengths(events.size(), times.size(), "mae_po");
  const std::size_t n = times.size();
  if (n == 0) return std::nullopt;
  const KmEstimate km = km_estimate(times, events);
  const double limit = *std::max_element(times.begin(), times.end());
  const double rm = km_restricted_mean(km, limit);
  const auto nd = static_cast<double>(n);
  double num = 0.0, den = 0.0;
  std::vector<double> t_minus;
  std::vector<int> d_minus;
  for (std::size_t i = 0; i < n; ++i) {
    double target, w;
    if (events[i] != 0) {
      target = times[i];
      w = 1.0;
    } else {
      w = 1.0 - km.at(times[i]);
      if (w == 0.0) continue;
      t_minus.clear();
      d_minus.clear();
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        t_minus.push_back(times[j]);
        d_minus.push_back(events[j]);
      }
      const double rm_minus = n > 1 ? km_restricted_mean(km_estimate(t_minus, d_minus), limit) : 0.0;
      target = nd * rm - (nd - 1.0) * rm_minus;
    }
    num += w * std::abs(predicted[i] - target);
    den += w;
  }
  if (!(den > 0.0)) return std::nullopt;
  return num / den;
}

// ---------------------------------------------------------------------------

double log_rank(std::span<const double> ta, std::span<const int> da, std::span<const double> tb,
                std::span<const int> db) {
  check_lengths(ta.size(), da.size(), "log_rank");
  check_lengths(tb.size(), db.size(), "log_rank");
  if (ta.empty() || tb.empty()) throw std::invalid_argument("log_rank: both samples must be nonempty");
  struct Obs {
    double t;
    int event;
    int group;
  };
  std::vector<Obs> all;
  for (std::size_t i = 0; i < ta.size(); ++i) all.push_back({ta[i], da[i] != 0 ? 1 : 0, 0});
  for (std::size_t i = 0; i < tb.size(); ++i) all.push_back({tb[i], db[i] != 0 ? 1 : 0, 1});
  std::sort(all.begin(), all.end(), [](const Obs& a, const Obs& b) { return a.t < b.t; });
  double n = static_cast<double>(all.size());
  double n_a = static_cast<double>(ta.size());
  double o_minus_e = 0.0, var = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    const double t = all[i].t;
    double d = 0.0, d_a = 0.0, leave = 0.0, leave_a = 0.0;
    for (; i < all.size() && all[i].t == t; ++i) {
      leave += 1.0;
      if (all[i].group == 0) leave_a += 1.0;
      if (all[i].event) {
        d += 1.0;
        if (all[i].group == 0) d_a += 1.0;
      }
    }
    if (d > 0.0) {
      const double p = n_a / n;
      o_minus_e += d_a - d * p;
      if (n > 1.0) var += d * p * (1.0 - p) * (n - d) / (n - 1.0);
    }
    n -= leave;
    n_a -= leave_a;
  }
  if (!(var > 0.0)) return 0.0;
  return o_minus_e * o_minus_e / var;
}

// ---------------------------------------------------------------------------

double median_survival_time(std::span<const double> grid, std::span<const double> values) {
  if (grid.empty() || grid.size() != values.size())
    throw std::invalid_argument("median_survival_time: invalid curve");
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (values[k] <= 0.5) return grid[k];
  return grid.back();
}

double median_survival_time(const SurvivalCurve& curve) {
  return median_survival_time(curve.grid, curve.values);
}

// ---------------------------------------------------------------------------

MetricReport evaluate_predictions(const Matrix& surv, std::span<const double> grid,
                                  std::span<const double> train_times,
                                  std::span<const int> train_events,
                                  std::span<const double> test_times,
                                  std::span<const int> test_events,
                                  std::optional<double> horizon) {
  check_lengths(surv.rows(), test_times.size(), "evaluate_predictions");
  check_lengths(surv.cols(), grid.size(), "evaluate_predictions");
  for (double v : surv.data())
    if (!std::isfinite(v)) throw NumericError("evaluate_predictions: non-finite survival value");
  MetricReport r;
  const std::size_t n = test_times.size();
  std::vector<double> median(n), risk(n), at_own(n);
  for (std::size_t i = 0; i < n; ++i) {
    median[i] = median_survival_time(grid, surv.row(i));
    risk[i] = -median[i];
    at_own[i] = survival_at(grid, surv.row(i), test_times[i]);
  }
  const double tau = horizon ? *horizon : default_horizon(train_times);
  r.horizon = tau;
  if (tau > 0.0 && std::isfinite(tau)) {
    const auto ibs = integrated_brier(surv, grid, test_times, test_events,
                                      censoring_km(train_times, train_events), tau);
    r.ibs = ibs.value;
    r.ipcw_floored = ibs.floored;
  }
  r.ci = concordance_index(risk, test_times, test_events);
  r.dcal = d_calibration(at_own, test_events);
  r.mae = mae_po(median, test_times, test_events);
  const std::vector<int> ones(n, 1);
  r.logrank = log_rank(test_times, test_events, median, ones);
  return r;
}

std::string to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v && std::isfinite(*v))
      j[key] = *v;
    else
      j[key] = nullptr;
  };
  put("IBS", report.ibs);
  put("CI", report.ci);
  put("Dcal", report.dcal);
  put("MAE", report.mae);
  put("LogRank", report.logrank);
  j["horizon"] = report.horizon;
  j["ipcw_floored"] = report.ipcw_floored;
  return j.dump();
}

}  // namespace survpfn
