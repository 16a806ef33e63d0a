#pragma once

// Naive reference implementations used as oracles. They recompute everything
// from the raw sample by enumeration and share no code with the library.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

namespace survpfn::oracle {

struct Sample {
  std::vector<double> t;
  std::vector<int> d;
};

inline double count_at_risk(const Sample& s, double u) {
  double n = 0;
  for (double t : s.t)
    if (t >= u) n += 1;
  return n;
}

inline double count_events_at(const Sample& s, double u) {
  double n = 0;
  for (std::size_t i = 0; i < s.t.size(); ++i)
    if (s.t[i] == u && s.d[i]) n += 1;
  return n;
}

/// Product-limit value at u by scanning every distinct time.
inline double km(const Sample& s, double u) {
  std::set<double> distinct(s.t.begin(), s.t.end());
  double surv = 1.0;
  for (double v : distinct) {
    if (v > u) break;
    const double d = count_events_at(s, v);
    if (d > 0) surv *= 1.0 - d / count_at_risk(s, v);
  }
  return surv;
}

inline Sample flip(const Sample& s) {
  Sample c = s;
  for (int& v : c.d) v = v ? 0 : 1;
  return c;
}

/// Step curve lookup by linear scan.
inline double step(const std::vector<double>& grid, const std::vector<double>& row, double u) {
  double v = 1.0;
  for (std::size_t k = 0; k < grid.size(); ++k)
    if (grid[k] <= u) v = row[k];
  return v;
}

/// Harrell's C over unordered pairs, each pair inspected once.
inline double concordance(const std::vector<double>& risk, const Sample& s, bool* defined) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.t.size(); ++i)
    for (std::size_t j = i + 1; j < s.t.size(); ++j) {
      std::size_t first = i, second = j;
      if (s.t[j] < s.t[i]) std::swap(first, second);
      if (s.t[first] == s.t[second] || !s.d[first]) continue;
      den += 1;
      if (risk[first] > risk[second]) num += 1;
    }
  *defined = den > 0;
  return den > 0 ? num / den : 0.0;
}

inline double brier_at(const std::vector<std::vector<double>>& surv,
                       const std::vector<double>& grid, const Sample& test, const Sample& train,
                       double u, double floor) {
  const Sample cens = flip(train);
  double total = 0;
  for (std::size_t i = 0; i < test.t.size(); ++i) {
    const double s = step(grid, surv[i], u);
    if (test.t[i] <= u && test.d[i]) {
      total += s * s / std::max(km(cens, test.t[i]), floor);
    } else if (test.t[i] > u) {
      total += (1 - s) * (1 - s) / std::max(km(cens, u), floor);
    }
  }
  return total / static_cast<double>(test.t.size());
}

inline double ibs(const std::vector<std::vector<double>>& surv, const std::vector<double>& grid,
                  const Sample& test, const Sample& train, double tau, double floor) {
  std::vector<double> nodes{0.0, tau};
  for (double g : grid)
    if (g > 0 && g < tau) nodes.push_back(g);
  std::sort(nodes.begin(), nodes.end());
  double area = 0;
  for (std::size_t k = 1; k < nodes.size(); ++k)
    area += (nodes[k] - nodes[k - 1]) *
            (brier_at(surv, grid, test, train, nodes[k - 1], floor) +
             brier_at(surv, grid, test, train, nodes[k], floor)) /
            2;
  return area / tau;
}

inline std::vector<double> dcal_bins(const std::vector<double>& s, const std::vector<int>& d,
                                     int bins) {
  std::vector<double> mass(bins, 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (int b = 0; b < bins; ++b) {
      const double lo = static_cast<double>(b) / bins;
      const double hi = static_cast<double>(b + 1) / bins;
      if (d[i]) {
        const bool inside = (s[i] >= lo && s[i] < hi) || (b == bins - 1 && s[i] == 1.0);
        if (inside) mass[b] += 1;
      } else if (s[i] == 0) {
        if (b == 0) mass[b] += 1;
      } else {
        const double a = std::max(lo, 0.0), z = std::min(hi, s[i]);
        if (z > a) mass[b] += (z - a) / s[i];
      }
    }
  }
  return mass;
}

inline double dcal(const std::vector<double>& s, const std::vector<int>& d, int bins = 10) {
  const auto mass = dcal_bins(s, d, bins);
  const double e = static_cast<double>(s.size()) / bins;
  double chi = 0;
  for (double m : mass) chi += (m - e) * (m - e) / e;
  return chi;
}

/// Integral of the KM step curve on [0, limit], summed over distinct times.
inline double restricted_mean(const Sample& s, double limit) {
  std::set<double> pts(s.t.begin(), s.t.end());
  pts.insert(0.0);
  pts.insert(limit);
  double area = 0, prev = 0;
  for (double p : pts) {
    if (p > limit) break;
    if (p > prev) {
      area += km(s, prev) * (p - prev);
    }
    prev = p;
  }
  return area;
}

inline double mae_po(const std::vector<double>& pred, const Sample& s, bool* defined) {
  const double limit = *std::max_element(s.t.begin(), s.t.end());
  const double n = static_cast<double>(s.t.size());
  const double rm = restricted_mean(s, limit);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.t.size(); ++i) {
    if (s.d[i]) {
      num += std::abs(pred[i] - s.t[i]);
      den += 1;
      continue;
    }
    const double w = 1 - km(s, s.t[i]);
    if (w == 0) continue;
    Sample rest;
    for (std::size_t j = 0; j < s.t.size(); ++j)
      if (j != i) {
        rest.t.push_back(s.t[j]);
        rest.d.push_back(s.d[j]);
      }
    const double pseudo = n * rm - (n - 1) * restricted_mean(rest, limit);
    num += w * std::abs(pred[i] - pseudo);
    den += w;
  }
  *defined = den > 0;
  return den > 0 ? num / den : 0.0;
}

/// Log-rank statistic from an explicit risk table per distinct event time.
inline double log_rank(const Sample& a, const Sample& b) {
  Sample pooled = a;
  pooled.t.insert(pooled.t.end(), b.t.begin(), b.t.end());
  pooled.d.insert(pooled.d.end(), b.d.begin(), b.d.end());
  std::set<double> event_times;
  for (std::size_t i = 0; i < pooled.t.size(); ++i)
    if (pooled.d[i]) event_times.insert(pooled.t[i]);
  double u = 0, v = 0;
  for (double t : event_times) {
    const double n1 = count_at_risk(a, t), n = count_at_risk(pooled, t);
    const double d1 = count_events_at(a, t), d = count_events_at(pooled, t);
    u += d1 - d * n1 / n;
    if (n > 1) v += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1);
  }
  return v > 0 ? u * u / v : 0.0;
}

}  // namespace survpfn::oracle
