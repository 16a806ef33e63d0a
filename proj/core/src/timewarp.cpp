#include "survpfn/timewarp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "survpfn/errors.hpp"

namespace survpfn {

const char* to_string(TransformKind k) noexcept {
  return k == TransformKind::lognormal2normal ? "lognormal2normal" : "time2quantile";
}

TransformKind transform_from_string(const std::string& s) {
  if (s == "lognormal2normal") return TransformKind::lognormal2normal;
  if (s == "time2quantile") return TransformKind::time2quantile;
  throw ConfigError("unknown time transform '" + s + "'");
}

TimeTransform TimeTransform::fit_lognormal2normal(std::span<const double> times) {
  if (times.size() < 2) throw DataError("lognormal2normal: at least 2 times required");
  double m = 0.0;
  for (double t : times) m += t;
  m /= static_cast<double>(times.size());
  if (!(m > 0.0)) throw DataError("lognormal2normal: mean time must be > 0");
  double ss = 0.0;
  for (double t : times) ss += (t - m) * (t - m);
  const double s2 = ss / static_cast<double>(times.size() - 1);
  const double sigma2 = std::log1p(s2 / (m * m));
  const double sigma = std::max(std::sqrt(sigma2), kSigmaFloor);
  return lognormal(std::log(m) - 0.5 * sigma2, sigma);
}

TimeTransform TimeTransform::lognormal(double mu, double sigma) {
  if (!std::isfinite(mu) || !(sigma > 0.0)) throw DataError("lognormal transform: invalid parameters");
  TimeTransform t;
  t.kind_ = TransformKind::lognormal2normal;
  t.mu_ = mu;
  t.sigma_ = sigma;
  return t;
}

TimeTransform TimeTransform::fit_time2quantile(std::span<const double> times) {
  std::vector<double> sorted(times.begin(), times.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.empty() || !(sorted.back() > 0.0))
    throw DataError("time2quantile: at least one positive time required");
  const double n = static_cast<double>(sorted.size());
  std::vector<double> knots{0.0}, cdf{0.0};
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    // Last occurrence of each unique value gives the right-continuous CDF.
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    if (sorted[i] <= 0.0) continue;
    knots.push_back(sorted[i]);
    cdf.push_back(static_cast<double>(i + 1) / n);
  }
  cdf.back() = 1.0;
  return quantile(std::move(knots), std::move(cdf));
}

TimeTransform TimeTransform::quantile(std::vector<double> knots, std::vector<double> cdf) {
  if (knots.size() < 2 || knots.size() != cdf.size() || knots.front() != 0.0 ||
      cdf.front() != 0.0 || cdf.back() != 1.0)
    throw DataError("time2quantile: invalid knots");
  for (std::size_t j = 1; j < knots.size(); ++j)
    if (!(knots[j] > knots[j - 1]) || cdf[j] < cdf[j - 1])
      throw DataError("time2quantile: knots must be strictly increasing");
  TimeTransform t;
  t.kind_ = TransformKind::time2quantile;
  t.knots_ = std::move(knots);
  t.cdf_ = std::move(cdf);
  return t;
}

TimeTransform TimeTransform::fit(TransformKind kind, std::span<const double> times) {
  return kind == TransformKind::lognormal2normal ? fit_lognormal2normal(times)
                                                 : fit_time2quantile(times);
}

double TimeTransform::forward(double t) const noexcept {
  if (kind_ == TransformKind::lognormal2normal) {
    if (!(t > 0.0)) return -std::numeric_limits<double>::infinity();
    return (std::log(t) - mu_) / sigma_;
  }
  if (t <= 0.0) return 0.0;
  if (t >= knots_.back()) return 1.0;
  // First knot strictly above t; t lies in [a_{j-1}, a_j).
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  const auto j = static_cast<std::size_t>(it - knots_.begin());
  const double a0 = knots_[j - 1], a1 = knots_[j];
  return cdf_[j - 1] + (t - a0) / (a1 - a0) * (cdf_[j] - cdf_[j - 1]);
}

double TimeTransform::inverse(double z) const noexcept {
  if (kind_ == TransformKind::lognormal2normal) return std::exp(mu_ + sigma_ * z);
  if (z <= 0.0) return 0.0;
  if (z >= 1.0) return knots_.back();
  // First q_j >= z. On flat CDF segments this yields the left raw endpoint.
  const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), z);
  const auto j = static_cast<std::size_t>(it - cdf_.begin());
  if (cdf_[j] == z) {
    std::size_t k = j;
    while (k > 0 && cdf_[k - 1] == z) --k;
    return knots_[k];
  }
  const double q0 = cdf_[j - 1], q1 = cdf_[j];
  return knots_[j - 1] + (z - q0) / (q1 - q0) * (knots_[j] - knots_[j - 1]);
}

Binner::Binner(double lo, double hi, std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("Binner: at least 2 bins required");
  if (!(hi > lo)) throw std::invalid_argument("Binner: empty range");
  edges_.resize(bins + 1);
  const double w = (hi - lo) / static_cast<double>(bins);
  for (std::size_t l = 0; l <= bins; ++l) edges_[l] = lo + w * static_cast<double>(l);
  edges_.back() = hi;
}

std::size_t Binner::index(double z) const noexcept {
  const auto it = std::lower_bound(edges_.begin(), edges_.end(), z);
  const auto k = static_cast<std::size_t>(it - edges_.begin());
  return std::clamp<std::size_t>(k, 1, bins());
}

Binner make_binner(const TimeTransform& transform, std::size_t bins) {
  return transform.kind() == TransformKind::lognormal2normal
             ? Binner(-kLognormalRange, kLognormalRange, bins)
             : Binner(0.0, 1.0, bins);
}

std::size_t bin_index(const Binner& binner, const TimeTransform& transform, double t) {
  return binner.index(transform.forward(t));
}

std::vector<double> bin_upper_times(const Binner& binner, const TimeTransform& transform) {
  std::vector<double> out(binner.bins());
  for (std::size_t l = 1; l <= binner.bins(); ++l) out[l - 1] = transform.inverse(binner.edges()[l]);
  return out;
}

}  // namespace survpfn
