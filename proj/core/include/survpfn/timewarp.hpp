#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace survpfn {

enum class TransformKind { lognormal2normal, time2quantile };

const char* to_string(TransformKind k) noexcept;
TransformKind transform_from_string(const std::string& s);

/// Context-fitted monotone map g from raw time to model space, and its inverse.
class TimeTransform {
 public:
  /// Moment-matched lognormal: sigma^2 = log(1 + s^2/m^2), mu = log m - sigma^2/2,
  /// g(t) = (log t - mu) / sigma. Uses the sample (n-1) standard deviation.
  static TimeTransform fit_lognormal2normal(std::span<const double> times);
  /// Piecewise-linear interpolation of the right-continuous empirical CDF at
  /// knots 0 < unique times; g(t) = 1 above the largest time.
  static TimeTransform fit_time2quantile(std::span<const double> times);
  static TimeTransform fit(TransformKind kind, std::span<const double> times);

  static TimeTransform lognormal(double mu, double sigma);
  /// Knots must start at (0, 0), end at q = 1 and be strictly increasing in a.
  static TimeTransform quantile(std::vector<double> knots, std::vector<double> cdf);

  [[nodiscard]] TransformKind kind() const noexcept { return kind_; }
  [[nodiscard]] double forward(double t) const noexcept;
  [[nodiscard]] double inverse(double z) const noexcept;

  [[nodiscard]] double mu() const noexcept { return mu_; }
  [[nodiscard]] double sigma() const noexcept { return sigma_; }
  [[nodiscard]] std::span<const double> knots() const noexcept { return knots_; }
  [[nodiscard]] std::span<const double> cdf() const noexcept { return cdf_; }

  friend bool operator==(const TimeTransform&, const TimeTransform&) = default;

 private:
  TransformKind kind_ = TransformKind::lognormal2normal;
  double mu_ = 0.0;
  double sigma_ = 1.0;
  std::vector<double> knots_;
  std::vector<double> cdf_;
};

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr double kLognormalRange = 5.0;

/// L equal-width bins in model space. Bin l (1-based) is (z_{l-1}, z_l]; values
/// at or below z_0 fall in bin 1 and values above z_L in bin L.
class Binner {
 public:
  Binner(double lo, double hi, std::size_t bins);

  [[nodiscard]] std::size_t bins() const noexcept { return edges_.size() - 1; }
  [[nodiscard]] std::span<const double> edges() const noexcept { return edges_; }
  [[nodiscard]] double lo() const noexcept { return edges_.front(); }
  [[nodiscard]] double hi() const noexcept { return edges_.back(); }
  [[nodiscard]] double width() const noexcept { return (hi() - lo()) / static_cast<double>(bins()); }
  /// 1-based bin containing z after clamping.
  [[nodiscard]] std::size_t index(double z) const noexcept;

 private:
  std::vector<double> edges_;
};

/// [-5, 5] for lognormal2normal, [0, 1] for time2quantile.
Binner make_binner(const TimeTransform& transform, std::size_t bins);

/// kappa(t): bin of g(t).
std::size_t bin_index(const Binner& binner, const TimeTransform& transform, double t);

/// Raw-time right edges g^{-1}(z_l), l = 1..L.
std::vector<double> bin_upper_times(const Binner& binner, const TimeTransform& transform);

}  // namespace survpfn
