#include "survpfn/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "survpfn/errors.hpp"

namespace survpfn {

const char* to_string(PriorFamily f) noexcept {
  switch (f) {
    case PriorFamily::naive: return "naive";
    case PriorFamily::survival_distribution: return "survival_distribution";
    case PriorFamily::mixture: return "mixture";
    case PriorFamily::kitchen_sink: return "kitchen_sink";
    case PriorFamily::exponential: return "exponential";
  }
  return "?";
}

const char* to_string(CensoringKind c) noexcept {
  switch (c) {
    case CensoringKind::uniform: return "uniform";
    case CensoringKind::random: return "random";
    case CensoringKind::administrative: return "administrative";
    case CensoringKind::conditional_independent: return "conditional_independent";
  }
  return "?";
}

const char* to_string(MixtureComponent m) noexcept {
  return m == MixtureComponent::weibull ? "weibull" : "lognormal";
}

PriorFamily prior_family_from_string(const std::string& s) {
  for (auto f : {PriorFamily::naive, PriorFamily::survival_distribution, PriorFamily::mixture,
                 PriorFamily::kitchen_sink, PriorFamily::exponential})
    if (s == to_string(f)) return f;
  throw ConfigError("unknown prior family '" + s + "'");
}

CensoringKind censoring_from_string(const std::string& s) {
  for (auto c : {CensoringKind::uniform, CensoringKind::random, CensoringKind::administrative,
                 CensoringKind::conditional_independent})
    if (s == to_string(c)) return c;
  throw ConfigError("unknown censoring mechanism '" + s + "'");
}

double softplus(double x) noexcept { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// ---------------------------------------------------------------------------

BernsteinMap::BernsteinMap(std::span<const double> c) {
  if (c.empty()) throw std::invalid_argument("BernsteinMap: at least one coefficient required");
  const double mx = *std::max_element(c.begin(), c.end());
  increments_.resize(c.size());
  double total = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    if (!std::isfinite(c[j])) throw std::invalid_argument("BernsteinMap: non-finite coefficient");
    increments_[j] = std::exp(c[j] - mx);
    total += increments_[j];
  }
  for (double& d : increments_) d /= total;
  control_.assign(c.size() + 1, 0.0);
  for (std::size_t j = 1; j <= c.size(); ++j)
    control_[j] = std::min(1.0, control_[j - 1] + increments_[j - 1]);
  control_.back() = 1.0;
}

double bernstein_eval(const BernsteinMap& map, double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("bernstein_eval: u outside [0,1]");
  // de Casteljau: convex combinations keep the result in [b_0, b_K].
  std::vector<double> b(map.control_points().begin(), map.control_points().end());
  for (std::size_t r = 1; r < b.size(); ++r)
    for (std::size_t j = 0; j + r < b.size(); ++j) b[j] = (1.0 - u) * b[j] + u * b[j + 1];
  return b[0];
}

double survdist_time_at(const BernsteinMap& map, double t_max, double u) {
  if (!(t_max > 0.0)) throw std::invalid_argument("survdist time: t_max must be > 0");
  return t_max * bernstein_eval(map, u);
}

double sample_survdist_time(const BernsteinMap& map, double t_max, Rng& rng) {
  return survdist_time_at(map, t_max, rng.uniform());
}

// ---------------------------------------------------------------------------

MixtureParams MixtureParams::from_hidden(MixtureComponent component,
                                         std::span<const double> hidden) {
  if (hidden.empty() || hidden.size() % 3 != 0)
    throw std::invalid_argument("MixtureParams: hidden width must be a positive multiple of 3");
  MixtureParams p;
  p.component = component;
  for (std::size_t j = 0; j < hidden.size() / 3; ++j) {
    p.a.push_back(hidden[3 * j]);
    p.b.push_back(hidden[3 * j + 1]);
    p.r.push_back(hidden[3 * j + 2]);
  }
  return p;
}

std::vector<double> MixtureParams::weights() const {
  std::vector<double> w(r.size());
  const double mx = *std::max_element(r.begin(), r.end());
  double total = 0.0;
  for (std::size_t j = 0; j < r.size(); ++j) total += (w[j] = std::exp(r[j] - mx));
  for (double& v : w) v /= total;
  return w;
}

double MixtureParams::first_param(std::size_t j) const {
  return component == MixtureComponent::weibull ? softplus(a[j]) + 0.1 : softplus(a[j]);
}

double MixtureParams::second_param(std::size_t j) const {
  return component == MixtureComponent::weibull ? softplus(b[j]) + 0.1 : softplus(b[j]);
}

double mixture_component_time(const MixtureParams& p, std::size_t j, double draw) {
  if (p.component == MixtureComponent::weibull) {
    const double shape = p.first_param(j);
    const double scale = p.second_param(j);
    return scale * std::pow(-std::log1p(-draw), 1.0 / shape);
  }
  return std::exp(p.first_param(j) + p.second_param(j) * draw);
}

double sample_mixture_time(const MixtureParams& p, Rng& rng) {
  const auto w = p.weights();
  const std::size_t z = rng.categorical(w);
  const double draw = p.component == MixtureComponent::weibull ? rng.uniform() : rng.normal();
  return mixture_component_time(p, z, draw);
}

// ---------------------------------------------------------------------------

void PriorConfig::validate() const {
  if (family == PriorFamily::kitchen_sink) {
    double s = 0.0;
    for (double w : kitchen_sink_weights) {
      if (!(w >= 0.0)) throw ConfigError("kitchen_sink weights must be nonnegative");
      s += w;
    }
    if (!(s > 0.0)) throw ConfigError("kitchen_sink weights are all zero");
  }
  double cs = 0.0;
  for (double w : censoring_weights) {
    if (!(w >= 0.0)) throw ConfigError("censoring weights must be nonnegative");
    cs += w;
  }
  if (!(cs > 0.0)) throw ConfigError("censoring weights are all zero");
  if (min_dim == 0 || min_dim > max_dim) throw ConfigError("invalid covariate dimension range");
  if (!(min_t_max > 0.0) || min_t_max > max_t_max) throw ConfigError("invalid t_max range");
  if (!(min_rate > 0.0) || !(max_rate < 1.0) || min_rate > max_rate)
    throw ConfigError("censoring rate range must lie in (0,1)");
  if (min_knots == 0 || min_knots > max_knots) throw ConfigError("invalid knot range");
  if (mixture_counts.empty()) throw ConfigError("mixture_counts must be nonempty");
  for (auto k : mixture_counts)
    if (k == 0) throw ConfigError("mixture component counts must be >= 1");
  try {
    generator.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

PriorConfig PriorConfig::simple_exponential() {
  PriorConfig cfg;
  cfg.family = PriorFamily::exponential;
  cfg.censoring_weights = {1.0, 0.0, 0.0, 0.0};
  cfg.min_dim = cfg.max_dim = 1;
  cfg.min_rate = 0.1;
  cfg.max_rate = 0.5;
  cfg.calibration_rows = 0;
  return cfg;
}

std::size_t DgpSpec::hidden_width(bool censor_branch) const noexcept {
  switch (family) {
    case PriorFamily::survival_distribution: return censor_branch ? censor_knots : event_knots;
    case PriorFamily::mixture: return 3 * mixture_count;
    default: return 1;
  }
}

namespace {

MlpSpec sample_generator(RngStream s, const GeneratorRanges& ranges, std::size_t min_out) {
  MlpSpec spec = sample_mlp_spec(s, ranges);
  spec.widths.back() = std::max(spec.widths.back(), min_out);
  return spec;
}

std::size_t draw_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

}  // namespace

DgpSpec sample_dgp(RngStream stream, const PriorConfig& cfg) {
  cfg.validate();
  Rng rng(stream.child("dgp"));
  DgpSpec spec;
  spec.seed = rng();
  spec.calibration_rows = cfg.calibration_rows;

  spec.family = cfg.family;
  if (cfg.family == PriorFamily::kitchen_sink) {
    static constexpr PriorFamily children[] = {PriorFamily::naive,
                                               PriorFamily::survival_distribution,
                                               PriorFamily::mixture};
    spec.family = children[rng.categorical(cfg.kitchen_sink_weights)];
    spec.from_kitchen_sink = true;
  }
  static constexpr CensoringKind mechanisms[] = {
      CensoringKind::uniform, CensoringKind::random, CensoringKind::administrative,
      CensoringKind::conditional_independent};
  spec.censoring = mechanisms[rng.categorical(cfg.censoring_weights)];
  spec.dim = draw_size(rng, cfg.min_dim, cfg.max_dim);
  spec.t_max = cfg.min_t_max == cfg.max_t_max ? cfg.min_t_max
                                               : rng.log_uniform(cfg.min_t_max, cfg.max_t_max);
  spec.target_censoring_rate = rng.uniform(cfg.min_rate, cfg.max_rate);
  spec.event_knots = draw_size(rng, cfg.min_knots, cfg.max_knots);
  spec.censor_knots = draw_size(rng, cfg.min_knots, cfg.max_knots);
  spec.mixture_component = rng.bernoulli(0.5) ? MixtureComponent::weibull
                                              : MixtureComponent::lognormal;
  spec.mixture_count = cfg.mixture_counts[draw_size(rng, 0, cfg.mixture_counts.size() - 1)];

  spec.exp_base_rate = rng.log_uniform(0.1, 10.0);
  spec.exp_event_coef = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 2.0);
  spec.exp_censor_coef = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 2.0);

  spec.covariate_mlp = sample_generator(stream.child("covariate_mlp"), cfg.generator, spec.dim);
  spec.event_mlp = sample_generator(stream.child("event_mlp"), cfg.generator,
                                    spec.hidden_width(false));
  spec.censor_mlp = sample_generator(stream.child("censor_mlp"), cfg.generator,
                                     spec.hidden_width(true));
  return spec;
}

namespace {

void shift_nonnegative(std::vector<double>& t) {
  if (t.empty()) return;
  const double mn = *std::min_element(t.begin(), t.end());
  if (mn < 0.0)
    for (double& v : t) v -= mn;
}

// Maps each hidden row to a time with the family's sampler. Row i draws from
// stream `draws.child(i)`.
std::vector<double> times_from_hidden(const DgpSpec& spec, const Matrix& hidden,
                                      RngStream draws) {
  std::vector<double> t(hidden.rows());
  for (std::size_t i = 0; i < hidden.rows(); ++i) {
    Rng rng(draws.child(i));
    auto h = hidden.row(i);
    switch (spec.family) {
      case PriorFamily::naive:
        t[i] = h[0];
        break;
      case PriorFamily::survival_distribution:
        t[i] = sample_survdist_time(BernsteinMap(h), spec.t_max, rng);
        break;
      case PriorFamily::mixture:
        t[i] = sample_mixture_time(MixtureParams::from_hidden(spec.mixture_component, h), rng);
        break;
      case PriorFamily::exponential:
        t[i] = -std::log(rng.uniform_open()) / (spec.exp_base_rate * std::exp(h[0]));
        break;
      case PriorFamily::kitchen_sink:
        throw std::logic_error("DgpSpec must carry a concrete prior family");
    }
  }
  if (spec.family == PriorFamily::naive) shift_nonnegative(t);
  return t;
}

Matrix exponential_hidden(const Matrix& X, double coef) {
  Matrix h(X.rows(), 1);
  for (std::size_t i = 0; i < X.rows(); ++i) h(i, 0) = coef * X(i, 0);
  return h;
}

Matrix sample_covariates(const DgpSpec& spec, std::size_t n, RngStream rng) {
  if (spec.family == PriorFamily::exponential) {
    Matrix X(n, spec.dim);
    for (std::size_t i = 0; i < n; ++i) {
      Rng r(rng.child(i));
      for (std::size_t c = 0; c < spec.dim; ++c) X(i, c) = r.normal();
    }
    return X;
  }
  return gen_unconditional(spec.covariate_mlp, n, spec.dim, rng);
}

}  // namespace

std::vector<double> sample_event_times(const DgpSpec& spec, const Matrix& X, RngStream rng) {
  const Matrix hidden =
      spec.family == PriorFamily::exponential
          ? exponential_hidden(X, spec.exp_event_coef)
          : gen_conditional(spec.event_mlp, X, spec.hidden_width(false), rng.child("hidden"));
  return times_from_hidden(spec, hidden, rng.child("draws"));
}

std::vector<double> administrative_censoring(double admin_end,
                                             std::span<const double> entry_times) {
  if (!(admin_end > 0.0))
    throw std::invalid_argument("administrative censoring requires an end time a* > 0");
  std::vector<double> c(entry_times.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::max(0.0, admin_end - entry_times[i]);
  return c;
}

std::vector<double> apply_censoring(const DgpSpec& spec, const Matrix& X,
                                    std::span<const double> event_times, RngStream rng) {
  const std::size_t n = X.rows();
  if (event_times.size() != n)
    throw std::invalid_argument("apply_censoring: event times / covariate row mismatch");
  for (double e : event_times)
    if (!(e >= 0.0)) throw std::invalid_argument("apply_censoring: event times must be >= 0");
  if (n == 0) return {};

  const RngStream draws = rng.child("draws");
  std::vector<double> c(n);
  switch (spec.censoring) {
    case CensoringKind::uniform: {
      double lo = 0.0, hi = spec.t_max;
      if (spec.family != PriorFamily::survival_distribution && n > 0) {
        const auto [mn, mx] = std::minmax_element(event_times.begin(), event_times.end());
        lo = *mn;
        hi = *mx;
      }
      for (std::size_t i = 0; i < n; ++i) {
        Rng r(draws.child(i));
        c[i] = r.uniform(lo, hi);
      }
      return c;
    }
    case CensoringKind::administrative: {
      double end;
      if (spec.admin_end) {
        end = *spec.admin_end;
      } else if (spec.family == PriorFamily::survival_distribution) {
        end = spec.t_max;
      } else {
        end = event_times.empty() ? 1.0
                                  : *std::max_element(event_times.begin(), event_times.end());
        if (!(end > 0.0)) end = 1.0;
      }
      if (!(end > 0.0))
        throw std::invalid_argument("administrative censoring requires an end time a* > 0");
      std::vector<double> entry(n);
      for (std::size_t i = 0; i < n; ++i) {
        Rng r(draws.child(i));
        entry[i] = r.uniform(0.0, end);
      }
      return administrative_censoring(end, entry);
    }
    case CensoringKind::random: {
      Matrix hidden;
      if (spec.family == PriorFamily::exponential) {
        hidden = Matrix(n, 1);
        const Matrix table =
            gen_unconditional(spec.censor_mlp, n, 1, rng.child("hidden"));
        for (std::size_t i = 0; i < n; ++i) hidden(i, 0) = spec.exp_censor_coef * table(i, 0);
      } else {
        hidden = gen_unconditional(spec.censor_mlp, n, spec.hidden_width(true),
                                   rng.child("hidden"));
      }
      return times_from_hidden(spec, hidden, draws);
    }
    case CensoringKind::conditional_independent: {
      const Matrix hidden =
          spec.family == PriorFamily::exponential
              ? exponential_hidden(X, spec.exp_censor_coef)
              : gen_conditional(spec.censor_mlp, X, spec.hidden_width(true), rng.child("hidden"));
      return times_from_hidden(spec, hidden, draws);
    }
  }
  return c;
}

double censoring_rate_at(std::span<const double> e, std::span<const double> c,
                         double scale) noexcept {
  if (e.empty()) return 0.0;
  std::size_t censored = 0;
  for (std::size_t i = 0; i < e.size(); ++i)
    if (scale * c[i] < e[i]) ++censored;
  return static_cast<double>(censored) / static_cast<double>(e.size());
}

CalibrationResult calibrate_scale(std::span<const double> e, std::span<const double> c,
                                  double target, double tolerance) {
  if (!(target > 0.0 && target < 1.0))
    throw std::invalid_argument("calibrate_scale: target must lie in (0,1)");
  if (e.size() != c.size()) throw std::invalid_argument("calibrate_scale: size mismatch");
  CalibrationResult res;
  double lo = -20.0, hi = 20.0;  // log2 scale
  const double rate_lo = censoring_rate_at(e, c, std::exp2(lo));
  const double rate_hi = censoring_rate_at(e, c, std::exp2(hi));
  if (rate_lo < rate_hi) {
    res.monotone = false;
    res.scale = 1.0;
    res.achieved_rate = censoring_rate_at(e, c, 1.0);
    res.residual = std::abs(res.achieved_rate - target);
    return res;
  }
  auto finish = [&](double log_scale, bool clamped) {
    res.scale = std::exp2(log_scale);
    res.achieved_rate = censoring_rate_at(e, c, res.scale);
    res.residual = std::abs(res.achieved_rate - target);
    res.clamped = clamped;
    return res;
  };
  if (rate_lo < target - tolerance) return finish(lo, true);
  if (rate_hi > target + tolerance) return finish(hi, true);
  // Invariant: rate(2^lo) >= target > rate(2^hi). Locate the crossing.
  if (rate_lo < target) return finish(lo, false);
  if (rate_hi >= target) return finish(hi, false);
  for (int it = 0; it < 80 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (censoring_rate_at(e, c, std::exp2(mid)) >= target)
      lo = mid;
    else
      hi = mid;
  }
  // The rate is a step function; pick whichever side of the jump is closer.
  const double r_lo = censoring_rate_at(e, c, std::exp2(lo));
  const double r_hi = censoring_rate_at(e, c, std::exp2(hi));
  return finish(std::abs(r_lo - target) <= std::abs(r_hi - target) ? lo : hi, false);
}

CalibrationResult calibrate_censoring_rate(const DgpSpec& spec, double target, RngStream rng,
                                           std::size_t n_probe) {
  if (n_probe == 0) throw std::invalid_argument("calibrate_censoring_rate: n_probe must be >= 1");
  const Matrix X = sample_covariates(spec, n_probe, rng.child("covariates"));
  const auto e = sample_event_times(spec, X, rng.child("event"));
  const auto c = apply_censoring(spec, X, e, rng.child("censor"));
  return calibrate_scale(e, c, target);
}

TaskSample sample_task(const DgpSpec& spec, std::size_t n_ctx, std::size_t n_q, RngStream rng) {
  if (n_ctx == 0 || n_q == 0) throw std::invalid_argument("sample_task: n_ctx and n_q must be >= 1");
  const std::size_t n = n_ctx + n_q;
  const Matrix X = sample_covariates(spec, n, rng.child("covariates"));
  const auto e = sample_event_times(spec, X, rng.child("event"));
  auto c = apply_censoring(spec, X, e, rng.child("censor"));

  const CalibrationResult cal =
      spec.calibration_rows == 0
          ? calibrate_scale(e, c, spec.target_censoring_rate)
          : calibrate_censoring_rate(spec, spec.target_censoring_rate, rng.child("calibration"),
                                     spec.calibration_rows);
  for (double& v : c) v *= cal.scale;

  TaskSample task;
  task.summary = {spec.family, spec.from_kitchen_sink, spec.censoring, spec.dim,
                  spec.target_censoring_rate, cal.scale, spec.t_max, spec.seed};
  auto& ctx = task.context;
  ctx.x = Matrix(n_ctx, spec.dim);
  task.query_x = Matrix(n_q, spec.dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(e[i]) || !std::isfinite(c[i]) || e[i] < 0.0 || c[i] < 0.0)
      throw NumericError("sample_task: non-finite or negative latent time (dgp seed " +
                         std::to_string(spec.seed) + ")");
    auto src = X.row(i);
    if (i < n_ctx) {
      std::copy(src.begin(), src.end(), ctx.x.row(i).begin());
      ctx.time.push_back(std::min(e[i], c[i]));
      ctx.event.push_back(e[i] <= c[i] ? 1 : 0);
      task.context_event_latent.push_back(e[i]);
      task.context_censor_latent.push_back(c[i]);
    } else {
      std::copy(src.begin(), src.end(), task.query_x.row(i - n_ctx).begin());
      task.query_event.push_back(e[i]);
      task.query_censor.push_back(c[i]);
    }
  }
  for (std::size_t i = 0; i < n_ctx; ++i) {
    const double ei = task.context_event_latent[i], ci = task.context_censor_latent[i];
    if (ctx.time[i] != std::min(ei, ci) || ctx.event[i] != (ei <= ci ? 1 : 0))
      throw std::logic_error("sample_task: observed data inconsistent with latents");
  }
  return task;
}

TaskSample sample_prior_task(const PriorConfig& cfg, std::size_t n_ctx, std::size_t n_q,
                             RngStream rng) {
  return sample_task(sample_dgp(rng.child("theta"), cfg), n_ctx, n_q, rng.child("task"));
}

}  // namespace survpfn
