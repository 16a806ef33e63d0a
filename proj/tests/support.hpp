#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "survpfn/matrix.hpp"
#include "survpfn/model.hpp"
#include "survpfn/rng.hpp"
#include "survpfn/timewarp.hpp"

namespace survpfn::testing {

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

struct RandomBatch {
  Matrix ctx_x;
  std::vector<double> z;
  std::vector<int> event;
  Matrix q_x;
  std::vector<int> indicator;
};

/// Context times drawn in model space inside `binner`.
inline RandomBatch random_batch(Rng& rng, std::size_t d, std::size_t n_ctx, std::size_t n_q,
                                const Binner& binner) {
  RandomBatch b;
  b.ctx_x = random_matrix(rng, n_ctx, d);
  b.q_x = random_matrix(rng, n_q, d);
  for (std::size_t i = 0; i < n_ctx; ++i) {
    b.z.push_back(rng.uniform(binner.lo(), binner.hi()));
    b.event.push_back(rng.bernoulli(0.6) ? 1 : 0);
  }
  for (std::size_t j = 0; j < n_q; ++j) b.indicator.push_back(rng.bernoulli(0.5) ? 1 : 0);
  return b;
}

inline TokenBatch embed(const PfnModel& m, const RandomBatch& b, const Binner& binner,
                        bool canonical = false) {
  return m.embed_tokens({b.ctx_x, b.z, b.event}, {b.q_x, b.indicator}, binner, canonical);
}

/// Finite-difference check of every parameter. Relative error uses a 1e-6 floor
/// on the denominator so roundoff on vanishing coordinates is not amplified.
inline double max_gradient_error(PfnModel& model, const TokenBatch& batch,
                                 const std::vector<std::vector<double>>& targets, double h = 1e-5) {
  std::vector<double> grad(model.parameter_count(), 0.0);
  model.loss_and_gradient(batch, targets, grad);
  auto params = model.parameters();
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + h;
    const double up = model.loss(batch, targets);
    params[k] = saved - h;
    const double down = model.loss(batch, targets);
    params[k] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad[k]), 1e-6});
    worst = std::max(worst, std::abs(fd - grad[k]) / denom);
  }
  return worst;
}

}  // namespace survpfn::testing

#include "oracles.hpp"

namespace survpfn::testing {

/// A random evaluation case: train and test samples with ties and censoring,
/// a grid from the training times, and monotone predicted curves.
struct MetricCase {
  oracle::Sample train, test;
  std::vector<double> grid;
  std::vector<std::vector<double>> surv_rows;
  Matrix surv;
};

inline MetricCase random_metric_case(Rng& rng, std::size_t n_test, std::size_t n_train) {
  MetricCase c;
  auto draw = [&](oracle::Sample& s, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      // Half-unit rounding creates ties.
      s.t.push_back(std::round(2.0 * rng.uniform(0.0, 10.0)) / 2.0 + 0.5);
      s.d.push_back(rng.bernoulli(0.65) ? 1 : 0);
    }
  };
  draw(c.train, n_train);
  draw(c.test, n_test);
  std::vector<double> g{0.0};
  std::vector<double> sorted = c.train.t;
  std::sort(sorted.begin(), sorted.end());
  for (double t : sorted)
    if (t > g.back()) g.push_back(t);
  c.grid = g;
  c.surv = Matrix(n_test, g.size());
  for (std::size_t i = 0; i < n_test; ++i) {
    std::vector<double> row(g.size());
    double s = 1.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      s *= rng.uniform(0.75, 1.0);
      row[k] = s;
      c.surv(i, k) = s;
    }
    c.surv_rows.push_back(row);
  }
  return c;
}

}  // namespace survpfn::testing
