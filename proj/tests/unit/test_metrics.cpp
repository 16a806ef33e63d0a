#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "survpfn/metrics.hpp"

using namespace survpfn;

TEST_CASE("kaplan-meier") {
  const std::vector<double> t{1, 2, 3};
  const std::vector<int> d{1, 0, 1};
  const auto km = km_estimate(t, d);
  CHECK(km.at(0.5) == 1.0);
  CHECK(km.at(1.0) == doctest::Approx(2.0 / 3.0));
  CHECK(km.at(2.0) == doctest::Approx(2.0 / 3.0));
  CHECK(km.at(3.0) == 0.0);

  const std::vector<double> u{1, 2, 2, 4};
  const std::vector<int> all{1, 1, 1, 1};
  const auto e = km_estimate(u, all);
  CHECK(e.at(1.0) == 0.75);
  CHECK(e.at(2.0) == 0.25);
  CHECK(e.at(3.9) == 0.25);

  const std::vector<int> none{0, 0, 0, 0};
  const auto c = km_estimate(u, none);
  CHECK(c.at(100.0) == 1.0);
  CHECK(c.times.empty());
  // Product-limit identity at each event time.
  double s = 1.0;
  for (std::size_t k = 0; k < e.times.size(); ++k) {
    s *= 1.0 - e.events[k] / e.at_risk[k];
    CHECK(e.survival[k] == s);
  }
}

TEST_CASE("concordance") {
  const std::vector<double> t{1, 2, 3};
  const std::vector<int> d{1, 1, 1};
  CHECK(*concordance_index(std::vector<double>{3, 2, 1}, t, d) == 1.0);
  CHECK(*concordance_index(std::vector<double>{3, 1, 2}, t, d) == doctest::Approx(2.0 / 3.0));
  CHECK(*concordance_index(std::vector<double>{1, 2, 3}, t, d) == 0.0);
  CHECK_FALSE(concordance_index(std::vector<double>{1, 2}, std::vector<double>{1, 2},
                                std::vector<int>{0, 0})
                  .has_value());

  Rng rng(RngStream{1, 0});
  std::vector<double> risk, neg, times;
  std::vector<int> ev;
  for (int i = 0; i < 40; ++i) {
    risk.push_back(rng.normal());
    neg.push_back(-risk.back());
    times.push_back(rng.uniform());
    ev.push_back(rng.bernoulli(0.7) ? 1 : 0);
  }
  CHECK(*concordance_index(neg, times, ev) ==
        doctest::Approx(1.0 - *concordance_index(risk, times, ev)).epsilon(1e-14));
}

TEST_CASE("brier score") {
  const std::vector<double> grid{0.5, 1.5};
  Matrix half(1, 2, 0.5);
  const std::vector<double> t{1.0};
  const std::vector<int> d{1};
  const KmEstimate none = km_estimate(std::vector<double>{1.0}, std::vector<int>{0});
  // S = 0.5 before the grid would be 1, so extend the grid to 0.
  const std::vector<double> g0{0.0, 1.5};
  CHECK(integrated_brier(half, g0, t, d, none, 2.0).value == doctest::Approx(0.25).epsilon(1e-15));

  // A perfect forecaster drops from 1 to 0 at each subject's time.
  const std::vector<double> tt{1.0, 2.0, 3.0};
  const std::vector<int> dd{1, 1, 1};
  const std::vector<double> gg{0.0, 1.0, 2.0, 3.0};
  Matrix oracle(3, 4, 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) oracle(i, k) = gg[k] >= tt[i] ? 0.0 : 1.0;
  CHECK(integrated_brier(oracle, gg, tt, dd, none, 3.0).value == 0.0);

  Matrix ones(3, 4, 1.0);
  CHECK(brier_score(ones, gg, tt, dd, none, 3.0).value == 1.0);
  CHECK(brier_score(ones, gg, tt, dd, none, 0.5).value == 0.0);

  const KmEstimate heavy = km_estimate(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1});
  CHECK(brier_score(ones, gg, tt, dd, heavy, 3.0).floored);
  CHECK(default_horizon(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}) == doctest::Approx(9.1));
}

TEST_CASE("d-calibration") {
  std::vector<double> s;
  std::vector<int> d(10, 1);
  for (int i = 0; i < 10; ++i) s.push_back(0.05 + 0.1 * i);
  CHECK(d_calibration(s, d) == doctest::Approx(0.0).epsilon(1e-12));
  const std::vector<double> same(10, 0.55);
  CHECK(d_calibration(same, d) == doctest::Approx(90.0));
  const auto mass = d_calibration_bins(std::vector<double>{0.2}, std::vector<int>{0});
  CHECK(mass[0] == doctest::Approx(0.5));
  CHECK(mass[1] == doctest::Approx(0.5));
  CHECK(mass[2] == 0.0);
  CHECK(d_calibration_bins(std::vector<double>{0.0}, std::vector<int>{0})[0] == 1.0);
}

TEST_CASE("mae-po") {
  CHECK(*mae_po(std::vector<double>{2, 3}, std::vector<double>{1, 3}, std::vector<int>{1, 1}) ==
        0.5);
  // Four subjects with two censored: compare against the naive jackknife.
  const oracle::Sample s{{1.0, 2.0, 3.0, 4.0}, {1, 0, 1, 0}};
  const std::vector<double> pred{1.5, 2.5, 2.0, 5.0};
  bool ok = false;
  const double ref = oracle::mae_po(pred, s, &ok);
  REQUIRE(ok);
  CHECK(*mae_po(pred, s.t, s.d) == doctest::Approx(ref).epsilon(1e-14));
  // Predictions equal to the pseudo targets give zero.
  const std::vector<double> t{1, 2, 3};
  CHECK(*mae_po(t, t, std::vector<int>{1, 1, 1}) == 0.0);
  CHECK_FALSE(mae_po(std::vector<double>{1.0}, std::vector<double>{1.0}, std::vector<int>{0}));
}

TEST_CASE("log-rank") {
  const std::vector<double> t{1, 2, 3, 4};
  const std::vector<int> d{1, 1, 1, 1};
  CHECK(log_rank(t, d, t, d) == doctest::Approx(0.0).epsilon(1e-15));
  const std::vector<double> a{1, 1, 1}, b{10, 10, 10};
  const std::vector<int> ones{1, 1, 1};
  // Risk table: at t=1, 6 at risk (3 per group), 3 deaths from group a.
  // O - E = 1.5, V = 3 * 0.25 * 3 / 5 = 0.45; the t=10 row adds nothing.
  CHECK(log_rank(a, ones, b, ones) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(log_rank(b, ones, a, ones) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(log_rank(a, std::vector<int>{0, 0, 0}, b, std::vector<int>{0, 0, 0}) == 0.0);
}

TEST_CASE("median survival time") {
  const std::vector<double> g{1, 2, 3, 4, 5};
  CHECK(median_survival_time(g, std::vector<double>{1, 0.4, 0.4, 0.4, 0.4}) == 2.0);
  CHECK(median_survival_time(g, std::vector<double>(5, 0.6)) == 5.0);
  CHECK(median_survival_time(g, std::vector<double>{0.9, 0.8, 0.5, 0.2, 0.1}) == 3.0);
}

TEST_CASE("metrics agree with the brute-force oracles") {
  Rng rng(RngStream{2024, 0});
  for (int trial = 0; trial < 25; ++trial) {
    const auto c = testing::random_metric_case(rng, 50, 60);
    const double tau = default_horizon(c.train.t);
    const auto gkm = censoring_km(c.train.t, c.train.d);
    const double ibs = integrated_brier(c.surv, c.grid, c.test.t, c.test.d, gkm, tau).value;
    CHECK(std::abs(ibs - oracle::ibs(c.surv_rows, c.grid, c.test, c.train, tau, 0.05)) < 1e-10);

    std::vector<double> med, risk, own;
    for (std::size_t i = 0; i < c.test.t.size(); ++i) {
      med.push_back(median_survival_time(c.grid, c.surv.row(i)));
      risk.push_back(-med.back());
      own.push_back(oracle::step(c.grid, c.surv_rows[i], c.test.t[i]));
    }
    bool defined = false;
    const double ci_ref = oracle::concordance(risk, c.test, &defined);
    CHECK(std::abs(*concordance_index(risk, c.test.t, c.test.d) - ci_ref) < 1e-10);
    CHECK(std::abs(d_calibration(own, c.test.d) - oracle::dcal(own, c.test.d)) < 1e-10);
    const double mae_ref = oracle::mae_po(med, c.test, &defined);
    CHECK(std::abs(*mae_po(med, c.test.t, c.test.d) - mae_ref) < 1e-10);
    const oracle::Sample pred{med, std::vector<int>(med.size(), 1)};
    CHECK(std::abs(log_rank(c.test.t, c.test.d, med, pred.d) - oracle::log_rank(c.test, pred)) <
          1e-10);
    const auto km = km_estimate(c.test.t, c.test.d);
    for (double u = 0.0; u < 11.0; u += 0.25) CHECK(std::abs(km.at(u) - oracle::km(c.test, u)) < 1e-12);

    const auto mass = d_calibration_bins(own, c.test.d);
    double total = 0.0;
    for (double m : mass) total += m;
    CHECK(total == doctest::Approx(50.0).epsilon(1e-12));
  }
}

TEST_CASE("unit censoring weights reduce the IBS to the plain Brier integral") {
  Rng rng(RngStream{5, 1});
  auto c = testing::random_metric_case(rng, 30, 30);
  for (int& d : c.test.d) d = 1;
  const KmEstimate none = km_estimate(c.train.t, std::vector<int>(c.train.t.size(), 0));
  const double tau = 6.0;
  const double got = integrated_brier(c.surv, c.grid, c.test.t, c.test.d, none, tau).value;
  // Unweighted: mean over subjects of (1[t_i > u] - S(u))^2, trapezoid on the same nodes.
  std::vector<double> nodes{0.0};
  for (double g : c.grid)
    if (g > 0 && g < tau) nodes.push_back(g);
  nodes.push_back(tau);
  auto bs = [&](double u) {
    double s = 0;
    for (std::size_t i = 0; i < c.test.t.size(); ++i) {
      const double alive = c.test.t[i] > u ? 1.0 : 0.0;
      const double p = oracle::step(c.grid, c.surv_rows[i], u);
      s += (alive - p) * (alive - p);
    }
    return s / static_cast<double>(c.test.t.size());
  };
  double area = 0;
  for (std::size_t k = 1; k < nodes.size(); ++k)
    area += 0.5 * (bs(nodes[k]) + bs(nodes[k - 1])) * (nodes[k] - nodes[k - 1]);
  CHECK(got == doctest::Approx(area / tau).epsilon(1e-14));
}
