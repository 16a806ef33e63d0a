#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support.hpp"
#include "survpfn/errors.hpp"
#include "survpfn/model.hpp"

using namespace survpfn;
using survpfn::testing::embed;
using survpfn::testing::random_batch;

namespace {

ModelConfig small_config(bool swiglu = false) {
  ModelConfig c;
  c.d_max = 4;
  c.width = 16;
  c.layers = 2;
  c.heads = 2;
  c.bins = 8;
  c.ffn = 24;
  c.seed = 11;
  c.parallel_swiglu = swiglu;
  c.zero_head = false;
  return c;
}

std::vector<std::vector<double>> nll_targets(Rng& rng, std::size_t n, std::size_t bins) {
  std::vector<std::vector<double>> t;
  for (std::size_t j = 0; j < n; ++j)
    t.push_back(one_hot_target(bins, static_cast<std::size_t>(rng.uniform_int(1, bins))));
  return t;
}

}  // namespace

TEST_CASE("gradients match central differences for both losses") {
  for (bool swiglu : {false, true}) {
    PfnModel model(small_config(swiglu));
    Rng rng(RngStream{3, swiglu ? 1u : 0u});
    const Binner binner(-5.0, 5.0, 8);
    const auto b = random_batch(rng, 4, 6, 2, binner);
    const auto batch = embed(model, b, binner);
    CHECK(survpfn::testing::max_gradient_error(model, batch, nll_targets(rng, 2, 8)) < 1e-4);

    const auto tw = TimeTransform::lognormal(0.0, 1.0);
    std::vector<std::vector<double>> sce{smoothed_target(0.7, 0.8, tw, binner),
                                         smoothed_target(2.5, 0.3, tw, binner)};
    CHECK(survpfn::testing::max_gradient_error(model, batch, sce) < 1e-4);
  }
}

TEST_CASE("scaling the loss scales the gradient exactly") {
  PfnModel model(small_config());
  Rng rng(RngStream{5, 0});
  const Binner binner(-5.0, 5.0, 8);
  const auto batch = embed(model, random_batch(rng, 3, 5, 3, binner), binner);
  const auto targets = nll_targets(rng, 3, 8);
  std::vector<double> g1(model.parameter_count()), g2(model.parameter_count());
  const double l1 = model.loss_and_gradient(batch, targets, g1, 1.0);
  const double l2 = model.loss_and_gradient(batch, targets, g2, 2.0);
  CHECK(l2 == 2.0 * l1);
  for (std::size_t k = 0; k < g1.size(); ++k) REQUIRE(g2[k] == 2.0 * g1[k]);
}

TEST_CASE("zero head starts uniform with loss ln L") {
  ModelConfig c = small_config();
  c.zero_head = true;
  PfnModel model(c);
  Rng rng(RngStream{9, 0});
  const Binner binner(0.0, 1.0, 8);
  const auto batch = embed(model, random_batch(rng, 2, 7, 4, binner), binner);
  for (const auto& p : model.forward(batch))
    for (double q : p.probs) CHECK(q == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(model.loss(batch, nll_targets(rng, 4, 8)) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("embedding contract") {
  PfnModel model(small_config());
  const Binner binner(-5.0, 5.0, 8);
  Matrix cx(3, 2);
  cx(0, 0) = 1.0;
  cx(1, 0) = 1.0;  // rows 0 and 1 identical
  cx(2, 1) = -2.0;
  std::vector<double> z{0.5, 0.5, -1.0};
  std::vector<int> ev{1, 1, 0};
  Matrix qx(2, 2);
  qx(0, 0) = 0.3;
  qx(1, 0) = 0.3;
  std::vector<int> ind{0, 1};
  const auto batch = model.embed_tokens({cx, z, ev}, {qx, ind}, binner);
  CHECK(batch.size() == 5);
  CHECK(batch.tokens.cols() == 16);
  for (std::size_t h = 0; h < 16; ++h) CHECK(batch.tokens(0, h) == batch.tokens(1, h));
  // Query tokens differ by exactly the indicator weight vector.
  Matrix one(1, 2);
  one(0, 0) = 0.3;
  std::vector<int> zero{0}, onev{1};
  const auto a = model.embed_tokens({cx, z, ev}, {one, zero}, binner);
  const auto b = model.embed_tokens({cx, z, ev}, {one, onev}, binner);
  for (std::size_t h = 0; h < 16; ++h)
    CHECK(b.tokens(3, h) - a.tokens(3, h) ==
          doctest::Approx(batch.tokens(4, h) - batch.tokens(3, h)).epsilon(1e-14));

  Matrix wide(1, 5);
  std::vector<double> z1{0.0};
  std::vector<int> e1{1};
  CHECK_THROWS_AS((void)model.embed_tokens({wide, z1, e1}, {wide, e1}, binner), DataError);
}

TEST_CASE("forward rejects an empty context") {
  PfnModel model(small_config());
  const Binner binner(-5.0, 5.0, 8);
  Matrix cx(0, 2), qx(1, 2);
  std::vector<double> z;
  std::vector<int> ev, ind{1};
  const auto batch = model.embed_tokens({cx, z, ev}, {qx, ind}, binner);
  CHECK_THROWS((void)model.forward(batch));
}

TEST_CASE("context permutation and query isolation") {
  PfnModel model(small_config());
  Rng rng(RngStream{21, 0});
  const Binner binner(-5.0, 5.0, 8);
  auto b = random_batch(rng, 3, 4, 3, binner);
  const auto base = model.forward(embed(model, b, binner));
  for (const auto& p : base) {
    CHECK(std::accumulate(p.probs.begin(), p.probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  }

  auto perm = b;
  const std::size_t order[] = {2, 0, 3, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 3; ++c) perm.ctx_x(i, c) = b.ctx_x(order[i], c);
    perm.z[i] = b.z[order[i]];
    perm.event[i] = b.event[order[i]];
  }
  const auto shuffled = model.forward(embed(model, perm, binner));
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t l = 0; l < 8; ++l) CHECK(std::abs(shuffled[j].probs[l] - base[j].probs[l]) < 1e-12);

  const auto canon_a = model.forward(embed(model, b, binner, true));
  const auto canon_b = model.forward(embed(model, perm, binner, true));
  for (std::size_t j = 0; j < 3; ++j) CHECK(canon_a[j].probs == canon_b[j].probs);

  auto single = b;
  single.q_x = Matrix(1, 3);
  for (std::size_t c = 0; c < 3; ++c) single.q_x(0, c) = b.q_x(0, c);
  single.indicator = {b.indicator[0]};
  const auto alone = model.forward(embed(model, single, binner));
  CHECK(alone[0].probs == base[0].probs);
}

TEST_CASE("loss helpers") {
  HistogramPrediction p{{0.5, 0.25, 0.25}, {std::log(0.5), std::log(0.25), std::log(0.25)}};
  CHECK(nll_loss(p, 1) == doctest::Approx(0.693147180559945));
  CHECK_THROWS(nll_loss(p, 0));
  CHECK_THROWS(nll_loss(p, 4));

  HistogramPrediction u{std::vector<double>(4, 0.25), std::vector<double>(4, std::log(0.25))};
  CHECK(ppsd(u, 0) == 1.0);
  CHECK(ppsd(u, 1) == doctest::Approx(0.75));
  CHECK(ppsd(u, 2) == doctest::Approx(0.5));
  CHECK(ppsd(u, 3) == doctest::Approx(0.25));
  CHECK(ppsd(u, 4) == 0.0);
  HistogramPrediction h{{0.1, 0.2, 0.3, 0.4}, {}};
  CHECK(ppsd(h, 2) == doctest::Approx(0.7));

  const Binner binner(-5.0, 5.0, 10);
  const auto tw = TimeTransform::lognormal(0.0, 1.0);
  // g(r) = 0.5 is the center of bin 6; a symmetric smoothed target around it.
  const auto a = smoothed_target(std::exp(0.5), 1.0, tw, binner);
  CHECK(std::abs(a[4] - a[6]) < 1e-12);
  CHECK(std::accumulate(a.begin(), a.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-14));
  HistogramPrediction uni{std::vector<double>(10, 0.1), std::vector<double>(10, std::log(0.1))};
  CHECK(sce_loss(uni, 3.0, 0.4, tw, binner) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("loss is stationary at the minimum of a one-parameter slice") {
  // Along the head bias of the target bin the loss is convex; locate the
  // minimum in a two-bin model with a soft target.
  ModelConfig c = small_config();
  c.bins = 2;
  c.zero_head = true;
  PfnModel model(c);
  Rng rng(RngStream{2, 0});
  const Binner binner(0.0, 1.0, 2);
  const auto batch = embed(model, random_batch(rng, 2, 4, 1, binner), binner);
  std::vector<std::vector<double>> t{{0.25, 0.75}};
  // With a zero head, logits are the head biases; the minimum is log(3) apart.
  auto params = model.parameters();
  const std::size_t n = params.size();
  params[n - 1] = std::log(3.0);
  params[n - 2] = 0.0;
  std::vector<double> g(n, 0.0);
  model.loss_and_gradient(batch, t, g);
  CHECK(std::abs(g[n - 1]) < 1e-8);
  CHECK(std::abs(g[n - 2]) < 1e-8);
}
