#include <cmath>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "survpfn/tabular.hpp"

using namespace survpfn;

namespace {

MlpSpec fixed_spec(std::vector<std::size_t> widths, Activation act, double noise) {
  MlpSpec s;
  s.widths = widths;
  s.activations.assign(widths.size(), act);
  s.noise_std.assign(widths.size(), noise);
  s.weight_seed = 99;
  return s;
}

}  // namespace

TEST_CASE("sample_mlp_spec ranges and determinism") {
  const RngStream r{5, 1};
  CHECK(sample_mlp_spec(r) == sample_mlp_spec(r));

  GeneratorRanges fixed;
  fixed.min_layers = fixed.max_layers = 2;
  fixed.min_width = fixed.max_width = 16;
  const auto s = sample_mlp_spec(r, fixed);
  CHECK(s.widths == std::vector<std::size_t>{16, 16});

  std::set<std::size_t> depths;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto sp = sample_mlp_spec(RngStream{1, 0}.child(i));
    depths.insert(sp.depth());
    for (auto w : sp.widths) {
      REQUIRE(w >= 8);
      REQUIRE(w <= 64);
    }
    for (double n : sp.noise_std) {
      REQUIRE(n >= 1e-3 * (1 - 1e-12));
      REQUIRE(n <= 0.3 * (1 + 1e-12));
    }
  }
  CHECK(depths == std::set<std::size_t>{1, 2, 3, 4});

  GeneratorRanges bad;
  bad.min_layers = 3;
  bad.max_layers = 2;
  CHECK_THROWS_AS(sample_mlp_spec(r, bad), std::invalid_argument);
}

TEST_CASE("gen_unconditional shape, determinism and standardization") {
  const auto spec = sample_mlp_spec(RngStream{2, 0});
  const auto m = gen_unconditional(spec, 5, 3, RngStream{3, 0});
  CHECK(m.rows() == 5);
  CHECK(m.cols() == 3);
  for (double v : m.data()) CHECK(std::isfinite(v));
  CHECK(m == gen_unconditional(spec, 5, 3, RngStream{3, 0}));
  CHECK_THROWS(gen_unconditional(spec, 5, spec.output_width() + 1, RngStream{3, 0}));

  for (std::uint64_t k = 0; k < 20; ++k) {
    const auto sp = sample_mlp_spec(RngStream{11, k});
    const auto t = gen_unconditional(sp, 200, std::min<std::size_t>(4, sp.output_width()),
                                     RngStream{12, k});
    for (std::size_t c = 0; c < t.cols(); ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t r = 0; r < t.rows(); ++r) mean += t(r, c);
      mean /= 200.0;
      for (std::size_t r = 0; r < t.rows(); ++r) var += (t(r, c) - mean) * (t(r, c) - mean);
      var /= 200.0;
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("single identity layer without noise reapplies W to the input") {
  const auto spec = fixed_spec({3}, Activation::identity, 0.0);
  const std::size_t n = 6;
  const RngStream rng{8, 8};
  const auto out = gen_unconditional(spec, n, 2, rng);
  const auto layers = materialize_weights(spec, 3);
  Matrix raw(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    Rng r(rng.child(i));
    double z[3];
    for (double& v : z) v = r.normal();
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = layers[0].bias[o];
      for (std::size_t k = 0; k < 3; ++k) acc += layers[0].weight(o, k) * z[k];
      raw(i, o) = acc;
    }
  }
  standardize_columns(raw);
  for (std::size_t k = 0; k < raw.data().size(); ++k)
    CHECK(out.data()[k] == doctest::Approx(raw.data()[k]).epsilon(1e-12));
}

TEST_CASE("gen_conditional contract") {
  auto spec = sample_mlp_spec(RngStream{4, 0});
  Matrix X(4, 2, 0.5);
  const auto y = gen_conditional(spec, X, 1, RngStream{5, 0});
  CHECK(y.rows() == 4);
  CHECK(y.cols() == 1);
  CHECK(y(0, 0) != y(1, 0));

  auto quiet = fixed_spec({8, 4}, Activation::tanh, 0.0);
  quiet.input_noise_std = 0.0;
  const auto q = gen_conditional(quiet, X, 2, RngStream{5, 0});
  CHECK(q(0, 0) == q(1, 0));
  CHECK(q(2, 1) == q(3, 1));

  X(1, 1) = std::nan("");
  CHECK_THROWS_AS(gen_conditional(spec, X, 1, RngStream{5, 0}), std::invalid_argument);
}

TEST_CASE("spec validation") {
  MlpSpec s;
  CHECK_THROWS(s.validate());
  s = fixed_spec({4, 0}, Activation::relu, 0.1);
  CHECK_THROWS(s.validate());
  CHECK(activation_from_string(to_string(Activation::sine)) == Activation::sine);
  CHECK_THROWS(activation_from_string("swish"));
}
