#include "survpfn/tabular.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace survpfn {

const char* to_string(Activation a) noexcept {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sine: return "sine";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "sine") return Activation::sine;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

void MlpSpec::validate() const {
  if (widths.empty()) throw std::invalid_argument("MlpSpec: at least one layer required");
  if (activations.size() != widths.size() || noise_std.size() != widths.size())
    throw std::invalid_argument("MlpSpec: per-layer vectors must match the layer count");
  for (auto w : widths)
    if (w == 0) throw std::invalid_argument("MlpSpec: layer widths must be >= 1");
  for (double s : noise_std)
    if (!(s >= 0.0) || !std::isfinite(s))
      throw std::invalid_argument("MlpSpec: noise std must be finite and >= 0");
  if (!(input_noise_std >= 0.0)) throw std::invalid_argument("MlpSpec: input noise std < 0");
}

void GeneratorRanges::validate() const {
  if (min_layers == 0 || min_layers > max_layers)
    throw std::invalid_argument("GeneratorRanges: invalid layer range");
  if (min_width == 0 || min_width > max_width)
    throw std::invalid_argument("GeneratorRanges: invalid width range");
  if (!(min_noise > 0.0) || min_noise > max_noise)
    throw std::invalid_argument("GeneratorRanges: invalid noise range");
  if (activations.empty()) throw std::invalid_argument("GeneratorRanges: no activations");
}

MlpSpec sample_mlp_spec(RngStream stream, const GeneratorRanges& ranges) {
  ranges.validate();
  Rng rng(stream);
  MlpSpec spec;
  const auto depth = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(ranges.min_layers), static_cast<std::int64_t>(ranges.max_layers)));
  for (std::size_t l = 0; l < depth; ++l) {
    spec.widths.push_back(static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(ranges.min_width), static_cast<std::int64_t>(ranges.max_width))));
    spec.activations.push_back(ranges.activations[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(ranges.activations.size()) - 1))]);
    spec.noise_std.push_back(ranges.min_noise == ranges.max_noise
                                 ? ranges.min_noise
                                 : rng.log_uniform(ranges.min_noise, ranges.max_noise));
  }
  spec.weight_seed = rng();
  spec.input_noise_std = ranges.input_noise_std;
  spec.noise_width = ranges.noise_width;
  return spec;
}

std::vector<MlpLayer> materialize_weights(const MlpSpec& spec, std::size_t input_dim) {
  spec.validate();
  const RngStream base{spec.weight_seed, input_dim};
  std::vector<MlpLayer> layers;
  layers.reserve(spec.depth());
  std::size_t fan_in = input_dim;
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    Rng rng(base.child(l));
    MlpLayer layer{Matrix(spec.widths[l], fan_in), std::vector<double>(spec.widths[l])};
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& w : layer.weight.data()) w = scale * rng.normal();
    for (double& b : layer.bias) b = 0.1 * rng.normal();
    layers.push_back(std::move(layer));
    fan_in = spec.widths[l];
  }
  return layers;
}

namespace {

double activate(Activation a, double x) noexcept {
  switch (a) {
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::sine: return std::sin(x);
    case Activation::identity: return x;
  }
  return x;
}

// Runs one row through the network, drawing per-layer noise from `rng`.
std::vector<double> run_row(const MlpSpec& spec, const std::vector<MlpLayer>& layers,
                            std::vector<double> h, Rng& rng) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    std::vector<double> next(layer.weight.rows());
    for (std::size_t o = 0; o < next.size(); ++o) {
      double acc = layer.bias[o];
      auto w = layer.weight.row(o);
      for (std::size_t i = 0; i < h.size(); ++i) acc += w[i] * h[i];
      next[o] = activate(spec.activations[l], acc) + spec.noise_std[l] * rng.normal();
    }
    h = std::move(next);
  }
  return h;
}

}  // namespace

void standardize_columns(Matrix& m) {
  const std::size_t n = m.rows();
  if (n == 0) return;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += m(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double d = m(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv_sd = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    for (std::size_t r = 0; r < n; ++r) m(r, c) = (m(r, c) - mean) * inv_sd;
  }
}

Matrix gen_unconditional(const MlpSpec& spec, std::size_t n, std::size_t d_out, RngStream rng) {
  spec.validate();
  if (n == 0) throw std::invalid_argument("gen_unconditional: n must be >= 1");
  if (d_out > spec.output_width())
    throw std::invalid_argument("gen_unconditional: d_out " + std::to_string(d_out) +
                                " exceeds final layer width " +
                                std::to_string(spec.output_width()));
  const std::size_t in = spec.widths.front();
  const auto layers = materialize_weights(spec, in);
  Matrix out(n, d_out);
  for (std::size_t i = 0; i < n; ++i) {
    Rng row_rng(rng.child(i));
    std::vector<double> z(in);
    for (double& v : z) v = row_rng.normal();
    const auto h = run_row(spec, layers, std::move(z), row_rng);
    for (std::size_t c = 0; c < d_out; ++c) out(i, c) = h[c];
  }
  standardize_columns(out);
  return out;
}

Matrix gen_conditional(const MlpSpec& spec, const Matrix& X, std::size_t d_out, RngStream rng) {
  spec.validate();
  if (d_out > spec.output_width())
    throw std::invalid_argument("gen_conditional: d_out " + std::to_string(d_out) +
                                " exceeds final layer width " +
                                std::to_string(spec.output_width()));
  for (double v : X.data())
    if (!std::isfinite(v)) throw std::invalid_argument("gen_conditional: X must be finite");
  const std::size_t d = X.cols();
  const std::size_t in = d + spec.noise_width;
  const auto layers = materialize_weights(spec, in);
  Matrix out(X.rows(), d_out);
  for (std::size_t i = 0; i < X.rows(); ++i) {
    Rng row_rng(rng.child(i));
    std::vector<double> h(in);
    auto x = X.row(i);
    for (std::size_t c = 0; c < d; ++c) h[c] = x[c];
    for (std::size_t c = d; c < in; ++c) h[c] = spec.input_noise_std * row_rng.normal();
    const auto y = run_row(spec, layers, std::move(h), row_rng);
    for (std::size_t c = 0; c < d_out; ++c) out(i, c) = y[c];
  }
  return out;
}

}  // namespace survpfn
