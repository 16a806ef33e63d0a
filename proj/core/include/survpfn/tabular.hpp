#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "survpfn/matrix.hpp"
#include "survpfn/rng.hpp"

namespace survpfn {

enum class Activation { tanh, relu, sine, identity };

const char* to_string(Activation a) noexcept;
Activation activation_from_string(const std::string& s);

/// A random multilayer perceptron used as a table generator.
///
/// Weights are not stored: they are regenerated from `weight_seed` and the
/// input width, so a spec is a few dozen bytes and serializes trivially.
struct MlpSpec {
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;
  std::uint64_t weight_seed = 0;
  /// Std of the Gaussian noise added after each layer's activation.
  std::vector<double> noise_std;
  /// Scale and width of the noise vector appended to each row in conditional mode.
  double input_noise_std = 1.0;
  std::size_t noise_width = 4;

  [[nodiscard]] std::size_t depth() const noexcept { return widths.size(); }
  [[nodiscard]] std::size_t output_width() const noexcept { return widths.back(); }
  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Ranges that sample_mlp_spec draws from. Bounds are inclusive.
struct GeneratorRanges {
  std::size_t min_layers = 1;
  std::size_t max_layers = 4;
  std::size_t min_width = 8;
  std::size_t max_width = 64;
  double min_noise = 1e-3;  // log-uniform
  double max_noise = 0.3;
  std::vector<Activation> activations{Activation::tanh, Activation::relu, Activation::sine,
                                      Activation::identity};
  double input_noise_std = 1.0;
  std::size_t noise_width = 4;

  void validate() const;
};

MlpSpec sample_mlp_spec(RngStream rng, const GeneratorRanges& ranges = {});

struct MlpLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;
};

/// Deterministic weights for `spec` applied to inputs of width `input_dim`.
/// Entries are N(0, 1/fan_in), biases N(0, 0.1^2).
std::vector<MlpLayer> materialize_weights(const MlpSpec& spec, std::size_t input_dim);

/// Pushes standard Gaussian inputs (width = first layer width) through the MLP
/// and returns the first `d_out` final-layer neurons, each column standardized
/// to zero mean and unit population variance. Row i reads stream `rng.child(i)`.
Matrix gen_unconditional(const MlpSpec& spec, std::size_t n, std::size_t d_out, RngStream rng);

/// Applies the MLP to each row of X concatenated with a fresh noise vector of
/// width `spec.noise_width` scaled by `spec.input_noise_std`. Outputs are raw
/// (not standardized). Row i reads stream `rng.child(i)`.
Matrix gen_conditional(const MlpSpec& spec, const Matrix& X, std::size_t d_out, RngStream rng);

/// In-place column standardization (population moments). Constant columns are
/// only centered.
void standardize_columns(Matrix& m);

}  // namespace survpfn
