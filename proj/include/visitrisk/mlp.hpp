#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visitrisk/matrix.hpp"

namespace visitrisk {

// SELU constants at full precision (they round to 1.0507 and 1.6733).
inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

/// lambda * z for z > 0, lambda * alpha * (e^z - 1) otherwise.
inline double selu(double z, double lambda = kSeluLambda, double alpha = kSeluAlpha) {
  return z > 0.0 ? lambda * z : lambda * alpha * std::expm1(z);
}

/// lambda for z > 0, lambda * alpha * e^z for z <= 0 (left branch at z = 0).
inline double selu_derivative(double z, double lambda = kSeluLambda, double alpha = kSeluAlpha) {
  return z > 0.0 ? lambda : lambda * alpha * std::exp(z);
}

/// Logistic function, evaluated on the branch that cannot overflow exp.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Architecture {
  std::string name;
  std::vector<std::size_t> hidden;

  static Architecture nn2();  // [50, 50]
  static Architecture nn4();  // [50, 50, 50, 50]
  static Architecture nn8();  // [50, 20, 20, 20, 20, 20, 20, 20]
  /// "nn2" / "nn4" / "nn8" (case-insensitive); throws ConfigError otherwise.
  static Architecture by_name(std::string_view name);
};

/// weights is n_in x n_out, so a layer computes bias + weights^T * input.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;

  bool operator==(const DenseLayer&) const = default;
};

/// Feedforward network: d SELU hidden layers and a sigmoid output unit.
/// The output layer is stored as an n_d x 1 DenseLayer.
struct MlpModel {
  std::vector<std::size_t> layer_sizes;  // n_0 = p, n_1 .. n_d
  std::vector<DenseLayer> hidden;
  DenseLayer output;
  double selu_lambda = kSeluLambda;
  double selu_alpha = kSeluAlpha;

  /// All-zero parameters with the given layer sizes (n_0 .. n_d, d >= 1).
  static MlpModel zeros(std::vector<std::size_t> layer_sizes);

  std::size_t input_width() const { return layer_sizes.front(); }
  std::size_t depth() const { return hidden.size(); }
  std::size_t parameter_count() const;

  /// Parameter storage in file order: W_1, b_1, ..., W_d, b_d, w_o, b_o.
  std::vector<std::span<double>> parameter_blocks();
  std::vector<std::span<const double>> parameter_blocks() const;

  /// Throws ShapeCorruption when shapes do not chain or a parameter is not finite.
  void check() const;

  bool operator==(const MlpModel&) const = default;
};

enum class WeightInit {
  kHe,     // std sqrt(2 / n_in): the training default
  kLecun,  // std sqrt(1 / n_in): the variance SELU's fixed point assumes
};

/// Gaussian weights with mean 0 and the scheme's std, zero biases.
MlpModel init_model(const Architecture& arch, std::size_t input_width, std::uint64_t seed,
                    WeightInit scheme = WeightInit::kHe);

/// P(y = 1 | x).
double forward(const MlpModel& model, std::span<const double> x);
/// Row-wise forward; bit-identical to calling forward on each row.
std::vector<double> forward_batch(const MlpModel& model, const Matrix& x);

/// Activations kept for backpropagation.
struct ForwardTrace {
  std::vector<Matrix> pre;   // z^(i), one per hidden layer
  std::vector<Matrix> post;  // h^(i) = selu(z^(i))
  std::vector<double> logits;
  std::vector<double> probs;
};
ForwardTrace forward_trace(const MlpModel& model, const Matrix& x);

// MLP1 format: ASCII header lines
//   MLP1 / depth <d> / sizes <n_0> ... <n_d> / lambda <v> / alpha <v> / end
// followed by every parameter block (see parameter_blocks) as little-endian
// float64 values, weights row-major.
std::string serialize_model(const MlpModel& model);
MlpModel parse_model(std::string_view bytes);
void save_model(const std::filesystem::path& path, const MlpModel& model);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace visitrisk
