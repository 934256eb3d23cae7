#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedec/param_vector.h"

namespace fedec {

// Probabilities are clipped to [kProbClip, 1] before every logarithm.
inline constexpr double kProbClip = 1e-12;

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> d);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data).subspan(r * cols, cols);
  }
  bool operator==(const Matrix&) const = default;
};

/// Layer widths from input to class count. Hidden layers use ReLU, the output
/// layer softmax.
struct NetworkSpec {
  std::vector<std::size_t> layers;

  void validate() const;
  std::size_t input_dim() const { return layers.front(); }
  std::size_t classes() const { return layers.back(); }
  std::size_t hidden_count() const { return layers.size() - 2; }
  Layout layout() const;
  bool operator==(const NetworkSpec&) const = default;
};

struct Batch {
  Matrix features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

struct Prediction {
  Matrix probs;

  std::size_t rows() const { return probs.rows; }
  std::size_t classes() const { return probs.cols; }
};

/// Glorot-uniform weights, zero biases.
ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed);

Prediction forward(const NetworkSpec& spec, const ParamVector& params,
                   const Matrix& features);
inline Prediction forward(const NetworkSpec& spec, const ParamVector& params,
                          const Batch& batch) {
  return forward(spec, params, batch.features);
}

// Post-ReLU activations of hidden layer `layer` (0-based).
Matrix hidden_activations(const NetworkSpec& spec, const ParamVector& params,
                          const Matrix& features, std::size_t layer);

/// Mean over rows of -log p(label).
double cross_entropy(const Prediction& pred, std::span<const int> labels);

/// Mean over rows of KL(reference || current).
double kl_divergence(const Prediction& reference, const Prediction& current);

/// CE + alpha * KL(history || current) on one batch. `history_pred` holds the
/// historical model's predictions on the same batch and is treated as a
/// constant.
double constrained_loss(const NetworkSpec& spec, const ParamVector& params,
                        const Batch& batch, const Prediction& history_pred,
                        double alpha);

struct LossGrad {
  double loss = 0.0;        // ce + alpha * kl
  double cross_entropy = 0.0;
  double kl = 0.0;          // 0 when no history is given
  ParamVector grad;
};

/// Loss and analytic gradient in one forward/backward pass. Without
/// `history_pred` this is plain cross-entropy.
LossGrad loss_and_grad(const NetworkSpec& spec, const ParamVector& params,
                       const Batch& batch,
                       const std::optional<Prediction>& history_pred = std::nullopt,
                       double alpha = 0.0);

ParamVector grad(const NetworkSpec& spec, const ParamVector& params,
                 const Batch& batch,
                 const std::optional<Prediction>& history_pred = std::nullopt,
                 double alpha = 0.0);

ParamVector sgd_step(const ParamVector& params, const ParamVector& gradient,
                     double lr);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Prediction& pred, std::span<const int> labels);

}  // namespace fedec
