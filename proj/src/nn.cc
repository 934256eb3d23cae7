#include "fedec/nn.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "fedec/rng.h"

namespace fedec {

namespace {

std::string weight_name(std::size_t l) { return "dense" + std::to_string(l) + ".weight"; }
std::string bias_name(std::size_t l) { return "dense" + std::to_string(l) + ".bias"; }

double clip(double p) { return std::clamp(p, kProbClip, 1.0); }

void check_params(const NetworkSpec& spec, const ParamVector& params) {
  spec.validate();
  if (params.layout() != spec.layout()) {
    throw LayoutMismatch("parameter layout does not match network spec");
  }
}

void check_features(const NetworkSpec& spec, const Matrix& x) {
  if (x.cols != spec.input_dim()) {
    throw std::invalid_argument("feature dimension " + std::to_string(x.cols) +
                                " does not match network input " +
                                std::to_string(spec.input_dim()));
  }
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw std::invalid_argument("label count " + std::to_string(labels.size()) +
                                " does not match prediction rows " + std::to_string(rows));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("label " + std::to_string(labels[i]) + " at row " +
                              std::to_string(i) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }
}

// out = in * W^T + b, W is (out x in) row-major.
Matrix affine(const Matrix& in, std::span<const double> w, std::span<const double> b,
              std::size_t out_dim) {
  Matrix out(in.rows, out_dim);
  for (std::size_t r = 0; r < in.rows; ++r) {
    const auto x = in.row(r);
    auto y = out.row(r);
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wo = w.data() + o * in.cols;
      double acc = b[o];
      for (std::size_t i = 0; i < in.cols; ++i) acc += wo[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

void softmax_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
}

// activations[0] is the input, activations[l] the post-ReLU output of hidden
// layer l-1; the last entry holds softmax probabilities.
std::vector<Matrix> forward_all(const NetworkSpec& spec, const ParamVector& params,
                                const Matrix& x, std::size_t stop_after = SIZE_MAX) {
  std::vector<Matrix> acts;
  acts.push_back(x);
  const std::size_t n_layers = spec.layers.size() - 1;
  for (std::size_t l = 0; l < n_layers && l <= stop_after; ++l) {
    Matrix z = affine(acts.back(), params.slice(weight_name(l)),
                      params.slice(bias_name(l)), spec.layers[l + 1]);
    if (l + 1 < n_layers) {
      for (auto& v : z.data) v = v > 0.0 ? v : 0.0;
    } else {
      softmax_rows(z);
    }
    acts.push_back(std::move(z));
  }
  return acts;
}

}  // namespace

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d)
    : rows(r), cols(c), data(std::move(d)) {
  if (data.size() != r * c) throw std::invalid_argument("matrix data size mismatch");
}

void NetworkSpec::validate() const {
  if (layers.size() < 2) throw std::invalid_argument("network needs at least two layers");
  for (auto w : layers) {
    if (w == 0) throw std::invalid_argument("layer widths must be positive");
  }
  if (layers.back() < 2) throw std::invalid_argument("network needs at least two classes");
}

Layout NetworkSpec::layout() const {
  Layout out;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    out.push_back({weight_name(l), {layers[l + 1], layers[l]}});
    out.push_back({bias_name(l), {layers[l + 1]}});
  }
  return out;
}

void Batch::validate() const {
  if (labels.empty()) throw std::invalid_argument("empty batch");
  if (features.rows != labels.size()) {
    throw std::invalid_argument("batch has " + std::to_string(features.rows) +
                                " feature rows but " + std::to_string(labels.size()) +
                                " labels");
  }
}

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p(spec.layout());
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < spec.layers.size(); ++l) {
    const double fan_in = static_cast<double>(spec.layers[l]);
    const double fan_out = static_cast<double>(spec.layers[l + 1]);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : p.slice(weight_name(l))) w = dist(rng);
  }
  return p;
}

Prediction forward(const NetworkSpec& spec, const ParamVector& params,
                   const Matrix& features) {
  check_params(spec, params);
  check_features(spec, features);
  auto acts = forward_all(spec, params, features);
  return Prediction{std::move(acts.back())};
}

Matrix hidden_activations(const NetworkSpec& spec, const ParamVector& params,
                          const Matrix& features, std::size_t layer) {
  check_params(spec, params);
  check_features(spec, features);
  if (layer >= spec.hidden_count()) {
    throw std::out_of_range("hidden layer index " + std::to_string(layer) +
                            " but network has " + std::to_string(spec.hidden_count()) +
                            " hidden layers");
  }
  auto acts = forward_all(spec, params, features, layer);
  return std::move(acts.back());
}

double cross_entropy(const Prediction& pred, std::span<const int> labels) {
  check_labels(labels, pred.rows(), pred.classes());
  if (labels.empty()) throw std::invalid_argument("empty batch");
  double sum = 0.0;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    sum -= std::log(clip(pred.probs(r, static_cast<std::size_t>(labels[r]))));
  }
  return sum / static_cast<double>(pred.rows());
}

double kl_divergence(const Prediction& reference, const Prediction& current) {
  if (reference.rows() != current.rows() || reference.classes() != current.classes()) {
    throw std::invalid_argument("prediction shapes differ");
  }
  if (reference.rows() == 0) throw std::invalid_argument("empty batch");
  double sum = 0.0;
  for (std::size_t r = 0; r < reference.rows(); ++r) {
    for (std::size_t c = 0; c < reference.classes(); ++c) {
      const double h = clip(reference.probs(r, c));
      sum += h * (std::log(h) - std::log(clip(current.probs(r, c))));
    }
  }
  return sum / static_cast<double>(reference.rows());
}

double constrained_loss(const NetworkSpec& spec, const ParamVector& params,
                        const Batch& batch, const Prediction& history_pred,
                        double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("alpha must be non-negative");
  batch.validate();
  const Prediction pred = forward(spec, params, batch);
  const double ce = cross_entropy(pred, batch.labels);
  if (alpha == 0.0) return ce;
  return ce + alpha * kl_divergence(history_pred, pred);
}

LossGrad loss_and_grad(const NetworkSpec& spec, const ParamVector& params,
                       const Batch& batch, const std::optional<Prediction>& history_pred,
                       double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("alpha must be non-negative");
  check_params(spec, params);
  batch.validate();
  check_features(spec, batch.features);
  const std::size_t classes = spec.classes();
  check_labels(batch.labels, batch.size(), classes);
  if (history_pred &&
      (history_pred->rows() != batch.size() || history_pred->classes() != classes)) {
    throw std::invalid_argument("history prediction shape does not match batch");
  }

  auto acts = forward_all(spec, params, batch.features);
  const Prediction pred{acts.back()};
  const std::size_t B = batch.size();
  const double inv_b = 1.0 / static_cast<double>(B);

  LossGrad out;
  out.cross_entropy = cross_entropy(pred, batch.labels);
  if (history_pred) {
    out.kl = kl_divergence(*history_pred, pred);
    out.loss = alpha == 0.0 ? out.cross_entropy : out.cross_entropy + alpha * out.kl;
  } else {
    out.loss = out.cross_entropy;
  }

  // d/dz_k of -sum_c w_c log(clip(p_c)) with w = onehot(y) + alpha * clip(h).
  // Classes clipped at the lower bound contribute no gradient.
  Matrix delta(B, classes);
  std::vector<double> w(classes);
  for (std::size_t r = 0; r < B; ++r) {
    const auto p = pred.probs.row(r);
    for (std::size_t c = 0; c < classes; ++c) {
      const double onehot = static_cast<std::size_t>(batch.labels[r]) == c ? 1.0 : 0.0;
      w[c] = history_pred ? onehot + alpha * clip(history_pred->probs(r, c)) : onehot;
    }
    double active = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (p[c] > kProbClip) active += w[c];
    }
    auto d = delta.row(r);
    for (std::size_t c = 0; c < classes; ++c) {
      const double own = p[c] > kProbClip ? w[c] : 0.0;
      d[c] = (p[c] * active - own) * inv_b;
    }
  }

  out.grad = ParamVector(params.layout());
  for (std::size_t l = spec.layers.size() - 1; l-- > 0;) {
    const Matrix& a = acts[l];
    const std::size_t in = spec.layers[l], outd = spec.layers[l + 1];
    auto gw = out.grad.slice(weight_name(l));
    auto gb = out.grad.slice(bias_name(l));
    for (std::size_t r = 0; r < B; ++r) {
      const auto dr = delta.row(r);
      const auto ar = a.row(r);
      for (std::size_t o = 0; o < outd; ++o) {
        const double g = dr[o];
        if (g == 0.0) continue;
        gb[o] += g;
        double* row = gw.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += g * ar[i];
      }
    }
    if (l == 0) break;
    const auto wmat = params.slice(weight_name(l));
    Matrix prev(B, in);
    for (std::size_t r = 0; r < B; ++r) {
      const auto dr = delta.row(r);
      const auto ar = a.row(r);
      auto pr = prev.row(r);
      for (std::size_t o = 0; o < outd; ++o) {
        const double g = dr[o];
        if (g == 0.0) continue;
        const double* row = wmat.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) pr[i] += g * row[i];
      }
      for (std::size_t i = 0; i < in; ++i) {
        if (!(ar[i] > 0.0)) pr[i] = 0.0;
      }
    }
    delta = std::move(prev);
  }
  return out;
}

ParamVector grad(const NetworkSpec& spec, const ParamVector& params, const Batch& batch,
                 const std::optional<Prediction>& history_pred, double alpha) {
  return loss_and_grad(spec, params, batch, history_pred, alpha).grad;
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& gradient, double lr) {
  ParamVector out = params;
  out.axpy(-lr, gradient);
  return out;
}

double accuracy(const Prediction& pred, std::span<const int> labels) {
  check_labels(labels, pred.rows(), pred.classes());
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    const auto row = pred.probs.row(r);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace fedec
