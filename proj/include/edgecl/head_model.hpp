#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "edgecl/mathcore.hpp"

namespace edgecl {

/// Weights of the trainable head: D -> H (ReLU) -> C (softmax).
template <typename Scalar>
struct HeadParams {
  Matrix<Scalar> w1;  // H x D
  Vector<Scalar> b1;  // H
  Matrix<Scalar> w2;  // C x H
  Vector<Scalar> b2;  // C

  std::size_t dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t classes() const { return static_cast<std::size_t>(w2.rows()); }

  static HeadParams zeros(std::size_t dim, std::size_t hidden, std::size_t classes) {
    HeadParams p;
    p.w1 = Matrix<Scalar>::Zero(hidden, dim);
    p.b1 = Vector<Scalar>::Zero(hidden);
    p.w2 = Matrix<Scalar>::Zero(classes, hidden);
    p.b2 = Vector<Scalar>::Zero(classes);
    return p;
  }

  bool same_shape(const HeadParams& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && w2.rows() == o.w2.rows() &&
           w2.cols() == o.w2.cols() && b1.size() == o.b1.size() && b2.size() == o.b2.size();
  }

  bool all_finite() const { return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(); }

  template <typename Other>
  HeadParams<Other> cast() const {
    return {w1.template cast<Other>(), b1.template cast<Other>(), w2.template cast<Other>(),
            b2.template cast<Other>()};
  }

  /// Exact (bitwise for IEEE types) equality.
  friend bool operator==(const HeadParams& a, const HeadParams& b) {
    return a.same_shape(b) && a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2;
  }
};

using Head = HeadParams<float>;

enum class ReplaySchedule { sequential, mixed };

struct TrainConfig {
  double learning_rate = 0.2;
  std::size_t epochs_per_batch = 20;
  std::size_t minibatch_size = 16;
  std::uint64_t seed = 0;
  ReplaySchedule replay_schedule = ReplaySchedule::sequential;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ArgumentError("learning_rate must be positive");
    if (epochs_per_batch == 0) throw ArgumentError("epochs_per_batch must be positive");
    if (minibatch_size == 0) throw ArgumentError("minibatch_size must be positive");
  }
};

/// Feature rows (one sample per row) with one label per row.
template <typename Scalar>
struct LabeledBatch {
  Matrix<Scalar> features;
  std::vector<ClassIndex> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  static LabeledBatch with_dim(std::size_t dim) {
    LabeledBatch b;
    b.features.resize(0, static_cast<Eigen::Index>(dim));
    return b;
  }

  /// Rows selected by index, in the given order.
  LabeledBatch gather(const std::vector<std::size_t>& rows) const {
    LabeledBatch out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
      out.labels.push_back(labels[rows[i]]);
    }
    return out;
  }

  void append(const LabeledBatch& other) {
    if (other.empty()) return;
    if (empty() && features.cols() == 0) features.resize(0, other.features.cols());
    if (other.features.cols() != features.cols()) throw DimensionError("append: feature dimension mismatch");
    const Eigen::Index old_rows = features.rows();
    features.conservativeResize(old_rows + other.features.rows(), Eigen::NoChange);
    features.bottomRows(other.features.rows()) = other.features;
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  }

  friend bool operator==(const LabeledBatch& a, const LabeledBatch& b) {
    return a.labels == b.labels && a.features.rows() == b.features.rows() &&
           a.features.cols() == b.features.cols() && a.features == b.features;
  }
};

using Batch = LabeledBatch<float>;

/// He-style uniform initialization, zero biases. W1 is drawn before W2, row-major.
template <typename Scalar = float>
HeadParams<Scalar> init_head(std::size_t dim, std::size_t hidden, std::size_t classes, std::uint64_t seed) {
  if (dim == 0 || hidden == 0 || classes == 0) throw ArgumentError("init_head: dimensions must be >= 1");
  auto p = HeadParams<Scalar>::zeros(dim, hidden, classes);
  Rng rng = Rng(seed).substream("head_init");
  const double r1 = std::sqrt(6.0 / static_cast<double>(dim));
  const double r2 = std::sqrt(6.0 / static_cast<double>(hidden));
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = static_cast<Scalar>(rng.uniform(-r1, r1));
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = static_cast<Scalar>(rng.uniform(-r2, r2));
  return p;
}

namespace detail {

template <typename Scalar>
void check_input_dim(const HeadParams<Scalar>& params, Eigen::Index cols) {
  if (static_cast<std::size_t>(cols) != params.dim())
    throw DimensionError("feature dimension " + std::to_string(cols) + " does not match head dimension " +
                         std::to_string(params.dim()));
}

template <typename Scalar>
Matrix<Scalar> hidden_preactivation(const HeadParams<Scalar>& p, const Matrix<Scalar>& x) {
  Matrix<Scalar> z1 = x * p.w1.transpose();
  z1.rowwise() += p.b1.transpose();
  return z1;
}

template <typename Scalar>
Matrix<Scalar> logits_from_hidden(const HeadParams<Scalar>& p, const Matrix<Scalar>& a1) {
  Matrix<Scalar> z2 = a1 * p.w2.transpose();
  z2.rowwise() += p.b2.transpose();
  return z2;
}

}  // namespace detail

/// Pre-softmax class scores for each row of x.
template <typename Scalar>
Matrix<Scalar> logits(const HeadParams<Scalar>& params, const Matrix<Scalar>& x) {
  detail::check_input_dim(params, x.cols());
  return detail::logits_from_hidden(params, relu(detail::hidden_preactivation(params, x)));
}

/// Class probabilities for each row of x.
template <typename Scalar>
Matrix<Scalar> forward_rows(const HeadParams<Scalar>& params, const Matrix<Scalar>& x) {
  return softmax_rows(logits(params, x));
}

template <typename Scalar, typename Derived>
Vector<Scalar> forward(const HeadParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x) {
  detail::check_input_dim(params, x.size());
  Matrix<Scalar> row = x.transpose().template cast<Scalar>();
  return forward_rows(params, row).row(0).transpose();
}

template <typename Scalar>
struct LossAndGrads {
  double loss = 0.0;
  HeadParams<Scalar> grads;
};

/// Mean cross-entropy over the batch and its exact gradient with respect to every parameter.
template <typename Scalar>
LossAndGrads<Scalar> loss_and_grads(const HeadParams<Scalar>& params, const LabeledBatch<Scalar>& batch) {
  if (batch.empty()) throw ArgumentError("loss_and_grads: empty batch");
  detail::check_input_dim(params, batch.features.cols());
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto classes = static_cast<Eigen::Index>(params.classes());

  const Matrix<Scalar>& x = batch.features;
  const Matrix<Scalar> z1 = detail::hidden_preactivation(params, x);
  const Matrix<Scalar> a1 = relu(z1);
  const Matrix<Scalar> probs = softmax_rows(detail::logits_from_hidden(params, a1));

  // delta2 = (p - onehot(y)) / n
  Matrix<Scalar> delta2 = probs;
  double loss = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const ClassIndex y = batch.labels[static_cast<std::size_t>(r)];
    if (y >= params.classes())
      throw IndexError("loss_and_grads: label " + std::to_string(y) + " out of range for " +
                       std::to_string(classes) + " classes");
    loss += cross_entropy(probs.row(r).transpose(), y);
    delta2(r, static_cast<Eigen::Index>(y)) -= Scalar(1);
  }
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  delta2 *= inv_n;

  LossAndGrads<Scalar> out;
  out.loss = loss / static_cast<double>(n);
  out.grads.w2 = delta2.transpose() * a1;
  out.grads.b2 = delta2.colwise().sum().transpose();
  Matrix<Scalar> delta1 = delta2 * params.w2;
  delta1.array() *= (z1.array() > Scalar(0)).template cast<Scalar>();
  out.grads.w1 = delta1.transpose() * x;
  out.grads.b1 = delta1.colwise().sum().transpose();
  return out;
}

/// params -= learning_rate * grads, in place. Leaves params untouched if the step would go non-finite.
template <typename Scalar>
void apply_sgd(HeadParams<Scalar>& params, const HeadParams<Scalar>& grads, double learning_rate) {
  if (!params.same_shape(grads)) throw DimensionError("sgd_step: gradient shape mismatch");
  if (!(learning_rate > 0.0)) throw ArgumentError("sgd_step: learning rate must be positive");
  if (!grads.all_finite()) throw NumericError("sgd_step: non-finite gradients");
  const auto lr = static_cast<Scalar>(learning_rate);
  HeadParams<Scalar> next{params.w1 - lr * grads.w1, params.b1 - lr * grads.b1, params.w2 - lr * grads.w2,
                          params.b2 - lr * grads.b2};
  if (!next.all_finite()) throw NumericError("sgd_step: update produced non-finite parameters");
  params = std::move(next);
}

template <typename Scalar>
HeadParams<Scalar> sgd_step(HeadParams<Scalar> params, const HeadParams<Scalar>& grads, double learning_rate) {
  apply_sgd(params, grads, learning_rate);
  return params;
}

/// Minibatch SGD for config.epochs_per_batch epochs. Each epoch reshuffles with rng and
/// keeps the last partial minibatch. Returns the per-epoch mean training loss.
template <typename Scalar>
std::vector<double> train_epochs(HeadParams<Scalar>& params, const LabeledBatch<Scalar>& data,
                                 const TrainConfig& config, Rng& rng) {
  if (data.empty()) throw ArgumentError("train_epochs: empty training data");
  if (config.minibatch_size == 0) throw ArgumentError("train_epochs: minibatch_size must be positive");
  std::vector<double> curve;
  curve.reserve(config.epochs_per_batch);
  std::vector<std::size_t> order(data.size());
  for (std::size_t e = 0; e < config.epochs_per_batch; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(rng, order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.minibatch_size) {
      const std::size_t end = std::min(order.size(), start + config.minibatch_size);
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      auto step = loss_and_grads(params, data.gather(rows));
      apply_sgd(params, step.grads, config.learning_rate);
      total += step.loss * static_cast<double>(end - start);
    }
    curve.push_back(total / static_cast<double>(order.size()));
  }
  return curve;
}

template <typename Scalar>
struct Prediction {
  ClassIndex label = 0;
  Vector<Scalar> probs;
};

template <typename Scalar, typename Derived>
Prediction<Scalar> predict(const HeadParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x) {
  Prediction<Scalar> out;
  out.probs = forward(params, x);
  out.label = argmax(out.probs);
  return out;
}

/// Head snapshot ("HDP1"): magic, u32 D, u32 H, u32 C, then W1, b1, W2, b2 as
/// little-endian float32, row-major.
std::vector<std::uint8_t> encode_head(const Head& params);
/// Decodes one HDP1 block starting at `offset`; advances offset past it.
Head decode_head(const std::vector<std::uint8_t>& bytes, std::size_t& offset);
void save_head(const Head& params, const std::filesystem::path& path);
Head load_head(const std::filesystem::path& path);

}  // namespace edgecl
