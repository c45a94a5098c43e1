#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "edgecl/errors.hpp"
#include "edgecl/rng.hpp"

namespace edgecl {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major so raw storage order equals the on-disk order of the binary formats.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorF = Vector<float>;
using MatrixF = Matrix<float>;

using ClassIndex = std::size_t;

/// Floor used inside cross_entropy.
inline constexpr double kProbabilityFloor = 1e-12;

/// Smallest probability softmax emits. Keeps outputs strictly positive and keeps
/// the backward pass (p - onehot, then products with the weights) out of the
/// subnormal range, where float arithmetic is orders of magnitude slower.
inline constexpr double kMinProbability = 1e-30;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Numerically stable softmax over a vector of logits. Normalization is
/// accumulated in double; entries are floored at kMinProbability.
template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  if (logits.size() == 0) throw DimensionError("softmax: empty logits");
  if (!logits.allFinite()) throw NumericError("softmax: non-finite logits");
  const Eigen::Index n = logits.size();
  const double max_logit = static_cast<double>(logits.maxCoeff());
  Eigen::VectorXd e(n);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    e[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
    sum += e[i];
  }
  Vector<Scalar> out(n);
  const auto tiny = static_cast<Scalar>(kMinProbability);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = std::max(static_cast<Scalar>(e[i] / sum), tiny);
  return out;
}

/// Row-wise softmax for a batch of logits (one sample per row). Same arithmetic as softmax().
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  if (logits.cols() == 0) throw DimensionError("softmax: empty logits");
  if (!logits.allFinite()) throw NumericError("softmax: non-finite logits");
  const auto tiny = static_cast<Scalar>(kMinProbability);
  Matrix<Scalar> out(logits.rows(), logits.cols());
  std::vector<double> e(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double max_logit = static_cast<double>(logits.row(r).maxCoeff());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
      e[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(logits(r, i)) - max_logit);
      sum += e[static_cast<std::size_t>(i)];
    }
    for (Eigen::Index i = 0; i < logits.cols(); ++i)
      out(r, i) = std::max(static_cast<Scalar>(e[static_cast<std::size_t>(i)] / sum), tiny);
  }
  return out;
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  return v.cwiseMax(Scalar(0)).eval();
}

/// -log(probs[label]) with the probability floored at 1e-12.
template <typename Derived>
double cross_entropy(const Eigen::MatrixBase<Derived>& probs, ClassIndex label) {
  if (label >= static_cast<std::size_t>(probs.size()))
    throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(probs.size()) + " classes");
  const double p = std::max(static_cast<double>(probs[static_cast<Eigen::Index>(label)]), kProbabilityFloor);
  return -std::log(p);
}

/// k distinct indices drawn uniformly from [0, n), in draw order (partial Fisher-Yates).
inline std::vector<std::size_t> choose_k(Rng& rng, std::size_t n, std::size_t k) {
  if (k > n) throw ArgumentError("choose_k: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(Rng& rng, std::vector<T>& items) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Central-difference gradient estimate of f at x.
template <typename Scalar>
Vector<Scalar> finite_diff_grad(const std::function<double(const Vector<Scalar>&)>& f, const Vector<Scalar>& x,
                                Scalar eps = Scalar(1e-3)) {
  if (!(eps > Scalar(0))) throw ArgumentError("finite_diff_grad: eps must be positive");
  Vector<Scalar> grad(x.size());
  Vector<Scalar> probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
    grad[i] = static_cast<Scalar>((up - down) / (2.0 * static_cast<double>(eps)));
  }
  return grad;
}

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
ClassIndex argmax(const Eigen::MatrixBase<Derived>& v) {
  if (v.size() == 0) throw DimensionError("argmax: empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<ClassIndex>(best);
}

}  // namespace edgecl
