#pragma once

#include "ecvd/core/tensor.hpp"

#include <cmath>
#include <span>
#include <string>

namespace ecvd::nn {

inline constexpr double kProbabilityFloor = 1e-12;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-wise softmax computed with the max-shift.
template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  RowMatrix<S> p = logits;
  for (Index r = 0; r < p.rows(); ++r) {
    const S mx = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

inline void check_labels(std::span<const int> labels, Index rows, Index classes) {
  if (static_cast<Index>(labels.size()) != rows) {
    throw Error("weighted_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) throw Error("weighted_cross_entropy: invalid label " + std::to_string(y));
  }
}

/// -(1/N) sum_n w[y_n] log(max(p[n, y_n], 1e-12)) over probability rows.
template <typename Derived, typename WDerived>
typename Derived::Scalar weighted_cross_entropy(const Eigen::MatrixBase<Derived>& probs,
                                                std::span<const int> labels,
                                                const Eigen::MatrixBase<WDerived>& weights) {
  using S = typename Derived::Scalar;
  check_labels(labels, probs.rows(), probs.cols());
  if (weights.size() != probs.cols()) throw Error("weighted_cross_entropy: weight vector size mismatch");
  S total = 0;
  for (Index n = 0; n < probs.rows(); ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    total -= S(weights(y)) * std::log(std::max<S>(probs(n, y), S(kProbabilityFloor)));
  }
  return total / S(probs.rows());
}

template <typename Scalar>
struct LossAndGrad {
  Scalar loss = 0;
  RowMatrix<Scalar> grad;   // d loss / d logits, N x K
  RowMatrix<Scalar> probs;  // softmax(logits)
};

/// Fused softmax + weighted cross-entropy on logits using log-sum-exp.
/// Gradient per row: (w[y]/N) * (softmax(z) - onehot(y)).
template <typename Derived, typename WDerived>
LossAndGrad<typename Derived::Scalar> weighted_cross_entropy_logits(const Eigen::MatrixBase<Derived>& logits,
                                                                    std::span<const int> labels,
                                                                    const Eigen::MatrixBase<WDerived>& weights) {
  using S = typename Derived::Scalar;
  check_labels(labels, logits.rows(), logits.cols());
  if (weights.size() != logits.cols()) throw Error("weighted_cross_entropy: weight vector size mismatch");
  LossAndGrad<S> out;
  out.probs = softmax_rows(logits);
  out.grad = out.probs;
  const S inv_n = S(1) / S(logits.rows());
  for (Index n = 0; n < logits.rows(); ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    const S mx = logits.row(n).maxCoeff();
    const S lse = mx + std::log((logits.row(n).array() - mx).exp().sum());
    const S log_p = std::max<S>(logits(n, y) - lse, S(std::log(kProbabilityFloor)));
    const S w = S(weights(y));
    out.loss -= w * log_p * inv_n;
    out.grad(n, y) -= S(1);
    out.grad.row(n) *= w * inv_n;
  }
  return out;
}

}  // namespace ecvd::nn
