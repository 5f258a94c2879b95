#pragma once

#include <vector>

#include "sra/tensor.hpp"

namespace sra {

template <typename Scalar>
struct LossResult {
  double loss = 0;
  Tensor<Scalar> grad;  // dLoss/dInput, same shape as the input
};

/// Mean squared deviation of scalar outputs (shape (N) or (N,1)) from `target`.
template <typename Scalar>
LossResult<Scalar> squared_loss(const Tensor<Scalar>& outputs, double target);

/// Mean softmax cross-entropy over a batch of logits (N, C).
template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels);

/// Row-wise log-softmax, computed in double.
Eigen::ArrayXXd log_softmax(const Tensor<float>& logits);

}  // namespace sra
