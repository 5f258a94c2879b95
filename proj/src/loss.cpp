#include "sra/loss.hpp"

#include <cmath>
#include <string>

namespace sra {

template <typename Scalar>
LossResult<Scalar> squared_loss(const Tensor<Scalar>& outputs, double target) {
  const Index n = outputs.rank() == 0 ? 0 : outputs.dim(0);
  if (n == 0 || outputs.size() != n) {
    throw ShapeError("squared_loss expects one scalar per sample, got " + shape_string(outputs.shape()));
  }
  LossResult<Scalar> r;
  r.grad = Tensor<Scalar>(outputs.shape());
  double acc = 0;
  for (Index i = 0; i < n; ++i) {
    const double d = static_cast<double>(outputs[i]) - target;
    acc += d * d;
    r.grad[i] = static_cast<Scalar>(2.0 * d / static_cast<double>(n));
  }
  r.loss = acc / static_cast<double>(n);
  return r;
}

template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeError("cross-entropy expects (N,C) logits and N labels");
  }
  const Index n = logits.dim(0), c = logits.dim(1);
  LossResult<Scalar> r;
  r.grad = Tensor<Scalar>(logits.shape());
  double acc = 0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw ShapeError("label " + std::to_string(y) + " out of range");
    double mx = logits[i * c];
    for (Index j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(logits[i * c + j]));
    double z = 0;
    for (Index j = 0; j < c; ++j) z += std::exp(static_cast<double>(logits[i * c + j]) - mx);
    const double log_z = mx + std::log(z);
    acc += log_z - static_cast<double>(logits[i * c + y]);
    for (Index j = 0; j < c; ++j) {
      const double p = std::exp(static_cast<double>(logits[i * c + j]) - log_z);
      r.grad[i * c + j] = static_cast<Scalar>((p - (j == y ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  r.loss = acc / static_cast<double>(n);
  return r;
}

Eigen::ArrayXXd log_softmax(const Tensor<float>& logits) {
  const Index n = logits.dim(0), c = logits.dim(1);
  Eigen::ArrayXXd out(n, c);
  for (Index i = 0; i < n; ++i) {
    double mx = logits[i * c];
    for (Index j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(logits[i * c + j]));
    double z = 0;
    for (Index j = 0; j < c; ++j) z += std::exp(static_cast<double>(logits[i * c + j]) - mx);
    for (Index j = 0; j < c; ++j) out(i, j) = static_cast<double>(logits[i * c + j]) - mx - std::log(z);
  }
  return out;
}

template LossResult<float> squared_loss(const Tensor<float>&, double);
template LossResult<double> squared_loss(const Tensor<double>&, double);
template LossResult<float> softmax_cross_entropy(const Tensor<float>&, const std::vector<int>&);
template LossResult<double> softmax_cross_entropy(const Tensor<double>&, const std::vector<int>&);

}  // namespace sra
