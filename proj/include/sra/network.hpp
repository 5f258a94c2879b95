#pragma once

#include <vector>

#include "sra/arch.hpp"
#include "sra/params.hpp"
#include "sra/tensor.hpp"

namespace sra {

enum class Mode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Activations recorded by forward() for a later backward().
template <typename Scalar>
struct ForwardCache {
  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Mode mode = Mode::eval;
  Tensor<Scalar> input;                  // after input standardization
  std::vector<Tensor<Scalar>> outputs;   // one per layer
  std::vector<Vec> bn_mean;              // statistics used for normalization
  std::vector<Vec> bn_inv_std;
  std::vector<Vec> bn_batch_var;         // biased batch variance (train mode)
  std::vector<std::vector<Index>> argmax;  // maxpool winners, flat input index

  bool empty() const { return outputs.empty(); }
};

/// Runs the network on an NCHW batch. Train mode normalizes with batch
/// statistics; eval mode uses the stored running statistics and is a pure
/// function of (params, batch). Throws ShapeError or NumericError.
template <typename Scalar>
Tensor<Scalar> forward(const Arch& arch, const ParamSet<Scalar>& params, const Tensor<Scalar>& batch,
                       Mode mode, ForwardCache<Scalar>* cache = nullptr);

/// Reverse-mode pass. `grad_output` is dLoss/dLogits. When `input_grad` is
/// non-null it receives dLoss/dBatch (w.r.t. the raw, unstandardized input).
/// With `param_grads == false` only the input gradient is computed and the
/// returned set is empty.
template <typename Scalar>
Gradients<Scalar> backward(const Arch& arch, const ParamSet<Scalar>& params,
                           const ForwardCache<Scalar>& cache, const Tensor<Scalar>& grad_output,
                           Tensor<Scalar>* input_grad = nullptr, bool param_grads = true);

/// Folds the batch statistics of a train-mode cache into running mean/var
/// (unbiased variance, exponential average).
template <typename Scalar>
void update_running_stats(const Arch& arch, ParamSet<Scalar>& params, const ForwardCache<Scalar>& cache,
                          double momentum = kBatchNormMomentum);

}  // namespace sra
