#include "sra/model.hpp"

#include "sra/random.hpp"

namespace sra {

Model make_model(const Arch& arch, std::uint64_t seed) {
  Rng rng(seed);
  return Model{arch, init_params<float>(arch, rng), {}};
}

Tensor<float> predict_logits(const Model& model, const Tensor<float>& batch, Index chunk) {
  const Index n = batch.dim(0);
  const Index per_sample = batch.size() / n;
  Tensor<float> out({n, model.arch.classes});
  Shape sub_shape = batch.shape();
  for (Index start = 0; start < n; start += chunk) {
    const Index len = std::min(chunk, n - start);
    sub_shape[0] = len;
    Tensor<float> sub(sub_shape);
    sub.values() = batch.values().segment(start * per_sample, len * per_sample);
    Tensor<float> logits = forward(model.arch, model.params, sub, Mode::eval);
    out.values().segment(start * model.arch.classes, len * model.arch.classes) = logits.values();
  }
  return out;
}

}  // namespace sra
