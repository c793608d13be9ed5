#include "cmat/compressor.hpp"

namespace cmat {

Tensor Compressor::mixture_weights(const Tensor& x) const {
  if (x.rank() != 2) throw DimensionError("compress: input must be 2-D, got " + shape_str(x.shape()));
  if (x.shape()[0] < 1) throw ContractError("compress: sequence must have at least one row");
  if (x.shape()[1] != in_width()) {
    throw DimensionError("compress: row width " + std::to_string(x.shape()[1]) + " does not match " +
                         std::to_string(in_width()));
  }
  return softmax(score_mlp.forward(x), 0);
}

Tensor Compressor::forward(const Tensor& x) const {
  Tensor weights = mixture_weights(x);        // [N, h], columns sum to 1
  Tensor mixed = matmul(transpose(weights), x);  // [h, d1]
  return output_mlp.forward(flatten(mixed));     // row-major flatten of the h x d1 mixture
}

Compressor make_critic_compressor(int d, int h, ParameterStore& store, const std::string& prefix,
                                  RngStream& rng) {
  if (d <= 0) throw ContractError("compressor width must be positive");
  Mlp score({d, d, h}, Activation::Relu, store, prefix + ".score", rng);
  Mlp output({h * d, d, d}, Activation::Relu, store, prefix + ".out", rng);
  return Compressor(std::move(score), std::move(output), h);
}

Compressor make_actor_compressor(int d, int h, ParameterStore& store, const std::string& prefix,
                                 RngStream& rng) {
  return make_critic_compressor(d, h, store, prefix, rng);
}

}  // namespace cmat
