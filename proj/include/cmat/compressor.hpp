#pragma once

#include <string>

#include "cmat/nn.hpp"

namespace cmat {

// Sequence compressor: scores each row with an MLP, softmaxes the scores over
// the sequence axis into h mixture columns, mixes the rows, and maps the
// flattened mixture through an output MLP. Permutation-invariant in the rows.
struct Compressor {
  Mlp score_mlp;   // [N, d1] -> [N, h], applied rowwise
  Mlp output_mlp;  // [h*d1] -> [d2]
  int heads = 1;

  Compressor() = default;
  Compressor(Mlp score, Mlp output, int h) : score_mlp(std::move(score)), output_mlp(std::move(output)), heads(h) {}

  Tensor forward(const Tensor& x) const;          // [N, d1] -> [d2]
  Tensor mixture_weights(const Tensor& x) const;  // M = softmax(ScoreMLP(x), dim 0), [N, h]
  int in_width() const { return score_mlp.in_width(); }
  int out_width() const { return output_mlp.out_width(); }
};

// Both factory variants share d1 = d2 = d; they differ only in what they are
// wired to (encoder features vs the consensus sequence).
Compressor make_critic_compressor(int d, int h, ParameterStore& store, const std::string& prefix,
                                  RngStream& rng);
Compressor make_actor_compressor(int d, int h, ParameterStore& store, const std::string& prefix,
                                 RngStream& rng);

}  // namespace cmat
