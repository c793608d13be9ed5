#pragma once

#include <string>
#include <vector>

#include "cmat/params.hpp"
#include "cmat/rng.hpp"
#include "cmat/tensor.hpp"

namespace cmat {

enum class Activation { None, Relu, Gelu };

// y = x W + b with W [in, out]. Xavier-uniform weights, zero biases.
struct Linear {
  Tensor w;
  Tensor b;

  Linear() = default;
  Linear(int in, int out, ParameterStore& store, const std::string& prefix, RngStream& rng,
         bool zero_init = false);
  Linear(int in, int out, ParameterStore& store, const std::string& prefix, RngStream& rng,
         double weight_scale);
  Tensor forward(const Tensor& x) const;  // [B, in] -> [B, out]
};

// Affine chain with the given activation between layers; the final layer is
// linear. Accepts 1-D [in] or 2-D [B, in] inputs; rows are independent.
struct Mlp {
  std::vector<Linear> layers;
  Activation act = Activation::Relu;

  Mlp() = default;
  // final_scale multiplies the last layer's weights: 0 for value heads that
  // must start at an exact 0 estimate, a small factor for near-uniform policy
  // heads, 1 for plain hidden stacks.
  Mlp(const std::vector<int>& widths, Activation act, ParameterStore& store, const std::string& prefix,
      RngStream& rng, double final_scale = 1.0);
  Tensor forward(const Tensor& x) const;
  int in_width() const { return layers.front().w.shape()[0]; }
  int out_width() const { return layers.back().w.shape()[1]; }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(int width, ParameterStore& store, const std::string& prefix, RngStream& rng);
  Tensor forward(const Tensor& x) const;
};

// Multi-head scaled dot-product attention with Q/K/V/O projections.
// mask_causal restricts self-attention to the causal prefix.
struct AttentionBlock {
  int heads = 1;
  int width = 0;
  bool mask_causal = false;
  Linear q, k, v, o;

  AttentionBlock() = default;
  AttentionBlock(int width, int heads, bool causal, ParameterStore& store, const std::string& prefix,
                 RngStream& rng);
  // Self-attention: forward(x, x). Cross-attention: forward(queries, memory).
  Tensor forward(const Tensor& query_in, const Tensor& kv_in) const;
};

// Pre-norm residual encoder block: x + Attn(LN(x)), then + MLP(LN(.)).
// No mask and no positional information, so it is permutation-equivariant.
struct EncoderBlock {
  LayerNorm ln1, ln2;
  AttentionBlock attn;
  Mlp mlp;

  EncoderBlock() = default;
  EncoderBlock(int width, int heads, ParameterStore& store, const std::string& prefix, RngStream& rng);
  Tensor forward(const Tensor& x) const;  // [n, d] -> [n, d]
};

// Pre-norm residual decoder block: causal self-attention over the sequence,
// cross-attention to the memory, then MLP. Positional embeddings are the
// caller's job.
struct DecoderBlock {
  LayerNorm ln1, ln2, ln3;
  AttentionBlock self_attn;
  AttentionBlock cross_attn;
  Mlp mlp;

  DecoderBlock() = default;
  DecoderBlock(int width, int heads, ParameterStore& store, const std::string& prefix, RngStream& rng);
  Tensor forward(const Tensor& seq, const Tensor& memory) const;  // [L, d], [n, d] -> [L, d]
};

// Learned positional table, rows ~ N(0, 0.02^2).
struct PositionalEmbedding {
  Tensor table;  // [max_len, d]

  PositionalEmbedding() = default;
  PositionalEmbedding(int max_len, int d, ParameterStore& store, const std::string& prefix, RngStream& rng);
  Tensor lookup(int index) const;  // row, ConfigError past the table end
  int max_len() const { return table.shape()[0]; }
};

}  // namespace cmat
