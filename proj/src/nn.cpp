#include "cmat/nn.hpp"

#include <cmath>

namespace cmat {

namespace {

Tensor xavier_uniform(int in, int out, RngStream& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w = Tensor::zeros({in, out});
  for (int i = 0; i < w.size(); ++i) w.values()[i] = rng.uniform(-limit, limit);
  return w;
}

}  // namespace

Linear::Linear(int in, int out, ParameterStore& store, const std::string& prefix, RngStream& rng,
               bool zero_init) {
  Tensor wt = zero_init ? Tensor::zeros({in, out}) : xavier_uniform(in, out, rng);
  w = store.add(prefix + ".w", wt.set_requires_grad(true));
  b = store.add(prefix + ".b", Tensor::zeros({out}).set_requires_grad(true));
}

Linear::Linear(int in, int out, ParameterStore& store, const std::string& prefix, RngStream& rng,
               double weight_scale) {
  Tensor wt = xavier_uniform(in, out, rng);
  wt.values() *= weight_scale;
  w = store.add(prefix + ".w", wt.set_requires_grad(true));
  b = store.add(prefix + ".b", Tensor::zeros({out}).set_requires_grad(true));
}

Tensor Linear::forward(const Tensor& x) const { return affine(x, w, b); }

Mlp::Mlp(const std::vector<int>& widths, Activation activation, ParameterStore& store,
         const std::string& prefix, RngStream& rng, double final_scale) {
  if (widths.size() < 2) throw ContractError("Mlp: need at least input and output widths");
  act = activation;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    bool last = i + 2 == widths.size();
    if (last && final_scale != 1.0) {
      layers.emplace_back(widths[i], widths[i + 1], store, prefix + ".l" + std::to_string(i), rng,
                          final_scale);
    } else {
      layers.emplace_back(widths[i], widths[i + 1], store, prefix + ".l" + std::to_string(i), rng, false);
    }
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  bool vec = x.rank() == 1;
  if ((vec ? x.size() : x.shape()[1]) != in_width()) {
    throw DimensionError("Mlp: input width " + shape_str(x.shape()) + " does not match expected " +
                         std::to_string(in_width()));
  }
  Tensor h = vec ? reshape(x, {1, x.size()}) : x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size()) {
      if (act == Activation::Relu) h = relu(h);
      if (act == Activation::Gelu) h = gelu(h);
    }
  }
  return vec ? reshape(h, {h.size()}) : h;
}

LayerNorm::LayerNorm(int width, ParameterStore& store, const std::string& prefix, RngStream&) {
  gain = store.add(prefix + ".g", Tensor::full({width}, 1.0).set_requires_grad(true));
  bias = store.add(prefix + ".b", Tensor::zeros({width}).set_requires_grad(true));
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm_affine(x, gain, bias, eps); }

AttentionBlock::AttentionBlock(int width_, int heads_, bool causal, ParameterStore& store,
                               const std::string& prefix, RngStream& rng)
    : heads(heads_), width(width_), mask_causal(causal) {
  if (width % heads != 0) {
    throw ContractError("AttentionBlock: width " + std::to_string(width) + " not divisible by heads " +
                        std::to_string(heads));
  }
  q = Linear(width, width, store, prefix + ".q", rng);
  k = Linear(width, width, store, prefix + ".k", rng);
  v = Linear(width, width, store, prefix + ".v", rng);
  o = Linear(width, width, store, prefix + ".o", rng);
}

Tensor AttentionBlock::forward(const Tensor& query_in, const Tensor& kv_in) const {
  if (query_in.shape()[1] != width || kv_in.shape()[1] != width) {
    throw DimensionError("AttentionBlock: inputs must have width " + std::to_string(width));
  }
  Tensor qp = q.forward(query_in);
  Tensor kp = k.forward(kv_in);
  Tensor vp = v.forward(kv_in);
  Tensor core = mha_core(qp, kp, vp, heads, mask_causal);
  return o.forward(core);
}

EncoderBlock::EncoderBlock(int width, int heads, ParameterStore& store, const std::string& prefix,
                           RngStream& rng)
    : ln1(width, store, prefix + ".ln1", rng),
      ln2(width, store, prefix + ".ln2", rng),
      attn(width, heads, false, store, prefix + ".attn", rng),
      mlp({width, 4 * width, width}, Activation::Gelu, store, prefix + ".mlp", rng) {}

Tensor EncoderBlock::forward(const Tensor& x) const {
  Tensor n1 = ln1.forward(x);
  Tensor h = add(x, attn.forward(n1, n1));
  return add(h, mlp.forward(ln2.forward(h)));
}

DecoderBlock::DecoderBlock(int width, int heads, ParameterStore& store, const std::string& prefix,
                           RngStream& rng)
    : ln1(width, store, prefix + ".ln1", rng),
      ln2(width, store, prefix + ".ln2", rng),
      ln3(width, store, prefix + ".ln3", rng),
      self_attn(width, heads, true, store, prefix + ".self", rng),
      cross_attn(width, heads, false, store, prefix + ".cross", rng),
      mlp({width, 4 * width, width}, Activation::Gelu, store, prefix + ".mlp", rng) {}

Tensor DecoderBlock::forward(const Tensor& seq, const Tensor& memory) const {
  Tensor n1 = ln1.forward(seq);
  Tensor h = add(seq, self_attn.forward(n1, n1));
  h = add(h, cross_attn.forward(ln2.forward(h), memory));
  return add(h, mlp.forward(ln3.forward(h)));
}

PositionalEmbedding::PositionalEmbedding(int max_len, int d, ParameterStore& store,
                                         const std::string& prefix, RngStream& rng) {
  Tensor t = Tensor::zeros({max_len, d});
  for (int i = 0; i < t.size(); ++i) t.values()[i] = rng.normal(0.0, 0.02);
  table = store.add(prefix, t.set_requires_grad(true));
}

Tensor PositionalEmbedding::lookup(int index) const {
  if (index < 0 || index >= table.shape()[0]) {
    throw ConfigError("positional index " + std::to_string(index) + " exceeds table length " +
                      std::to_string(table.shape()[0]));
  }
  return row(table, index);
}

}  // namespace cmat
