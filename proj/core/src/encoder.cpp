#include "dfmed/encoder.hpp"

#include <cmath>

namespace dfmed {

Tensor sinusoidal_positions(int n, int d) {
  std::vector<double> v(static_cast<std::size_t>(n) * d);
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d; i += 2) {
      double rate = std::pow(10000.0, -static_cast<double>(i) / d);
      v[static_cast<std::size_t>(pos) * d + i] = std::sin(pos * rate);
      if (i + 1 < d) v[static_cast<std::size_t>(pos) * d + i + 1] = std::cos(pos * rate);
    }
  }
  return Tensor::from_data(n, d, std::move(v));
}

TransformerEncoder TransformerEncoder::create(ParamStore& ps, const std::string& prefix,
                                              int dim, int layers, int heads, Rng& rng) {
  TransformerEncoder enc;
  enc.dim_ = dim;
  enc.heads_ = heads;
  for (int l = 0; l < layers; ++l) {
    std::string p = prefix + "." + std::to_string(l) + ".";
    Layer layer;
    layer.Wq = ps.xavier(p + "Wq", dim, dim, rng);
    layer.Wk = ps.xavier(p + "Wk", dim, dim, rng);
    layer.Wv = ps.xavier(p + "Wv", dim, dim, rng);
    layer.Wo = ps.xavier(p + "Wo", dim, dim, rng);
    layer.ln1_g = ps.constant(p + "ln1.g", 1, dim, 1.0);
    layer.ln1_b = ps.zeros(p + "ln1.b", 1, dim);
    layer.ffn.W1 = ps.xavier(p + "ffn.W1", 4 * dim, dim, rng);
    layer.ffn.b1 = ps.zeros(p + "ffn.b1", 1, 4 * dim);
    layer.ffn.W2 = ps.xavier(p + "ffn.W2", dim, 4 * dim, rng);
    layer.ffn.b2 = ps.zeros(p + "ffn.b2", 1, dim);
    layer.ln2_g = ps.constant(p + "ln2.g", 1, dim, 1.0);
    layer.ln2_b = ps.zeros(p + "ln2.b", 1, dim);
    enc.layers_.push_back(std::move(layer));
  }
  return enc;
}

TransformerEncoder TransformerEncoder::attach(const ParamStore& ps, const std::string& prefix,
                                              int dim, int layers, int heads) {
  TransformerEncoder enc;
  enc.dim_ = dim;
  enc.heads_ = heads;
  for (int l = 0; l < layers; ++l) {
    std::string p = prefix + "." + std::to_string(l) + ".";
    Layer layer;
    layer.Wq = ps.get(p + "Wq");
    layer.Wk = ps.get(p + "Wk");
    layer.Wv = ps.get(p + "Wv");
    layer.Wo = ps.get(p + "Wo");
    layer.ln1_g = ps.get(p + "ln1.g");
    layer.ln1_b = ps.get(p + "ln1.b");
    layer.ffn.W1 = ps.get(p + "ffn.W1");
    layer.ffn.b1 = ps.get(p + "ffn.b1");
    layer.ffn.W2 = ps.get(p + "ffn.W2");
    layer.ffn.b2 = ps.get(p + "ffn.b2");
    layer.ln2_g = ps.get(p + "ln2.g");
    layer.ln2_b = ps.get(p + "ln2.b");
    enc.layers_.push_back(std::move(layer));
  }
  return enc;
}

Tensor TransformerEncoder::forward(const Tensor& x, bool causal) const {
  if (layers_.empty()) return x;
  int n = x.rows();
  Tensor h = add(x, sinusoidal_positions(n, dim_));
  std::optional<Tensor> mask;
  if (causal && n > 1) mask = causal_mask(n);
  for (const auto& layer : layers_) {
    Tensor q = matmul_nt(h, layer.Wq);
    Tensor k = matmul_nt(h, layer.Wk);
    Tensor v = matmul_nt(h, layer.Wv);
    Tensor att = matmul_nt(scaled_dot_attention(q, k, v, heads_, mask), layer.Wo);
    h = layernorm(add(h, att), layer.ln1_g, layer.ln1_b);
    h = layernorm(add(h, feed_forward(h, layer.ffn)), layer.ln2_g, layer.ln2_b);
  }
  return h;
}

}  // namespace dfmed
