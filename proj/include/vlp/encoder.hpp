#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vlp/graph.hpp"
#include "vlp/param_store.hpp"

namespace vlp {

struct EncoderConfig {
  int num_layers = 2;
  int hidden_size = 64;
  int num_heads = 4;
  int ffn_size = 256;
  int max_seq_len = 64;
  float dropout_rate = 0.1f;

  void validate() const {
    if (num_layers < 0) throw ValueError("num_layers must be >= 0");
    if (hidden_size < 1 || num_heads < 1 || hidden_size % num_heads != 0)
      throw ValueError("hidden_size " + std::to_string(hidden_size) +
                       " must be a positive multiple of num_heads " + std::to_string(num_heads));
    if (ffn_size < 1) throw ValueError("ffn_size must be >= 1");
    if (max_seq_len < 3) throw ValueError("max_seq_len must be >= 3");
    if (!(dropout_rate >= 0.f && dropout_rate < 1.f))
      throw ValueError("dropout_rate must be in [0,1)");
  }
};

inline constexpr double kLayerNormEps = 1e-12;

// Scaled dot-product attention over all positions, h heads, masked
// positions excluded as keys. Shapes stay [n,d] throughout.
template <typename Real>
Value<Real> multi_head_attention(Graph<Real>& g, Value<Real> x,
                                 const std::vector<uint8_t>& valid, int num_heads,
                                 const ParameterStore<Real>& params, const std::string& prefix,
                                 Real dropout_rate) {
  const int64_t d = x.cols();
  if (num_heads < 1 || d % num_heads != 0)
    throw ValueError("attention width " + std::to_string(d) + " not divisible by " +
                     std::to_string(num_heads) + " heads");
  const int64_t dh = d / num_heads;
  auto q = affine(x, params.use(g, prefix + ".wq"), params.use(g, prefix + ".bq"));
  auto k = affine(x, params.use(g, prefix + ".wk"), params.use(g, prefix + ".bk"));
  auto v = affine(x, params.use(g, prefix + ".wv"), params.use(g, prefix + ".bv"));
  const Real inv_sqrt_dh = Real(1) / std::sqrt(static_cast<Real>(dh));
  std::vector<Value<Real>> heads;
  heads.reserve(static_cast<size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    auto qh = slice_cols(q, h * dh, dh);
    auto kh = slice_cols(k, h * dh, dh);
    auto vh = slice_cols(v, h * dh, dh);
    auto scores = scale(matmul(qh, kh, false, true), inv_sqrt_dh);
    auto weights = masked_softmax_rows(scores, valid);
    weights = dropout(weights, dropout_rate);
    heads.push_back(matmul(weights, vh));
  }
  auto ctx = num_heads == 1 ? heads[0] : concat_cols(heads);
  return affine(ctx, params.use(g, prefix + ".wo"), params.use(g, prefix + ".bo"));
}

// One post-LN transformer block: LN(x + MHA(x)) then LN(x + FFN(x)).
template <typename Real>
Value<Real> encoder_block(Graph<Real>& g, Value<Real> x, const std::vector<uint8_t>& valid,
                          const EncoderConfig& cfg, const ParameterStore<Real>& params,
                          const std::string& prefix) {
  const Real rate = static_cast<Real>(cfg.dropout_rate);
  auto attn = multi_head_attention(g, x, valid, cfg.num_heads, params, prefix + ".attn", rate);
  attn = dropout(attn, rate);
  x = layer_norm(add(x, attn), params.use(g, prefix + ".attn.ln.gamma"),
                 params.use(g, prefix + ".attn.ln.beta"), static_cast<Real>(kLayerNormEps));
  auto h = gelu(affine(x, params.use(g, prefix + ".ffn.w1"), params.use(g, prefix + ".ffn.b1")));
  auto ffn = affine(h, params.use(g, prefix + ".ffn.w2"), params.use(g, prefix + ".ffn.b2"));
  ffn = dropout(ffn, rate);
  return layer_norm(add(x, ffn), params.use(g, prefix + ".ffn.ln.gamma"),
                    params.use(g, prefix + ".ffn.ln.beta"), static_cast<Real>(kLayerNormEps));
}

template <typename Real>
Value<Real> encoder_forward(Graph<Real>& g, Value<Real> x, const std::vector<uint8_t>& valid,
                            const EncoderConfig& cfg, const ParameterStore<Real>& params) {
  cfg.validate();
  if (x.rows() > cfg.max_seq_len)
    throw ValueError("sequence length " + std::to_string(x.rows()) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  if (static_cast<int64_t>(valid.size()) != x.rows())
    throw ShapeError("attention mask length does not match sequence length");
  for (int i = 0; i < cfg.num_layers; ++i)
    x = encoder_block(g, x, valid, cfg, params, "encoder.layer" + std::to_string(i));
  return x;
}

}  // namespace vlp
