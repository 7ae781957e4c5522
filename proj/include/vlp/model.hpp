#pragma once

#include <string>
#include <vector>

#include "vlp/encoder.hpp"
#include "vlp/graph.hpp"
#include "vlp/param_store.hpp"
#include "vlp/regions.hpp"
#include "vlp/rng.hpp"
#include "vlp/sequence.hpp"
#include "vlp/vocab.hpp"

namespace vlp {

struct ModelConfig {
  EncoderConfig encoder;
  int vocab_size = 0;
  int d_vis = 0;
  int num_object_classes = 0;

  void validate() const {
    encoder.validate();
    if (vocab_size < Vocabulary::kReservedCount + 1)
      throw ValueError("vocab_size must cover the reserved tokens plus content");
    if (d_vis < 1) throw ValueError("d_vis must be >= 1");
    if (num_object_classes < 1) throw ValueError("num_object_classes must be >= 1");
  }
};

// Token positions get word + position + text-segment embeddings; region
// positions get projected features + projected location + the shared [IMG]
// word embedding + image-segment embedding. Each stream is layer-normed.
// A reference injection adds a region's pre-LN embedding into a token row
// before the text LN.
struct ReferenceInjection {
  int token_pos = 0;     // position within the assembled sequence
  int region_index = 0;  // row of the region block
};

template <typename Real>
ParameterStore<Real> init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParameterStore<Real> store;
  Rng rng = Rng::derive(seed, 0x9a7a);
  const int d = cfg.encoder.hidden_size;
  auto normal_tensor = [&](std::vector<int64_t> shape) {
    Tensor<Real> t(shape);
    for (auto& v : t.data) v = static_cast<Real>(rng.normal(0.0, 0.02));
    return t;
  };
  auto add_ln = [&](const std::string& prefix) {
    store.insert(prefix + ".gamma", Tensor<Real>::full({d}, Real(1)));
    store.insert(prefix + ".beta", Tensor<Real>::zeros({d}));
  };

  store.insert("embed.word", normal_tensor({cfg.vocab_size, d}));
  store.insert("embed.pos", normal_tensor({cfg.encoder.max_seq_len, d}));
  store.insert("embed.seg", Tensor<Real>::zeros({2, d}));
  add_ln("embed.text_ln");
  store.insert("embed.vis_feat.w", normal_tensor({cfg.d_vis, d}));
  store.insert("embed.vis_feat.b", Tensor<Real>::zeros({d}));
  store.insert("embed.vis_loc.w", normal_tensor({5, d}));
  store.insert("embed.vis_loc.b", Tensor<Real>::zeros({d}));
  add_ln("embed.vis_ln");

  for (int i = 0; i < cfg.encoder.num_layers; ++i) {
    const std::string layer = "encoder.layer" + std::to_string(i);
    for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
      store.insert(layer + w, normal_tensor({d, d}));
    for (const char* b : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"})
      store.insert(layer + b, Tensor<Real>::zeros({d}));
    add_ln(layer + ".attn.ln");
    store.insert(layer + ".ffn.w1", normal_tensor({d, cfg.encoder.ffn_size}));
    store.insert(layer + ".ffn.b1", Tensor<Real>::zeros({cfg.encoder.ffn_size}));
    store.insert(layer + ".ffn.w2", normal_tensor({cfg.encoder.ffn_size, d}));
    store.insert(layer + ".ffn.b2", Tensor<Real>::zeros({d}));
    add_ln(layer + ".ffn.ln");
  }

  // Task heads start at zero so an untrained model scores every candidate
  // identically; training breaks the tie.
  store.insert("heads.mlm.w", Tensor<Real>::zeros({d, cfg.vocab_size}));
  store.insert("heads.mlm.b", Tensor<Real>::zeros({cfg.vocab_size}));
  store.insert("heads.moc.w", Tensor<Real>::zeros({d, cfg.num_object_classes}));
  store.insert("heads.moc.b", Tensor<Real>::zeros({cfg.num_object_classes}));
  store.insert("heads.vlm.w", Tensor<Real>::zeros({d, 1}));
  store.insert("heads.vlm.b", Tensor<Real>::zeros({1}));
  store.insert("heads.vcr.w", Tensor<Real>::zeros({d, 1}));
  store.insert("heads.vcr.b", Tensor<Real>::zeros({1}));
  return store;
}

// Pre-LN sum for the token block: word + position + text segment.
template <typename Real>
Value<Real> text_pre_ln(Graph<Real>& g, const ParameterStore<Real>& params, const Layout& layout,
                        const ModelConfig& cfg) {
  const int n_text = 2 + layout.text_count;
  std::vector<int> ids(layout.token_ids.begin(), layout.token_ids.begin() + n_text);
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(cfg.vocab_size));
  std::vector<int> positions(static_cast<size_t>(n_text));
  for (int i = 0; i < n_text; ++i) positions[static_cast<size_t>(i)] = i;
  auto words = gather_rows(params.use(g, "embed.word"), ids);
  auto pos = gather_rows(params.use(g, "embed.pos"), positions);
  auto seg = gather_rows(params.use(g, "embed.seg"), std::vector<int>(static_cast<size_t>(n_text), 0));
  return add(add(words, pos), seg);
}

// Pre-LN sum for the region block: FC(features) + FC(locations) + [IMG]
// word embedding + image segment. No position embedding; regions are an
// unordered set.
template <typename Real>
Value<Real> region_pre_ln(Graph<Real>& g, const ParameterStore<Real>& params,
                          Value<Real> features, Value<Real> locations, const ModelConfig& cfg) {
  if (features.cols() != cfg.d_vis)
    throw ShapeError("region features width " + std::to_string(features.cols()) +
                     " does not match configured d_vis " + std::to_string(cfg.d_vis));
  if (locations.cols() != 5 || locations.rows() != features.rows())
    throw ShapeError("location matrix must be [I,5] matching features");
  const int n = static_cast<int>(features.rows());
  auto feat = affine(features, params.use(g, "embed.vis_feat.w"), params.use(g, "embed.vis_feat.b"));
  auto loc = affine(locations, params.use(g, "embed.vis_loc.w"), params.use(g, "embed.vis_loc.b"));
  auto img = gather_rows(params.use(g, "embed.word"),
                         std::vector<int>(static_cast<size_t>(n), Vocabulary::kImg));
  auto seg = gather_rows(params.use(g, "embed.seg"), std::vector<int>(static_cast<size_t>(n), 1));
  return add(add(feat, loc), add(img, seg));
}

// Full embedded sequence [layout.size(), d]: text LN block, region LN
// block, zero rows for padding.
template <typename Real>
Value<Real> embed_sequence(Graph<Real>& g, const ParameterStore<Real>& params,
                           const Layout& layout, Value<Real> features, Value<Real> locations,
                           const ModelConfig& cfg,
                           const std::vector<ReferenceInjection>& injections = {}) {
  auto text = text_pre_ln(g, params, layout, cfg);
  Value<Real> regions;
  if (layout.region_count > 0) {
    if (features.rows() != layout.region_count)
      throw ShapeError("feature rows " + std::to_string(features.rows()) +
                       " do not match layout region count " +
                       std::to_string(layout.region_count));
    regions = region_pre_ln(g, params, features, locations, cfg);
  }
  if (!injections.empty()) {
    if (layout.region_count == 0)
      throw ValueError("reference injection requires regions");
    std::vector<int> token_positions;
    std::vector<int> region_rows;
    for (const auto& inj : injections) {
      if (inj.token_pos < 1 || inj.token_pos > layout.text_count)
        throw IndexError("injection token position " + std::to_string(inj.token_pos) +
                         " outside the text block");
      if (inj.region_index < 0 || inj.region_index >= layout.region_count)
        throw IndexError("injection region index " + std::to_string(inj.region_index) +
                         " outside the region block");
      token_positions.push_back(inj.token_pos);
      region_rows.push_back(inj.region_index);
    }
    text = index_add_rows(text, token_positions, gather_rows(regions, region_rows));
  }
  text = layer_norm(text, params.use(g, "embed.text_ln.gamma"),
                    params.use(g, "embed.text_ln.beta"), static_cast<Real>(kLayerNormEps));
  std::vector<Value<Real>> pieces{text};
  if (layout.region_count > 0) {
    regions = layer_norm(regions, params.use(g, "embed.vis_ln.gamma"),
                         params.use(g, "embed.vis_ln.beta"), static_cast<Real>(kLayerNormEps));
    pieces.push_back(regions);
  }
  const int pad = layout.size() - layout.content_size();
  if (pad > 0)
    pieces.push_back(g.constant(Tensor<Real>::zeros({pad, cfg.encoder.hidden_size})));
  return pieces.size() == 1 ? pieces[0] : concat_rows(pieces);
}

template <typename Real>
Value<Real> head_logits(Graph<Real>& g, const ParameterStore<Real>& params, Value<Real> rows,
                        const std::string& head) {
  return affine(rows, params.use(g, "heads." + head + ".w"),
                params.use(g, "heads." + head + ".b"));
}

// Embed + encode in one step; the common spine of every task.
template <typename Real>
Value<Real> forward_sequence(Graph<Real>& g, const ParameterStore<Real>& params,
                             const Layout& layout, Value<Real> features, Value<Real> locations,
                             const ModelConfig& cfg,
                             const std::vector<ReferenceInjection>& injections = {}) {
  auto embedded = embed_sequence(g, params, layout, features, locations, cfg, injections);
  return encoder_forward(g, embedded, layout.valid, cfg.encoder, params);
}

}  // namespace vlp
