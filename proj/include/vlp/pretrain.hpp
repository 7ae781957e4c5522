#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vlp/data.hpp"
#include "vlp/model.hpp"

namespace vlp {

enum class RegionReplacement : uint8_t { Zeroed, Kept };

// Which block-relative positions are masked and how masked regions are
// treated (feature row zeroed before projection, or left untouched).
struct MaskPlan {
  std::vector<int> text_mask_indices;
  std::vector<int> region_mask_indices;
  std::vector<RegionReplacement> region_replacement;
};

// Independent Bernoulli(rate) per position; if nothing is selected, one
// uniform position is forced so the masked-prediction loss stays defined.
std::vector<int> sample_text_mask(int num_tokens, double rate, Rng& rng);

std::pair<std::vector<int>, std::vector<RegionReplacement>> sample_region_mask(
    int num_regions, double rate, Rng& rng, double zero_prob = 0.9);

// Pure [MASK] replacement at the selected indices.
std::vector<int> apply_text_mask(const std::vector<int>& ids, const std::vector<int>& indices);

// Optional BERT-style split: with mask_prob substitute [MASK], with
// random_prob substitute a uniform non-reserved token, otherwise keep the
// original id. mask_prob=1 reproduces the pure rule.
struct TextMaskStyle {
  double mask_prob = 1.0;
  double random_prob = 0.0;
};
std::vector<int> apply_text_mask(const std::vector<int>& ids, const std::vector<int>& indices,
                                 const TextMaskStyle& style, Rng& rng, int vocab_size);

// Zeroes the feature rows of ZEROED regions; KEPT rows are untouched.
TensorF apply_region_mask(const TensorF& features, const MaskPlan& plan);

enum class Corruption : uint8_t { None, NegImage, NegCaption };

struct VlmPair {
  TokenSequence tokens;
  RegionSet regions;
  int y = 1;
  Corruption corruption = Corruption::None;
  std::string image_id;  // of the image actually used
  std::string caption;   // text actually used
};

// Corrupts the anchor with probability 0.5: swap in either a different
// image's regions or a different caption, chosen uniformly.
VlmPair sample_vlm_pair(const std::vector<PairRecord>& dataset, size_t anchor,
                        const Vocabulary& vocab, Rng& rng);
VlmPair sample_vlm_pair(const std::vector<PairRecord>& dataset, const Vocabulary& vocab,
                        Rng& rng);

struct PretrainOptions {
  double text_mask_rate = 0.15;
  double region_mask_rate = 0.15;
  double region_zero_prob = 0.9;
  TextMaskStyle text_style;
};

// One example fully prepared for the forward pass: truncated, masked, with
// the prediction targets extracted before masking.
struct PreparedExample {
  Layout layout;       // token_ids already masked
  TensorF features;    // rows zeroed per plan
  TensorF locations;
  MaskPlan plan;
  std::vector<int> mlm_targets;  // true ids at masked text positions
  std::vector<int> moc_targets;  // detector labels at masked region positions
  int y = 1;
};

PreparedExample prepare_pretrain_example(const VlmPair& pair, const ModelConfig& cfg,
                                         const PretrainOptions& opts, Rng& rng, int pad_to = 0);

// Masked-token prediction: cross-entropy over the vocabulary at the masked
// text positions, mean over positions.
template <typename Real>
Value<Real> mlm_loss(Graph<Real>& g, const ParameterStore<Real>& params, Value<Real> enc_out,
                     const Layout& layout, const std::vector<int>& text_mask_indices,
                     const std::vector<int>& true_ids) {
  if (text_mask_indices.empty()) throw ValueError("mlm_loss requires at least one masked token");
  std::vector<int> positions;
  positions.reserve(text_mask_indices.size());
  for (int idx : text_mask_indices) {
    if (idx < 0 || idx >= layout.text_count)
      throw IndexError("text mask index " + std::to_string(idx) + " outside block of length " +
                       std::to_string(layout.text_count));
    positions.push_back(layout.text_begin() + idx);
  }
  auto states = gather_rows(enc_out, positions);
  auto logits = head_logits(g, params, states, "mlm");
  return cross_entropy_logits(logits, true_ids);
}

// Masked-region classification over the detector's K classes.
template <typename Real>
Value<Real> moc_loss(Graph<Real>& g, const ParameterStore<Real>& params, Value<Real> enc_out,
                     const Layout& layout, const std::vector<int>& region_mask_indices,
                     const std::vector<int>& label_ids) {
  if (region_mask_indices.empty())
    throw ValueError("moc_loss requires at least one masked region");
  std::vector<int> positions;
  positions.reserve(region_mask_indices.size());
  for (int idx : region_mask_indices) {
    if (idx < 0 || idx >= layout.region_count)
      throw IndexError("region mask index " + std::to_string(idx) + " outside block of length " +
                       std::to_string(layout.region_count));
    positions.push_back(layout.region_begin() + idx);
  }
  auto states = gather_rows(enc_out, positions);
  auto logits = head_logits(g, params, states, "moc");
  return cross_entropy_logits(logits, label_ids);
}

// Matching logit from the [CLS] state; probability via logistic squashing.
template <typename Real>
Value<Real> vlm_logit(Graph<Real>& g, const ParameterStore<Real>& params, Value<Real> enc_out) {
  return head_logits(g, params, gather_rows(enc_out, std::vector<int>{0}), "vlm");
}

template <typename Real>
Real vlm_score(Graph<Real>& g, const ParameterStore<Real>& params, Value<Real> enc_out) {
  return sigmoid(vlm_logit(g, params, enc_out)).item();
}

template <typename Real>
Value<Real> vlm_loss(Value<Real> logit, int y) {
  return binary_cross_entropy_logits(logit, std::vector<Real>{static_cast<Real>(y)});
}

template <typename Real>
struct JointResult {
  Value<Real> loss;
  double mlm = 0, moc = 0, vlm = 0;
};

struct JointWeights {
  double mlm = 1.0;
  double moc = 1.0;
  double vlm = 1.0;
};

// Indicator-gated joint objective: the masked-prediction terms exist only
// for matching pairs, so a mismatched pair contributes no gradient to the
// MLM/MOC heads at all. Reported components are unweighted.
template <typename Real>
JointResult<Real> joint_loss(Graph<Real>& g, const ParameterStore<Real>& params,
                             const ModelConfig& cfg, const PreparedExample& ex,
                             const JointWeights& w = {}) {
  auto feats = g.constant(ex.features.template cast<Real>());
  auto locs = g.constant(ex.locations.template cast<Real>());
  auto enc = forward_sequence(g, params, ex.layout, feats, locs, cfg);
  JointResult<Real> result;
  auto weigh = [](Value<Real> v, double wt) {
    return wt == 1.0 ? v : scale(v, static_cast<Real>(wt));
  };
  auto vlm = vlm_loss(vlm_logit(g, params, enc), ex.y);
  result.vlm = static_cast<double>(vlm.item());
  if (ex.y == 1) {
    auto mlm = mlm_loss(g, params, enc, ex.layout, ex.plan.text_mask_indices, ex.mlm_targets);
    auto moc = moc_loss(g, params, enc, ex.layout, ex.plan.region_mask_indices, ex.moc_targets);
    result.mlm = static_cast<double>(mlm.item());
    result.moc = static_cast<double>(moc.item());
    result.loss = add(add(weigh(mlm, w.mlm), weigh(moc, w.moc)), weigh(vlm, w.vlm));
  } else {
    result.loss = weigh(vlm, w.vlm);
  }
  return result;
}

}  // namespace vlp
