#include "vlp/pretrain.hpp"

#include <algorithm>
#include <string>

#include "vlp/errors.hpp"

namespace vlp {

std::vector<int> sample_text_mask(int num_tokens, double rate, Rng& rng) {
  if (num_tokens < 1) throw ValueError("cannot sample a mask over zero tokens");
  std::vector<int> indices;
  for (int i = 0; i < num_tokens; ++i)
    if (rng.bernoulli(rate)) indices.push_back(i);
  if (indices.empty())
    indices.push_back(static_cast<int>(rng.uniform_int(static_cast<uint64_t>(num_tokens))));
  return indices;
}

std::pair<std::vector<int>, std::vector<RegionReplacement>> sample_region_mask(int num_regions,
                                                                               double rate,
                                                                               Rng& rng,
                                                                               double zero_prob) {
  std::vector<int> indices = sample_text_mask(num_regions, rate, rng);
  std::vector<RegionReplacement> replacement;
  replacement.reserve(indices.size());
  for (size_t i = 0; i < indices.size(); ++i)
    replacement.push_back(rng.bernoulli(zero_prob) ? RegionReplacement::Zeroed
                                                   : RegionReplacement::Kept);
  return {std::move(indices), std::move(replacement)};
}

namespace {

void check_mask_indices(const std::vector<int>& indices, size_t limit) {
  for (int idx : indices)
    if (idx < 0 || static_cast<size_t>(idx) >= limit)
      throw IndexError("mask index " + std::to_string(idx) + " outside block of length " +
                       std::to_string(limit));
}

}  // namespace

std::vector<int> apply_text_mask(const std::vector<int>& ids, const std::vector<int>& indices) {
  check_mask_indices(indices, ids.size());
  std::vector<int> out = ids;
  for (int idx : indices) out[static_cast<size_t>(idx)] = Vocabulary::kMask;
  return out;
}

std::vector<int> apply_text_mask(const std::vector<int>& ids, const std::vector<int>& indices,
                                 const TextMaskStyle& style, Rng& rng, int vocab_size) {
  if (style.mask_prob < 0 || style.random_prob < 0 ||
      style.mask_prob + style.random_prob > 1.0)
    throw ValueError("text mask style probabilities must be nonnegative and sum to <= 1");
  check_mask_indices(indices, ids.size());
  const int content = vocab_size - Vocabulary::kReservedCount;
  if (content < 1) throw ValueError("vocabulary has no content tokens for random replacement");
  std::vector<int> out = ids;
  for (int idx : indices) {
    const double u = rng.uniform01();
    if (u < style.mask_prob) {
      out[static_cast<size_t>(idx)] = Vocabulary::kMask;
    } else if (u < style.mask_prob + style.random_prob) {
      out[static_cast<size_t>(idx)] =
          Vocabulary::kReservedCount +
          static_cast<int>(rng.uniform_int(static_cast<uint64_t>(content)));
    }  // else: keep the original id
  }
  return out;
}

TensorF apply_region_mask(const TensorF& features, const MaskPlan& plan) {
  if (plan.region_mask_indices.size() != plan.region_replacement.size())
    throw ValueError("mask plan replacement list does not match masked region count");
  check_mask_indices(plan.region_mask_indices, static_cast<size_t>(features.rows()));
  TensorF out = features;
  const int64_t d = features.cols();
  for (size_t i = 0; i < plan.region_mask_indices.size(); ++i) {
    if (plan.region_replacement[i] != RegionReplacement::Zeroed) continue;
    const int64_t row = plan.region_mask_indices[i];
    std::fill_n(out.data.begin() + row * d, d, 0.f);
  }
  return out;
}

namespace {

VlmPair corrupt_anchor(const std::vector<PairRecord>& dataset, size_t anchor,
                       const Vocabulary& vocab, Rng& rng) {
  if (dataset.size() < 2)
    throw ValueError("cannot sample a negative pair from a dataset of size " +
                        std::to_string(dataset.size()));
  if (anchor >= dataset.size()) throw IndexError("anchor index outside dataset");
  const PairRecord& pos = dataset[anchor];
  VlmPair pair;
  pair.tokens = tokenize(pos.caption, vocab);
  pair.regions = pos.regions;
  pair.image_id = pos.image_id;
  pair.caption = pos.caption;
  if (rng.bernoulli(0.5)) return pair;  // y=1, corruption NONE

  auto candidates = [&](Corruption kind) {
    std::vector<size_t> out;
    for (size_t i = 0; i < dataset.size(); ++i) {
      if (i == anchor) continue;
      if (kind == Corruption::NegImage && dataset[i].image_id != pos.image_id) out.push_back(i);
      if (kind == Corruption::NegCaption && dataset[i].caption != pos.caption) out.push_back(i);
    }
    return out;
  };

  Corruption kind = rng.bernoulli(0.5) ? Corruption::NegImage : Corruption::NegCaption;
  std::vector<size_t> pool = candidates(kind);
  if (pool.empty()) {
    kind = kind == Corruption::NegImage ? Corruption::NegCaption : Corruption::NegImage;
    pool = candidates(kind);
  }
  if (pool.empty())
    throw ProtocolError("cannot sample a negative counterpart for pair " + pos.pair_id);
  const PairRecord& other = dataset[pool[rng.uniform_int(pool.size())]];
  pair.y = 0;
  pair.corruption = kind;
  if (kind == Corruption::NegImage) {
    pair.regions = other.regions;
    pair.image_id = other.image_id;
  } else {
    pair.tokens = tokenize(other.caption, vocab);
    pair.caption = other.caption;
  }
  return pair;
}

}  // namespace

VlmPair sample_vlm_pair(const std::vector<PairRecord>& dataset, size_t anchor,
                        const Vocabulary& vocab, Rng& rng) {
  return corrupt_anchor(dataset, anchor, vocab, rng);
}

VlmPair sample_vlm_pair(const std::vector<PairRecord>& dataset, const Vocabulary& vocab,
                        Rng& rng) {
  if (dataset.empty()) throw ValueError("cannot sample from an empty dataset");
  return corrupt_anchor(dataset, rng.uniform_int(dataset.size()), vocab, rng);
}

PreparedExample prepare_pretrain_example(const VlmPair& pair, const ModelConfig& cfg,
                                         const PretrainOptions& opts, Rng& rng, int pad_to) {
  const TruncationResult keep =
      truncation_budget(static_cast<int>(pair.tokens.ids.size()), pair.regions.count(),
                        cfg.encoder.max_seq_len);
  std::vector<int> ids(pair.tokens.ids.begin(), pair.tokens.ids.begin() + keep.text_keep);
  RegionSet regions = pair.regions.take_first(keep.region_keep);

  PreparedExample ex;
  ex.y = pair.y;
  ex.plan.text_mask_indices = sample_text_mask(keep.text_keep, opts.text_mask_rate, rng);
  auto [region_idx, replacement] =
      sample_region_mask(keep.region_keep, opts.region_mask_rate, rng, opts.region_zero_prob);
  ex.plan.region_mask_indices = std::move(region_idx);
  ex.plan.region_replacement = std::move(replacement);

  for (int idx : ex.plan.text_mask_indices) ex.mlm_targets.push_back(ids[static_cast<size_t>(idx)]);
  for (int idx : ex.plan.region_mask_indices)
    ex.moc_targets.push_back(regions.label_ids[static_cast<size_t>(idx)]);

  const std::vector<int> masked_ids =
      apply_text_mask(ids, ex.plan.text_mask_indices, opts.text_style, rng, cfg.vocab_size);
  ex.layout = build_layout(masked_ids, keep.region_keep, cfg.encoder.max_seq_len, pad_to);
  ex.features = apply_region_mask(regions.features, ex.plan);
  ex.locations = location_matrix(regions);
  return ex;
}

}  // namespace vlp
