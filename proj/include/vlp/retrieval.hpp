#pragma once

#include <string>
#include <vector>

#include "vlp/data.hpp"
#include "vlp/metrics.hpp"
#include "vlp/model.hpp"
#include "vlp/pretrain.hpp"

namespace vlp {

struct RetrievalConfig {
  double margin = 0.2;
  double lambda_text_to_image = 1.0;
  double lambda_image_to_text = 1.0;
  int negatives_per_positive = 3;
  double learning_rate = 5e-5;

  void validate() const {
    if (!(margin > 0)) throw ValueError("triplet margin must be > 0");
    if (negatives_per_positive < 1) throw ValueError("need at least one negative per positive");
  }
};

// max(0, margin - s_pos + max over negatives). The inner max realizes the
// hardest negative within the sampled set.
template <typename Real>
Value<Real> hardest_triplet_loss(Value<Real> pos_score, std::vector<Value<Real>> neg_scores,
                                 Real margin) {
  if (neg_scores.empty())
    throw ValueError("hardest_triplet_loss requires at least one negative score");
  for (const auto& s : neg_scores)
    if (s.tensor().numel() != 1) throw ShapeError("triplet scores must be scalars");
  auto hardest = neg_scores.size() == 1 ? neg_scores[0] : max_rows(concat_cols(neg_scores));
  return relu(add_scalar(sub(hardest, pos_score), margin));
}

// Indices of sampled counterexamples: images whose id differs, captions
// whose text differs.
struct RetrievalNegatives {
  std::vector<size_t> image_negatives;
  std::vector<size_t> caption_negatives;
};

RetrievalNegatives sample_retrieval_negatives(const std::vector<PairRecord>& dataset,
                                              size_t anchor, int count, Rng& rng);

// Match probability for one caption-image pair; evaluation path, no
// masking.
template <typename Real>
Value<Real> pair_match_score(Graph<Real>& g, const ParameterStore<Real>& params,
                             const ModelConfig& cfg, const std::vector<int>& token_ids,
                             const RegionSet& regions) {
  const TruncationResult keep = truncation_budget(static_cast<int>(token_ids.size()),
                                                  regions.count(), cfg.encoder.max_seq_len);
  std::vector<int> ids(token_ids.begin(), token_ids.begin() + keep.text_keep);
  RegionSet kept = regions.take_first(keep.region_keep);
  Layout layout = build_layout(ids, keep.region_keep, cfg.encoder.max_seq_len);
  auto feats = g.constant(kept.features.template cast<Real>());
  auto locs = g.constant(location_matrix(kept).template cast<Real>());
  auto enc = forward_sequence(g, params, layout, feats, locs, cfg);
  return sigmoid(vlm_logit(g, params, enc));
}

float score_pair(const ParameterStore<float>& params, const ModelConfig& cfg,
                 const TokenSequence& tokens, const RegionSet& regions);

// Eq. 6 for one anchor: lambda-weighted hardest-triplet losses in both
// directions, sharing the positive score.
template <typename Real>
Value<Real> retrieval_example_loss(Graph<Real>& g, const ParameterStore<Real>& params,
                                   const ModelConfig& cfg,
                                   const std::vector<PairRecord>& dataset, size_t anchor,
                                   const RetrievalNegatives& negs, const Vocabulary& vocab,
                                   const RetrievalConfig& rcfg) {
  rcfg.validate();
  const PairRecord& pos = dataset[anchor];
  const std::vector<int> pos_ids = tokenize(pos.caption, vocab).ids;
  auto pos_score = pair_match_score(g, params, cfg, pos_ids, pos.regions);

  std::vector<Value<Real>> image_neg_scores;  // caption fixed, image swapped
  for (size_t idx : negs.image_negatives)
    image_neg_scores.push_back(pair_match_score(g, params, cfg, pos_ids, dataset[idx].regions));
  std::vector<Value<Real>> caption_neg_scores;  // image fixed, caption swapped
  for (size_t idx : negs.caption_negatives)
    caption_neg_scores.push_back(pair_match_score(
        g, params, cfg, tokenize(dataset[idx].caption, vocab).ids, pos.regions));

  const Real margin = static_cast<Real>(rcfg.margin);
  auto text_to_image = hardest_triplet_loss(pos_score, std::move(image_neg_scores), margin);
  auto image_to_text = hardest_triplet_loss(pos_score, std::move(caption_neg_scores), margin);
  return add(scale(text_to_image, static_cast<Real>(rcfg.lambda_text_to_image)),
             scale(image_to_text, static_cast<Real>(rcfg.lambda_image_to_text)));
}

struct RetrievalReportRow {
  std::string direction;  // "text_to_image" or "image_to_text"
  int k = 0;
  double recall = 0;
  int num_queries = 0;
  int num_candidates = 0;
};

// Scores every caption against every distinct image once, then reads R@K
// off the matrix in both directions. An image query succeeds if any of its
// captions ranks in the top K.
std::vector<RetrievalReportRow> evaluate_retrieval(const std::vector<PairRecord>& dataset,
                                                   const ParameterStore<float>& params,
                                                   const ModelConfig& cfg,
                                                   const Vocabulary& vocab,
                                                   const std::vector<int>& ks);

// Zero-shot protocol guard: evaluation may only use a checkpoint that has
// not been fine-tuned.
void require_zero_shot_eligible(const std::string& checkpoint_task);

void write_retrieval_report(const std::vector<RetrievalReportRow>& rows,
                            const std::string& checkpoint_id, uint64_t seed,
                            const std::string& path);

}  // namespace vlp
