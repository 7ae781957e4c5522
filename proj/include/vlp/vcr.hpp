#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "vlp/data.hpp"
#include "vlp/model.hpp"

namespace vlp {

// Four-way multiple choice: answer the question, then justify the answer.
// Token lists arrive pre-tokenized; object references tie tokens to
// ground-truth boxes, which are aligned to extracted regions by IoU.
struct VcrObjectBox {
  Box box;
  int object_index = 0;
};

struct VcrReference {
  std::string segment;  // "q", "a0".."a3", "r0".."r3"
  int token_pos = 0;    // within the segment
  int object_index = 0;
};

struct VcrExample {
  std::string example_id;
  std::vector<std::string> question;
  std::array<std::vector<std::string>, 4> answers;
  std::array<std::vector<std::string>, 4> rationales;
  int answer_label = 0;
  int rationale_label = 0;
  std::vector<VcrObjectBox> gt_boxes;
  std::vector<VcrReference> references;
  RegionSet regions;

  void validate() const;
};

struct BoxMatch {
  int region_index = 0;  // into the pre-match RegionSet
  double iou_value = 0;
};

// Each ground-truth box takes its argmax-IoU region (ties to the lowest
// region index). Matched regions head the output in ground-truth order;
// the rest of the budget is filled with unmatched regions by descending
// detector score. Ground-truth box i therefore sits at output row i.
std::pair<std::vector<BoxMatch>, RegionSet> match_boxes(const std::vector<VcrObjectBox>& gt_boxes,
                                                        const RegionSet& regions, int budget);

enum class VcrMode { QuestionToAnswer, QuestionAnswerToRationale };

// One choice's flattened token sequence: q ; a_c for answer selection,
// q ; a* ; r_c for rationale selection. References carry (token position
// within the flat sequence, ground-truth box row).
struct ChoiceInput {
  std::vector<int> ids;
  std::vector<std::pair<int, int>> references;
};

ChoiceInput build_choice_input(const VcrExample& example, VcrMode mode, int choice,
                               const Vocabulary& vocab);

// [CLS]-state projection logit for one assembled choice.
template <typename Real>
Value<Real> score_choice(Graph<Real>& g, const ParameterStore<Real>& params,
                         const ModelConfig& cfg, const ChoiceInput& input,
                         const RegionSet& matched_regions) {
  Layout layout =
      build_layout(input.ids, matched_regions.count(), cfg.encoder.max_seq_len);
  if (layout.text_count != static_cast<int>(input.ids.size()))
    throw ValueError("choice input of " + std::to_string(input.ids.size()) +
                     " tokens was truncated; raise max_seq_len");
  std::vector<ReferenceInjection> injections;
  for (const auto& [pos, row] : input.references)
    injections.push_back({1 + pos, row});
  auto feats = g.constant(matched_regions.features.template cast<Real>());
  auto locs = g.constant(location_matrix(matched_regions).template cast<Real>());
  auto enc = forward_sequence(g, params, layout, feats, locs, cfg, injections);
  return head_logits(g, params, gather_rows(enc, std::vector<int>{0}), "vcr");
}

// Four logits as a [1,4] row, one forward pass per choice.
template <typename Real>
Value<Real> vcr_choice_logits(Graph<Real>& g, const ParameterStore<Real>& params,
                              const ModelConfig& cfg, const VcrExample& example, VcrMode mode,
                              const Vocabulary& vocab, int region_budget) {
  auto [matches, regions] = match_boxes(example.gt_boxes, example.regions, region_budget);
  std::vector<Value<Real>> logits;
  for (int choice = 0; choice < 4; ++choice)
    logits.push_back(
        score_choice(g, params, cfg, build_choice_input(example, mode, choice, vocab), regions));
  return concat_cols(logits);
}

template <typename Real>
Value<Real> vcr_loss(Value<Real> logits, int correct) {
  if (logits.rows() != 1 || logits.cols() != 4)
    throw ShapeError("vcr_loss expects [1,4] logits");
  if (correct < 0 || correct >= 4)
    throw IndexError("correct choice " + std::to_string(correct) + " outside [0,4)");
  return cross_entropy_logits(logits, {correct});
}

// Joint fine-tuning objective: answer selection plus rationale selection.
template <typename Real>
Value<Real> vcr_example_loss(Graph<Real>& g, const ParameterStore<Real>& params,
                             const ModelConfig& cfg, const VcrExample& example,
                             const Vocabulary& vocab, int region_budget) {
  auto qa = vcr_loss(vcr_choice_logits(g, params, cfg, example, VcrMode::QuestionToAnswer,
                                       vocab, region_budget),
                     example.answer_label);
  auto qar = vcr_loss(vcr_choice_logits(g, params, cfg, example,
                                        VcrMode::QuestionAnswerToRationale, vocab,
                                        region_budget),
                      example.rationale_label);
  return add(qa, qar);
}

struct VcrMetrics {
  double question_to_answer = 0;
  double answer_to_rationale = 0;
  double joint = 0;  // both argmaxes correct per example
  int count = 0;
};

// Accuracies from already-argmaxed predictions; joint is the mean of the
// per-example AND of the two correctness indicators.
VcrMetrics vcr_metrics_from_predictions(const std::vector<int>& predicted_answers,
                                        const std::vector<int>& predicted_rationales,
                                        const std::vector<int>& answer_labels,
                                        const std::vector<int>& rationale_labels);

VcrMetrics evaluate_vcr(const std::vector<VcrExample>& dataset,
                        const ParameterStore<float>& params, const ModelConfig& cfg,
                        const Vocabulary& vocab, int region_budget);

std::vector<VcrExample> load_vcr(const std::string& path, const Manifest& manifest);
void write_vcr(const std::vector<VcrExample>& examples, const std::string& path);

// Synthetic four-choice examples: the referenced region's concept decides
// the correct answer; distractors name concepts absent from the image.
std::vector<VcrExample> generate_synthetic_vcr(const SynthConfig& cfg);

}  // namespace vlp
