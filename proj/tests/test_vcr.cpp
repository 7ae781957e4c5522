#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "vlp/grad_targets.hpp"
#include "vlp/vcr.hpp"

using namespace vlp;

namespace {

SynthConfig vcr_synth(int examples, uint64_t seed = 5) {
  SynthConfig cfg;
  cfg.num_concepts = 8;
  cfg.d_vis = 8;
  cfg.pairs = 4;
  cfg.vcr_examples = examples;
  cfg.min_regions = 2;
  cfg.max_regions = 4;
  cfg.seed = seed;
  return cfg;
}

ModelConfig vcr_model(const Vocabulary& vocab) {
  ModelConfig cfg;
  cfg.encoder.num_layers = 2;
  cfg.encoder.hidden_size = 16;
  cfg.encoder.num_heads = 2;
  cfg.encoder.ffn_size = 32;
  cfg.encoder.max_seq_len = 32;
  cfg.encoder.dropout_rate = 0.f;
  cfg.vocab_size = vocab.size();
  cfg.d_vis = 8;
  cfg.num_object_classes = 8;
  return cfg;
}

RegionSet five_regions() {
  RegionSet rs;
  rs.width = 100;
  rs.height = 100;
  rs.features = TensorF::zeros({5, 4});
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 4; ++k) rs.features.at(i, k) = static_cast<float>(10 * i + k);
  rs.boxes = {{0, 0, 10, 10}, {20, 20, 40, 40}, {50, 50, 70, 70}, {5, 5, 15, 15}, {80, 80, 95, 95}};
  rs.label_ids = {0, 1, 2, 3, 4};
  rs.scores = {0.9f, 0.4f, 0.8f, 0.6f, 0.7f};
  return rs;
}

VcrExample tiny_example(const RegionSet& rs) {
  VcrExample ex;
  ex.example_id = "t0";
  ex.question = {"what", "is", "this", "thing"};
  ex.answers = {{{"cat"}, {"dog"}, {"ball"}, {"box"}}};
  ex.rationales = {{{"it", "is", "red"}, {"it", "is", "big"}, {"it", "sits"}, {"it", "runs"}}};
  ex.answer_label = 1;
  ex.rationale_label = 2;
  ex.gt_boxes = {{{0, 0, 10, 10}, 3}};
  ex.references = {{"q", 2, 3}};
  ex.regions = rs;
  return ex;
}

}  // namespace

TEST_CASE("iou hand values, symmetry, and degenerate rejection") {
  const Box a{0, 0, 2, 2};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box{5, 5, 7, 7}) == doctest::Approx(0.0));
  CHECK(iou(a, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(iou(Box{1, 1, 3, 3}, a) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  // Boxes that merely touch share no area.
  CHECK(iou(a, Box{2, 0, 4, 2}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(iou(a, Box{3, 3, 3, 5}), ValueError);
  CHECK_THROWS_AS(iou(Box{2, 2, 1, 3}, a), ValueError);
}

TEST_CASE("match_boxes: exact overlap heads the output") {
  RegionSet rs = five_regions();
  std::vector<VcrObjectBox> gt = {{{20, 20, 40, 40}, 7}};
  auto [matches, final_set] = match_boxes(gt, rs, 4);
  REQUIRE(matches.size() == 1);
  CHECK(matches[0].region_index == 1);
  CHECK(matches[0].iou_value == doctest::Approx(1.0));
  CHECK(final_set.count() == 4);
  for (int k = 0; k < 4; ++k) CHECK(final_set.features.at(0, k) == rs.features.at(1, k));
  CHECK(final_set.label_ids[0] == 1);
}

TEST_CASE("match_boxes: two ground truths, five regions, budget four") {
  RegionSet rs = five_regions();
  // gt0 overlaps regions 0 and 3 (argmax: region 0); gt1 sits on region 2.
  std::vector<VcrObjectBox> gt = {{{0, 0, 12, 12}, 1}, {{50, 50, 70, 70}, 2}};
  auto [matches, final_set] = match_boxes(gt, rs, 4);
  REQUIRE(matches.size() == 2);
  CHECK(matches[0].region_index == 0);
  CHECK(matches[1].region_index == 2);
  CHECK(matches[1].iou_value == doctest::Approx(1.0));

  // Matched rows in ground-truth order, then unmatched by descending score:
  // region 4 (0.7) ahead of region 3 (0.6); region 1 (0.4) misses the budget.
  REQUIRE(final_set.count() == 4);
  CHECK(final_set.label_ids == std::vector<int>{0, 2, 4, 3});
}

TEST_CASE("match_boxes: disjoint ground truth still matches the lowest index") {
  RegionSet rs = five_regions();
  std::vector<VcrObjectBox> gt = {{{98, 0, 99, 1}, 0}};  // overlaps nothing
  auto [matches, final_set] = match_boxes(gt, rs, 5);
  REQUIRE(matches.size() == 1);
  CHECK(matches[0].region_index == 0);
  CHECK(matches[0].iou_value == doctest::Approx(0.0));
  CHECK(final_set.count() == 5);
}

TEST_CASE("match_boxes: IoU ties resolve to the lowest region index") {
  RegionSet rs = five_regions();
  rs.boxes[3] = rs.boxes[1];  // duplicate geometry at a higher index
  std::vector<VcrObjectBox> gt = {{{20, 20, 40, 40}, 0}};
  auto [matches, final_set] = match_boxes(gt, rs, 3);
  CHECK(matches[0].region_index == 1);
  CHECK(final_set.count() == 3);
}

TEST_CASE("match_boxes rejects impossible budgets") {
  RegionSet rs = five_regions();
  std::vector<VcrObjectBox> gt = {{{0, 0, 10, 10}, 0}, {{20, 20, 40, 40}, 1}};
  CHECK_THROWS_AS(match_boxes(gt, rs, 1), ValueError);
  CHECK_THROWS_AS(match_boxes(gt, rs, 0), ValueError);
  RegionSet empty;
  CHECK_THROWS_AS(match_boxes(gt, empty, 4), ValueError);
}

TEST_CASE("choice input concatenates segments around semicolons") {
  RegionSet rs = five_regions();
  VcrExample ex = tiny_example(rs);
  SynthConfig scfg = vcr_synth(1);
  Vocabulary vocab = generate_synthetic(scfg).vocab;  // carries ';' and the template words

  ChoiceInput qa = build_choice_input(ex, VcrMode::QuestionToAnswer, 0, vocab);
  CHECK(qa.ids.size() == 4 + 1 + 1);  // q ; a0
  CHECK(qa.ids[4] == vocab.id(";"));

  ChoiceInput qar = build_choice_input(ex, VcrMode::QuestionAnswerToRationale, 3, vocab);
  // q(4) ; a*(1) ; r3(2) with a* = answers[answer_label]
  CHECK(qar.ids.size() == 4 + 1 + 1 + 1 + 2);
  CHECK(qar.ids[4] == vocab.id(";"));
  CHECK(qar.ids[6] == vocab.id(";"));

  CHECK_THROWS_AS(build_choice_input(ex, VcrMode::QuestionToAnswer, 4, vocab), IndexError);
  CHECK_THROWS_AS(build_choice_input(ex, VcrMode::QuestionToAnswer, -1, vocab), IndexError);

  Vocabulary no_semicolon = Vocabulary::from_words({"what", "is", "this"});
  CHECK_THROWS_AS(build_choice_input(ex, VcrMode::QuestionToAnswer, 0, no_semicolon), ValueError);
}

TEST_CASE("choice input shifts reference positions by the segment offsets") {
  RegionSet rs = five_regions();
  VcrExample ex = tiny_example(rs);
  ex.answer_label = 1;
  ex.gt_boxes = {{{0, 0, 10, 10}, 3}, {{50, 50, 70, 70}, 9}};
  ex.references = {{"q", 2, 3},   // "this"
                   {"a1", 0, 9},  // inside the correct answer
                   {"r2", 1, 3},  // inside rationale 2 only
                   {"a0", 0, 9}};
  SynthConfig scfg = vcr_synth(1);
  Vocabulary vocab = generate_synthetic(scfg).vocab;

  // QA mode, choice 1: q ref at 2, a1 ref at |q|+1+0 = 5; r2/a0 refs dropped.
  ChoiceInput qa = build_choice_input(ex, VcrMode::QuestionToAnswer, 1, vocab);
  REQUIRE(qa.references.size() == 2);
  CHECK(qa.references[0] == std::pair<int, int>{2, 0});
  CHECK(qa.references[1] == std::pair<int, int>{5, 1});

  // QA mode, choice 0 includes the a0 reference instead.
  ChoiceInput qa0 = build_choice_input(ex, VcrMode::QuestionToAnswer, 0, vocab);
  REQUIRE(qa0.references.size() == 2);
  CHECK(qa0.references[1] == std::pair<int, int>{5, 1});

  // QAR mode, choice 2: q(4) ; a1(1) ; r2(2). The r2 segment starts at
  // |q|+1+|a*|+1 = 7, so its position-1 reference lands at 8.
  ChoiceInput qar = build_choice_input(ex, VcrMode::QuestionAnswerToRationale, 2, vocab);
  REQUIRE(qar.references.size() == 3);
  CHECK(qar.references[0] == std::pair<int, int>{2, 0});
  CHECK(qar.references[1] == std::pair<int, int>{5, 1});
  CHECK(qar.references[2] == std::pair<int, int>{8, 0});

  // QAR mode, choice 0: rationale 2 is excluded, so its reference vanishes.
  ChoiceInput qar0 = build_choice_input(ex, VcrMode::QuestionAnswerToRationale, 0, vocab);
  CHECK(qar0.references.size() == 2);

  ex.answer_label = 7;  // no usable ground-truth answer
  CHECK_THROWS_AS(build_choice_input(ex, VcrMode::QuestionAnswerToRationale, 0, vocab),
                  ProtocolError);
}

TEST_CASE("example validation catches structural problems") {
  RegionSet rs = five_regions();
  VcrExample ok = tiny_example(rs);
  CHECK_NOTHROW(ok.validate());

  VcrExample bad = ok;
  bad.question.clear();
  CHECK_THROWS_AS(bad.validate(), ValueError);

  bad = ok;
  bad.answers[2].clear();
  CHECK_THROWS_AS(bad.validate(), ValueError);

  bad = ok;
  bad.rationale_label = 4;
  CHECK_THROWS_AS(bad.validate(), ValueError);

  bad = ok;
  bad.regions = RegionSet{};
  CHECK_THROWS_AS(bad.validate(), ValueError);

  bad = ok;
  bad.gt_boxes = {{{0, 0, 10, 10}, 3}, {{20, 20, 40, 40}, 3}};  // duplicate object id
  CHECK_THROWS_AS(bad.validate(), ValueError);

  bad = ok;
  bad.references = {{"q", 9, 3}};  // position outside the question
  CHECK_THROWS_AS(bad.validate(), IndexError);

  bad = ok;
  bad.references = {{"q", 2, 11}};  // names an undeclared object
  CHECK_THROWS_AS(bad.validate(), IndexError);

  bad = ok;
  bad.references = {{"x3", 0, 3}};
  CHECK_THROWS_AS(bad.validate(), ParseError);
}

TEST_CASE("reference injection with a zeroed visual pathway changes nothing") {
  SynthConfig scfg = vcr_synth(2);
  SynthCorpus corpus = generate_synthetic(scfg);
  std::vector<VcrExample> examples = generate_synthetic_vcr(scfg);
  ModelConfig cfg = vcr_model(corpus.vocab);
  auto params = init_params<float>(cfg, 3);
  // Silence every term of the region embedding, so the injected addend is 0.
  for (const char* name : {"embed.vis_feat.w", "embed.vis_feat.b", "embed.vis_loc.w",
                           "embed.vis_loc.b", "embed.seg"})
    for (auto& v : params.mutable_get(name).data) v = 0.f;
  auto& word = params.mutable_get("embed.word");
  for (int k = 0; k < cfg.encoder.hidden_size; ++k) word.at(Vocabulary::kImg, k) = 0.f;

  const VcrExample& ex = examples[0];
  auto [matches, regions] = match_boxes(ex.gt_boxes, ex.regions, 8);
  ChoiceInput input = build_choice_input(ex, VcrMode::QuestionToAnswer, 0, corpus.vocab);
  REQUIRE(!input.references.empty());

  Layout layout = build_layout(input.ids, regions.count(), cfg.encoder.max_seq_len);
  std::vector<ReferenceInjection> injections;
  for (const auto& [pos, row] : input.references) injections.push_back({1 + pos, row});

  Graph<float> g;
  auto feats = g.constant(regions.features);
  auto locs = g.constant(location_matrix(regions));
  auto with = embed_sequence(g, params, layout, feats, locs, cfg, injections);
  auto without = embed_sequence(g, params, layout, feats, locs, cfg);
  for (int64_t i = 0; i < with.tensor().numel(); ++i)
    CHECK(with.tensor().data[static_cast<size_t>(i)] ==
          without.tensor().data[static_cast<size_t>(i)]);
}

TEST_CASE("tokens referencing the same object receive the same additive term") {
  SynthConfig scfg = vcr_synth(2);
  SynthCorpus corpus = generate_synthetic(scfg);
  ModelConfig cfg = vcr_model(corpus.vocab);
  auto params = init_params<float>(cfg, 4);
  // Make positions 1 and 2 indistinguishable so only the injections differ.
  auto& pos = params.mutable_get("embed.pos");
  for (int k = 0; k < cfg.encoder.hidden_size; ++k) pos.at(2, k) = pos.at(1, k);

  const int word = corpus.vocab.id("what");
  RegionSet rs = five_regions();
  rs.features = TensorF::zeros({5, 8});
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 8; ++k) rs.features.at(i, k) = static_cast<float>(i - k);
  Layout layout = build_layout({word, word}, rs.count(), cfg.encoder.max_seq_len);

  Graph<float> g;
  auto feats = g.constant(rs.features);
  auto locs = g.constant(location_matrix(rs));
  auto out = embed_sequence(g, params, layout, feats, locs, cfg,
                            {{1, 2}, {2, 2}});  // both tokens cite region 2
  for (int k = 0; k < cfg.encoder.hidden_size; ++k)
    CHECK(out.tensor().at(1, k) == out.tensor().at(2, k));

  CHECK_THROWS_AS(embed_sequence(g, params, layout, feats, locs, cfg, {{1, 9}}), IndexError);
  CHECK_THROWS_AS(embed_sequence(g, params, layout, feats, locs, cfg, {{0, 2}}), IndexError);
}

TEST_CASE("zero-initialized projection scores the four choices identically") {
  SynthConfig scfg = vcr_synth(4);
  SynthCorpus corpus = generate_synthetic(scfg);
  std::vector<VcrExample> examples = generate_synthetic_vcr(scfg);
  ModelConfig cfg = vcr_model(corpus.vocab);
  auto params = init_params<float>(cfg, 5);

  Graph<float> g;
  auto logits = vcr_choice_logits(g, params, cfg, examples[0], VcrMode::QuestionToAnswer,
                                  corpus.vocab, 8);
  REQUIRE(logits.rows() == 1);
  REQUIRE(logits.cols() == 4);
  for (int j = 1; j < 4; ++j) CHECK(logits.tensor().at(0, j) == logits.tensor().at(0, 0));

  auto loss = vcr_loss(logits, examples[0].answer_label);
  CHECK(std::abs(loss.item() - std::log(4.f)) < 1e-5);
}

TEST_CASE("permuting answer choices permutes the logits") {
  SynthConfig scfg = vcr_synth(4, 11);
  SynthCorpus corpus = generate_synthetic(scfg);
  std::vector<VcrExample> examples = generate_synthetic_vcr(scfg);
  ModelConfig cfg = vcr_model(corpus.vocab);
  auto params = init_params<float>(cfg, 6);
  Rng jitter = Rng::derive(19, 0);
  for (auto& v : params.mutable_get("heads.vcr.w").data)
    v = static_cast<float>(jitter.normal(0.0, 0.5));

  VcrExample ex = examples[1];
  ex.references.clear();  // keep the swap independent of reference bookkeeping
  Graph<float> g;
  auto base = vcr_choice_logits(g, params, cfg, ex, VcrMode::QuestionToAnswer, corpus.vocab, 8)
                  .tensor();

  VcrExample swapped = ex;
  std::swap(swapped.answers[0], swapped.answers[2]);
  Graph<float> g2;
  auto perm =
      vcr_choice_logits(g2, params, cfg, swapped, VcrMode::QuestionToAnswer, corpus.vocab, 8)
          .tensor();
  CHECK(perm.at(0, 0) == base.at(0, 2));
  CHECK(perm.at(0, 2) == base.at(0, 0));
  CHECK(perm.at(0, 1) == base.at(0, 1));
  CHECK(perm.at(0, 3) == base.at(0, 3));

  // Determinism: the same pass twice is bitwise-equal.
  Graph<float> g3;
  auto repeat = vcr_choice_logits(g3, params, cfg, ex, VcrMode::QuestionToAnswer, corpus.vocab, 8)
                    .tensor();
  for (int j = 0; j < 4; ++j) CHECK(repeat.at(0, j) == base.at(0, j));
}

TEST_CASE("four-choice loss: shift invariance, saturation, index checks") {
  Graph<float> g;
  TensorF raw = TensorF::zeros({1, 4});
  raw.at(0, 0) = 0.3f;
  raw.at(0, 1) = -0.1f;
  raw.at(0, 2) = 0.9f;
  raw.at(0, 3) = 0.2f;
  TensorF shifted = raw;
  for (auto& v : shifted.data) v += 5.f;
  const float a = vcr_loss(g.constant(raw), 2).item();
  const float b = vcr_loss(g.constant(shifted), 2).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-6));

  TensorF sat = TensorF::zeros({1, 4});
  sat.at(0, 1) = 50.f;
  CHECK(vcr_loss(g.constant(sat), 1).item() < 1e-6f);

  CHECK_THROWS_AS(vcr_loss(g.constant(raw), 4), IndexError);
  CHECK_THROWS_AS(vcr_loss(g.constant(raw), -1), IndexError);
  CHECK_THROWS_AS(vcr_loss(g.constant(TensorF::zeros({1, 3})), 0), ShapeError);

  // The softmax read off the same logits sums to one.
  auto probs = softmax_rows(g.constant(raw));
  float sum = 0;
  for (int j = 0; j < 4; ++j) sum += probs.tensor().at(0, j);
  CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("joint metric is the per-example AND of the two argmax indicators") {
  Rng rng = Rng::derive(404, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(64));
    std::vector<int> pa, pr, ta, tr;
    for (int i = 0; i < n; ++i) {
      pa.push_back(static_cast<int>(rng.uniform_int(4)));
      pr.push_back(static_cast<int>(rng.uniform_int(4)));
      ta.push_back(static_cast<int>(rng.uniform_int(4)));
      tr.push_back(static_cast<int>(rng.uniform_int(4)));
    }
    VcrMetrics m = vcr_metrics_from_predictions(pa, pr, ta, tr);
    int qa = 0, qar = 0, both = 0;
    for (int i = 0; i < n; ++i) {
      qa += pa[static_cast<size_t>(i)] == ta[static_cast<size_t>(i)] ? 1 : 0;
      qar += pr[static_cast<size_t>(i)] == tr[static_cast<size_t>(i)] ? 1 : 0;
      both += (pa[static_cast<size_t>(i)] == ta[static_cast<size_t>(i)] &&
               pr[static_cast<size_t>(i)] == tr[static_cast<size_t>(i)])
                  ? 1
                  : 0;
    }
    CHECK(m.question_to_answer == static_cast<double>(qa) / n);
    CHECK(m.answer_to_rationale == static_cast<double>(qar) / n);
    CHECK(m.joint == static_cast<double>(both) / n);
    CHECK(m.joint <= std::min(m.question_to_answer, m.answer_to_rationale));
  }
  CHECK_THROWS_AS(vcr_metrics_from_predictions({}, {}, {}, {}), ValueError);
  CHECK_THROWS_AS(vcr_metrics_from_predictions({0}, {0, 1}, {0}, {0}), ValueError);
}

TEST_CASE("untrained evaluation picks choice zero, so balanced labels score 0.25") {
  SynthConfig scfg = vcr_synth(16, 21);
  SynthCorpus corpus = generate_synthetic(scfg);
  std::vector<VcrExample> examples = generate_synthetic_vcr(scfg);
  REQUIRE(examples.size() == 16);
  ModelConfig cfg = vcr_model(corpus.vocab);
  auto params = init_params<float>(cfg, 7);  // zero heads tie everything

  VcrMetrics m = evaluate_vcr(examples, params, cfg, corpus.vocab, 8);
  CHECK(m.count == 16);
  // Labels cycle i%4 and (i/4)%4; ties resolve to choice 0.
  CHECK(m.question_to_answer == doctest::Approx(0.25));
  CHECK(m.answer_to_rationale == doctest::Approx(0.25));
  CHECK(m.joint == doctest::Approx(1.0 / 16.0));
  CHECK(m.joint <= std::min(m.question_to_answer, m.answer_to_rationale));

  // A model that is always right on both questions scores 1.0 across the
  // board; with tied logits "right" means label 0.
  std::vector<VcrExample> rigged = examples;
  for (auto& ex : rigged) {
    ex.answer_label = 0;
    ex.rationale_label = 0;
  }
  VcrMetrics perfect = evaluate_vcr(rigged, params, cfg, corpus.vocab, 8);
  CHECK(perfect.question_to_answer == doctest::Approx(1.0));
  CHECK(perfect.answer_to_rationale == doctest::Approx(1.0));
  CHECK(perfect.joint == doctest::Approx(1.0));

  CHECK_THROWS_AS(evaluate_vcr({}, params, cfg, corpus.vocab, 8), ValueError);
}

TEST_CASE("synthetic four-choice corpus is label-balanced and concept-grounded") {
  SynthConfig scfg = vcr_synth(32, 9);
  SynthCorpus corpus = generate_synthetic(scfg);
  std::vector<VcrExample> examples = generate_synthetic_vcr(scfg);
  REQUIRE(examples.size() == 32);

  std::array<int, 4> answer_counts{};
  for (size_t i = 0; i < examples.size(); ++i) {
    const VcrExample& ex = examples[i];
    CHECK_NOTHROW(ex.validate());
    ++answer_counts[static_cast<size_t>(ex.answer_label)];

    // The reference points at ground-truth box 0, whose box coincides with
    // one extracted region; the correct answer names that region's concept.
    auto [matches, regions] = match_boxes(ex.gt_boxes, ex.regions, 8);
    CHECK(matches[0].iou_value == doctest::Approx(1.0));
    const int concept_id = regions.label_ids[0];
    CHECK(ex.answers[static_cast<size_t>(ex.answer_label)][0] ==
          corpus.concept_names[static_cast<size_t>(concept_id)]);

    // Distractors name concepts absent from the image.
    std::set<int> present(ex.regions.label_ids.begin(), ex.regions.label_ids.end());
    for (int slot = 0; slot < 4; ++slot) {
      if (slot == ex.answer_label) continue;
      const std::string& name = ex.answers[static_cast<size_t>(slot)][0];
      const auto it =
          std::find(corpus.concept_names.begin(), corpus.concept_names.end(), name);
      REQUIRE(it != corpus.concept_names.end());
      CHECK(present.count(static_cast<int>(it - corpus.concept_names.begin())) == 0);
    }
  }
  for (int c : answer_counts) CHECK(c == 8);

  // Deterministic: regenerating with the same config is bitwise identical.
  std::vector<VcrExample> again = generate_synthetic_vcr(scfg);
  REQUIRE(again.size() == examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    CHECK(again[i].answers == examples[i].answers);
    CHECK(again[i].regions.features.data == examples[i].regions.features.data);
  }

  SynthConfig cramped = scfg;
  cramped.num_concepts = 6;  // max_regions + 3 = 7 needed
  CHECK_THROWS_AS(generate_synthetic_vcr(cramped), ValueError);
}

TEST_CASE("four-choice records survive a file round trip") {
  SynthConfig scfg = vcr_synth(6, 13);
  std::vector<VcrExample> examples = generate_synthetic_vcr(scfg);
  const std::string path = "vcr_roundtrip_test.jsonl";
  write_vcr(examples, path);

  Manifest manifest;
  manifest.d_vis = scfg.d_vis;
  manifest.num_object_classes = scfg.num_concepts;
  std::vector<VcrExample> loaded = load_vcr(path, manifest);
  REQUIRE(loaded.size() == examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    const VcrExample& a = examples[i];
    const VcrExample& b = loaded[i];
    CHECK(a.example_id == b.example_id);
    CHECK(a.question == b.question);
    CHECK(a.answers == b.answers);
    CHECK(a.rationales == b.rationales);
    CHECK(a.answer_label == b.answer_label);
    CHECK(a.rationale_label == b.rationale_label);
    REQUIRE(a.gt_boxes.size() == b.gt_boxes.size());
    for (size_t j = 0; j < a.gt_boxes.size(); ++j) {
      CHECK(a.gt_boxes[j].object_index == b.gt_boxes[j].object_index);
      CHECK(a.gt_boxes[j].box.x1 == b.gt_boxes[j].box.x1);
      CHECK(a.gt_boxes[j].box.y2 == b.gt_boxes[j].box.y2);
    }
    REQUIRE(a.references.size() == b.references.size());
    for (size_t j = 0; j < a.references.size(); ++j) {
      CHECK(a.references[j].segment == b.references[j].segment);
      CHECK(a.references[j].token_pos == b.references[j].token_pos);
      CHECK(a.references[j].object_index == b.references[j].object_index);
    }
    CHECK(a.regions.features.data == b.regions.features.data);  // bitwise
    CHECK(a.regions.label_ids == b.regions.label_ids);
    CHECK(a.regions.scores == b.regions.scores);
  }
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_vcr("no_such_vcr_file.jsonl", manifest), IoError);
}

TEST_CASE("four-choice cross-entropy gradient matches finite differences") {
  auto report = run_loss_grad_check("vcr", 5);
  CHECK(report.max_rel_err <= 1e-4);
  CHECK(report.checked > 0);
}
