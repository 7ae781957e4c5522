#include "vlp/vcr.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <json.hpp>

#include "vlp/errors.hpp"

namespace vlp {

using nlohmann::json;

namespace {

struct SegmentRef {
  char kind = 'q';  // 'q', 'a', 'r'
  int index = -1;   // choice index for 'a'/'r'
};

SegmentRef parse_segment(const std::string& s) {
  if (s == "q") return {'q', -1};
  if (s.size() == 2 && (s[0] == 'a' || s[0] == 'r') && s[1] >= '0' && s[1] <= '3')
    return {s[0], s[1] - '0'};
  throw ParseError("unknown reference segment '" + s + "' (expected q, a0..a3 or r0..r3)");
}

std::string lower_ascii(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

int gt_row_for_object(const std::vector<VcrObjectBox>& gt_boxes, int object_index) {
  for (size_t j = 0; j < gt_boxes.size(); ++j)
    if (gt_boxes[j].object_index == object_index) return static_cast<int>(j);
  throw IndexError("reference names object " + std::to_string(object_index) +
                   " but no ground-truth box declares it");
}

const std::vector<std::string>& segment_words(const VcrExample& ex, SegmentRef seg) {
  switch (seg.kind) {
    case 'q':
      return ex.question;
    case 'a':
      return ex.answers[static_cast<size_t>(seg.index)];
    default:
      return ex.rationales[static_cast<size_t>(seg.index)];
  }
}

}  // namespace

void VcrExample::validate() const {
  if (question.empty()) throw ValueError("example " + example_id + " has an empty question");
  for (const auto& a : answers)
    if (a.empty()) throw ValueError("example " + example_id + " has an empty answer choice");
  for (const auto& r : rationales)
    if (r.empty()) throw ValueError("example " + example_id + " has an empty rationale choice");
  if (answer_label < 0 || answer_label >= 4 || rationale_label < 0 || rationale_label >= 4)
    throw ValueError("example " + example_id + " labels must be in [0,4)");
  if (regions.count() == 0)
    throw ValueError("example " + example_id + " carries no extracted regions");
  for (size_t i = 0; i < gt_boxes.size(); ++i)
    for (size_t j = i + 1; j < gt_boxes.size(); ++j)
      if (gt_boxes[i].object_index == gt_boxes[j].object_index)
        throw ValueError("example " + example_id + " declares object " +
                         std::to_string(gt_boxes[i].object_index) + " twice");
  for (const auto& ref : references) {
    const SegmentRef seg = parse_segment(ref.segment);
    const auto& words = segment_words(*this, seg);
    if (ref.token_pos < 0 || ref.token_pos >= static_cast<int>(words.size()))
      throw IndexError("example " + example_id + " reference position " +
                       std::to_string(ref.token_pos) + " outside segment " + ref.segment);
    gt_row_for_object(gt_boxes, ref.object_index);
  }
}

std::pair<std::vector<BoxMatch>, RegionSet> match_boxes(const std::vector<VcrObjectBox>& gt_boxes,
                                                        const RegionSet& regions, int budget) {
  if (budget < 1) throw ValueError("region budget must be >= 1");
  if (static_cast<int>(gt_boxes.size()) > budget)
    throw ValueError(std::to_string(gt_boxes.size()) +
                     " ground-truth boxes exceed the region budget of " + std::to_string(budget));
  const int n = regions.count();
  if (n == 0) throw ValueError("match_boxes needs at least one extracted region");

  std::vector<BoxMatch> matches;
  std::vector<bool> taken(static_cast<size_t>(n), false);
  std::vector<int> rows;
  for (const VcrObjectBox& gt : gt_boxes) {
    int best = 0;
    double best_iou = iou(gt.box, regions.boxes[0]);
    for (int r = 1; r < n; ++r) {
      const double v = iou(gt.box, regions.boxes[static_cast<size_t>(r)]);
      if (v > best_iou) {
        best = r;
        best_iou = v;
      }
    }
    matches.push_back({best, best_iou});
    taken[static_cast<size_t>(best)] = true;
    rows.push_back(best);
  }

  std::vector<int> rest;
  for (int r = 0; r < n; ++r)
    if (!taken[static_cast<size_t>(r)]) rest.push_back(r);
  std::stable_sort(rest.begin(), rest.end(), [&](int a, int b) {
    return regions.scores[static_cast<size_t>(a)] > regions.scores[static_cast<size_t>(b)];
  });
  for (int r : rest) {
    if (static_cast<int>(rows.size()) >= budget) break;
    rows.push_back(r);
  }

  RegionSet out = regions.take_rows(rows);
  return {matches, out};
}

ChoiceInput build_choice_input(const VcrExample& example, VcrMode mode, int choice,
                               const Vocabulary& vocab) {
  if (choice < 0 || choice >= 4)
    throw IndexError("choice " + std::to_string(choice) + " outside [0,4)");
  if (!vocab.contains(";"))
    throw ValueError("vocabulary must contain ';' to assemble four-choice inputs");
  const int semicolon = vocab.id(";");

  int gt_answer = -1;
  if (mode == VcrMode::QuestionAnswerToRationale) {
    gt_answer = example.answer_label;
    if (gt_answer < 0 || gt_answer >= 4)
      throw ProtocolError("rationale selection conditions on the ground-truth answer, but " +
                          example.example_id + " does not declare one");
  }

  // (segment, offset of its first token in the flat sequence)
  std::vector<std::pair<SegmentRef, int>> parts;
  ChoiceInput input;
  auto append = [&](SegmentRef seg) {
    if (!input.ids.empty()) input.ids.push_back(semicolon);
    parts.emplace_back(seg, static_cast<int>(input.ids.size()));
    for (const auto& w : segment_words(example, seg))
      input.ids.push_back(vocab.id_or_unk(lower_ascii(w)));
  };
  append({'q', -1});
  if (mode == VcrMode::QuestionToAnswer) {
    append({'a', choice});
  } else {
    append({'a', gt_answer});
    append({'r', choice});
  }

  for (const auto& ref : example.references) {
    const SegmentRef seg = parse_segment(ref.segment);
    for (const auto& [part, offset] : parts) {
      if (part.kind != seg.kind || part.index != seg.index) continue;
      const auto& words = segment_words(example, seg);
      if (ref.token_pos < 0 || ref.token_pos >= static_cast<int>(words.size()))
        throw IndexError("reference position " + std::to_string(ref.token_pos) +
                         " outside segment " + ref.segment);
      input.references.emplace_back(offset + ref.token_pos,
                                    gt_row_for_object(example.gt_boxes, ref.object_index));
    }
  }
  return input;
}

VcrMetrics vcr_metrics_from_predictions(const std::vector<int>& predicted_answers,
                                        const std::vector<int>& predicted_rationales,
                                        const std::vector<int>& answer_labels,
                                        const std::vector<int>& rationale_labels) {
  const size_t n = predicted_answers.size();
  if (n == 0) throw ValueError("metrics need at least one example");
  if (predicted_rationales.size() != n || answer_labels.size() != n ||
      rationale_labels.size() != n)
    throw ValueError("prediction and label lists must have equal length");
  VcrMetrics m;
  m.count = static_cast<int>(n);
  for (size_t i = 0; i < n; ++i) {
    const bool qa_ok = predicted_answers[i] == answer_labels[i];
    const bool qar_ok = predicted_rationales[i] == rationale_labels[i];
    m.question_to_answer += qa_ok ? 1 : 0;
    m.answer_to_rationale += qar_ok ? 1 : 0;
    m.joint += (qa_ok && qar_ok) ? 1 : 0;
  }
  m.question_to_answer /= m.count;
  m.answer_to_rationale /= m.count;
  m.joint /= m.count;
  return m;
}

VcrMetrics evaluate_vcr(const std::vector<VcrExample>& dataset,
                        const ParameterStore<float>& params, const ModelConfig& cfg,
                        const Vocabulary& vocab, int region_budget) {
  if (dataset.empty()) throw ValueError("evaluate_vcr needs at least one example");
  auto argmax4 = [](const TensorF& row) {
    int best = 0;
    for (int j = 1; j < 4; ++j)
      if (row.at(0, j) > row.at(0, best)) best = j;
    return best;
  };
  std::vector<int> qa_pred, qar_pred, qa_true, qar_true;
  for (const VcrExample& ex : dataset) {
    ex.validate();
    Graph<float> g;
    qa_pred.push_back(argmax4(
        vcr_choice_logits(g, params, cfg, ex, VcrMode::QuestionToAnswer, vocab, region_budget)
            .tensor()));
    qar_pred.push_back(argmax4(vcr_choice_logits(g, params, cfg, ex,
                                                 VcrMode::QuestionAnswerToRationale, vocab,
                                                 region_budget)
                                   .tensor()));
    qa_true.push_back(ex.answer_label);
    qar_true.push_back(ex.rationale_label);
  }
  return vcr_metrics_from_predictions(qa_pred, qar_pred, qa_true, qar_true);
}

std::vector<VcrExample> load_vcr(const std::string& path, const Manifest& manifest) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open four-choice records: " + path);
  std::ifstream sidecar(path + ".bin", std::ios::binary);
  std::vector<VcrExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed record at " + where);
    VcrExample ex;
    try {
      ex.example_id = j.value("example_id", "line-" + std::to_string(lineno));
      ex.question = j.at("question_tokens").get<std::vector<std::string>>();
      const auto& answers = j.at("answers");
      const auto& rationales = j.at("rationales");
      if (answers.size() != 4 || rationales.size() != 4)
        throw ParseError("record needs exactly 4 answers and 4 rationales at " + where);
      for (size_t i = 0; i < 4; ++i) {
        ex.answers[i] = answers[i].get<std::vector<std::string>>();
        ex.rationales[i] = rationales[i].get<std::vector<std::string>>();
      }
      ex.answer_label = j.at("answer_label").get<int>();
      ex.rationale_label = j.at("rationale_label").get<int>();
      for (const auto& b : j.at("gt_boxes")) {
        const auto& box = b.at("box");
        if (!box.is_array() || box.size() != 4)
          throw ParseError("gt box must be [x1,y1,x2,y2] at " + where);
        ex.gt_boxes.push_back({{box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                                box[3].get<double>()},
                               b.at("object_index").get<int>()});
      }
      for (const auto& r : j.at("references"))
        ex.references.push_back({r.at("segment").get<std::string>(), r.at("token_pos").get<int>(),
                                 r.at("object_index").get<int>()});
      ex.regions =
          parse_regions_json(j, manifest.d_vis, where, sidecar.is_open() ? &sidecar : nullptr);
    } catch (const json::exception& e) {
      throw ParseError("malformed record at " + where + ": " + e.what());
    }
    ex.regions.validate(manifest.num_object_classes);
    ex.validate();
    out.push_back(std::move(ex));
  }
  return out;
}

void write_vcr(const std::vector<VcrExample>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write four-choice records: " + path);
  for (const VcrExample& ex : examples) {
    json j;
    j["example_id"] = ex.example_id;
    j["question_tokens"] = ex.question;
    j["answers"] = ex.answers;
    j["rationales"] = ex.rationales;
    j["answer_label"] = ex.answer_label;
    j["rationale_label"] = ex.rationale_label;
    json boxes = json::array();
    for (const auto& b : ex.gt_boxes) {
      json jb;
      jb["box"] = {b.box.x1, b.box.y1, b.box.x2, b.box.y2};
      jb["object_index"] = b.object_index;
      boxes.push_back(std::move(jb));
    }
    j["gt_boxes"] = std::move(boxes);
    json refs = json::array();
    for (const auto& r : ex.references) {
      json jr;
      jr["segment"] = r.segment;
      jr["token_pos"] = r.token_pos;
      jr["object_index"] = r.object_index;
      refs.push_back(std::move(jr));
    }
    j["references"] = std::move(refs);
    write_regions_json(ex.regions, j);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing four-choice records: " + path);
}

}  // namespace vlp
