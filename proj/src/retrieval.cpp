#include "vlp/retrieval.hpp"

#include <fstream>

#include <json.hpp>

#include "vlp/errors.hpp"

namespace vlp {

RetrievalNegatives sample_retrieval_negatives(const std::vector<PairRecord>& dataset,
                                              size_t anchor, int count, Rng& rng) {
  if (anchor >= dataset.size()) throw IndexError("anchor index outside dataset");
  if (count < 1) throw ValueError("need at least one negative per direction");
  const PairRecord& pos = dataset[anchor];
  std::vector<size_t> image_pool, caption_pool;
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (i == anchor) continue;
    if (dataset[i].image_id != pos.image_id) image_pool.push_back(i);
    if (dataset[i].caption != pos.caption) caption_pool.push_back(i);
  }
  if (image_pool.empty() || caption_pool.empty())
    throw ProtocolError("cannot sample retrieval negatives for pair " + pos.pair_id);
  RetrievalNegatives out;
  for (int i = 0; i < count; ++i) {
    out.image_negatives.push_back(image_pool[rng.uniform_int(image_pool.size())]);
    out.caption_negatives.push_back(caption_pool[rng.uniform_int(caption_pool.size())]);
  }
  return out;
}

float score_pair(const ParameterStore<float>& params, const ModelConfig& cfg,
                 const TokenSequence& tokens, const RegionSet& regions) {
  Graph<float> g;  // evaluation mode: dropout off, no masking
  return pair_match_score(g, params, cfg, tokens.ids, regions).item();
}

std::vector<RetrievalReportRow> evaluate_retrieval(const std::vector<PairRecord>& dataset,
                                                   const ParameterStore<float>& params,
                                                   const ModelConfig& cfg,
                                                   const Vocabulary& vocab,
                                                   const std::vector<int>& ks) {
  if (dataset.empty()) throw ValueError("cannot evaluate retrieval on an empty dataset");
  // Distinct images in first-appearance order.
  std::vector<size_t> image_rep;  // representative record per image
  std::vector<int> image_of_record(dataset.size(), -1);
  {
    std::map<std::string, int> seen;
    for (size_t i = 0; i < dataset.size(); ++i) {
      auto it = seen.find(dataset[i].image_id);
      if (it == seen.end()) {
        it = seen.emplace(dataset[i].image_id, static_cast<int>(image_rep.size())).first;
        image_rep.push_back(i);
      }
      image_of_record[i] = it->second;
    }
  }
  const int num_captions = static_cast<int>(dataset.size());
  const int num_images = static_cast<int>(image_rep.size());

  // One forward pass per caption-image combination.
  TensorD caption_by_image = TensorD::zeros({num_captions, num_images});
  for (int c = 0; c < num_captions; ++c) {
    const TokenSequence tokens = tokenize(dataset[static_cast<size_t>(c)].caption, vocab);
    for (int i = 0; i < num_images; ++i)
      caption_by_image.at(c, i) = static_cast<double>(
          score_pair(params, cfg, tokens, dataset[image_rep[static_cast<size_t>(i)]].regions));
  }

  ScoreMatrix text_to_image;
  text_to_image.scores = caption_by_image;
  text_to_image.truth.resize(static_cast<size_t>(num_captions));
  for (int c = 0; c < num_captions; ++c)
    text_to_image.truth[static_cast<size_t>(c)] = {image_of_record[static_cast<size_t>(c)]};

  ScoreMatrix image_to_text;
  image_to_text.scores = TensorD::zeros({num_images, num_captions});
  image_to_text.truth.resize(static_cast<size_t>(num_images));
  for (int i = 0; i < num_images; ++i)
    for (int c = 0; c < num_captions; ++c)
      image_to_text.scores.at(i, c) = caption_by_image.at(c, i);
  for (int c = 0; c < num_captions; ++c)
    image_to_text.truth[static_cast<size_t>(image_of_record[static_cast<size_t>(c)])].push_back(c);

  std::vector<RetrievalReportRow> rows;
  for (int k : ks) {
    rows.push_back({"text_to_image", k, recall_at_k(text_to_image, k), num_captions, num_images});
    rows.push_back({"image_to_text", k, recall_at_k(image_to_text, k), num_images, num_captions});
  }
  return rows;
}

void require_zero_shot_eligible(const std::string& checkpoint_task) {
  if (checkpoint_task == "pretrain" || checkpoint_task == "none") return;
  throw ProtocolError("zero-shot evaluation requires a pretraining checkpoint, got one from " +
                      checkpoint_task);
}

void write_retrieval_report(const std::vector<RetrievalReportRow>& rows,
                            const std::string& checkpoint_id, uint64_t seed,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write retrieval report: " + path);
  for (const auto& row : rows) {
    nlohmann::json j;
    j["direction"] = row.direction;
    j["K"] = row.k;
    j["recall"] = row.recall;
    j["num_queries"] = row.num_queries;
    j["num_candidates"] = row.num_candidates;
    j["checkpoint_id"] = checkpoint_id;
    j["seed"] = seed;
    out << j.dump() << '\n';
  }
}

}  // namespace vlp
