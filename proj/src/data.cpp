#include "vlp/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vlp/errors.hpp"
#include "vlp/sequence.hpp"
#include "vlp/vcr.hpp"

namespace vlp {

using nlohmann::json;

namespace {

namespace fs = std::filesystem;

std::string resolve_sibling(const std::string& base_file, const std::string& rel) {
  if (rel.empty() || fs::path(rel).is_absolute()) return rel;
  return (fs::path(base_file).parent_path() / rel).string();
}

json parse_json(const std::string& text, const std::string& where) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ParseError("malformed record at " + where);
  return j;
}

}  // namespace

Manifest Manifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json j = parse_json(buf.str(), path);
  Manifest m;
  try {
    m.corpus = j.value("corpus", std::string{});
    m.d_vis = j.at("d_vis").get<int>();
    m.num_object_classes = j.at("num_object_classes").get<int>();
    m.vocabulary = resolve_sibling(path, j.at("vocabulary").get<std::string>());
    m.records = resolve_sibling(path, j.value("records", std::string{}));
    m.holdout_records = resolve_sibling(path, j.value("holdout_records", std::string{}));
    m.vcr_records = resolve_sibling(path, j.value("vcr_records", std::string{}));
    m.record_count = j.value("record_count", int64_t{-1});
    m.region_cap = j.value("region_cap", 8);
    m.region_score_threshold = j.value("region_score_threshold", 0.2);
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path + ": " + e.what());
  }
  if (m.d_vis < 1 || m.num_object_classes < 1)
    throw ValueError("manifest must declare positive d_vis and num_object_classes");
  return m;
}

void Manifest::save(const std::string& path) const {
  json j;
  j["corpus"] = corpus;
  j["d_vis"] = d_vis;
  j["num_object_classes"] = num_object_classes;
  j["vocabulary"] = fs::path(vocabulary).filename().string();
  if (!records.empty()) j["records"] = fs::path(records).filename().string();
  if (!holdout_records.empty())
    j["holdout_records"] = fs::path(holdout_records).filename().string();
  if (!vcr_records.empty()) j["vcr_records"] = fs::path(vcr_records).filename().string();
  if (record_count >= 0) j["record_count"] = record_count;
  j["region_cap"] = region_cap;
  j["region_score_threshold"] = region_score_threshold;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << j.dump(2) << '\n';
}

RegionSet select_regions(const RegionSet& regions, int cap, double score_threshold) {
  const int n = regions.count();
  if (cap < 1) throw ValueError("region cap must be >= 1");
  std::vector<int> eligible;
  for (int i = 0; i < n; ++i)
    if (regions.scores[static_cast<size_t>(i)] > score_threshold) eligible.push_back(i);

  std::vector<int> keep;
  auto top_by_score = [&](std::vector<int> pool) {
    // Highest score first; ties prefer the earlier region.
    std::stable_sort(pool.begin(), pool.end(), [&](int a, int b) {
      return regions.scores[static_cast<size_t>(a)] > regions.scores[static_cast<size_t>(b)];
    });
    pool.resize(static_cast<size_t>(cap));
    std::sort(pool.begin(), pool.end());  // restore original order
    return pool;
  };
  if (static_cast<int>(eligible.size()) >= cap) {
    keep = top_by_score(std::move(eligible));
  } else if (n > cap) {
    std::vector<int> all(static_cast<size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    keep = top_by_score(std::move(all));
  } else {
    keep.resize(static_cast<size_t>(n));
    std::iota(keep.begin(), keep.end(), 0);
  }

  RegionSet out;
  out.width = regions.width;
  out.height = regions.height;
  const int64_t d = regions.features.cols();
  out.features = TensorF::zeros({static_cast<int64_t>(keep.size()), d});
  for (size_t r = 0; r < keep.size(); ++r) {
    const int src = keep[r];
    for (int64_t j = 0; j < d; ++j)
      out.features.at(static_cast<int64_t>(r), j) = regions.features.at(src, j);
    out.boxes.push_back(regions.boxes[static_cast<size_t>(src)]);
    out.label_ids.push_back(regions.label_ids[static_cast<size_t>(src)]);
    out.scores.push_back(regions.scores[static_cast<size_t>(src)]);
  }
  return out;
}

RegionSet parse_regions_json(const json& j, int d_vis, const std::string& where,
                             std::ifstream* sidecar) {
  RegionSet rs;
  const auto& size = j.at("image_size");
  if (!size.is_array() || size.size() != 2)
    throw ParseError("image_size must be [W,H] at " + where);
  rs.width = size[0].get<double>();
  rs.height = size[1].get<double>();
  const auto& regions = j.at("regions");
  if (!regions.is_array() || regions.empty())
    throw ParseError("record needs a nonempty regions array at " + where);
  const int n = static_cast<int>(regions.size());
  rs.features = TensorF::zeros({n, d_vis});
  for (int i = 0; i < n; ++i) {
    const auto& r = regions[static_cast<size_t>(i)];
    const auto& box = r.at("box");
    if (!box.is_array() || box.size() != 4) throw ParseError("box must be [x1,y1,x2,y2] at " + where);
    rs.boxes.push_back(
        {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()});
    rs.label_ids.push_back(r.at("label_id").get<int>());
    rs.scores.push_back(r.at("score").get<float>());
    if (r.contains("feature")) {
      const auto& f = r.at("feature");
      if (static_cast<int>(f.size()) != d_vis)
        throw ShapeError("feature width " + std::to_string(f.size()) + " does not match d_vis " +
                         std::to_string(d_vis) + " at " + where);
      for (int k = 0; k < d_vis; ++k) rs.features.at(i, k) = f[static_cast<size_t>(k)].get<float>();
    } else if (r.contains("feature_ref")) {
      if (!sidecar || !*sidecar)
        throw IoError("record uses feature_ref but no feature sidecar file exists at " + where);
      const auto& ref = r.at("feature_ref");
      const int64_t offset = ref.at("offset").get<int64_t>();
      const int64_t count = ref.at("count").get<int64_t>();
      if (count != d_vis)
        throw ShapeError("feature_ref count " + std::to_string(count) +
                         " does not match d_vis at " + where);
      sidecar->seekg(offset * static_cast<int64_t>(sizeof(float)));
      sidecar->read(reinterpret_cast<char*>(&rs.features.data[static_cast<size_t>(i) *
                                                              static_cast<size_t>(d_vis)]),
                    static_cast<std::streamsize>(sizeof(float)) * count);
      if (!*sidecar) throw IoError("feature sidecar read failed at " + where);
    } else {
      throw ParseError("region needs feature or feature_ref at " + where);
    }
  }
  return rs;
}

void write_regions_json(const RegionSet& rs, json& j) {
  j["image_size"] = {rs.width, rs.height};
  json regions = json::array();
  for (int i = 0; i < rs.count(); ++i) {
    const Box& b = rs.boxes[static_cast<size_t>(i)];
    json r;
    r["box"] = {b.x1, b.y1, b.x2, b.y2};
    r["label_id"] = rs.label_ids[static_cast<size_t>(i)];
    r["score"] = rs.scores[static_cast<size_t>(i)];
    std::vector<float> feature(static_cast<size_t>(rs.features.cols()));
    for (int64_t k = 0; k < rs.features.cols(); ++k)
      feature[static_cast<size_t>(k)] = rs.features.at(i, k);
    r["feature"] = feature;
    regions.push_back(std::move(r));
  }
  j["regions"] = std::move(regions);
}

std::vector<PairRecord> load_pairs(const std::string& path, const Manifest& manifest) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pair records: " + path);
  std::ifstream sidecar(path + ".bin", std::ios::binary);
  std::vector<PairRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json j = parse_json(line, where);
    PairRecord rec;
    try {
      rec.pair_id = j.at("pair_id").get<std::string>();
      rec.image_id = j.at("image_id").get<std::string>();
      rec.caption = j.at("caption").get<std::string>();
      rec.regions =
          parse_regions_json(j, manifest.d_vis, where, sidecar.is_open() ? &sidecar : nullptr);
    } catch (const json::exception& e) {
      throw ParseError("malformed record at " + where + ": " + e.what());
    }
    if (rec.caption.empty()) throw ParseError("empty caption at " + where);
    rec.regions =
        select_regions(rec.regions, manifest.region_cap, manifest.region_score_threshold);
    rec.regions.validate(manifest.num_object_classes);
    out.push_back(std::move(rec));
  }
  // record_count describes the main records split only.
  if (manifest.record_count >= 0 && path == manifest.records &&
      static_cast<int64_t>(out.size()) != manifest.record_count)
    throw ValueError("manifest declares " + std::to_string(manifest.record_count) +
                     " records but " + path + " holds " + std::to_string(out.size()));
  return out;
}

void write_pairs(const std::vector<PairRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pair records: " + path);
  for (const PairRecord& rec : records) {
    json j;
    j["pair_id"] = rec.pair_id;
    j["image_id"] = rec.image_id;
    j["caption"] = rec.caption;
    write_regions_json(rec.regions, j);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing pair records: " + path);
}

namespace {

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

std::vector<PairRecord> subsample_fraction(const std::vector<PairRecord>& records,
                                           double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValueError("fraction must be in [0,1]");
  if (fraction == 1.0) return records;
  std::vector<PairRecord> out;
  for (const auto& rec : records) {
    uint64_t h = fnv1a64(rec.pair_id);
    const double u = static_cast<double>(splitmix64(h) >> 11) * 0x1.0p-53;
    if (u < fraction) out.push_back(rec);
  }
  return out;
}

void SynthConfig::validate() const {
  if (num_concepts < 2) throw ValueError("synthetic corpus needs at least 2 concepts");
  if (d_vis < 1) throw ValueError("d_vis must be >= 1");
  if (pairs < 1) throw ValueError("pairs must be >= 1");
  if (holdout_pairs < 0 || vcr_examples < 0) throw ValueError("split sizes must be >= 0");
  if (min_regions < 1 || max_regions < min_regions)
    throw ValueError("regions_per_image range is invalid");
  if (max_regions > num_concepts)
    throw ValueError("max_regions cannot exceed num_concepts (regions are distinct concepts)");
  if (image_width <= 0 || image_height <= 0) throw ValueError("image size must be positive");
  if (!(feature_noise >= 0)) throw ValueError("feature_noise must be >= 0");
}

namespace {

const std::vector<std::string>& concept_name_pool() {
  static const std::vector<std::string> kPool = {
      "dog",   "cat",   "car",    "tree",  "ball",  "cup",    "bird",  "fish",
      "book",  "lamp",  "chair",  "shoe",  "house", "boat",   "horse", "clock",
      "apple", "train", "flower", "table", "bear",  "plane",  "drum",  "kite",
      "spoon", "brush", "wheel",  "stone", "cloud", "bridge", "piano", "glove"};
  return kPool;
}

const std::vector<std::string>& joiner_pool() {
  static const std::vector<std::string> kJoiners = {"near", "beside", "under", "behind"};
  return kJoiners;
}

// All distinct sorted concept combinations with sizes in [lo,hi].
std::vector<std::vector<int>> enumerate_combos(int num_concepts, int lo, int hi) {
  std::vector<std::vector<int>> combos;
  std::vector<int> current;
  auto recurse = [&](auto&& self, int start) -> void {
    const int size = static_cast<int>(current.size());
    if (size >= lo && size <= hi) combos.push_back(current);
    if (size == hi) return;
    for (int c = start; c < num_concepts; ++c) {
      current.push_back(c);
      self(self, c + 1);
      current.pop_back();
    }
  };
  recurse(recurse, 0);
  return combos;
}

PairRecord make_synth_pair(const SynthConfig& cfg, const std::vector<int>& combo,
                           const std::vector<std::string>& names, const TensorF& prototypes,
                           const std::string& id_prefix, int index, Rng& rng) {
  PairRecord rec;
  rec.pair_id = id_prefix + "-" + std::to_string(index);
  rec.image_id = "img-" + id_prefix + "-" + std::to_string(index);
  const auto& joiners = joiner_pool();
  std::string caption;
  for (size_t i = 0; i < combo.size(); ++i) {
    if (i > 0)
      caption += " " + joiners[rng.uniform_int(joiners.size())] + " ";
    caption += "a " + names[static_cast<size_t>(combo[i])];
  }
  rec.caption = caption;

  RegionSet& rs = rec.regions;
  rs.width = cfg.image_width;
  rs.height = cfg.image_height;
  const int n = static_cast<int>(combo.size());
  rs.features = TensorF::zeros({n, cfg.d_vis});
  // Region order is a random permutation of the combo: region position
  // carries no information about caption order.
  std::vector<int> order(combo.begin(), combo.end());
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  for (int i = 0; i < n; ++i) {
    const int concept_id = order[static_cast<size_t>(i)];
    for (int k = 0; k < cfg.d_vis; ++k)
      rs.features.at(i, k) = prototypes.at(concept_id, k) +
                             static_cast<float>(rng.normal(0.0, cfg.feature_noise));
    const double w = rng.uniform(0.15, 0.45) * cfg.image_width;
    const double h = rng.uniform(0.15, 0.45) * cfg.image_height;
    const double x1 = rng.uniform(0.0, cfg.image_width - w);
    const double y1 = rng.uniform(0.0, cfg.image_height - h);
    rs.boxes.push_back({x1, y1, x1 + w, y1 + h});
    rs.label_ids.push_back(concept_id);
    rs.scores.push_back(static_cast<float>(rng.uniform(0.35, 1.0)));
  }
  return rec;
}

}  // namespace

SynthCorpus generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SynthCorpus corpus;

  const auto& pool = concept_name_pool();
  for (int c = 0; c < cfg.num_concepts; ++c)
    corpus.concept_names.push_back(c < static_cast<int>(pool.size())
                                       ? pool[static_cast<size_t>(c)]
                                       : "object" + std::to_string(c));
  std::vector<std::string> words = {"a"};
  for (const auto& j : joiner_pool()) words.push_back(j);
  for (const auto& n : corpus.concept_names) words.push_back(n);
  // Four-choice examples reuse the corpus vocabulary, so it always carries
  // the question template words and the ';' separator.
  for (const char* w : {"what", "is", "this", "thing", "it", ";"}) words.push_back(w);
  corpus.vocab = Vocabulary::from_words(words);

  Rng proto_rng = Rng::derive(cfg.seed, 1);
  corpus.prototypes = TensorF::zeros({cfg.num_concepts, cfg.d_vis});
  for (auto& v : corpus.prototypes.data) v = static_cast<float>(proto_rng.normal(0.0, 1.0));

  std::vector<std::vector<int>> combos =
      enumerate_combos(cfg.num_concepts, cfg.min_regions, cfg.max_regions);
  Rng combo_rng = Rng::derive(cfg.seed, 2);
  for (size_t i = combos.size(); i > 1; --i)
    std::swap(combos[i - 1], combos[combo_rng.uniform_int(i)]);
  if (cfg.holdout_pairs > static_cast<int>(combos.size()) / 2)
    throw ValueError("holdout_pairs too large: only " + std::to_string(combos.size()) +
                     " distinct concept combinations exist");
  const size_t holdout_combos = static_cast<size_t>(cfg.holdout_pairs);
  std::vector<std::vector<int>> train_combos(combos.begin() + static_cast<int64_t>(holdout_combos),
                                             combos.end());

  Rng train_rng = Rng::derive(cfg.seed, 3);
  for (int i = 0; i < cfg.pairs; ++i)
    corpus.train.push_back(make_synth_pair(cfg,
                                           train_combos[static_cast<size_t>(i) %
                                                        train_combos.size()],
                                           corpus.concept_names, corpus.prototypes, "train", i,
                                           train_rng));
  Rng holdout_rng = Rng::derive(cfg.seed, 4);
  for (int i = 0; i < cfg.holdout_pairs; ++i)
    corpus.holdout.push_back(make_synth_pair(cfg, combos[static_cast<size_t>(i)],
                                             corpus.concept_names, corpus.prototypes, "holdout",
                                             i, holdout_rng));
  return corpus;
}

std::vector<VcrExample> generate_synthetic_vcr(const SynthConfig& cfg) {
  cfg.validate();
  if (cfg.vcr_examples == 0) return {};
  if (cfg.num_concepts < cfg.max_regions + 3)
    throw ValueError(
        "four-choice generation needs max_regions + 3 concepts so three "
        "distractors are always absent from the image");

  const auto& pool = concept_name_pool();
  std::vector<std::string> names;
  for (int c = 0; c < cfg.num_concepts; ++c)
    names.push_back(c < static_cast<int>(pool.size()) ? pool[static_cast<size_t>(c)]
                                                      : "object" + std::to_string(c));
  Rng proto_rng = Rng::derive(cfg.seed, 1);
  TensorF prototypes = TensorF::zeros({cfg.num_concepts, cfg.d_vis});
  for (auto& v : prototypes.data) v = static_cast<float>(proto_rng.normal(0.0, 1.0));

  std::vector<std::vector<int>> combos =
      enumerate_combos(cfg.num_concepts, cfg.min_regions, cfg.max_regions);
  Rng rng = Rng::derive(cfg.seed, 5);
  std::vector<VcrExample> out;
  for (int i = 0; i < cfg.vcr_examples; ++i) {
    const auto& combo = combos[static_cast<size_t>(i) % combos.size()];
    PairRecord rec = make_synth_pair(cfg, combo, names, prototypes, "vcr", i, rng);

    VcrExample ex;
    ex.example_id = "vcr-" + std::to_string(i);
    ex.regions = rec.regions;
    const int target = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(rec.regions.count())));
    const int target_concept = rec.regions.label_ids[static_cast<size_t>(target)];
    ex.question = {"what", "is", "this", "thing"};
    ex.gt_boxes.push_back({rec.regions.boxes[static_cast<size_t>(target)], 0});
    ex.references.push_back({"q", 2, 0});  // "this" points at the target object

    // Wrong choices name concepts absent from the image, so the injected
    // region feature fully determines the right answer.
    std::vector<int> absent;
    for (int c = 0; c < cfg.num_concepts; ++c)
      if (std::find(combo.begin(), combo.end(), c) == combo.end()) absent.push_back(c);
    auto draw_distractors = [&]() {
      std::vector<int> shuffled = absent;
      for (size_t k = shuffled.size(); k > 1; --k)
        std::swap(shuffled[k - 1], shuffled[rng.uniform_int(k)]);
      shuffled.resize(3);
      return shuffled;
    };

    // Cycle the correct slots so labels stay exactly balanced.
    ex.answer_label = i % 4;
    ex.rationale_label = (i / 4) % 4;
    const std::vector<int> a_distract = draw_distractors();
    const std::vector<int> r_distract = draw_distractors();
    size_t ai = 0;
    size_t ri = 0;
    for (int slot = 0; slot < 4; ++slot) {
      const int a = slot == ex.answer_label ? target_concept : a_distract[ai++];
      ex.answers[static_cast<size_t>(slot)] = {names[static_cast<size_t>(a)]};
      const int r = slot == ex.rationale_label ? target_concept : r_distract[ri++];
      ex.rationales[static_cast<size_t>(slot)] = {"it", "is", "a", names[static_cast<size_t>(r)]};
    }
    out.push_back(std::move(ex));
  }
  return out;
}

int assembled_length(int num_tokens, int num_regions, int max_seq_len) {
  const TruncationResult r = truncation_budget(num_tokens, num_regions, max_seq_len);
  return 2 + r.text_keep + r.region_keep;
}

std::vector<Batch> make_batches(const std::vector<int>& assembled_lengths, int batch_size,
                                Rng& rng, bool shuffle) {
  if (batch_size < 1) throw ValueError("batch_size must be >= 1");
  std::vector<size_t> order(assembled_lengths.size());
  std::iota(order.begin(), order.end(), size_t{0});
  if (shuffle)
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    Batch b;
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    int longest = 0;
    for (size_t i = start; i < end; ++i) {
      b.indices.push_back(order[i]);
      longest = std::max(longest, assembled_lengths[order[i]]);
    }
    b.pad_to = longest;
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace vlp
