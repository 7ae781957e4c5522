#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlp/regions.hpp"
#include "vlp/rng.hpp"
#include "vlp/vocab.hpp"

namespace vlp {

// One image-caption pair with its precomputed detector regions.
struct PairRecord {
  std::string pair_id;
  std::string image_id;
  std::string caption;
  RegionSet regions;
};

// Corpus-level declaration shared by every consumer of a record file.
struct Manifest {
  std::string corpus;
  int d_vis = 0;
  int num_object_classes = 0;
  std::string vocabulary;  // path, resolved relative to the manifest
  std::string records;     // path to the pair-record file
  std::string holdout_records;  // optional second split
  std::string vcr_records;      // optional VCR examples
  int64_t record_count = -1;    // -1 = not declared
  int region_cap = 8;
  double region_score_threshold = 0.2;

  static Manifest load(const std::string& path);
  void save(const std::string& path) const;
};

// Score-based region selection: keep regions above the threshold up to the
// cap; if fewer than cap qualify, fall back to top-cap by score overall.
// Survivors keep their original relative order; score ties prefer the
// earlier region.
RegionSet select_regions(const RegionSet& regions, int cap, double score_threshold);

std::vector<PairRecord> load_pairs(const std::string& path, const Manifest& manifest);
void write_pairs(const std::vector<PairRecord>& records, const std::string& path);

// image_size + regions fields shared by every record kind. `where` names
// the source line for errors; `sidecar` backs feature_ref entries.
RegionSet parse_regions_json(const nlohmann::json& record, int d_vis, const std::string& where,
                             std::ifstream* sidecar);
void write_regions_json(const RegionSet& regions, nlohmann::json& record);

// Deterministic subsample by hash of pair_id; fraction in [0,1].
std::vector<PairRecord> subsample_fraction(const std::vector<PairRecord>& records,
                                           double fraction);

// Synthetic concept-grounded corpus: each image shows 2..5 latent concepts,
// each concept has a fixed feature prototype, captions name the concepts.
struct SynthConfig {
  int num_concepts = 8;
  int d_vis = 16;
  int pairs = 32;
  int holdout_pairs = 0;  // built from concept combinations unseen in train
  int vcr_examples = 0;
  int min_regions = 2;
  int max_regions = 5;
  double feature_noise = 0.02;
  double image_width = 640;
  double image_height = 480;
  uint64_t seed = 1;

  void validate() const;
};

struct SynthCorpus {
  std::vector<PairRecord> train;
  std::vector<PairRecord> holdout;
  Vocabulary vocab;
  std::vector<std::string> concept_names;
  TensorF prototypes;  // [num_concepts, d_vis]
};

SynthCorpus generate_synthetic(const SynthConfig& cfg);

// Seeded shuffle into batches; pad_to is the longest assembled length in
// the batch given the truncation policy.
struct Batch {
  std::vector<size_t> indices;
  int pad_to = 0;
};

std::vector<Batch> make_batches(const std::vector<int>& assembled_lengths, int batch_size,
                                Rng& rng, bool shuffle);

// Assembled sequence length of one record after truncation.
int assembled_length(int num_tokens, int num_regions, int max_seq_len);

}  // namespace vlp
