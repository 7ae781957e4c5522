#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vlp/data.hpp"
#include "vlp/encoder.hpp"
#include "vlp/pretrain.hpp"
#include "vlp/retrieval.hpp"
#include "vlp/schedule.hpp"

namespace vlp {

// Flat `key value` file (an optional '=' between them is allowed), '#'
// starts a comment. Environment variables are never consulted: a run is a
// function of its files and flags only.
class ConfigFile {
 public:
  static ConfigFile load(const std::string& path);
  static ConfigFile parse(const std::string& text, const std::string& where);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  uint64_t get_uint(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Keys present in the file but never read; catches typos.
  std::vector<std::string> unused_keys() const;

 private:
  const std::string& raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
  std::string where_;
};

enum class TaskKind { Pretrain, FinetuneRetrieval, FinetuneVcr };

std::string task_name(TaskKind task);
TaskKind task_from_name(const std::string& name);

struct TrainConfig {
  TaskKind task = TaskKind::Pretrain;
  double base_lr = 1e-4;
  int epochs = 10;
  int batch_size = 8;
  int accumulation_steps = 1;
  double warmup_fraction = 0.10;
  DecayStyle decay = DecayStyle::LinearToZero;
  uint64_t seed = 1;
  std::string init_checkpoint;  // empty = fresh initialization
  std::string out_dir;          // empty = no checkpoints written
  EncoderConfig encoder;
  JointWeights weights;
  PretrainOptions mask;
  RetrievalConfig retrieval;
  int vcr_region_budget = 8;

  void validate() const;
};

// Overrides every TrainConfig and EncoderConfig field present in the file;
// unknown keys surface through cfg.unused_keys() at the call site.
void apply_config(TrainConfig& cfg, const ConfigFile& file);

// synth.* keys; used by corpus generation.
SynthConfig synth_config(const ConfigFile& file);

}  // namespace vlp
