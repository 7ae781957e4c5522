#pragma once

#include <cstdint>
#include <string>

#include "vlp/model.hpp"
#include "vlp/param_store.hpp"

namespace vlp {

// Text header (format version, task provenance, model hyperparameters,
// then one `param <name> <rank> <dims...> <offset>` line per tensor)
// followed by the concatenated raw little-endian 32-bit floats. Adam
// moments are deliberately not serialized.
struct CheckpointMeta {
  int format_version = 1;
  std::string task = "none";  // none | pretrain | finetune-retrieval | finetune-vcr
  int64_t step_count = 0;
  ModelConfig model;
};

void save_checkpoint(const ParameterStore<float>& params, const CheckpointMeta& meta,
                     const std::string& path);

struct LoadedCheckpoint {
  ParameterStore<float> params;
  CheckpointMeta meta;
};

// Validates the magic, version, and that the stored tensors exactly match
// the parameter set implied by the header's model hyperparameters.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Rejects a checkpoint whose hyperparameters differ from the configured
// model.
void require_model_match(const CheckpointMeta& meta, const ModelConfig& expected);

}  // namespace vlp
