#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vlp/checkpoint.hpp"
#include "vlp/config.hpp"
#include "vlp/data.hpp"
#include "vlp/vcr.hpp"

namespace vlp {

struct StepLog {
  int64_t step = 0;  // optimizer step, 1-based, strictly increasing
  double lr = 0;
  std::map<std::string, double> components;  // per-example means over the window
  double wall_seconds = 0;
};

struct RunLog {
  std::vector<StepLog> steps;
};

// Everything a task can train on; pairs feed pretraining and retrieval,
// vcr feeds the four-choice task.
struct TrainData {
  std::vector<PairRecord> pairs;
  std::vector<VcrExample> vcr;
  Vocabulary vocab;
  int d_vis = 0;
  int num_object_classes = 0;
};

struct TrainResult {
  ParameterStore<float> params;
  ModelConfig model;
  RunLog log;
  int64_t optimizer_steps = 0;
};

ModelConfig model_config_for(const TrainConfig& cfg, const TrainData& data);

// Called after each epoch; return true to stop early. The final checkpoint
// is still written.
using EpochCallback = std::function<bool(int epoch, const ParameterStore<float>& params)>;

// Seeded, deterministic loop: gradients accumulate over accumulation_steps
// micro-batches (scaled so the applied step is their mean), one Adam step
// per boundary at the scheduled rate, a checkpoint per epoch. A non-finite
// loss aborts with the step and component named.
TrainResult train(const TrainConfig& cfg, const TrainData& data,
                  const EpochCallback& on_epoch = {});

}  // namespace vlp
