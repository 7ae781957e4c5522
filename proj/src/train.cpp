#include "vlp/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>

#include "vlp/errors.hpp"
#include "vlp/pretrain.hpp"
#include "vlp/retrieval.hpp"
#include "vlp/schedule.hpp"

namespace vlp {

namespace {

namespace fs = std::filesystem;

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

std::string primary_component(TaskKind task) {
  switch (task) {
    case TaskKind::Pretrain:
      return "joint";
    case TaskKind::FinetuneRetrieval:
      return "triplet";
    default:
      return "choice";
  }
}

}  // namespace

ModelConfig model_config_for(const TrainConfig& cfg, const TrainData& data) {
  ModelConfig model;
  model.encoder = cfg.encoder;
  model.vocab_size = data.vocab.size();
  model.d_vis = data.d_vis;
  model.num_object_classes = data.num_object_classes;
  model.validate();
  return model;
}

TrainResult train(const TrainConfig& cfg, const TrainData& data, const EpochCallback& on_epoch) {
  cfg.validate();
  const ModelConfig model = model_config_for(cfg, data);
  const bool uses_pairs = cfg.task != TaskKind::FinetuneVcr;
  const size_t n = uses_pairs ? data.pairs.size() : data.vcr.size();
  if (n == 0)
    throw ValueError("no training examples for task " + task_name(cfg.task));
  if (uses_pairs && n < 2 && cfg.task != TaskKind::Pretrain)
    throw ValueError("retrieval fine-tuning needs at least 2 pairs for negatives");

  TrainResult result;
  result.model = model;
  if (cfg.init_checkpoint.empty()) {
    result.params = init_params<float>(model, cfg.seed);
  } else {
    LoadedCheckpoint loaded = load_checkpoint(cfg.init_checkpoint);
    require_model_match(loaded.meta, model);
    result.params = std::move(loaded.params);
    result.params.set_step_count(0);  // fresh optimizer state per phase
  }

  // Assembled lengths drive batch padding; corrupted pairs may still run
  // longer than the pad, which build_layout simply accommodates.
  std::vector<int> lengths;
  lengths.reserve(n);
  if (uses_pairs) {
    for (const PairRecord& rec : data.pairs)
      lengths.push_back(assembled_length(
          static_cast<int>(tokenize(rec.caption, data.vocab).ids.size()), rec.regions.count(),
          cfg.encoder.max_seq_len));
  } else {
    lengths.assign(n, 0);  // four-choice inputs are assembled per choice
  }

  const int64_t micros_per_epoch = ceil_div(static_cast<int64_t>(n), cfg.batch_size);
  const int64_t steps_per_epoch = ceil_div(micros_per_epoch, cfg.accumulation_steps);
  const int64_t total_steps = steps_per_epoch * cfg.epochs;

  Rng shuffle_rng = Rng::derive(cfg.seed, 10);
  Rng sample_rng = Rng::derive(cfg.seed, 11);
  Rng dropout_rng = Rng::derive(cfg.seed, 12);

  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
  const auto run_start = std::chrono::steady_clock::now();

  GradTable<float> acc = result.params.zero_grads();
  int micros_in_window = 0;
  std::map<std::string, double> window_sums;
  int64_t window_examples = 0;
  int64_t applied = 0;

  auto apply_step = [&]() {
    ++applied;
    const double lr =
        lr_schedule(applied, total_steps, cfg.base_lr, cfg.warmup_fraction, cfg.decay);
    // The applied step is the mean micro-batch gradient: every window is
    // divided by accumulation_steps, including a short epoch-end flush.
    scale_grads(acc, static_cast<float>(1.0 / cfg.accumulation_steps));
    AdamConfig adam;
    adam.lr = lr;
    result.params.adam_step(acc, adam);
    StepLog log;
    log.step = applied;
    log.lr = lr;
    for (const auto& [key, sum] : window_sums)
      log.components[key] = sum / static_cast<double>(window_examples);
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
    result.log.steps.push_back(std::move(log));
    acc = result.params.zero_grads();
    micros_in_window = 0;
    window_sums.clear();
    window_examples = 0;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<Batch> batches =
        make_batches(lengths, cfg.batch_size, shuffle_rng, /*shuffle=*/true);
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      Graph<float> g;
      g.set_training(true, &dropout_rng);

      const std::string where = "at optimizer step " + std::to_string(applied + 1) +
                                " (micro-batch " + std::to_string(bi + 1) + " of epoch " +
                                std::to_string(epoch + 1) + ")";
      std::vector<Value<float>> example_losses;
      std::map<std::string, double> batch_sums;
      try {
        for (size_t idx : batch.indices) {
          switch (cfg.task) {
            case TaskKind::Pretrain: {
              const VlmPair pair = sample_vlm_pair(data.pairs, idx, data.vocab, sample_rng);
              const PreparedExample ex =
                  prepare_pretrain_example(pair, model, cfg.mask, sample_rng, batch.pad_to);
              JointResult<float> jr = joint_loss(g, result.params, model, ex, cfg.weights);
              batch_sums["vlm"] += jr.vlm;
              if (ex.y == 1) {
                batch_sums["mlm"] += jr.mlm;
                batch_sums["moc"] += jr.moc;
              }
              batch_sums["joint"] += static_cast<double>(jr.loss.item());
              example_losses.push_back(jr.loss);
              break;
            }
            case TaskKind::FinetuneRetrieval: {
              const RetrievalNegatives negs = sample_retrieval_negatives(
                  data.pairs, idx, cfg.retrieval.negatives_per_positive, sample_rng);
              auto loss = retrieval_example_loss(g, result.params, model, data.pairs, idx, negs,
                                                 data.vocab, cfg.retrieval);
              batch_sums["triplet"] += static_cast<double>(loss.item());
              example_losses.push_back(loss);
              break;
            }
            case TaskKind::FinetuneVcr: {
              auto loss = vcr_example_loss(g, result.params, model, data.vcr[idx], data.vocab,
                                           cfg.vcr_region_budget);
              batch_sums["choice"] += static_cast<double>(loss.item());
              example_losses.push_back(loss);
              break;
            }
          }
        }
      } catch (const NumericError& err) {
        // Graph ops reject non-finite activations mid-forward; keep the step
        // context so the abort still names where training blew up.
        throw NumericError("non-finite " + primary_component(cfg.task) + " loss " + where + ": " +
                           err.what());
      }
      Value<float> batch_loss = example_losses[0];
      for (size_t i = 1; i < example_losses.size(); ++i)
        batch_loss = add(batch_loss, example_losses[i]);
      batch_loss = scale(batch_loss, 1.0f / static_cast<float>(example_losses.size()));

      const double loss_value = static_cast<double>(batch_loss.item());
      if (!std::isfinite(loss_value)) {
        std::string component = primary_component(cfg.task);
        for (const auto& [key, sum] : batch_sums)
          if (!std::isfinite(sum)) component = key;
        throw NumericError("non-finite " + component + " loss " + where);
      }

      g.backward(batch_loss);
      result.params.collect_grads(g, acc);
      for (const auto& [key, sum] : batch_sums) window_sums[key] += sum;
      window_examples += static_cast<int64_t>(batch.indices.size());
      ++micros_in_window;
      if (micros_in_window == cfg.accumulation_steps) apply_step();
    }
    if (micros_in_window > 0) apply_step();  // epoch-end flush

    if (!cfg.out_dir.empty()) {
      CheckpointMeta meta;
      meta.task = task_name(cfg.task);
      meta.step_count = applied;
      meta.model = model;
      save_checkpoint(result.params, meta,
                      (fs::path(cfg.out_dir) / ("epoch-" + std::to_string(epoch + 1) + ".ckpt"))
                          .string());
    }
    if (on_epoch && on_epoch(epoch, result.params)) break;
  }

  result.optimizer_steps = applied;
  if (!cfg.out_dir.empty()) {
    CheckpointMeta meta;
    meta.task = task_name(cfg.task);
    meta.step_count = applied;
    meta.model = model;
    save_checkpoint(result.params, meta, (fs::path(cfg.out_dir) / "final.ckpt").string());
  }
  return result;
}

}  // namespace vlp
