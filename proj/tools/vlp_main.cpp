#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vlp/config.hpp"
#include "vlp/grad_targets.hpp"
#include "vlp/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

vlp::TrainData load_manifest_data(const std::string& manifest_path, bool want_pairs,
                                  bool want_vcr, bool holdout_split) {
  const vlp::Manifest m = vlp::Manifest::load(manifest_path);
  vlp::TrainData td;
  td.vocab = vlp::Vocabulary::load(m.vocabulary);
  td.d_vis = m.d_vis;
  td.num_object_classes = m.num_object_classes;
  if (want_pairs) {
    const std::string& records = holdout_split ? m.holdout_records : m.records;
    if (records.empty())
      throw vlp::ValueError(manifest_path + " does not declare the requested record split");
    td.pairs = vlp::load_pairs(records, m);
  }
  if (want_vcr) {
    if (m.vcr_records.empty())
      throw vlp::ValueError(manifest_path + " does not declare vcr_records");
    td.vcr = vlp::load_vcr(m.vcr_records, m);
  }
  return td;
}

void warn_unused(const vlp::ConfigFile& file) {
  for (const auto& key : file.unused_keys())
    std::cerr << "warning: unused config key '" << key << "'\n";
}

void print_train_summary(const vlp::TrainConfig& cfg, const vlp::TrainResult& result) {
  std::cout << vlp::task_name(cfg.task) << ": " << result.optimizer_steps
            << " optimizer steps";
  if (!result.log.steps.empty()) {
    std::cout << ", final losses {";
    bool first = true;
    for (const auto& [key, value] : result.log.steps.back().components) {
      std::cout << (first ? "" : ", ") << key << ": " << value;
      first = false;
    }
    std::cout << "}";
  }
  if (!cfg.out_dir.empty())
    std::cout << ", checkpoint " << (fs::path(cfg.out_dir) / "final.ckpt").string();
  std::cout << '\n';
}

int run_pretrain(const std::string& data, const std::string& config, const std::string& out,
                 double fraction, uint64_t seed, bool seed_given) {
  const vlp::ConfigFile file = vlp::ConfigFile::load(config);
  vlp::TrainConfig tc;
  tc.task = vlp::TaskKind::Pretrain;
  vlp::apply_config(tc, file);
  if (seed_given) tc.seed = seed;
  tc.out_dir = out;

  vlp::TrainData td;
  if (data == "synthetic") {
    const vlp::SynthConfig sc = vlp::synth_config(file);
    vlp::SynthCorpus corpus = vlp::generate_synthetic(sc);
    td.pairs = std::move(corpus.train);
    td.vocab = std::move(corpus.vocab);
    td.d_vis = sc.d_vis;
    td.num_object_classes = sc.num_concepts;
  } else {
    td = load_manifest_data(data, /*want_pairs=*/true, /*want_vcr=*/false, false);
  }
  warn_unused(file);
  if (fraction < 1.0) {
    td.pairs = vlp::subsample_fraction(td.pairs, fraction);
    std::cout << "subsampled to " << td.pairs.size() << " pairs (fraction " << fraction
              << ")\n";
  }
  const vlp::TrainResult result = vlp::train(tc, td);
  print_train_summary(tc, result);
  return 0;
}

int run_finetune(vlp::TaskKind task, const std::string& data, const std::string& init,
                 const std::string& out) {
  const vlp::LoadedCheckpoint ck = vlp::load_checkpoint(init);
  vlp::TrainConfig tc;
  tc.task = task;
  tc.encoder = ck.meta.model.encoder;
  tc.init_checkpoint = init;
  tc.out_dir = out;
  vlp::TrainData td;
  if (task == vlp::TaskKind::FinetuneRetrieval) {
    tc.base_lr = tc.retrieval.learning_rate;
    tc.epochs = 10;
    tc.batch_size = 8;
    td = load_manifest_data(data, /*want_pairs=*/true, /*want_vcr=*/false, false);
  } else {
    tc.base_lr = 3e-5;
    tc.epochs = 20;
    tc.batch_size = 48;
    td = load_manifest_data(data, /*want_pairs=*/false, /*want_vcr=*/true, false);
  }
  const vlp::TrainResult result = vlp::train(tc, td);
  print_train_summary(tc, result);
  return 0;
}

int run_eval_retrieval(const std::string& data, const std::string& ckpt, bool zero_shot) {
  const vlp::LoadedCheckpoint ck = vlp::load_checkpoint(ckpt);
  if (zero_shot) vlp::require_zero_shot_eligible(ck.meta.task);
  const vlp::TrainData td =
      load_manifest_data(data, /*want_pairs=*/true, /*want_vcr=*/false, zero_shot);
  vlp::ModelConfig expected = ck.meta.model;
  expected.vocab_size = td.vocab.size();
  expected.d_vis = td.d_vis;
  expected.num_object_classes = td.num_object_classes;
  vlp::require_model_match(ck.meta, expected);

  const auto rows =
      vlp::evaluate_retrieval(td.pairs, ck.params, ck.meta.model, td.vocab, {1, 5, 10});
  for (const auto& row : rows) {
    json j;
    j["direction"] = row.direction;
    j["K"] = row.k;
    j["recall"] = row.recall;
    j["num_queries"] = row.num_queries;
    j["num_candidates"] = row.num_candidates;
    j["checkpoint_id"] = fs::path(ckpt).filename().string();
    j["zero_shot"] = zero_shot;
    std::cout << j.dump() << '\n';
  }
  return 0;
}

int run_eval_vcr(const std::string& data, const std::string& ckpt) {
  const vlp::LoadedCheckpoint ck = vlp::load_checkpoint(ckpt);
  const vlp::Manifest m = vlp::Manifest::load(data);
  const vlp::TrainData td =
      load_manifest_data(data, /*want_pairs=*/false, /*want_vcr=*/true, false);
  vlp::ModelConfig expected = ck.meta.model;
  expected.vocab_size = td.vocab.size();
  expected.d_vis = td.d_vis;
  expected.num_object_classes = td.num_object_classes;
  vlp::require_model_match(ck.meta, expected);

  const vlp::VcrMetrics metrics =
      vlp::evaluate_vcr(td.vcr, ck.params, ck.meta.model, td.vocab, m.region_cap);
  json j;
  j["question_to_answer"] = metrics.question_to_answer;
  j["answer_to_rationale"] = metrics.answer_to_rationale;
  j["joint"] = metrics.joint;
  j["count"] = metrics.count;
  j["checkpoint_id"] = fs::path(ckpt).filename().string();
  std::cout << j.dump() << '\n';
  return 0;
}

int run_gen_synthetic(const std::string& config, const std::string& out) {
  const vlp::ConfigFile file = vlp::ConfigFile::load(config);
  const vlp::SynthConfig sc = vlp::synth_config(file);
  warn_unused(file);
  fs::create_directories(out);

  vlp::SynthCorpus corpus = vlp::generate_synthetic(sc);
  vlp::write_pairs(corpus.train, (fs::path(out) / "records.jsonl").string());
  corpus.vocab.save((fs::path(out) / "vocab.txt").string());

  vlp::Manifest m;
  m.corpus = "synthetic";
  m.d_vis = sc.d_vis;
  m.num_object_classes = sc.num_concepts;
  m.vocabulary = "vocab.txt";
  m.records = "records.jsonl";
  m.record_count = static_cast<int64_t>(corpus.train.size());
  m.region_cap = std::max(8, sc.max_regions);
  if (!corpus.holdout.empty()) {
    vlp::write_pairs(corpus.holdout, (fs::path(out) / "holdout.jsonl").string());
    m.holdout_records = "holdout.jsonl";
  }
  if (sc.vcr_examples > 0) {
    vlp::write_vcr(vlp::generate_synthetic_vcr(sc), (fs::path(out) / "vcr.jsonl").string());
    m.vcr_records = "vcr.jsonl";
  }
  m.save((fs::path(out) / "manifest.json").string());
  std::cout << "wrote " << corpus.train.size() << " train pairs, " << corpus.holdout.size()
            << " holdout pairs, " << sc.vcr_examples << " four-choice examples to " << out
            << '\n';
  return 0;
}

int run_grad_check(const std::string& loss, uint64_t seed) {
  constexpr double kTolerance = 1e-4;
  std::vector<std::string> losses;
  if (loss == "all")
    losses = vlp::grad_check_losses();
  else
    losses.push_back(loss);
  bool ok = true;
  for (const auto& name : losses) {
    const vlp::GradCheckReport report = vlp::run_loss_grad_check(name, seed);
    const bool pass = report.max_rel_err <= kTolerance;
    ok = ok && pass;
    std::cout << name << ": max relative error " << report.max_rel_err << " over "
              << report.checked << " of " << report.total << " coordinates";
    if (!report.worst_param.empty())
      std::cout << " (worst " << report.worst_param << "[" << report.worst_index << "])";
    std::cout << (pass ? " PASS" : " FAIL") << '\n';
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint image-text encoder: pretraining, fine-tuning and evaluation"};
  app.require_subcommand(1);

  std::string data, config, out, init, ckpt, loss;
  double fraction = 1.0;
  uint64_t seed = 1;
  bool zero_shot = false;

  auto* pretrain = app.add_subcommand("pretrain", "pretrain on image-caption pairs");
  pretrain->add_option("--data", data, "manifest path, or 'synthetic'")->required();
  pretrain->add_option("--config", config, "key/value config file")->required();
  pretrain->add_option("--out", out, "checkpoint directory")->required();
  pretrain->add_option("--fraction", fraction, "deterministic pair subsample in [0,1]");
  auto* seed_opt = pretrain->add_option("--seed", seed, "training seed");

  auto* ft_ret = app.add_subcommand("finetune-retrieval", "fine-tune for caption-image retrieval");
  ft_ret->add_option("--data", data, "manifest path")->required();
  ft_ret->add_option("--init", init, "initial checkpoint")->required();
  ft_ret->add_option("--out", out, "checkpoint directory")->required();

  auto* ft_vcr = app.add_subcommand("finetune-vcr", "fine-tune for four-choice answering");
  ft_vcr->add_option("--data", data, "manifest path")->required();
  ft_vcr->add_option("--init", init, "initial checkpoint")->required();
  ft_vcr->add_option("--out", out, "checkpoint directory")->required();

  auto* ev_ret = app.add_subcommand("eval-retrieval", "recall@K in both directions");
  ev_ret->add_option("--data", data, "manifest path")->required();
  ev_ret->add_option("--ckpt", ckpt, "checkpoint to evaluate")->required();
  ev_ret->add_flag("--zero-shot", zero_shot,
                   "evaluate the holdout split; requires a non-fine-tuned checkpoint");

  auto* ev_vcr = app.add_subcommand("eval-vcr", "four-choice accuracies");
  ev_vcr->add_option("--data", data, "manifest path")->required();
  ev_vcr->add_option("--ckpt", ckpt, "checkpoint to evaluate")->required();

  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic corpus");
  gen->add_option("--config", config, "key/value config file (synth.* keys)")->required();
  gen->add_option("--out", out, "output directory")->required();

  auto* gc = app.add_subcommand("grad-check", "compare backward pass to central differences");
  gc->add_option("--loss", loss, "mlm|moc|vlm|joint|triplet|vcr|all")->required();
  gc->add_option("--seed", seed, "probe seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pretrain)
      return run_pretrain(data, config, out, fraction, seed, seed_opt->count() > 0);
    if (*ft_ret) return run_finetune(vlp::TaskKind::FinetuneRetrieval, data, init, out);
    if (*ft_vcr) return run_finetune(vlp::TaskKind::FinetuneVcr, data, init, out);
    if (*ev_ret) return run_eval_retrieval(data, ckpt, zero_shot);
    if (*ev_vcr) return run_eval_vcr(data, ckpt);
    if (*gen) return run_gen_synthetic(config, out);
    if (*gc) return run_grad_check(loss, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
