#include "vlp/grad_targets.hpp"

#include <functional>

#include "vlp/pretrain.hpp"
#include "vlp/retrieval.hpp"
#include "vlp/vcr.hpp"

namespace vlp {

namespace {

SynthConfig probe_corpus_config(uint64_t seed) {
  SynthConfig cfg;
  cfg.num_concepts = 8;
  cfg.d_vis = 8;
  cfg.pairs = 4;
  cfg.vcr_examples = 2;
  cfg.min_regions = 2;
  cfg.max_regions = 4;
  cfg.seed = seed;
  return cfg;
}

ModelConfig probe_model(int vocab_size) {
  ModelConfig m;
  m.encoder.num_layers = 2;
  m.encoder.hidden_size = 16;
  m.encoder.num_heads = 2;
  m.encoder.ffn_size = 32;
  m.encoder.max_seq_len = 24;
  m.encoder.dropout_rate = 0.0f;
  m.vocab_size = vocab_size;
  m.d_vis = 8;
  m.num_object_classes = 8;
  return m;
}

}  // namespace

const std::vector<std::string>& grad_check_losses() {
  static const std::vector<std::string> kLosses = {"mlm", "moc", "vlm",
                                                   "joint", "triplet", "vcr"};
  return kLosses;
}

GradCheckReport run_loss_grad_check(const std::string& loss, uint64_t seed) {
  const SynthConfig scfg = probe_corpus_config(seed);
  const SynthCorpus corpus = generate_synthetic(scfg);
  const ModelConfig model = probe_model(corpus.vocab.size());

  ParameterStore<double> params = init_params<double>(model, seed);
  // Task heads initialize to zero, which leaves every candidate score tied;
  // a tie puts the triplet max on a kink where central differences are
  // meaningless. Jitter the heads so the probe sits on smooth ground.
  Rng head_rng = Rng::derive(seed, 20);
  for (const auto& [name, t] : params.all()) {
    if (name.rfind("heads.", 0) != 0) continue;
    Tensor<double>& p = params.mutable_get(name);
    for (auto& v : p.data) v = head_rng.normal(0.0, 0.05);
  }

  // All randomness is drawn before the builder exists, so the numeric and
  // analytic passes see exactly the same inputs.
  Rng rng = Rng::derive(seed, 21);
  std::function<Value<double>(Graph<double>&, const ParameterStore<double>&)> builder;

  if (loss == "mlm" || loss == "moc" || loss == "vlm" || loss == "joint") {
    const PairRecord& rec = corpus.train[0];
    VlmPair pair;
    pair.tokens = tokenize(rec.caption, corpus.vocab);
    pair.regions = rec.regions;
    pair.y = loss == "vlm" ? 0 : 1;
    pair.image_id = rec.image_id;
    pair.caption = rec.caption;
    const PreparedExample ex = prepare_pretrain_example(pair, model, PretrainOptions{}, rng);
    builder = [loss, ex, model](Graph<double>& g, const ParameterStore<double>& p) {
      if (loss == "joint") return joint_loss(g, p, model, ex).loss;
      auto feats = g.constant(ex.features.cast<double>());
      auto locs = g.constant(ex.locations.cast<double>());
      auto enc = forward_sequence(g, p, ex.layout, feats, locs, model);
      if (loss == "mlm")
        return mlm_loss(g, p, enc, ex.layout, ex.plan.text_mask_indices, ex.mlm_targets);
      if (loss == "moc")
        return moc_loss(g, p, enc, ex.layout, ex.plan.region_mask_indices, ex.moc_targets);
      return vlm_loss(vlm_logit(g, p, enc), ex.y);
    };
  } else if (loss == "triplet") {
    RetrievalConfig rcfg;
    rcfg.negatives_per_positive = 2;
    rcfg.margin = 0.5;  // keep the hinge active under the jittered heads
    const RetrievalNegatives negs =
        sample_retrieval_negatives(corpus.train, 0, rcfg.negatives_per_positive, rng);
    const std::vector<PairRecord> pairs = corpus.train;
    const Vocabulary vocab = corpus.vocab;
    builder = [pairs, negs, vocab, rcfg, model](Graph<double>& g,
                                                const ParameterStore<double>& p) {
      return retrieval_example_loss(g, p, model, pairs, 0, negs, vocab, rcfg);
    };
  } else if (loss == "vcr") {
    const VcrExample ex = generate_synthetic_vcr(scfg)[0];
    const Vocabulary vocab = corpus.vocab;
    builder = [ex, vocab, model](Graph<double>& g, const ParameterStore<double>& p) {
      return vcr_example_loss(g, p, model, ex, vocab, /*region_budget=*/8);
    };
  } else {
    throw ValueError("unknown grad-check loss '" + loss +
                     "' (expected mlm, moc, vlm, joint, triplet or vcr)");
  }

  GradTable<double> analytic = params.zero_grads();
  {
    Graph<double> g;
    Value<double> v = builder(g, params);
    g.backward(v);
    params.collect_grads(g, analytic);
  }

  auto loss_fn = [&builder](const ParameterStore<double>& p) {
    Graph<double> g;
    return builder(g, p).item();
  };
  return check_gradients(params, loss_fn, analytic);
}

}  // namespace vlp
