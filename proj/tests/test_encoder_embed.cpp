#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "vlp/model.hpp"

using namespace vlp;

namespace {

Vocabulary small_vocab() {
  return Vocabulary::from_words({"a", "dog", "cat", "red", "ball", "near", "the"});
}

ModelConfig small_config(int num_layers = 2) {
  ModelConfig cfg;
  cfg.encoder.num_layers = num_layers;
  cfg.encoder.hidden_size = 16;
  cfg.encoder.num_heads = 2;
  cfg.encoder.ffn_size = 32;
  cfg.encoder.max_seq_len = 24;
  cfg.encoder.dropout_rate = 0.f;
  cfg.vocab_size = small_vocab().size();
  cfg.d_vis = 8;
  cfg.num_object_classes = 5;
  return cfg;
}

RegionSet make_regions(int count, int d_vis, uint64_t seed) {
  Rng rng = Rng::derive(seed, 11);
  RegionSet rs;
  rs.width = 100;
  rs.height = 80;
  rs.features = TensorF::zeros({count, d_vis});
  for (auto& v : rs.features.data) v = static_cast<float>(rng.normal(0.0, 1.0));
  for (int i = 0; i < count; ++i) {
    const double x1 = rng.uniform(0.0, 50.0);
    const double y1 = rng.uniform(0.0, 40.0);
    rs.boxes.push_back({x1, y1, x1 + rng.uniform(5.0, 45.0), y1 + rng.uniform(5.0, 35.0)});
    rs.label_ids.push_back(static_cast<int>(rng.uniform_int(5)));
    rs.scores.push_back(static_cast<float>(rng.uniform(0.3, 1.0)));
  }
  return rs;
}

}  // namespace

TEST_CASE("vocabulary reserved prefix and lookup") {
  Vocabulary v = small_vocab();
  CHECK(v.id("[PAD]") == 0);
  CHECK(v.id("[MASK]") == 4);
  CHECK(v.id("[IMG]") == 5);
  CHECK(v.id("a") == 6);
  CHECK(v.id_or_unk("zyxxy") == Vocabulary::kUnk);
  CHECK(v.token(7) == "dog");
  CHECK_THROWS_AS(v.token(v.size()), IndexError);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]"}), ValueError);
  CHECK_THROWS_AS(
      Vocabulary::from_tokens({"[UNK]", "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[IMG]"}),
      ValueError);
  CHECK_THROWS_AS(
      Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[IMG]", "a", "a"}),
      ValueError);
}

TEST_CASE("vocabulary file round trip") {
  Vocabulary v = small_vocab();
  const std::string path = "vocab_roundtrip.txt";
  v.save(path);
  Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.id("ball") == v.id("ball"));
  std::remove(path.c_str());
  CHECK_THROWS_AS(Vocabulary::load("no_such_vocab_file.txt"), IoError);
}

TEST_CASE("tokenize direct lookup and OOV") {
  Vocabulary v = small_vocab();
  CHECK(tokenize("a dog", v).ids == std::vector<int>{6, 7});
  CHECK(tokenize("a zyxxy", v).ids == std::vector<int>{6, Vocabulary::kUnk});
}

TEST_CASE("tokenize normalizes case, punctuation, whitespace") {
  Vocabulary v = small_vocab();
  CHECK(tokenize("A  Dog.", v).ids == std::vector<int>{6, 7});
  CHECK(tokenize("THE red--ball!", v).ids == std::vector<int>{12, 9, 10});
  CHECK_THROWS_AS(tokenize("", v), ValueError);
  CHECK_THROWS_AS(tokenize("  \t ", v), ValueError);
  CHECK_THROWS_AS(tokenize("...!!!", v), ValueError);
}

TEST_CASE("location vector full-image box") {
  auto v = location_vector({0, 0, 640, 480}, 640, 480);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 0.0);
  CHECK(v[2] == 1.0);
  CHECK(v[3] == 1.0);
  CHECK(v[4] == 1.0);
}

TEST_CASE("location vector hand evaluation") {
  auto v = location_vector({10, 20, 60, 120}, 100, 200);
  CHECK(v[0] == doctest::Approx(0.1));
  CHECK(v[1] == doctest::Approx(0.1));
  CHECK(v[2] == doctest::Approx(0.6));
  CHECK(v[3] == doctest::Approx(0.6));
  CHECK(v[4] == doctest::Approx(0.25));
}

TEST_CASE("location vector fifth component identity and monotonicity") {
  Rng rng(3);
  Box prev{10, 10, 20, 20};
  double prev_area = location_vector(prev, 200, 100)[4];
  for (int i = 0; i < 20; ++i) {
    Box b{prev.x1 - rng.uniform(0.0, 0.4), prev.y1 - rng.uniform(0.0, 0.4),
          prev.x2 + rng.uniform(0.0, 4.0), prev.y2 + rng.uniform(0.0, 3.0)};
    auto v = location_vector(b, 200, 100);
    CHECK(v[4] == doctest::Approx((v[2] - v[0]) * (v[3] - v[1])));
    CHECK(v[4] >= prev_area);
    for (int j = 0; j < 4; ++j) {
      CHECK(v[static_cast<size_t>(j)] >= 0.0);
      CHECK(v[static_cast<size_t>(j)] <= 1.0);
    }
    CHECK(v[4] > 0.0);
    prev = b;
    prev_area = v[4];
  }
}

TEST_CASE("location vector rejects degenerate boxes") {
  CHECK_THROWS_AS(location_vector({10, 10, 10, 50}, 100, 100), ValueError);
  CHECK_THROWS_AS(location_vector({10, 10, 50, 10}, 100, 100), ValueError);
  CHECK_THROWS_AS(location_vector({20, 10, 10, 50}, 100, 100), ValueError);
}

TEST_CASE("iou hand case and bounds") {
  CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
  CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == doctest::Approx(1.0));
  CHECK(iou({0, 0, 1, 1}, {5, 5, 6, 6}) == 0.0);
}

TEST_CASE("truncation budget examples") {
  // Fits untouched.
  auto r = truncation_budget(2, 3, 64);
  CHECK(r.text_keep == 2);
  CHECK(r.region_keep == 3);
  // Overlong text shrinks to its floor, regions absorb what is left.
  r = truncation_budget(30, 10, 24);
  CHECK(r.text_keep == 16);
  CHECK(r.region_keep == 6);
  // Short text leaves room for all regions.
  r = truncation_budget(4, 40, 24);
  CHECK(r.text_keep == 4);
  CHECK(r.region_keep == 18);
}

TEST_CASE("layout structure for T=2 I=3") {
  Layout layout = build_layout({8, 9}, 3, 64);
  CHECK(layout.size() == 7);
  CHECK(layout.roles[0] == Role::Cls);
  CHECK(layout.roles[1] == Role::Text);
  CHECK(layout.roles[2] == Role::Text);
  CHECK(layout.roles[3] == Role::Sep);
  CHECK(layout.roles[4] == Role::Region);
  CHECK(layout.roles[6] == Role::Region);
  CHECK(layout.token_ids[0] == Vocabulary::kCls);
  CHECK(layout.token_ids[3] == Vocabulary::kSep);
  CHECK(layout.region_index[4] == 0);
  CHECK(layout.region_index[6] == 2);
  int valid_count = 0;
  for (uint8_t m : layout.valid) valid_count += m;
  CHECK(valid_count == 7);
}

TEST_CASE("layout padding and errors") {
  Layout layout = build_layout({8, 9}, 1, 16, 12);
  CHECK(layout.size() == 12);
  CHECK(layout.roles[5] == Role::Pad);
  CHECK(layout.valid[4] == 1);
  CHECK(layout.valid[5] == 0);
  CHECK(layout.token_ids[5] == -1);
  CHECK_THROWS_AS(build_layout({}, 0, 16), ValueError);
  CHECK_THROWS_AS(build_layout({8}, 1, 16, 20), ValueError);
  // Floor of 16 text tokens cannot fit a max_seq_len of 12.
  CHECK_THROWS_AS(build_layout(std::vector<int>(30, 8), 4, 12), ValueError);
}

TEST_CASE("layout truncation keeps text head and first regions") {
  std::vector<int> ids;
  for (int i = 0; i < 30; ++i) ids.push_back(6 + (i % 3));
  Layout layout = build_layout(ids, 10, 24);
  CHECK(layout.text_count == 16);
  CHECK(layout.region_count == 6);
  CHECK(layout.size() == 24);
  CHECK(layout.token_ids[1] == ids[0]);
  CHECK(layout.token_ids[16] == ids[15]);
  CHECK(layout.roles[17] == Role::Sep);
}

TEST_CASE("same token at two positions differs only by position embedding") {
  ModelConfig cfg = small_config();
  auto params = init_params<double>(cfg, 1);
  Layout layout = build_layout({7, 7}, 0, 24);
  Graph<double> g;
  auto pre = text_pre_ln(g, params, layout, cfg);
  const auto& pos = params.get("embed.pos");
  for (int64_t j = 0; j < cfg.encoder.hidden_size; ++j) {
    const double diff = pre.tensor().at(1, j) - pre.tensor().at(2, j);
    CHECK(diff == doctest::Approx(pos.at(1, j) - pos.at(2, j)).epsilon(1e-9));
  }
}

TEST_CASE("zero embedding tables make text rows equal beta") {
  ModelConfig cfg = small_config();
  auto params = init_params<double>(cfg, 1);
  for (const char* name : {"embed.word", "embed.pos", "embed.seg"}) {
    auto& t = params.mutable_get(name);
    std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  auto& beta = params.mutable_get("embed.text_ln.beta");
  for (size_t i = 0; i < beta.data.size(); ++i) beta.data[i] = 0.1 * static_cast<double>(i);
  Layout layout = build_layout({7, 8}, 0, 24);
  Graph<double> g;
  auto emb = embed_sequence(g, params, layout, Value<double>{}, Value<double>{}, cfg);
  for (int64_t r = 0; r < emb.rows(); ++r)
    for (int64_t j = 0; j < emb.cols(); ++j)
      CHECK(emb.tensor().at(r, j) == doctest::Approx(beta.data[static_cast<size_t>(j)]));
}

TEST_CASE("identical regions embed identically") {
  ModelConfig cfg = small_config();
  auto params = init_params<double>(cfg, 2);
  RegionSet rs = make_regions(1, cfg.d_vis, 5);
  // Duplicate the single region.
  RegionSet two;
  two.width = rs.width;
  two.height = rs.height;
  two.features = TensorF::zeros({2, cfg.d_vis});
  for (int64_t j = 0; j < cfg.d_vis; ++j) {
    two.features.at(0, j) = rs.features.at(0, j);
    two.features.at(1, j) = rs.features.at(0, j);
  }
  two.boxes = {rs.boxes[0], rs.boxes[0]};
  two.label_ids = {rs.label_ids[0], rs.label_ids[0]};
  two.scores = {rs.scores[0], rs.scores[0]};
  Graph<double> g;
  auto feats = g.constant(two.features.cast<double>());
  auto locs = g.constant(location_matrix(two).cast<double>());
  auto pre = region_pre_ln(g, params, feats, locs, cfg);
  for (int64_t j = 0; j < cfg.encoder.hidden_size; ++j)
    CHECK(pre.tensor().at(0, j) == pre.tensor().at(1, j));
}

TEST_CASE("region features width mismatch raises") {
  ModelConfig cfg = small_config();
  auto params = init_params<double>(cfg, 2);
  Graph<double> g;
  auto feats = g.constant(TensorD::zeros({2, cfg.d_vis + 1}));
  auto locs = g.constant(TensorD::zeros({2, 5}));
  CHECK_THROWS_AS(region_pre_ln(g, params, feats, locs, cfg), ShapeError);
}

TEST_CASE("attention single valid position returns its value row") {
  ModelConfig cfg = small_config(1);
  auto params = init_params<double>(cfg, 3);
  const int d = cfg.encoder.hidden_size;
  auto set_identity = [&](const std::string& name) {
    auto& t = params.mutable_get(name);
    std::fill(t.data.begin(), t.data.end(), 0.0);
    for (int i = 0; i < d; ++i) t.at(i, i) = 1.0;
  };
  set_identity("encoder.layer0.attn.wv");
  set_identity("encoder.layer0.attn.wo");
  Graph<double> g;
  TensorD x = TensorD::zeros({1, d});
  Rng rng(17);
  for (auto& v : x.data) v = rng.normal(0.0, 1.0);
  auto xv = g.constant(x);
  auto out = multi_head_attention(g, xv, {1}, cfg.encoder.num_heads, params,
                                  "encoder.layer0.attn", 0.0);
  for (int64_t j = 0; j < d; ++j)
    CHECK(out.tensor().at(0, j) == doctest::Approx(x.at(0, j)).epsilon(1e-9));
}

TEST_CASE("identical keys average the value rows") {
  ModelConfig cfg = small_config(1);
  auto params = init_params<double>(cfg, 4);
  const int d = cfg.encoder.hidden_size;
  auto zero_param = [&](const std::string& name) {
    auto& t = params.mutable_get(name);
    std::fill(t.data.begin(), t.data.end(), 0.0);
  };
  auto set_identity = [&](const std::string& name) {
    zero_param(name);
    auto& t = params.mutable_get(name);
    for (int i = 0; i < d; ++i) t.at(i, i) = 1.0;
  };
  zero_param("encoder.layer0.attn.wk");  // all keys identical
  set_identity("encoder.layer0.attn.wv");
  set_identity("encoder.layer0.attn.wo");
  const int n = 5;
  Graph<double> g;
  TensorD x = TensorD::zeros({n, d});
  Rng rng(18);
  for (auto& v : x.data) v = rng.normal(0.0, 1.0);
  auto out = multi_head_attention(g, g.constant(x), std::vector<uint8_t>(n, uint8_t{1}),
                                  cfg.encoder.num_heads, params, "encoder.layer0.attn", 0.0);
  for (int64_t j = 0; j < d; ++j) {
    double mean = 0;
    for (int64_t r = 0; r < n; ++r) mean += x.at(r, j);
    mean /= n;
    for (int64_t r = 0; r < n; ++r)
      CHECK(out.tensor().at(r, j) == doctest::Approx(mean).epsilon(1e-9));
  }
}

TEST_CASE("masked position does not influence other outputs") {
  ModelConfig cfg = small_config(1);
  auto params = init_params<double>(cfg, 5);
  const int d = cfg.encoder.hidden_size;
  const int n = 6, masked = 3;
  std::vector<uint8_t> valid(n, uint8_t{1});
  valid[masked] = 0;
  TensorD x = TensorD::zeros({n, d});
  Rng rng(19);
  for (auto& v : x.data) v = rng.normal(0.0, 1.0);
  auto run = [&](const TensorD& input) {
    Graph<double> g;
    return multi_head_attention(g, g.constant(input), valid, cfg.encoder.num_heads, params,
                                "encoder.layer0.attn", 0.0)
        .tensor();
  };
  TensorD base = run(x);
  TensorD perturbed_in = x;
  for (int64_t j = 0; j < d; ++j) perturbed_in.at(masked, j) += rng.normal(0.0, 2.0);
  TensorD perturbed = run(perturbed_in);
  for (int64_t r = 0; r < n; ++r) {
    if (r == masked) continue;
    for (int64_t j = 0; j < d; ++j) CHECK(perturbed.at(r, j) == base.at(r, j));
  }
}

TEST_CASE("zero-layer encoder is identity") {
  ModelConfig cfg = small_config(0);
  auto params = init_params<double>(cfg, 6);
  Graph<double> g;
  TensorD x = TensorD::zeros({4, cfg.encoder.hidden_size});
  Rng rng(20);
  for (auto& v : x.data) v = rng.normal(0.0, 1.0);
  auto out = encoder_forward(g, g.constant(x), std::vector<uint8_t>(4, uint8_t{1}), cfg.encoder,
                             params);
  CHECK(out.tensor().data == x.data);
}

TEST_CASE("encoder rejects overlong input") {
  ModelConfig cfg = small_config(1);
  auto params = init_params<double>(cfg, 6);
  Graph<double> g;
  auto x = g.constant(TensorD::zeros({cfg.encoder.max_seq_len + 1, cfg.encoder.hidden_size}));
  std::vector<uint8_t> valid(static_cast<size_t>(cfg.encoder.max_seq_len + 1), uint8_t{1});
  CHECK_THROWS_AS(encoder_forward(g, x, valid, cfg.encoder, params), ValueError);
}

TEST_CASE("padding rows never influence valid outputs through the full stack") {
  ModelConfig cfg = small_config();
  auto params = init_params<double>(cfg, 7);
  RegionSet rs = make_regions(3, cfg.d_vis, 21);
  Layout layout = build_layout({7, 8, 9}, rs.count(), cfg.encoder.max_seq_len, 12);
  auto run = [&](double pad_fill) {
    Graph<double> g;
    auto feats = g.constant(rs.features.cast<double>());
    auto locs = g.constant(location_matrix(rs).cast<double>());
    auto emb = embed_sequence(g, params, layout, feats, locs, cfg);
    // Overwrite pad rows with junk before encoding.
    TensorD raw = emb.tensor();
    for (int r = layout.content_size(); r < layout.size(); ++r)
      for (int64_t j = 0; j < raw.cols(); ++j) raw.at(r, j) = pad_fill;
    return encoder_forward(g, g.constant(raw), layout.valid, cfg.encoder, params).tensor();
  };
  TensorD a = run(0.0);
  TensorD b = run(123.45);
  for (int r = 0; r < layout.content_size(); ++r)
    for (int64_t j = 0; j < a.cols(); ++j) CHECK(a.at(r, j) == b.at(r, j));
}

TEST_CASE("encoder output deterministic for fixed seed") {
  ModelConfig cfg = small_config();
  auto run = [&] {
    auto params = init_params<double>(cfg, 42);
    RegionSet rs = make_regions(4, cfg.d_vis, 33);
    Layout layout = build_layout({6, 7, 8, 9}, rs.count(), cfg.encoder.max_seq_len);
    Graph<double> g;
    auto feats = g.constant(rs.features.cast<double>());
    auto locs = g.constant(location_matrix(rs).cast<double>());
    return forward_sequence(g, params, layout, feats, locs, cfg).tensor().data;
  };
  CHECK(run() == run());
}

TEST_CASE("region permutation permutes outputs identically") {
  ModelConfig cfg = small_config();
  auto params = init_params<double>(cfg, 9);
  RegionSet rs = make_regions(4, cfg.d_vis, 44);
  const std::vector<int> perm{2, 0, 3, 1};
  RegionSet permuted;
  permuted.width = rs.width;
  permuted.height = rs.height;
  permuted.features = TensorF::zeros({4, cfg.d_vis});
  for (int i = 0; i < 4; ++i) {
    for (int64_t j = 0; j < cfg.d_vis; ++j)
      permuted.features.at(i, j) = rs.features.at(perm[static_cast<size_t>(i)], j);
    permuted.boxes.push_back(rs.boxes[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
    permuted.label_ids.push_back(rs.label_ids[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
    permuted.scores.push_back(rs.scores[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
  }
  Layout layout = build_layout({6, 7}, 4, cfg.encoder.max_seq_len);
  auto run = [&](const RegionSet& set) {
    Graph<double> g;
    auto feats = g.constant(set.features.cast<double>());
    auto locs = g.constant(location_matrix(set).cast<double>());
    return forward_sequence(g, params, layout, feats, locs, cfg).tensor();
  };
  TensorD base = run(rs);
  TensorD shuffled = run(permuted);
  const int rb = layout.region_begin();
  for (int i = 0; i < 4; ++i)
    for (int64_t j = 0; j < cfg.encoder.hidden_size; ++j)
      CHECK(shuffled.at(rb + i, j) ==
            doctest::Approx(base.at(rb + perm[static_cast<size_t>(i)], j)).epsilon(1e-9));
  // Text rows are unchanged by the permutation.
  for (int r = 0; r < rb; ++r)
    for (int64_t j = 0; j < cfg.encoder.hidden_size; ++j)
      CHECK(shuffled.at(r, j) == doctest::Approx(base.at(r, j)).epsilon(1e-9));
}

TEST_CASE("reference injection lands region terms on token rows") {
  ModelConfig cfg = small_config();
  auto params = init_params<double>(cfg, 10);
  RegionSet rs = make_regions(2, cfg.d_vis, 55);
  Layout layout = build_layout({6, 7, 8}, 2, cfg.encoder.max_seq_len);
  Graph<double> g;
  auto feats = g.constant(rs.features.cast<double>());
  auto locs = g.constant(location_matrix(rs).cast<double>());
  auto text_plain = text_pre_ln(g, params, layout, cfg);
  auto region_pre = region_pre_ln(g, params, feats, locs, cfg);
  auto injected = embed_sequence(g, params, layout, feats, locs, cfg, {{2, 1}});
  // Reconstruct row 2 by hand: LN(text_pre[2] + region_pre[1]).
  TensorD manual = text_plain.tensor();
  for (int64_t j = 0; j < cfg.encoder.hidden_size; ++j)
    manual.at(2, j) += region_pre.tensor().at(1, j);
  Graph<double> g2;
  auto ln = layer_norm(g2.constant(manual), g2.constant(params.get("embed.text_ln.gamma")),
                       g2.constant(params.get("embed.text_ln.beta")), kLayerNormEps);
  for (int64_t j = 0; j < cfg.encoder.hidden_size; ++j)
    CHECK(injected.tensor().at(2, j) == doctest::Approx(ln.tensor().at(2, j)).epsilon(1e-9));
  CHECK_THROWS_AS(embed_sequence(g, params, layout, feats, locs, cfg, {{0, 0}}), IndexError);
  CHECK_THROWS_AS(embed_sequence(g, params, layout, feats, locs, cfg, {{1, 5}}), IndexError);
}

TEST_CASE("model config validation") {
  ModelConfig cfg = small_config();
  cfg.encoder.hidden_size = 15;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
  cfg = small_config();
  cfg.vocab_size = 3;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
  cfg = small_config();
  cfg.encoder.dropout_rate = 1.f;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
}
