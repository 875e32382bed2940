#include <doctest.h>

#include <random>

#include "sceend/model.hpp"

using namespace sceend;

namespace {

FeatureSequence random_features(int f, int t, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(f, t);
  for (double& v : m.data) v = d(rng);
  return FeatureSequence{std::move(m), 0.1};
}

ModelConfig tiny() {
  ModelConfig c = ModelConfig::desk();
  c.feat_dim = 8;
  c.hidden_dim = 16;
  c.ffn_dim = 32;
  return c;
}

}  // namespace

TEST_CASE("init_model is deterministic per seed") {
  ModelConfig cfg = tiny();
  ModelParams a = init_model(cfg, 42);
  ModelParams b = init_model(cfg, 42);
  ModelParams c = init_model(cfg, 43);
  auto na = a.named(), nb = b.named(), nc = c.named();
  bool all_equal = true, any_diff_seed = false;
  for (size_t i = 0; i < na.size(); ++i) {
    if (na[i].second->data != nb[i].second->data) all_equal = false;
    if (na[i].second->data != nc[i].second->data) any_diff_seed = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("full-scale configurations validate") {
  CHECK_NOTHROW(ModelConfig::profile_2spk().validate());  // 256 units, 4 heads
  CHECK_NOTHROW(ModelConfig::profile_vspk().validate());  // 384 units, 6 heads
  ModelConfig bad = tiny();
  bad.num_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny();
  bad.threshold = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("encode output shape and determinism") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 1);
  FeatureSequence x = random_features(cfg.feat_dim, 7, 2);

  Tape t1(false);
  ModelForward fw1(t1, p);
  const Matrix& e1 = t1.value(fw1.encode(x));
  CHECK(e1.rows == cfg.hidden_dim);
  CHECK(e1.cols == 7);
  CHECK(e1.all_finite());

  Tape t2(false);
  ModelForward fw2(t2, p);
  CHECK(t2.value(fw2.encode(x)).data == e1.data);

  FeatureSequence bad = random_features(cfg.feat_dim + 1, 7, 2);
  Tape t3(false);
  ModelForward fw3(t3, p);
  CHECK_THROWS_AS(fw3.encode(bad), ShapeError);
}

TEST_CASE("encode handles a single frame") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 5);
  FeatureSequence x = random_features(cfg.feat_dim, 1, 6);
  Tape t(false);
  ModelForward fw(t, p);
  const Matrix& e = t.value(fw.encode(x));
  CHECK(e.cols == 1);
  CHECK(e.all_finite());
}

TEST_CASE("encoder block with zeroed output projections is the identity") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 7);
  auto zero = [](Matrix& m) { std::fill(m.data.begin(), m.data.end(), 0.0); };
  zero(p.blocks[0].wo);
  zero(p.blocks[0].bo);
  zero(p.blocks[0].ffn_w2);
  zero(p.blocks[0].ffn_b2);
  Tape t(false);
  ModelForward fw(t, p);
  std::mt19937_64 rng(8);
  Matrix e = random_uniform(cfg.hidden_dim, 5, -1.0, 1.0, rng);
  Var ev = t.constant(e);
  const Matrix& out = t.value(fw.encoder_block(0, ev));
  CHECK(out.data == e.data);
}

TEST_CASE("attention weights per query column sum to 1") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 9);
  FeatureSequence x = random_features(cfg.feat_dim, 9, 10);
  Tape t(false);
  ModelForward fw(t, p);
  std::vector<Matrix> probe;
  fw.attention_probe = &probe;
  fw.encode(x);
  CHECK(probe.size() == static_cast<size_t>(cfg.num_blocks * cfg.num_heads));
  for (const Matrix& a : probe) {
    CHECK(a.rows == 9);
    CHECK(a.cols == 9);
    for (int j = 0; j < a.cols; ++j) {
      double sum = 0.0;
      for (int i = 0; i < a.rows; ++i) sum += a(i, j);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("encode is permutation-equivariant over frames (no positional encoding)") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 11);
  const int T = 8;
  FeatureSequence x = random_features(cfg.feat_dim, T, 12);

  std::vector<int> perm = {3, 0, 7, 1, 5, 2, 6, 4};
  FeatureSequence xp;
  xp.frame_shift = x.frame_shift;
  xp.frames = Matrix(cfg.feat_dim, T);
  for (int t = 0; t < T; ++t)
    for (int f = 0; f < cfg.feat_dim; ++f) xp.frames(f, t) = x.frames(f, perm[t]);

  Tape t1(false), t2(false);
  ModelForward fw1(t1, p), fw2(t2, p);
  const Matrix& e = t1.value(fw1.encode(x));
  const Matrix& ep = t2.value(fw2.encode(xp));
  double max_diff = 0.0;
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < cfg.hidden_dim; ++d)
      max_diff = std::max(max_diff, std::abs(ep(d, t) - e(d, perm[t])));
  CHECK(max_diff < 1e-9);
}

TEST_CASE("decode_step shapes, range, and first-iteration zero condition") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 13);
  const int T = 6;
  FeatureSequence x = random_features(cfg.feat_dim, T, 14);
  Tape t(false);
  ModelForward fw(t, p);
  Var e_p = fw.encode(x);
  Matrix cond(1, T);  // all-zero first condition
  auto step = fw.decode_step(e_p, cond, fw.zero_state(T), fw.zero_state(T));
  const Matrix& z = t.value(step.z);
  CHECK(z.rows == 1);
  CHECK(z.cols == T);
  for (double v : z.data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(t.value(step.hidden).rows == cfg.hidden_dim);
  CHECK(t.value(step.cell).cols == T);

  Matrix bad(1, T + 1);
  CHECK_THROWS_AS(fw.decode_step(e_p, bad, fw.zero_state(T), fw.zero_state(T)), ShapeError);
}

TEST_CASE("decoder state round trip mid-decoding") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 15);
  const int T = 5;
  FeatureSequence x = random_features(cfg.feat_dim, T, 16);
  Matrix cond1(1, T);
  Matrix cond2 = Matrix::filled(1, T, 1.0);

  // continuous decode
  Tape t1(false);
  ModelForward fw1(t1, p);
  Var e1 = fw1.encode(x);
  auto s1 = fw1.decode_step(e1, cond1, fw1.zero_state(T), fw1.zero_state(T));
  auto s2 = fw1.decode_step(e1, cond2, s1.hidden, s1.cell);

  // serialize state values, restore on a fresh tape
  DecoderState saved{t1.value(s1.hidden), t1.value(s1.cell)};
  Tape t2(false);
  ModelForward fw2(t2, p);
  Var e2 = fw2.encode(x);
  auto s2b = fw2.decode_step(e2, cond2, saved);
  CHECK(t2.value(s2b.z).data == t1.value(s2.z).data);
}

TEST_CASE("eend_forward baseline head") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 17);
  FeatureSequence x = random_features(cfg.feat_dim, 10, 18);
  Tape t(false);
  ModelForward fw(t, p);
  const Matrix& z = t.value(fw.eend_forward(fw.encode(x)));
  CHECK(z.rows == cfg.max_speakers);
  CHECK(z.cols == 10);
  for (double v : z.data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  Tape t2(false);
  ModelForward fw2(t2, p);
  CHECK(t2.value(fw2.eend_forward(fw2.encode(x))).data == z.data);
}
