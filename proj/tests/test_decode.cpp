#include <doctest.h>

#include <random>

#include "sceend/decode.hpp"

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

TEST_CASE("binarize uses a strict threshold and is idempotent") {
  Matrix z(1, 4, {0.5, 0.5 + 1e-12, 0.49, 1.0});
  Matrix b = binarize(z, 0.5);
  CHECK(b.data == std::vector<double>{0, 1, 0, 1});
  CHECK(binarize(b, 0.5).data == b.data);
  CHECK_THROWS_AS(binarize(z, 0.0), ConfigError);
  CHECK_THROWS_AS(binarize(z, 1.0), ConfigError);
}

TEST_CASE("median_filter_rows") {
  Matrix z(1, 5, {0.0, 1.0, 0.0, 1.0, 1.0});
  CHECK(median_filter_rows(z, 1).data == z.data);
  Matrix m = median_filter_rows(z, 3);
  // edges use a shrunken window (upper median for even sizes)
  CHECK(m.data == std::vector<double>{1.0, 0.0, 1.0, 1.0, 1.0});
  CHECK_THROWS_AS(median_filter_rows(z, 4), ConfigError);
}

TEST_CASE("infer stops without emitting the all-zero stop row") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 1);
  // force the first iteration output to ~0 everywhere
  p.out_b(0, 0) = -50.0;
  FeatureSequence x = random_features(cfg.feat_dim, 12, 2);
  DiarizationResult r = infer(p, x, 4);
  CHECK(r.num_speakers() == 0);
  CHECK(r.posteriors.rows == 1);  // the executed stop iteration is kept
  CHECK(r.activity.num_frames() == 12);
  CHECK(count_speakers(r) == 0);
}

TEST_CASE("infer caps at s_max when the model never stops") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 3);
  p.out_b(0, 0) = 50.0;  // saturate every output toward 1
  FeatureSequence x = random_features(cfg.feat_dim, 10, 4);
  DiarizationResult r = infer(p, x, 3);
  CHECK(r.num_speakers() == 3);
  CHECK(r.posteriors.rows == 3);
  for (double v : r.activity.m.data) CHECK(v == 1.0);
}

TEST_CASE("infer is deterministic and conditions on its own binarized output") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 5);
  p.out_b(0, 0) = 2.0;  // bias toward activity so several iterations run
  FeatureSequence x = random_features(cfg.feat_dim, 9, 6);
  DiarizationResult a = infer(p, x, 4);
  DiarizationResult b = infer(p, x, 4);
  CHECK(a.posteriors.data == b.posteriors.data);
  CHECK(a.activity.m.data == b.activity.m.data);
  REQUIRE(a.num_speakers() >= 1);

  // replay the second iteration manually with the first binarized row
  if (a.posteriors.rows >= 2) {
    Tape t(false);
    ModelForward fw(t, p);
    Var e = fw.encode(x);
    Matrix cond(1, 9);
    auto s1 = fw.decode_step(e, cond, fw.zero_state(9), fw.zero_state(9));
    Matrix z1 = t.value(s1.z);
    auto s2 = fw.decode_step(e, binarize(z1, 0.5), s1.hidden, s1.cell);
    const Matrix& z2 = t.value(s2.z);
    for (int tt = 0; tt < 9; ++tt) CHECK(z2(0, tt) == a.posteriors(1, tt));
  }
}

TEST_CASE("infer threshold changes emitted activity consistently") {
  ModelConfig cfg = tiny();
  ModelParams p = init_model(cfg, 7);
  p.out_b(0, 0) = 1.0;
  FeatureSequence x = random_features(cfg.feat_dim, 8, 8);
  DiarizationResult r = infer(p, x, 2, 0.3);
  for (int s = 0; s < r.num_speakers(); ++s)
    for (int tt = 0; tt < 8; ++tt)
      CHECK(r.activity.m(s, tt) == (r.posteriors(s, tt) > 0.3 ? 1.0 : 0.0));
}

TEST_CASE("activity_to_segments arithmetic and min_dur drop") {
  Matrix m(2, 6, {0, 1, 1, 0, 1, 0,
                  1, 0, 0, 0, 0, 1});
  ActivityMatrix y(m);
  SegmentList segs = activity_to_segments(y, 0.1, 0.0, "recA");
  REQUIRE(segs.segments.size() == 4);
  CHECK(segs.rec_id == "recA");
  CHECK(segs.segments[0].speaker == "spk1");
  CHECK(segs.segments[0].start == doctest::Approx(0.1));
  CHECK(segs.segments[0].duration == doctest::Approx(0.2));
  CHECK(segs.segments[1].start == doctest::Approx(0.4));
  CHECK(segs.segments[2].speaker == "spk2");
  CHECK(segs.segments[2].start == doctest::Approx(0.0));
  CHECK(segs.segments[3].start == doctest::Approx(0.5));

  // min_dur 0.15s removes every single-frame run
  SegmentList kept = activity_to_segments(y, 0.1, 0.15);
  REQUIRE(kept.segments.size() == 1);
  CHECK(kept.segments[0].duration == doctest::Approx(0.2));

  CHECK_THROWS_AS(activity_to_segments(y, 0.0), ConfigError);
}

TEST_CASE("segments_to_activity inverts activity_to_segments") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix m(3, 15);
    for (double& v : m.data) v = (rng() & 1) ? 1.0 : 0.0;
    ActivityMatrix y(m);
    SegmentList segs = activity_to_segments(y, 0.1);
    ActivityMatrix back = segments_to_activity(segs, 0.1, 3, 15);
    CHECK(back.m.data == y.m.data);
  }
}
