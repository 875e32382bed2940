#include <doctest.h>

#include <random>

#include "sceend/metrics.hpp"

using namespace sceend;

namespace {

SegmentList make(const std::string& rec,
                 std::vector<std::tuple<std::string, double, double>> segs) {
  SegmentList out;
  out.rec_id = rec;
  for (auto& [spk, start, dur] : segs) out.segments.push_back({spk, start, dur});
  return out;
}

}  // namespace

TEST_CASE("map_speakers picks the maximum-overlap one-to-one pairing") {
  SegmentList ref = make("r", {{"A", 0, 10}, {"B", 10, 10}});
  SegmentList hyp = make("r", {{"x", 0, 9}, {"y", 10, 9}});
  auto m = map_speakers(ref, hyp);
  CHECK(m.at("x") == "A");
  CHECK(m.at("y") == "B");

  // crossed overlap forces the swap
  SegmentList hyp2 = make("r", {{"x", 10, 9}, {"y", 0, 9}});
  auto m2 = map_speakers(ref, hyp2);
  CHECK(m2.at("x") == "B");
  CHECK(m2.at("y") == "A");

  // zero-overlap hypothesis labels are unmapped
  SegmentList hyp3 = make("r", {{"x", 0, 9}, {"z", 100, 5}});
  auto m3 = map_speakers(ref, hyp3);
  CHECK(m3.count("x") == 1);
  CHECK(m3.count("z") == 0);
}

TEST_CASE("map_speakers greedy-beating oracle on a 3x3 instance") {
  // greedy by largest single overlap would pick (A,x) then lose total overlap
  SegmentList ref = make("r", {{"A", 0, 10}, {"B", 0, 9}, {"C", 20, 5}});
  SegmentList hyp = make("r", {{"x", 0, 9.5}, {"y", 0, 10}, {"z", 20, 5}});
  auto m = map_speakers(ref, hyp);
  // total overlap maximized by A<-y (10), B<-x (9), C<-z (5) = 24
  CHECK(m.at("y") == "A");
  CHECK(m.at("x") == "B");
  CHECK(m.at("z") == "C");
}

TEST_CASE("der hand cases without a collar") {
  SegmentList ref = make("r", {{"A", 0, 10}});
  SUBCASE("perfect hypothesis") {
    DerBreakdown d = der(ref, make("r", {{"1", 0, 10}}), 0.0);
    CHECK(d.der == doctest::Approx(0.0));
    CHECK(d.scored_speech == doctest::Approx(10.0));
    CHECK_FALSE(d.degenerate);
  }
  SUBCASE("pure miss") {
    DerBreakdown d = der(ref, make("r", {{"1", 0, 5}}), 0.0);
    CHECK(d.miss == doctest::Approx(5.0));
    CHECK(d.false_alarm == doctest::Approx(0.0));
    CHECK(d.der == doctest::Approx(0.5));
  }
  SUBCASE("pure false alarm") {
    DerBreakdown d = der(ref, make("r", {{"1", 0, 10}, {"1", 15, 5}}), 0.0);
    CHECK(d.false_alarm == doctest::Approx(5.0));
    CHECK(d.miss == doctest::Approx(0.0));
    CHECK(d.der == doctest::Approx(0.5));
  }
  SUBCASE("confusion") {
    SegmentList ref2 = make("r", {{"A", 0, 10}, {"B", 10, 10}});
    // x maps to A; its tail over B's speech is speaker confusion
    DerBreakdown d = der(ref2, make("r", {{"x", 0, 12}}), 0.0);
    CHECK(d.confusion == doctest::Approx(2.0));
    CHECK(d.miss == doctest::Approx(8.0));
    CHECK(d.der == doctest::Approx(0.5));
  }
  SUBCASE("empty hypothesis is all miss") {
    DerBreakdown d = der(ref, SegmentList{"r", {}}, 0.0);
    CHECK(d.der == doctest::Approx(1.0));
  }
  SUBCASE("empty reference is degenerate") {
    DerBreakdown d = der(SegmentList{"r", {}}, make("r", {{"1", 0, 5}}), 0.0);
    CHECK(d.degenerate);
    CHECK(d.der == doctest::Approx(0.0));  // rate undefined, reported as 0
    CHECK(d.false_alarm == doctest::Approx(5.0));
    CHECK(d.scored_speech == doctest::Approx(0.0));
  }
}

TEST_CASE("overlap regions count per speaker") {
  // two simultaneous reference speakers, hypothesis finds one
  SegmentList ref = make("r", {{"A", 0, 10}, {"B", 0, 10}});
  SegmentList hyp = make("r", {{"x", 0, 10}});
  DerBreakdown d = der(ref, hyp, 0.0);
  CHECK(d.scored_speech == doctest::Approx(20.0));
  CHECK(d.miss == doctest::Approx(10.0));
  CHECK(d.der == doctest::Approx(0.5));

  // score_overlap=false drops the overlapped region entirely
  SegmentList ref2 = make("r", {{"A", 0, 10}, {"B", 5, 10}});
  DerBreakdown d2 = der(ref2, hyp, 0.0, false);
  CHECK(d2.scored_speech == doctest::Approx(10.0));  // [0,5) + [10,15)
}

TEST_CASE("collar excludes regions around reference boundaries only") {
  SegmentList ref = make("r", {{"A", 0, 10}});
  SUBCASE("perfect hypothesis still scores zero") {
    DerBreakdown d = der(ref, make("r", {{"1", 0, 10}}), 0.25);
    CHECK(d.scored_speech == doctest::Approx(9.5));
    CHECK(d.der == doctest::Approx(0.0));
  }
  SUBCASE("miss shrinks by the collar at the cut point is not a ref boundary") {
    DerBreakdown d = der(ref, make("r", {{"1", 0, 5}}), 0.25);
    // hyp boundary at 5 gets no collar; miss spans [5, 9.75)
    CHECK(d.miss == doctest::Approx(4.75));
    CHECK(d.scored_speech == doctest::Approx(9.5));
    CHECK(d.der == doctest::Approx(0.5));
  }
  SUBCASE("errors entirely inside the collar vanish") {
    DerBreakdown d = der(ref, make("r", {{"1", 0.1, 9.8}}), 0.25);
    CHECK(d.der == doctest::Approx(0.0));
  }
  CHECK_THROWS_AS(der(ref, ref, -0.1), std::invalid_argument);
}

TEST_CASE("der is invariant to hypothesis renaming and segment splitting") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    // random frame-grid activities, 100ms frames
    auto random_segs = [&](int nspk, const std::string& prefix) {
      Matrix m(nspk, 40);
      for (double& v : m.data) v = (rng() & 1) ? 1.0 : 0.0;
      SegmentList s = activity_to_segments(ActivityMatrix(m), 0.1, 0.0, "r");
      for (auto& seg : s.segments) seg.speaker = prefix + seg.speaker;
      return s;
    };
    SegmentList ref = random_segs(2, "R");
    SegmentList hyp = random_segs(2, "H");
    if (ref.segments.empty() || hyp.segments.empty()) continue;
    DerBreakdown base = der(ref, hyp, 0.0);

    SegmentList renamed = hyp;
    for (auto& s : renamed.segments) s.speaker = "other_" + s.speaker;
    DerBreakdown r1 = der(ref, renamed, 0.0);
    CHECK(r1.total_error() == doctest::Approx(base.total_error()).epsilon(1e-9));

    SegmentList split;
    split.rec_id = hyp.rec_id;
    for (auto& s : hyp.segments) {
      if (s.duration > 0.1) {
        split.segments.push_back({s.speaker, s.start, s.duration / 2});
        split.segments.push_back({s.speaker, s.start + s.duration / 2, s.duration / 2});
      } else {
        split.segments.push_back(s);
      }
    }
    DerBreakdown r2 = der(ref, split, 0.0);
    CHECK(r2.total_error() == doctest::Approx(base.total_error()).epsilon(1e-9));
  }
}

TEST_CASE("collar-free der matches a frame brute force for one speaker") {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 25; ++trial) {
    Matrix ra(1, 50), ha(1, 50);
    for (double& v : ra.data) v = (rng() & 1) ? 1.0 : 0.0;
    for (double& v : ha.data) v = (rng() & 1) ? 1.0 : 0.0;
    SegmentList ref = activity_to_segments(ActivityMatrix(ra), 0.1, 0.0, "r");
    SegmentList hyp = activity_to_segments(ActivityMatrix(ha), 0.1, 0.0, "r");
    int miss = 0, fa = 0, speech = 0;
    for (int t = 0; t < 50; ++t) {
      if (ra(0, t) != 0.0) ++speech;
      if (ra(0, t) != 0.0 && ha(0, t) == 0.0) ++miss;
      if (ra(0, t) == 0.0 && ha(0, t) != 0.0) ++fa;
    }
    DerBreakdown d = der(ref, hyp, 0.0);
    CHECK(d.miss == doctest::Approx(miss * 0.1).epsilon(1e-9));
    CHECK(d.false_alarm == doctest::Approx(fa * 0.1).epsilon(1e-9));
    CHECK(d.scored_speech == doctest::Approx(speech * 0.1).epsilon(1e-9));
  }
}

TEST_CASE("DerBreakdown accumulation recomputes the aggregate rate") {
  DerBreakdown a, b;
  a.miss = 1.0;
  a.scored_speech = 10.0;
  b.false_alarm = 2.0;
  b.scored_speech = 10.0;
  a += b;
  CHECK(a.scored_speech == doctest::Approx(20.0));
  CHECK(a.der == doctest::Approx(0.15));
  CHECK_FALSE(a.degenerate);
}

TEST_CASE("counting_confusion") {
  CountingResult r = counting_confusion({{2, 2}, {3, 2}, {3, 3}, {1, 1}});
  CHECK(r.min_count == 1);
  CHECK(r.confusion.rows == 3);
  CHECK(r.confusion(2, 1) == 1.0);  // ref 3 estimated as 2
  CHECK(r.confusion(2, 2) == 1.0);
  CHECK(r.accuracy == doctest::Approx(0.75));

  CountingResult half = counting_confusion({{2, 2}, {3, 2}});
  CHECK(half.accuracy == doctest::Approx(0.5));

  CountingResult empty = counting_confusion({});
  CHECK(empty.confusion.rows == 0);
  CHECK(empty.accuracy == 0.0);
  CHECK_THROWS_AS(counting_confusion({{-1, 0}}), std::invalid_argument);
}
