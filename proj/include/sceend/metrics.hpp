#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sceend/assignment.hpp"
#include "sceend/decode.hpp"

namespace sceend {

constexpr double kTimeEps = 1e-9;

struct DerBreakdown {
  double miss = 0.0;
  double false_alarm = 0.0;
  double confusion = 0.0;
  double scored_speech = 0.0;
  double der = 0.0;
  bool degenerate = false;  // no scored reference speech

  double total_error() const { return miss + false_alarm + confusion; }
};

namespace detail {

using Interval = std::pair<double, double>;

/// Per-speaker merged interval lists; input segments need not be disjoint.
inline std::map<std::string, std::vector<Interval>> merge_by_speaker(const SegmentList& list) {
  std::map<std::string, std::vector<Interval>> by_spk;
  for (const Segment& s : list.segments) {
    if (s.duration <= 0.0) throw std::invalid_argument("segment duration must be > 0");
    by_spk[s.speaker].emplace_back(s.start, s.start + s.duration);
  }
  for (auto& [spk, iv] : by_spk) {
    std::sort(iv.begin(), iv.end());
    std::vector<Interval> merged;
    for (const auto& [a, b] : iv) {
      if (!merged.empty() && a <= merged.back().second + kTimeEps)
        merged.back().second = std::max(merged.back().second, b);
      else
        merged.emplace_back(a, b);
    }
    iv = std::move(merged);
  }
  return by_spk;
}

inline bool active_at(const std::vector<Interval>& iv, double t) {
  for (const auto& [a, b] : iv)
    if (t >= a - kTimeEps && t < b - kTimeEps) return true;
  return false;
}

inline double overlap_duration(const std::vector<Interval>& a, const std::vector<Interval>& b) {
  double total = 0.0;
  for (const auto& [a0, a1] : a)
    for (const auto& [b0, b1] : b) {
      double lo = std::max(a0, b0), hi = std::min(a1, b1);
      if (hi > lo) total += hi - lo;
    }
  return total;
}

}  // namespace detail

/// Maximum-total-overlap one-to-one pairing of reference and hypothesis
/// speaker labels (global per recording). Pairs with zero overlap are
/// dropped: those labels map to nothing.
inline std::map<std::string, std::string> map_speakers(const SegmentList& ref,
                                                       const SegmentList& hyp) {
  auto ref_iv = detail::merge_by_speaker(ref);
  auto hyp_iv = detail::merge_by_speaker(hyp);
  std::vector<std::string> rl, hl;
  for (auto& [k, v] : ref_iv) rl.push_back(k);
  for (auto& [k, v] : hyp_iv) hl.push_back(k);
  const int n = static_cast<int>(std::max(rl.size(), hl.size()));
  if (n == 0) return {};
  Matrix overlap(n, n);
  double max_ov = 0.0;
  for (size_t i = 0; i < rl.size(); ++i)
    for (size_t j = 0; j < hl.size(); ++j) {
      overlap(static_cast<int>(i), static_cast<int>(j)) =
          detail::overlap_duration(ref_iv[rl[i]], hyp_iv[hl[j]]);
      max_ov = std::max(max_ov, overlap(static_cast<int>(i), static_cast<int>(j)));
    }
  Matrix cost(n, n);  // minimization form
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost(i, j) = max_ov - overlap(i, j);
  std::vector<int> perm = n <= 6 ? exhaustive_assignment(cost) : hungarian(cost);
  std::map<std::string, std::string> mapping;  // hyp label -> ref label
  for (size_t i = 0; i < rl.size(); ++i) {
    int j = perm[static_cast<int>(i)];
    if (j < static_cast<int>(hl.size()) && overlap(static_cast<int>(i), j) > kTimeEps)
      mapping[hl[j]] = rl[i];
  }
  return mapping;
}

/// DER with a collar excluded around every reference segment boundary.
/// The timeline is partitioned at all boundary points; per scored region,
/// miss/false-alarm/confusion follow the speaker-count convention with
/// correctness under the global speaker mapping.
inline DerBreakdown der(const SegmentList& ref, const SegmentList& hyp, double collar = 0.25,
                        bool score_overlap = true) {
  if (collar < 0.0) throw std::invalid_argument("collar must be >= 0");
  auto ref_iv = detail::merge_by_speaker(ref);
  auto hyp_iv = detail::merge_by_speaker(hyp);
  auto mapping = map_speakers(ref, hyp);

  std::vector<detail::Interval> collars;
  std::set<double> points;
  for (auto& [spk, iv] : ref_iv)
    for (auto& [a, b] : iv) {
      points.insert(a);
      points.insert(b);
      if (collar > 0.0) {
        collars.emplace_back(a - collar, a + collar);
        collars.emplace_back(b - collar, b + collar);
        points.insert(a - collar);
        points.insert(a + collar);
        points.insert(b - collar);
        points.insert(b + collar);
      }
    }
  for (auto& [spk, iv] : hyp_iv)
    for (auto& [a, b] : iv) {
      points.insert(a);
      points.insert(b);
    }

  // Collapse boundary points closer than the merge tolerance.
  std::vector<double> pts;
  for (double p : points)
    if (pts.empty() || p - pts.back() > kTimeEps) pts.push_back(p);

  DerBreakdown out;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    const double a = pts[i], b = pts[i + 1];
    const double len = b - a;
    if (len <= kTimeEps) continue;
    const double mid = 0.5 * (a + b);
    bool excluded = false;
    for (auto& [c0, c1] : collars)
      if (mid > c0 && mid < c1) {
        excluded = true;
        break;
      }
    if (excluded) continue;

    int n_ref = 0, n_hyp = 0, n_correct = 0;
    std::set<std::string> ref_active;
    for (auto& [spk, iv] : ref_iv)
      if (detail::active_at(iv, mid)) {
        ++n_ref;
        ref_active.insert(spk);
      }
    if (!score_overlap && n_ref >= 2) continue;
    for (auto& [spk, iv] : hyp_iv)
      if (detail::active_at(iv, mid)) {
        ++n_hyp;
        auto it = mapping.find(spk);
        if (it != mapping.end() && ref_active.count(it->second)) ++n_correct;
      }
    out.scored_speech += n_ref * len;
    out.miss += std::max(0, n_ref - n_hyp) * len;
    out.false_alarm += std::max(0, n_hyp - n_ref) * len;
    out.confusion += (std::min(n_ref, n_hyp) - n_correct) * len;
  }
  if (out.scored_speech > 0.0) {
    out.der = out.total_error() / out.scored_speech;
  } else {
    out.der = 0.0;
    out.degenerate = true;
  }
  return out;
}

inline DerBreakdown& operator+=(DerBreakdown& a, const DerBreakdown& b) {
  a.miss += b.miss;
  a.false_alarm += b.false_alarm;
  a.confusion += b.confusion;
  a.scored_speech += b.scored_speech;
  a.degenerate = a.scored_speech <= 0.0;
  a.der = a.degenerate ? 0.0 : a.total_error() / a.scored_speech;
  return a;
}

struct CountingResult {
  int min_count = 0;       // lowest observed count (row/col 0 of the matrix)
  Matrix confusion;        // rows: reference count, cols: estimated count
  double accuracy = 0.0;   // trace / total
};

/// Confusion matrix over (reference count, estimated count) pairs.
inline CountingResult counting_confusion(const std::vector<std::pair<int, int>>& pairs) {
  CountingResult r;
  if (pairs.empty()) {
    r.confusion = Matrix(0, 0);
    return r;
  }
  int lo = pairs[0].first, hi = pairs[0].first;
  for (auto& [a, b] : pairs) {
    if (a < 0 || b < 0) throw std::invalid_argument("counts must be >= 0");
    lo = std::min({lo, a, b});
    hi = std::max({hi, a, b});
  }
  const int n = hi - lo + 1;
  r.min_count = lo;
  r.confusion = Matrix(n, n);
  int correct = 0;
  for (auto& [a, b] : pairs) {
    r.confusion(a - lo, b - lo) += 1.0;
    if (a == b) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / pairs.size();
  return r;
}

}  // namespace sceend
