#pragma once

#include <string>
#include <vector>

#include "sceend/losses.hpp"
#include "sceend/model.hpp"

namespace sceend {

/// Time-interval representation for scoring and RTTM I/O.
struct Segment {
  std::string speaker;
  double start = 0.0;     // seconds
  double duration = 0.0;  // seconds
};

struct SegmentList {
  std::string rec_id;
  std::vector<Segment> segments;
};

struct DiarizationResult {
  ActivityMatrix activity;  // emitted rows only (estimated speakers)
  Matrix posteriors;        // one row per executed iteration, stop row included
  double frame_shift = 0.1;

  int num_speakers() const { return activity.num_speakers(); }
};

/// Strict greater-than thresholding.
inline Matrix binarize(const Matrix& z, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0) throw ConfigError("binarize: threshold in (0,1)");
  Matrix out(z.rows, z.cols);
  for (size_t i = 0; i < z.size(); ++i) out.data[i] = z.data[i] > threshold ? 1.0 : 0.0;
  return out;
}

/// Optional posterior post-processing: centered median filter per row.
/// window must be odd; window <= 1 is a no-op.
inline Matrix median_filter_rows(const Matrix& z, int window) {
  if (window <= 1) return z;
  if (window % 2 == 0) throw ConfigError("median filter window must be odd");
  Matrix out(z.rows, z.cols);
  const int half = window / 2;
  std::vector<double> buf;
  for (int r = 0; r < z.rows; ++r) {
    for (int t = 0; t < z.cols; ++t) {
      buf.clear();
      for (int k = std::max(0, t - half); k <= std::min(z.cols - 1, t + half); ++k)
        buf.push_back(z(r, k));
      std::nth_element(buf.begin(), buf.begin() + buf.size() / 2, buf.end());
      out(r, t) = buf[buf.size() / 2];
    }
  }
  return out;
}

/// Iterative variable-speaker inference. Conditions are the model's own
/// binarized estimates; stops on the first all-zero binarized row (that
/// row is not emitted) or after s_max iterations.
inline DiarizationResult infer(ModelParams& params, const FeatureSequence& x, int s_max,
                               double threshold = 0.5, int median_window = 0) {
  params.cfg.validate();
  const int T = x.num_frames();
  Tape tape(false);
  ModelForward fw(tape, params);
  Var e_p = fw.encode(x);
  Var hidden = fw.zero_state(T);
  Var cell = fw.zero_state(T);
  Matrix cond(1, T);

  std::vector<Matrix> post_rows;
  std::vector<Matrix> act_rows;
  for (int s = 0; s < s_max; ++s) {
    auto step = fw.decode_step(e_p, cond, hidden, cell);
    hidden = step.hidden;
    cell = step.cell;
    Matrix z = tape.value(step.z);
    post_rows.push_back(z);
    Matrix smoothed = median_window > 1 ? median_filter_rows(z, median_window) : z;
    Matrix act = binarize(smoothed, threshold);
    bool any_active = false;
    for (double v : act.data)
      if (v != 0.0) any_active = true;
    if (!any_active) break;
    act_rows.push_back(act);
    cond = act;
  }

  DiarizationResult res;
  res.frame_shift = x.frame_shift;
  res.posteriors = Matrix(static_cast<int>(post_rows.size()), T);
  for (size_t s = 0; s < post_rows.size(); ++s)
    for (int t = 0; t < T; ++t) res.posteriors(static_cast<int>(s), t) = post_rows[s](0, t);
  Matrix act(static_cast<int>(act_rows.size()), T);
  for (size_t s = 0; s < act_rows.size(); ++s)
    for (int t = 0; t < T; ++t) act(static_cast<int>(s), t) = act_rows[s](0, t);
  res.activity = ActivityMatrix(act);
  return res;
}

inline int count_speakers(const DiarizationResult& r) { return r.num_speakers(); }

/// Maximal runs of active frames become [start, start+dur) segments;
/// runs shorter than min_dur seconds are dropped. Speakers are labeled
/// spk1..spkS by row.
inline SegmentList activity_to_segments(const ActivityMatrix& activity, double frame_shift,
                                        double min_dur = 0.0, const std::string& rec_id = "rec") {
  if (frame_shift <= 0.0) throw ConfigError("activity_to_segments: frame_shift must be > 0");
  SegmentList out;
  out.rec_id = rec_id;
  for (int s = 0; s < activity.num_speakers(); ++s) {
    const std::string name = "spk" + std::to_string(s + 1);
    int t = 0;
    while (t < activity.num_frames()) {
      if (activity.m(s, t) == 0.0) {
        ++t;
        continue;
      }
      int start = t;
      while (t < activity.num_frames() && activity.m(s, t) != 0.0) ++t;
      double dur = (t - start) * frame_shift;
      if (dur >= min_dur && dur > 0.0)
        out.segments.push_back({name, start * frame_shift, dur});
    }
  }
  return out;
}

/// Inverse of activity_to_segments for frame-aligned segments; frames
/// covered by any segment of row speaker "spk<k>" are set active.
inline ActivityMatrix segments_to_activity(const SegmentList& segs, double frame_shift,
                                           int num_speakers, int num_frames) {
  Matrix m(num_speakers, num_frames);
  for (const Segment& s : segs.segments) {
    if (s.speaker.rfind("spk", 0) != 0) throw ParseError("expected spk<k> label");
    int row = std::stoi(s.speaker.substr(3)) - 1;
    if (row < 0 || row >= num_speakers) throw ShapeError("speaker row out of range");
    int t0 = static_cast<int>(std::lround(s.start / frame_shift));
    int t1 = static_cast<int>(std::lround((s.start + s.duration) / frame_shift));
    for (int t = std::max(0, t0); t < std::min(num_frames, t1); ++t) m(row, t) = 1.0;
  }
  return ActivityMatrix(m);
}

}  // namespace sceend
