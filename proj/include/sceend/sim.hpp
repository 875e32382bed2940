#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sceend/losses.hpp"
#include "sceend/model.hpp"

namespace sceend {

/// Knobs for the synthetic mixture generator. The activity model is a
/// two-state Markov chain per speaker; when overlap_target > 0 the off
/// dwell time is rescaled per speaker count so the stationary overlap
/// ratio hits the target.
struct SimSpec {
  int min_speakers = 1;
  int max_speakers = 4;
  int num_frames = 500;
  int feat_dim = 16;
  double overlap_target = 0.3;
  double on_mean = 30.0;   // frames
  double off_mean = 60.0;  // frames
  double signature_scale = 1.0;
  double background_scale = 0.5;
  double noise_scale = 0.1;
  double frame_shift = 0.1;

  void validate() const {
    if (min_speakers < 1 || max_speakers < min_speakers)
      throw ConfigError("SimSpec: bad speaker range");
    if (num_frames < 1 || feat_dim < 1) throw ConfigError("SimSpec: bad dimensions");
    if (overlap_target < 0.0 || overlap_target >= 1.0)
      throw ConfigError("SimSpec: overlap_target in [0,1)");
    if (on_mean < 1.0 || off_mean < 1.0) throw ConfigError("SimSpec: dwell means >= 1 frame");
    if (frame_shift <= 0.0) throw ConfigError("SimSpec: frame_shift > 0");
  }
};

/// Stationary overlap ratio P(>=2 on)/P(>=1 on) for S independent
/// speakers each on with probability p.
inline double stationary_overlap_ratio(double p, int s) {
  const double q = 1.0 - p;
  const double any_on = 1.0 - std::pow(q, s);
  if (any_on <= 0.0) return 0.0;
  const double exactly_one = s * p * std::pow(q, s - 1);
  return (any_on - exactly_one) / any_on;
}

/// Solve for the on-probability hitting the target overlap ratio.
inline double solve_on_probability(double target, int s) {
  double lo = 1e-4, hi = 1.0 - 1e-4;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (stationary_overlap_ratio(mid, s) < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// frames(>=2 active)/frames(>=1 active); the degenerate flag marks an
/// all-silent denominator.
inline double overlap_ratio(const Matrix& activity, bool* degenerate = nullptr) {
  int speech = 0, overlap = 0;
  for (int t = 0; t < activity.cols; ++t) {
    int on = 0;
    for (int s = 0; s < activity.rows; ++s)
      if (activity(s, t) != 0.0) ++on;
    if (on >= 1) ++speech;
    if (on >= 2) ++overlap;
  }
  if (degenerate) *degenerate = speech == 0;
  return speech == 0 ? 0.0 : static_cast<double>(overlap) / speech;
}

namespace detail {

inline Matrix markov_activity(int num_speakers, int t_frames, double p_on, double on_mean,
                              double off_mean, std::mt19937_64& rng) {
  Matrix y(num_speakers, t_frames);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double p_on_to_off = 1.0 / on_mean;
  const double p_off_to_on = 1.0 / off_mean;
  for (int s = 0; s < num_speakers; ++s) {
    for (int tries = 0; tries < 20; ++tries) {
      bool on = u(rng) < p_on;
      bool any = false;
      for (int t = 0; t < t_frames; ++t) {
        y(s, t) = on ? 1.0 : 0.0;
        any = any || on;
        if (on ? (u(rng) < p_on_to_off) : (u(rng) < p_off_to_on)) on = !on;
      }
      if (any) break;
      if (tries == 19) y(s, t_frames / 2) = 1.0;  // pathological dwell settings
    }
  }
  return y;
}

}  // namespace detail

/// One synthetic recording: speaker activities from Markov chains
/// (resampled toward the overlap target, best of 50 attempts) and
/// features as a sum of fixed speaker signature vectors plus background
/// and Gaussian noise.
inline std::pair<FeatureSequence, ActivityMatrix> simulate_mixture(const SimSpec& spec,
                                                                  int num_speakers,
                                                                  uint64_t seed) {
  spec.validate();
  if (num_speakers < spec.min_speakers || num_speakers > spec.max_speakers)
    throw ConfigError("simulate_mixture: num_speakers outside spec range");
  std::mt19937_64 rng(seed);
  const int T = spec.num_frames;
  const int F = spec.feat_dim;

  double p_on = spec.on_mean / (spec.on_mean + spec.off_mean);
  double on_mean = spec.on_mean;
  double off_mean = spec.off_mean;
  if (num_speakers >= 2 && spec.overlap_target > 0.0) {
    p_on = solve_on_probability(spec.overlap_target, num_speakers);
    off_mean = on_mean * (1.0 - p_on) / p_on;
  }

  Matrix best_y;
  double best_gap = 1e9;
  for (int attempt = 0; attempt < 50; ++attempt) {
    Matrix y = detail::markov_activity(num_speakers, T, p_on, on_mean, off_mean, rng);
    double gap = num_speakers < 2 ? 0.0
                                  : std::abs(overlap_ratio(y) - spec.overlap_target);
    if (gap < best_gap) {
      best_gap = gap;
      best_y = y;
    }
    if (num_speakers < 2 || gap <= 0.10) break;
  }
  if (num_speakers >= 2 && best_gap > 0.10)
    std::fprintf(stderr, "warning: overlap target missed by %.3f, keeping best attempt\n",
                 best_gap);

  // Fixed per-recording unit signature vectors.
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto unit_vector = [&]() {
    std::vector<double> v(F);
    double norm = 0.0;
    for (double& x : v) {
      x = gauss(rng);
      norm += x * x;
    }
    norm = std::sqrt(std::max(norm, 1e-12));
    for (double& x : v) x /= norm;
    return v;
  };
  std::vector<std::vector<double>> sig(num_speakers);
  for (auto& s : sig) s = unit_vector();
  std::vector<double> bg = unit_vector();

  Matrix frames(F, T);
  for (int t = 0; t < T; ++t) {
    for (int f = 0; f < F; ++f) {
      double v = spec.background_scale * bg[f];
      for (int s = 0; s < num_speakers; ++s)
        if (best_y(s, t) != 0.0) v += spec.signature_scale * sig[s][f];
      if (spec.noise_scale > 0.0) v += spec.noise_scale * gauss(rng);
      frames(f, t) = v;
    }
  }
  return {FeatureSequence{std::move(frames), spec.frame_shift}, ActivityMatrix(best_y)};
}

// ------------------------------------------------------------ file formats

/// SCEF: "SCEF", version u32=1, F u32, T u32, then T frames x F f32 LE.
inline void write_features(const FeatureSequence& x, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  const uint32_t version = 1, F = x.feat_dim(), T = x.num_frames();
  f.write("SCEF", 4);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&F), 4);
  f.write(reinterpret_cast<const char*>(&T), 4);
  std::vector<float> buf(F);
  for (uint32_t t = 0; t < T; ++t) {
    for (uint32_t i = 0; i < F; ++i) buf[i] = static_cast<float>(x.frames(i, t));
    f.write(reinterpret_cast<const char*>(buf.data()), sizeof(float) * F);
  }
  if (!f) throw IoError("write failed: " + path);
}

inline FeatureSequence read_features(const std::string& path, double frame_shift = 0.1) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  uint32_t version = 0, F = 0, T = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&F), 4);
  f.read(reinterpret_cast<char*>(&T), 4);
  if (!f || std::memcmp(magic, "SCEF", 4) != 0) throw IoError("not an SCEF file: " + path);
  if (version != 1) throw IoError("unsupported SCEF version in " + path);
  Matrix frames(F, T);
  std::vector<float> buf(F);
  for (uint32_t t = 0; t < T; ++t) {
    f.read(reinterpret_cast<char*>(buf.data()), sizeof(float) * F);
    if (!f) throw IoError("truncated SCEF file: " + path);
    for (uint32_t i = 0; i < F; ++i) frames(i, t) = buf[i];
  }
  return FeatureSequence{std::move(frames), frame_shift};
}

/// SCEL: "SCEL", version u32=1, S u32, T u32, then S*T bytes in {0,1}.
inline void write_labels(const ActivityMatrix& y, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  const uint32_t version = 1, S = y.num_speakers(), T = y.num_frames();
  f.write("SCEL", 4);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&S), 4);
  f.write(reinterpret_cast<const char*>(&T), 4);
  std::vector<uint8_t> buf(y.m.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = y.m.data[i] != 0.0 ? 1 : 0;
  f.write(reinterpret_cast<const char*>(buf.data()), buf.size());
  if (!f) throw IoError("write failed: " + path);
}

inline ActivityMatrix read_labels(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  uint32_t version = 0, S = 0, T = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&S), 4);
  f.read(reinterpret_cast<char*>(&T), 4);
  if (!f || std::memcmp(magic, "SCEL", 4) != 0) throw IoError("not an SCEL file: " + path);
  if (version != 1) throw IoError("unsupported SCEL version in " + path);
  std::vector<uint8_t> buf(static_cast<size_t>(S) * T);
  f.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!f) throw IoError("truncated SCEL file: " + path);
  Matrix m(S, T);
  for (size_t i = 0; i < buf.size(); ++i) {
    if (buf[i] > 1) throw IoError("SCEL byte outside {0,1} in " + path);
    m.data[i] = buf[i];
  }
  return ActivityMatrix(m);
}

// --------------------------------------------------------------- manifest

struct ManifestEntry {
  std::string id;
  std::string feature_path;  // relative to the manifest directory
  std::string label_path;
  int num_speakers = 0;
  int num_frames = 0;
};

struct CorpusManifest {
  uint64_t seed = 0;
  SimSpec spec;
  std::vector<ManifestEntry> entries;
};

inline void write_manifest(const CorpusManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << "#manifest\t1\n";
  f << "#seed\t" << m.seed << "\n";
  const SimSpec& s = m.spec;
  f << "#spec\tmin_speakers\t" << s.min_speakers << "\n";
  f << "#spec\tmax_speakers\t" << s.max_speakers << "\n";
  f << "#spec\tnum_frames\t" << s.num_frames << "\n";
  f << "#spec\tfeat_dim\t" << s.feat_dim << "\n";
  f << "#spec\toverlap_target\t" << s.overlap_target << "\n";
  f << "#spec\ton_mean\t" << s.on_mean << "\n";
  f << "#spec\toff_mean\t" << s.off_mean << "\n";
  f << "#spec\tsignature_scale\t" << s.signature_scale << "\n";
  f << "#spec\tbackground_scale\t" << s.background_scale << "\n";
  f << "#spec\tnoise_scale\t" << s.noise_scale << "\n";
  f << "#spec\tframe_shift\t" << s.frame_shift << "\n";
  for (const auto& e : m.entries)
    f << e.id << "\t" << e.feature_path << "\t" << e.label_path << "\t" << e.num_speakers
      << "\t" << e.num_frames << "\n";
  if (!f) throw IoError("write failed: " + path);
}

inline CorpusManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  CorpusManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    if (line[0] == '#') {
      std::string tag, key;
      ss >> tag;
      if (tag == "#seed") {
        ss >> m.seed;
      } else if (tag == "#spec") {
        double v;
        ss >> key >> v;
        SimSpec& s = m.spec;
        if (key == "min_speakers") s.min_speakers = static_cast<int>(v);
        else if (key == "max_speakers") s.max_speakers = static_cast<int>(v);
        else if (key == "num_frames") s.num_frames = static_cast<int>(v);
        else if (key == "feat_dim") s.feat_dim = static_cast<int>(v);
        else if (key == "overlap_target") s.overlap_target = v;
        else if (key == "on_mean") s.on_mean = v;
        else if (key == "off_mean") s.off_mean = v;
        else if (key == "signature_scale") s.signature_scale = v;
        else if (key == "background_scale") s.background_scale = v;
        else if (key == "noise_scale") s.noise_scale = v;
        else if (key == "frame_shift") s.frame_shift = v;
      }
      continue;
    }
    ManifestEntry e;
    if (!(ss >> e.id >> e.feature_path >> e.label_path >> e.num_speakers >> e.num_frames))
      throw ParseError("manifest line " + std::to_string(lineno) + ": bad record");
    m.entries.push_back(std::move(e));
  }
  return m;
}

/// Generate `count` recordings under out_dir. Speaker counts are drawn
/// uniformly from the spec range; per-recording seeds are seed XOR index
/// so output is independent of generation order.
inline CorpusManifest build_corpus(const SimSpec& spec, int count, uint64_t seed,
                                   const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "feats");
  fs::create_directories(fs::path(out_dir) / "labels");
  CorpusManifest m;
  m.seed = seed;
  m.spec = spec;
  for (int i = 0; i < count; ++i) {
    const uint64_t rec_seed = seed ^ static_cast<uint64_t>(i);
    std::mt19937_64 pick(mix_seed(rec_seed, 0xC0117ull));
    std::uniform_int_distribution<int> nspk(spec.min_speakers, spec.max_speakers);
    const int s = nspk(pick);
    auto [x, y] = simulate_mixture(spec, s, rec_seed);
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "rec%06d", i);
    ManifestEntry e;
    e.id = idbuf;
    e.feature_path = std::string("feats/") + idbuf + ".scef";
    e.label_path = std::string("labels/") + idbuf + ".scel";
    e.num_speakers = s;
    e.num_frames = spec.num_frames;
    write_features(x, (fs::path(out_dir) / e.feature_path).string());
    write_labels(y, (fs::path(out_dir) / e.label_path).string());
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, (fs::path(out_dir) / "manifest.tsv").string());
  return m;
}

struct CorpusStats {
  std::vector<std::pair<int, int>> per_speaker_counts;  // (num speakers, num recordings)
  double mean_duration_sec = 0.0;
  double overlap_ratio = 0.0;
  bool degenerate_overlap = false;  // no speech frames anywhere
};

/// Table-style statistics recomputed from the label files.
inline CorpusStats corpus_stats(const CorpusManifest& m, const std::string& corpus_dir) {
  namespace fs = std::filesystem;
  CorpusStats st;
  std::map<int, int> counts;
  long speech = 0, overlap = 0;
  double total_dur = 0.0;
  for (const auto& e : m.entries) {
    ActivityMatrix y = read_labels((fs::path(corpus_dir) / e.label_path).string());
    counts[y.num_speakers()] += 1;
    total_dur += y.num_frames() * m.spec.frame_shift;
    for (int t = 0; t < y.num_frames(); ++t) {
      int on = 0;
      for (int s = 0; s < y.num_speakers(); ++s)
        if (y.m(s, t) != 0.0) ++on;
      if (on >= 1) ++speech;
      if (on >= 2) ++overlap;
    }
  }
  for (auto& [k, v] : counts) st.per_speaker_counts.emplace_back(k, v);
  st.mean_duration_sec = m.entries.empty() ? 0.0 : total_dur / m.entries.size();
  st.degenerate_overlap = speech == 0;
  st.overlap_ratio = speech == 0 ? 0.0 : static_cast<double>(overlap) / speech;
  return st;
}

/// Load a corpus into memory as training examples.
inline std::vector<TrainExample> load_corpus(const CorpusManifest& m,
                                             const std::string& corpus_dir) {
  namespace fs = std::filesystem;
  std::vector<TrainExample> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    TrainExample ex;
    ex.x = read_features((fs::path(corpus_dir) / e.feature_path).string(), m.spec.frame_shift);
    ex.y = read_labels((fs::path(corpus_dir) / e.label_path).string());
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace sceend
