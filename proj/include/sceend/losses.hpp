#pragma once

#include <random>
#include <string>
#include <vector>

#include "sceend/assignment.hpp"
#include "sceend/model.hpp"
#include "sceend/optim.hpp"
#include "sceend/tape.hpp"

namespace sceend {

/// Binary speech-activity labels, S x T.
struct ActivityMatrix {
  Matrix m;

  ActivityMatrix() = default;
  explicit ActivityMatrix(Matrix values) : m(std::move(values)) {
    for (double v : m.data)
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("ActivityMatrix: entries must be 0/1");
  }

  int num_speakers() const { return m.rows; }
  int num_frames() const { return m.cols; }

  Matrix row(int s) const {
    Matrix r(1, m.cols);
    for (int t = 0; t < m.cols; ++t) r(0, t) = m(s, t);
    return r;
  }
};

/// Summed BCE with eps clamp, plain matrices.
inline double bce(const Matrix& z, const Matrix& y, double eps = kBceEps) {
  if (!z.same_shape(y)) throw ShapeError("bce: shape mismatch");
  double loss = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    double zt = std::clamp(z.data[i], eps, 1.0 - eps);
    loss -= y.data[i] * std::log(zt) + (1.0 - y.data[i]) * std::log(1.0 - zt);
  }
  return loss;
}

/// cost(i, j) = bce(z row i, y row j).
inline Matrix pairwise_bce_costs(const Matrix& z, const Matrix& y) {
  if (z.rows != y.rows || z.cols != y.cols)
    throw ShapeError("pairwise_bce_costs: shape mismatch");
  const int S = z.rows;
  Matrix cost(S, S);
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      double c = 0.0;
      for (int t = 0; t < z.cols; ++t) {
        double zt = std::clamp(z(i, t), kBceEps, 1.0 - kBceEps);
        c -= y(j, t) * std::log(zt) + (1.0 - y(j, t)) * std::log(1.0 - zt);
      }
      cost(i, j) = c;
    }
  }
  return cost;
}

/// PIT loss over plain posterior/label matrices (no gradients).
inline std::pair<double, PermutationResult> pit_loss_value(const Matrix& z, const Matrix& y) {
  PermutationResult r = optimal_permutation(pairwise_bce_costs(z, y));
  return {r.cost, r};
}

/// PIT loss where z lives on a tape; the gradient flows only through the
/// chosen assignment.
inline std::pair<Var, PermutationResult> pit_loss(Tape& tape, Var z, const ActivityMatrix& y) {
  const Matrix& Z = tape.value(z);
  if (Z.rows != y.num_speakers()) throw ShapeError("pit_loss: speaker count mismatch");
  PermutationResult r = optimal_permutation(pairwise_bce_costs(Z, y.m));
  Var loss;
  for (int s = 0; s < Z.rows; ++s) {
    Var term = tape.bce_vs_target(tape.slice_rows(z, s, s + 1), y.row(r.perm[s]));
    loss = s == 0 ? term : tape.add(loss, term);
  }
  return {loss, r};
}

inline Matrix binarize_row(const Matrix& z, double threshold) {
  Matrix out(z.rows, z.cols);
  for (size_t i = 0; i < z.size(); ++i) out.data[i] = z.data[i] > threshold ? 1.0 : 0.0;
  return out;
}

/// Baseline EEND objective: fixed-S head posteriors against labels
/// zero-padded to the head size.
inline Var pit_baseline_loss(ModelForward& fw, const FeatureSequence& x,
                             const ActivityMatrix& y) {
  const int s_fixed = fw.cfg().max_speakers;
  if (y.num_speakers() > s_fixed) throw ConfigError("more speakers than baseline head rows");
  Var z = fw.eend_forward(fw.encode(x));
  Matrix padded(s_fixed, y.num_frames());
  for (int s = 0; s < y.num_speakers(); ++s)
    for (int t = 0; t < y.num_frames(); ++t) padded(s, t) = y.m(s, t);
  return pit_loss(fw.tape(), z, ActivityMatrix(padded)).first;
}

/// SC-EEND without teacher forcing: one decoding pass with binarized
/// self-conditioning; permutation over the first S outputs.
inline Var sc_pit_loss(ModelForward& fw, const FeatureSequence& x, const ActivityMatrix& y,
                       int s_max, double threshold = 0.5) {
  const int S = y.num_speakers();
  if (S > s_max) throw ConfigError("sc_pit_loss: S > s_max");
  const int T = x.num_frames();
  Tape& tape = fw.tape();
  Var e_p = fw.encode(x);
  Var hidden = fw.zero_state(T);
  Var cell = fw.zero_state(T);
  Matrix cond(1, T);
  std::vector<Var> outputs;
  for (int s = 0; s < s_max; ++s) {
    auto step = fw.decode_step(e_p, cond, hidden, cell);
    outputs.push_back(step.z);
    hidden = step.hidden;
    cell = step.cell;
    cond = binarize_row(tape.value(step.z), threshold);
  }
  PermutationResult perm;
  if (S > 0) {
    Matrix first_s(S, T);
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < T; ++t) first_s(s, t) = tape.value(outputs[s])(0, t);
    perm = optimal_permutation(pairwise_bce_costs(first_s, y.m));
  }
  const Matrix zero_row(1, T);
  Var loss;
  for (int s = 0; s < s_max; ++s) {
    const Matrix target = s < S ? y.row(perm.perm[s]) : zero_row;
    Var term = tape.bce_vs_target(outputs[s], target);
    loss = s == 0 ? term : tape.add(loss, term);
  }
  return loss;
}

/// Speaker-wise greedy teacher-forcing loss: each iteration consumes the
/// unused label row with the lowest BCE and feeds it onward; iterations
/// past S are scored against (and conditioned on) zeros.
inline Var greedy_tf_loss(ModelForward& fw, const FeatureSequence& x, const ActivityMatrix& y,
                          int s_max, std::vector<int>* selected_rows = nullptr) {
  const int S = y.num_speakers();
  if (S > s_max) throw ConfigError("greedy_tf_loss: S > s_max");
  const int T = x.num_frames();
  Tape& tape = fw.tape();
  Var e_p = fw.encode(x);
  Var hidden = fw.zero_state(T);
  Var cell = fw.zero_state(T);
  Matrix cond(1, T);
  const Matrix zero_row(1, T);
  std::vector<char> used(S, 0);
  Var loss;
  for (int s = 0; s < s_max; ++s) {
    auto step = fw.decode_step(e_p, cond, hidden, cell);
    hidden = step.hidden;
    cell = step.cell;
    Matrix target = zero_row;
    if (s < S) {
      int best = -1;
      double best_cost = 0.0;
      for (int r = 0; r < S; ++r) {
        if (used[r]) continue;
        double c = bce(tape.value(step.z), y.row(r));
        if (best < 0 || c < best_cost) {
          best = r;
          best_cost = c;
        }
      }
      used[best] = 1;
      target = y.row(best);
      if (selected_rows) selected_rows->push_back(best);
    }
    Var term = tape.bce_vs_target(step.z, target);
    loss = s == 0 ? term : tape.add(loss, term);
    cond = target;  // teacher forcing; zero row once labels are exhausted
  }
  return loss;
}

/// Diagnostics from the two-stage loss, for tests.
struct TwoStageTrace {
  std::vector<int> perm;              // phi*: output row -> label row
  std::vector<Matrix> stage1_z;       // stage-1 posteriors
  std::vector<Matrix> stage1_cond;    // condition fed at each stage-1 iteration
  std::vector<Matrix> stage2_cond;    // condition fed at each stage-2 iteration
  std::vector<Matrix> stage2_z;       // stage-2 posteriors
};

/// Two-stage PIT loss. Stage 1 decodes self-conditioned (thresholded at
/// 0.5) with no gradient recording; phi* is fixed from the first S stage-1
/// outputs; stage 2 re-decodes teacher-forced in phi* order and carries
/// the loss (and all gradients).
inline Var two_stage_pit_loss(ModelParams& params, ModelForward& fw, const FeatureSequence& x,
                              const ActivityMatrix& y, int s_max,
                              TwoStageTrace* trace = nullptr) {
  const int S = y.num_speakers();
  if (S > s_max) throw ConfigError("two_stage_pit_loss: S > s_max");
  const int T = x.num_frames();

  // Stage 1: forward only, no tape gradients.
  PermutationResult perm;
  {
    Tape t1(false);
    ModelForward fw1(t1, params, false, nullptr);
    Var e_p = fw1.encode(x);
    Var hidden = fw1.zero_state(T);
    Var cell = fw1.zero_state(T);
    Matrix cond(1, T);
    Matrix first_s(S, T);
    for (int s = 0; s < s_max; ++s) {
      if (trace) trace->stage1_cond.push_back(cond);
      auto step = fw1.decode_step(e_p, cond, hidden, cell);
      hidden = step.hidden;
      cell = step.cell;
      if (trace) trace->stage1_z.push_back(t1.value(step.z));
      if (s < S)
        for (int t = 0; t < T; ++t) first_s(s, t) = t1.value(step.z)(0, t);
      cond = binarize_row(t1.value(step.z), 0.5);
    }
    if (S > 0) perm = optimal_permutation(pairwise_bce_costs(first_s, y.m));
  }
  if (trace) trace->perm = perm.perm;

  // Stage 2: teacher forcing in phi* order on the caller's tape.
  Tape& tape = fw.tape();
  Var e_p = fw.encode(x);
  Var hidden = fw.zero_state(T);
  Var cell = fw.zero_state(T);
  Matrix cond(1, T);
  const Matrix zero_row(1, T);
  Var loss;
  for (int s = 0; s < s_max; ++s) {
    if (trace) trace->stage2_cond.push_back(cond);
    auto step = fw.decode_step(e_p, cond, hidden, cell);
    hidden = step.hidden;
    cell = step.cell;
    const Matrix target = s < S ? y.row(perm.perm[s]) : zero_row;
    if (trace) trace->stage2_z.push_back(tape.value(step.z));
    Var term = tape.bce_vs_target(step.z, target);
    loss = s == 0 ? term : tape.add(loss, term);
    cond = target;
  }
  return loss;
}

enum class LossKind { PitBaseline, ScPit, ScGreedyTf, ScTwoStagePit };

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "pit-baseline") return LossKind::PitBaseline;
  if (s == "sc-pit" || s == "pit") return LossKind::ScPit;
  if (s == "greedy-tf") return LossKind::ScGreedyTf;
  if (s == "two-stage-pit") return LossKind::ScTwoStagePit;
  throw ConfigError("unknown loss kind: " + s);
}

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::PitBaseline: return "pit-baseline";
    case LossKind::ScPit: return "sc-pit";
    case LossKind::ScGreedyTf: return "greedy-tf";
    case LossKind::ScTwoStagePit: return "two-stage-pit";
  }
  return "?";
}

inline Var compute_loss(LossKind kind, ModelParams& params, ModelForward& fw,
                        const FeatureSequence& x, const ActivityMatrix& y, int s_max) {
  switch (kind) {
    case LossKind::PitBaseline: return pit_baseline_loss(fw, x, y);
    case LossKind::ScPit: return sc_pit_loss(fw, x, y, s_max);
    case LossKind::ScGreedyTf: return greedy_tf_loss(fw, x, y, s_max);
    case LossKind::ScTwoStagePit: return two_stage_pit_loss(params, fw, x, y, s_max);
  }
  throw ConfigError("bad loss kind");
}

struct TrainExample {
  FeatureSequence x;
  ActivityMatrix y;
};

struct TrainHyper {
  AdamConfig adam;
  int batch_size = 1;
  uint64_t seed = 0;
  bool shuffle = true;
};

struct EpochStats {
  double mean_loss = 0.0;  // normalized by S_max * T per example
  int num_steps = 0;
  int num_examples = 0;
};

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9E3779B97F4A7C15ull + (b << 6) + (b >> 2);
  x ^= x >> 33;
  x *= 0xFF51AFD7ED558CCDull;
  x ^= x >> 33;
  return x;
}

/// One pass of minibatch gradient steps. Gradients are accumulated
/// per-example (no padding), averaged over the batch, then applied.
/// Deterministic under a fixed seed: shuffle order and dropout streams
/// are derived from (seed, epoch, example), never from prior state.
inline EpochStats train_epoch(ModelParams& params, const std::vector<TrainExample>& dataset,
                              LossKind kind, OptimState& opt, const TrainHyper& hyper,
                              int epoch_index) {
  if (dataset.empty()) throw ConfigError("train_epoch: empty dataset");
  auto param_ptrs = params.all();
  const int s_max = params.cfg.max_speakers;

  std::vector<int> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (hyper.shuffle) {
    std::mt19937_64 rng(mix_seed(hyper.seed, 0x51ull + epoch_index));
    std::shuffle(order.begin(), order.end(), rng);
  }

  EpochStats stats;
  std::vector<Matrix> grads;
  for (Matrix* p : param_ptrs) grads.emplace_back(p->rows, p->cols);
  int in_batch = 0;
  double loss_sum = 0.0;

  auto flush = [&](int count) {
    if (count == 0) return;
    if (count > 1)
      for (Matrix& g : grads)
        for (double& v : g.data) v /= count;
    adam_step(param_ptrs, grads, opt, hyper.adam);
    for (Matrix& g : grads) std::fill(g.data.begin(), g.data.end(), 0.0);
    stats.num_steps += 1;
  };

  for (size_t pos = 0; pos < order.size(); ++pos) {
    const TrainExample& ex = dataset[order[pos]];
    std::mt19937_64 drop_rng(mix_seed(mix_seed(hyper.seed, epoch_index), order[pos]));
    Tape tape(true);
    ModelForward fw(tape, params, true, &drop_rng, &grads);
    Var loss = compute_loss(kind, params, fw, ex.x, ex.y, s_max);
    const double raw = tape.value(loss)(0, 0);
    if (!std::isfinite(raw)) throw std::runtime_error("train_epoch: non-finite loss");
    tape.backward(loss);
    loss_sum += raw / (static_cast<double>(s_max) * ex.x.num_frames());
    stats.num_examples += 1;
    in_batch += 1;
    if (in_batch == hyper.batch_size) {
      flush(in_batch);
      in_batch = 0;
    }
  }
  flush(in_batch);
  stats.mean_loss = loss_sum / stats.num_examples;
  return stats;
}

}  // namespace sceend
