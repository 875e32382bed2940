#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sceend/tape.hpp"

namespace sceend {

struct ModelConfig {
  int feat_dim = 16;
  int hidden_dim = 64;
  int num_blocks = 2;
  int num_heads = 2;
  int ffn_dim = 256;
  int max_speakers = 4;
  double dropout = 0.1;
  double threshold = 0.5;

  void validate() const {
    if (feat_dim < 1 || hidden_dim < 1 || num_blocks < 1 || num_heads < 1 || ffn_dim < 1)
      throw ConfigError("model dimensions must be positive");
    if (hidden_dim % num_heads != 0)
      throw ConfigError("hidden_dim must be divisible by num_heads");
    if (max_speakers < 1) throw ConfigError("max_speakers must be >= 1");
    if (threshold <= 0.0 || threshold >= 1.0) throw ConfigError("threshold must be in (0,1)");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
  }

  static ModelConfig desk() { return ModelConfig{16, 64, 2, 2, 256, 4, 0.1, 0.5}; }
  static ModelConfig profile_2spk(int feat_dim = 16) {
    return ModelConfig{feat_dim, 256, 4, 4, 1024, 4, 0.1, 0.5};
  }
  static ModelConfig profile_vspk(int feat_dim = 16) {
    return ModelConfig{feat_dim, 384, 4, 6, 1536, 4, 0.1, 0.5};
  }
};

struct EncoderBlockParams {
  Matrix ln1_g, ln1_b, ln2_g, ln2_b;  // D x 1
  Matrix wq, wk, wv, wo;              // D x D
  Matrix bq, bk, bv, bo;              // D x 1
  Matrix ffn_w1, ffn_b1;              // ffn x D, ffn x 1
  Matrix ffn_w2, ffn_b2;              // D x ffn, D x 1
};

/// All trainable weights: Transformer encoder stack, speaker-conditional
/// LSTM decoder, and the fixed-S baseline head.
struct ModelParams {
  ModelConfig cfg;
  Matrix in_proj_w, in_proj_b;  // D x F, D x 1
  std::vector<EncoderBlockParams> blocks;
  Matrix final_ln_g, final_ln_b;      // D x 1
  Matrix cond_w, cond_b;              // D x 1 each (projection of the 1 x T condition)
  Matrix lstm_wx;                     // 4D x 2D
  Matrix lstm_wh;                     // 4D x D
  Matrix lstm_b;                      // 4D x 1
  Matrix out_w, out_b;                // 1 x D, 1 x 1
  Matrix baseline_w, baseline_b;      // S_fixed x D, S_fixed x 1

  /// Stable named parameter order; used by the optimizer and checkpoints.
  std::vector<std::pair<std::string, Matrix*>> named() {
    std::vector<std::pair<std::string, Matrix*>> out;
    out.emplace_back("in_proj.w", &in_proj_w);
    out.emplace_back("in_proj.b", &in_proj_b);
    for (size_t p = 0; p < blocks.size(); ++p) {
      auto& b = blocks[p];
      std::string pre = "block" + std::to_string(p) + ".";
      out.emplace_back(pre + "ln1.g", &b.ln1_g);
      out.emplace_back(pre + "ln1.b", &b.ln1_b);
      out.emplace_back(pre + "attn.wq", &b.wq);
      out.emplace_back(pre + "attn.bq", &b.bq);
      out.emplace_back(pre + "attn.wk", &b.wk);
      out.emplace_back(pre + "attn.bk", &b.bk);
      out.emplace_back(pre + "attn.wv", &b.wv);
      out.emplace_back(pre + "attn.bv", &b.bv);
      out.emplace_back(pre + "attn.wo", &b.wo);
      out.emplace_back(pre + "attn.bo", &b.bo);
      out.emplace_back(pre + "ln2.g", &b.ln2_g);
      out.emplace_back(pre + "ln2.b", &b.ln2_b);
      out.emplace_back(pre + "ffn.w1", &b.ffn_w1);
      out.emplace_back(pre + "ffn.b1", &b.ffn_b1);
      out.emplace_back(pre + "ffn.w2", &b.ffn_w2);
      out.emplace_back(pre + "ffn.b2", &b.ffn_b2);
    }
    out.emplace_back("final_ln.g", &final_ln_g);
    out.emplace_back("final_ln.b", &final_ln_b);
    out.emplace_back("cond.w", &cond_w);
    out.emplace_back("cond.b", &cond_b);
    out.emplace_back("lstm.wx", &lstm_wx);
    out.emplace_back("lstm.wh", &lstm_wh);
    out.emplace_back("lstm.b", &lstm_b);
    out.emplace_back("out.w", &out_w);
    out.emplace_back("out.b", &out_b);
    out.emplace_back("baseline.w", &baseline_w);
    out.emplace_back("baseline.b", &baseline_b);
    return out;
  }

  std::vector<Matrix*> all() {
    std::vector<Matrix*> out;
    for (auto& [name, m] : named()) out.push_back(m);
    return out;
  }
};

/// Glorot-style uniform init, limit sqrt(6/(fan_in+fan_out)); biases zero,
/// norm gains one. Deterministic per seed.
inline ModelParams init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](int rows, int cols) {
    double lim = std::sqrt(6.0 / (rows + cols));
    return random_uniform(rows, cols, -lim, lim, rng);
  };
  const int D = cfg.hidden_dim;
  ModelParams p;
  p.cfg = cfg;
  p.in_proj_w = glorot(D, cfg.feat_dim);
  p.in_proj_b = Matrix(D, 1);
  for (int b = 0; b < cfg.num_blocks; ++b) {
    EncoderBlockParams blk;
    blk.ln1_g = Matrix::filled(D, 1, 1.0);
    blk.ln1_b = Matrix(D, 1);
    blk.ln2_g = Matrix::filled(D, 1, 1.0);
    blk.ln2_b = Matrix(D, 1);
    blk.wq = glorot(D, D);
    blk.wk = glorot(D, D);
    blk.wv = glorot(D, D);
    blk.wo = glorot(D, D);
    blk.bq = Matrix(D, 1);
    blk.bk = Matrix(D, 1);
    blk.bv = Matrix(D, 1);
    blk.bo = Matrix(D, 1);
    blk.ffn_w1 = glorot(cfg.ffn_dim, D);
    blk.ffn_b1 = Matrix(cfg.ffn_dim, 1);
    blk.ffn_w2 = glorot(D, cfg.ffn_dim);
    blk.ffn_b2 = Matrix(D, 1);
    p.blocks.push_back(std::move(blk));
  }
  p.final_ln_g = Matrix::filled(D, 1, 1.0);
  p.final_ln_b = Matrix(D, 1);
  p.cond_w = glorot(D, 1);
  p.cond_b = Matrix(D, 1);
  p.lstm_wx = glorot(4 * D, 2 * D);
  p.lstm_wh = glorot(4 * D, D);
  p.lstm_b = Matrix(4 * D, 1);
  p.out_w = glorot(1, D);
  p.out_b = Matrix(1, 1);
  p.baseline_w = glorot(cfg.max_speakers, D);
  p.baseline_b = Matrix(cfg.max_speakers, 1);
  return p;
}

/// Input matrix X (F x T) plus frame timing metadata.
struct FeatureSequence {
  Matrix frames;  // F x T
  double frame_shift = 0.1;

  int feat_dim() const { return frames.rows; }
  int num_frames() const { return frames.cols; }
};

/// Column-wise LSTM hidden/cell values carried across speaker iterations.
struct DecoderState {
  Matrix hidden;  // D x T
  Matrix cell;    // D x T
  static DecoderState zero(int d, int t) { return DecoderState{Matrix(d, t), Matrix(d, t)}; }
};

/// One forward pass's context: tape, parameter vars (created lazily so a
/// single tape reuses one leaf per parameter), training flags, and an
/// optional attention probe for tests.
class ModelForward {
 public:
  ModelForward(Tape& tape, ModelParams& params, bool training = false,
               std::mt19937_64* dropout_rng = nullptr,
               std::vector<Matrix>* grad_sinks = nullptr)
      : tape_(tape), params_(params), training_(training), rng_(dropout_rng) {
    auto named = params_.named();
    param_vars_.reserve(named.size());
    for (size_t i = 0; i < named.size(); ++i) {
      Matrix* sink = grad_sinks ? &(*grad_sinks)[i] : nullptr;
      param_vars_.push_back(tape_.input(*named[i].second, sink));
    }
  }

  Tape& tape() { return tape_; }
  const ModelConfig& cfg() const { return params_.cfg; }

  std::vector<Matrix>* attention_probe = nullptr;  // filled with per-head weights if set

  /// E_P: input projection followed by the encoder stack and a final norm.
  Var encode(const FeatureSequence& x) {
    if (x.feat_dim() != cfg().feat_dim)
      throw ShapeError("encode: feature dimension mismatch");
    const ParamIndex& ix = index();
    Var e = tape_.add_col_broadcast(
        tape_.matmul(param_vars_[ix.in_proj_w], tape_.constant(x.frames)),
        param_vars_[ix.in_proj_b]);
    for (int b = 0; b < cfg().num_blocks; ++b) e = encoder_block(b, e);
    e = tape_.layer_norm(e, param_vars_[ix.final_ln_g], param_vars_[ix.final_ln_b]);
    return e;
  }

  /// Pre-norm residual block: e + Attn(LN(e)), then + FFN(LN(.)).
  Var encoder_block(int b, Var e) {
    const BlockIndex& ix = index().blocks[b];
    Var h = tape_.layer_norm(e, param_vars_[ix.ln1_g], param_vars_[ix.ln1_b]);
    Var attn = multi_head_attention(b, h);
    attn = apply_dropout(attn);
    e = tape_.add(e, attn);
    Var h2 = tape_.layer_norm(e, param_vars_[ix.ln2_g], param_vars_[ix.ln2_b]);
    Var f = tape_.add_col_broadcast(tape_.matmul(param_vars_[ix.w1], h2),
                                    param_vars_[ix.b1]);
    f = tape_.relu(f);
    f = tape_.add_col_broadcast(tape_.matmul(param_vars_[ix.w2], f),
                                param_vars_[ix.b2]);
    f = apply_dropout(f);
    return tape_.add(e, f);
  }

  /// One conditional decoding iteration. y_prev is the 1 x T condition
  /// row; state carries hidden/cell across speaker iterations.
  struct StepOut {
    Var z;       // 1 x T posteriors
    Var hidden;  // D x T
    Var cell;    // D x T
  };

  StepOut decode_step(Var e_p, const Matrix& y_prev, Var hidden_prev, Var cell_prev) {
    const int D = cfg().hidden_dim;
    const int T = tape_.value(e_p).cols;
    if (y_prev.rows != 1 || y_prev.cols != T)
      throw ShapeError("decode_step: condition must be 1 x T");
    if (tape_.value(hidden_prev).rows != D || tape_.value(hidden_prev).cols != T)
      throw ShapeError("decode_step: state must be D x T");
    const ParamIndex& ix = index();
    Var cond = tape_.add_col_broadcast(
        tape_.matmul(param_vars_[ix.cond_w], tape_.constant(y_prev)), param_vars_[ix.cond_b]);
    Var e2 = tape_.concat_vertical(e_p, cond);  // 2D x T
    Var gates = tape_.add_col_broadcast(
        tape_.add(tape_.matmul(param_vars_[ix.lstm_wx], e2),
                  tape_.matmul(param_vars_[ix.lstm_wh], hidden_prev)),
        param_vars_[ix.lstm_b]);
    Var gi = tape_.sigmoid(tape_.slice_rows(gates, 0, D));
    Var gf = tape_.sigmoid(tape_.slice_rows(gates, D, 2 * D));
    Var gg = tape_.tanh_(tape_.slice_rows(gates, 2 * D, 3 * D));
    Var go = tape_.sigmoid(tape_.slice_rows(gates, 3 * D, 4 * D));
    Var c = tape_.add(tape_.mul(gf, cell_prev), tape_.mul(gi, gg));
    Var h = tape_.mul(go, tape_.tanh_(c));
    Var z = tape_.sigmoid(tape_.add_col_broadcast(tape_.matmul(param_vars_[ix.out_w], h),
                                                  param_vars_[ix.out_b]));
    return StepOut{z, h, c};
  }

  StepOut decode_step(Var e_p, const Matrix& y_prev, const DecoderState& state) {
    return decode_step(e_p, y_prev, tape_.constant(state.hidden), tape_.constant(state.cell));
  }

  Var zero_state(int t) { return tape_.constant(Matrix(cfg().hidden_dim, t)); }

  /// Baseline fixed-S head: Z = sigmoid(baseline(E_P)), S_fixed x T.
  Var eend_forward(Var e_p) {
    const ParamIndex& ix = index();
    if (params_.baseline_w.rows == 0) throw ConfigError("baseline head not configured");
    return tape_.sigmoid(tape_.add_col_broadcast(
        tape_.matmul(param_vars_[ix.baseline_w], e_p), param_vars_[ix.baseline_b]));
  }

 private:
  struct BlockIndex {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct ParamIndex {
    int in_proj_w, in_proj_b;
    std::vector<BlockIndex> blocks;
    int final_ln_g, final_ln_b, cond_w, cond_b, lstm_wx, lstm_wh, lstm_b, out_w, out_b;
    int baseline_w, baseline_b;
  };

  const ParamIndex& index() {
    if (!index_built_) {
      int i = 0;
      ix_.in_proj_w = i++;
      ix_.in_proj_b = i++;
      for (size_t b = 0; b < params_.blocks.size(); ++b) {
        BlockIndex bi;
        bi.ln1_g = i++;
        bi.ln1_b = i++;
        bi.wq = i++;
        bi.bq = i++;
        bi.wk = i++;
        bi.bk = i++;
        bi.wv = i++;
        bi.bv = i++;
        bi.wo = i++;
        bi.bo = i++;
        bi.ln2_g = i++;
        bi.ln2_b = i++;
        bi.w1 = i++;
        bi.b1 = i++;
        bi.w2 = i++;
        bi.b2 = i++;
        ix_.blocks.push_back(bi);
      }
      ix_.final_ln_g = i++;
      ix_.final_ln_b = i++;
      ix_.cond_w = i++;
      ix_.cond_b = i++;
      ix_.lstm_wx = i++;
      ix_.lstm_wh = i++;
      ix_.lstm_b = i++;
      ix_.out_w = i++;
      ix_.out_b = i++;
      ix_.baseline_w = i++;
      ix_.baseline_b = i++;
      index_built_ = true;
    }
    return ix_;
  }

  Var apply_dropout(Var v) {
    if (!training_ || cfg().dropout <= 0.0 || rng_ == nullptr) return v;
    return tape_.dropout(v, cfg().dropout, *rng_);
  }

  Var multi_head_attention(int b, Var h) {
    const BlockIndex& ix = index().blocks[b];
    const int D = cfg().hidden_dim;
    const int H = cfg().num_heads;
    const int dh = D / H;
    last_t_ = tape_.value(h).cols;
    Var q = tape_.add_col_broadcast(tape_.matmul(param_vars_[ix.wq], h), param_vars_[ix.bq]);
    Var k = tape_.add_col_broadcast(tape_.matmul(param_vars_[ix.wk], h), param_vars_[ix.bk]);
    Var v = tape_.add_col_broadcast(tape_.matmul(param_vars_[ix.wv], h), param_vars_[ix.bv]);
    Var cat;
    for (int hd = 0; hd < H; ++hd) {
      Var qh = tape_.slice_rows(q, hd * dh, (hd + 1) * dh);
      Var kh = tape_.slice_rows(k, hd * dh, (hd + 1) * dh);
      Var vh = tape_.slice_rows(v, hd * dh, (hd + 1) * dh);
      // scores(t', t) = <K[:,t'], Q[:,t]> / sqrt(dh); softmax over t'
      Var scores = tape_.scale(tape_.matmul(tape_.transpose(kh), qh), 1.0 / std::sqrt(dh));
      Var a = tape_.softmax_cols(scores);
      if (attention_probe) attention_probe->push_back(tape_.value(a));
      Var oh = tape_.matmul(vh, a);
      cat = hd == 0 ? oh : tape_.concat_vertical(cat, oh);
    }
    return tape_.add_col_broadcast(tape_.matmul(param_vars_[ix.wo], cat), param_vars_[ix.bo]);
  }

  Tape& tape_;
  ModelParams& params_;
  bool training_;
  std::mt19937_64* rng_;
  std::vector<Var> param_vars_;
  ParamIndex ix_;
  bool index_built_ = false;
  int last_t_ = 0;
};

}  // namespace sceend
