// Command-line front end: corpus simulation, training, inference, scoring.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sceend/sceend.hpp"

namespace fs = std::filesystem;
using namespace sceend;

namespace {

ModelConfig config_for_profile(const std::string& profile, int feat_dim) {
  ModelConfig c;
  if (profile == "desk") c = ModelConfig::desk();
  else if (profile == "2spk") c = ModelConfig::profile_2spk();
  else if (profile == "vspk") c = ModelConfig::profile_vspk();
  else throw ConfigError("unknown profile: " + profile);
  c.feat_dim = feat_dim;
  return c;
}

int cmd_simulate(int n, const std::string& speakers, int frames, int feat_dim, double overlap,
                 double frame_shift, double noise, uint64_t seed, const std::string& out_dir) {
  SimSpec spec;
  auto dash = speakers.find('-');
  spec.min_speakers = std::stoi(speakers.substr(0, dash));
  spec.max_speakers =
      dash == std::string::npos ? spec.min_speakers : std::stoi(speakers.substr(dash + 1));
  spec.num_frames = frames;
  spec.feat_dim = feat_dim;
  spec.overlap_target = overlap;
  spec.frame_shift = frame_shift;
  spec.noise_scale = noise;
  CorpusManifest m = build_corpus(spec, n, seed, out_dir);
  CorpusStats st = corpus_stats(m, out_dir);
  std::cerr << "wrote " << m.entries.size() << " recordings to " << out_dir << "\n";
  std::cout << "num_spk\tnum_rec\tavg_dur\toverlap_ratio\n";
  for (auto& [spk, cnt] : st.per_speaker_counts) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d\t%d\t%.1f\t%.3f\n", spk, cnt, st.mean_duration_sec,
                  st.overlap_ratio);
    std::cout << buf;
  }
  if (st.degenerate_overlap) std::cerr << "note: corpus contains no speech frames\n";
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& loss_name,
              const std::string& profile, int epochs, int batch, double lr, int warmup,
              uint64_t seed, int s_max_flag, double dropout, const std::string& out_path,
              int checkpoint_every, const std::string& resume) {
  CorpusManifest manifest = read_manifest(manifest_path);
  const std::string corpus_dir = fs::path(manifest_path).parent_path().string();
  std::vector<TrainExample> dataset = load_corpus(manifest, corpus_dir);
  if (dataset.empty()) {
    std::cerr << "error: empty corpus\n";
    return 1;
  }
  const LossKind kind = loss_kind_from_string(loss_name);

  ModelParams params;
  OptimState opt;
  int start_epoch = 0;
  if (!resume.empty()) {
    LoadedCheckpoint ck = checkpoint_load(resume);
    params = std::move(ck.params);
    if (ck.opt) opt = std::move(*ck.opt);
    start_epoch = ck.meta.epoch;
    std::cerr << "resumed from " << resume << " at epoch " << start_epoch << "\n";
  } else {
    ModelConfig cfg = config_for_profile(profile, dataset[0].x.feat_dim());
    if (s_max_flag > 0) cfg.max_speakers = s_max_flag;
    if (dropout >= 0.0) cfg.dropout = dropout;
    cfg.validate();
    params = init_model(cfg, seed);
  }

  TrainHyper hyper;
  hyper.adam.lr = lr;
  hyper.adam.warmup_steps = warmup;
  hyper.batch_size = batch;
  hyper.seed = seed;

  for (int e = start_epoch; e < epochs; ++e) {
    EpochStats st = train_epoch(params, dataset, kind, opt, hyper, e);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\n", e, st.mean_loss);
    std::cout << buf << std::flush;
    const bool last = e + 1 == epochs;
    if (!out_path.empty() && (last || (checkpoint_every > 0 && (e + 1) % checkpoint_every == 0)))
      checkpoint_save(params, out_path, CheckpointMeta{opt.step, e + 1}, &opt);
  }
  return 0;
}

int cmd_infer(const std::string& checkpoint_path, const std::string& manifest_path,
              const std::string& out_path, double threshold, int s_max_flag, int median,
              const std::string& posterior_dir) {
  LoadedCheckpoint ck = checkpoint_load(checkpoint_path);
  CorpusManifest manifest = read_manifest(manifest_path);
  const std::string corpus_dir = fs::path(manifest_path).parent_path().string();
  const int s_max = s_max_flag > 0 ? s_max_flag : ck.params.cfg.max_speakers;

  std::vector<SegmentList> all;
  for (const auto& e : manifest.entries) {
    FeatureSequence x = read_features((fs::path(corpus_dir) / e.feature_path).string(),
                                      manifest.spec.frame_shift);
    if (x.feat_dim() != ck.params.cfg.feat_dim) {
      std::cerr << "error: feature dim " << x.feat_dim() << " does not match model "
                << ck.params.cfg.feat_dim << "\n";
      return 1;
    }
    DiarizationResult r = infer(ck.params, x, s_max, threshold, median);
    SegmentList segs = activity_to_segments(r.activity, r.frame_shift, 0.0, e.id);
    all.push_back(std::move(segs));
    if (!posterior_dir.empty()) {
      fs::create_directories(posterior_dir);
      FeatureSequence post{r.posteriors, r.frame_shift};
      write_features(post, (fs::path(posterior_dir) / (e.id + ".scef")).string());
    }
  }
  rttm_write(all, out_path);
  std::cerr << "wrote " << all.size() << " recordings to " << out_path << "\n";
  return 0;
}

int count_labels(const SegmentList& l) {
  std::set<std::string> spk;
  for (auto& s : l.segments) spk.insert(s.speaker);
  return static_cast<int>(spk.size());
}

int cmd_score(const std::string& ref_path, const std::string& hyp_path, double collar,
              bool allow_partial, bool counting) {
  auto refs = rttm_read(ref_path);
  auto hyps = rttm_read(hyp_path);

  std::vector<std::string> unmatched;
  for (auto& [id, l] : refs)
    if (!hyps.count(id)) unmatched.push_back(id);
  for (auto& [id, l] : hyps)
    if (!refs.count(id)) unmatched.push_back(id);
  if (!unmatched.empty()) {
    for (auto& id : unmatched) std::cerr << "unmatched recording id: " << id << "\n";
    if (!allow_partial) return 1;
  }

  DerBreakdown total;
  std::vector<std::pair<int, int>> count_pairs;
  std::cout << "rec_id\tder\tmiss\tfa\tconf\tscored\n";
  for (auto& [id, ref] : refs) {
    auto it = hyps.find(id);
    if (it == hyps.end()) continue;
    DerBreakdown d = der(ref, it->second, collar);
    total += d;
    count_pairs.emplace_back(count_labels(ref), count_labels(it->second));
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s\t%.2f\t%.3f\t%.3f\t%.3f\t%.3f\n", id.c_str(),
                  100.0 * d.der, d.miss, d.false_alarm, d.confusion, d.scored_speech);
    std::cout << buf;
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "TOTAL\t%.2f\t%.3f\t%.3f\t%.3f\t%.3f\n", 100.0 * total.der,
                total.miss, total.false_alarm, total.confusion, total.scored_speech);
  std::cout << buf;

  if (counting) {
    CountingResult c = counting_confusion(count_pairs);
    std::cout << "counting_accuracy\t" << c.accuracy << "\n";
    // row = Reference, column = Estimated
    std::cout << "ref\\est";
    for (int j = 0; j < c.confusion.cols; ++j) std::cout << "\t" << c.min_count + j;
    std::cout << "\n";
    for (int i = 0; i < c.confusion.rows; ++i) {
      std::cout << c.min_count + i;
      for (int j = 0; j < c.confusion.cols; ++j)
        std::cout << "\t" << static_cast<int>(c.confusion(i, j));
      std::cout << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speaker-wise conditional end-to-end diarization toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic corpus");
  int sim_n = 10, sim_frames = 500, sim_feat = 16;
  double sim_overlap = 0.3, sim_shift = 0.1, sim_noise = 0.1;
  uint64_t sim_seed = 0;
  std::string sim_speakers = "1-4", sim_out;
  sim->add_option("--n", sim_n, "number of recordings");
  sim->add_option("--speakers", sim_speakers, "speaker count range, e.g. 1-4");
  sim->add_option("--frames", sim_frames, "frames per recording");
  sim->add_option("--feat-dim", sim_feat, "feature dimension");
  sim->add_option("--overlap", sim_overlap, "target overlap ratio");
  sim->add_option("--frame-shift", sim_shift, "seconds per frame");
  sim->add_option("--noise", sim_noise, "noise scale");
  sim->add_option("--seed", sim_seed, "generator seed")->required();
  sim->add_option("--out", sim_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model on a corpus");
  std::string tr_manifest, tr_loss = "two-stage-pit", tr_profile = "desk", tr_out, tr_resume;
  int tr_epochs = 10, tr_batch = 1, tr_warmup = 0, tr_smax = 0, tr_ckpt_every = 0;
  double tr_lr = 1e-4, tr_dropout = -1.0;
  uint64_t tr_seed = 0;
  train->add_option("--manifest", tr_manifest, "corpus manifest")->required();
  train->add_option("--loss", tr_loss, "pit-baseline|sc-pit|greedy-tf|two-stage-pit");
  train->add_option("--profile", tr_profile, "desk|2spk|vspk");
  train->add_option("--epochs", tr_epochs, "training epochs");
  train->add_option("--batch", tr_batch, "batch size");
  train->add_option("--lr", tr_lr, "learning rate after warmup");
  train->add_option("--warmup", tr_warmup, "linear warmup steps");
  train->add_option("--seed", tr_seed, "training seed")->required();
  train->add_option("--s-max", tr_smax, "override max speakers");
  train->add_option("--dropout", tr_dropout, "override dropout rate");
  train->add_option("--out", tr_out, "checkpoint output path");
  train->add_option("--checkpoint-every", tr_ckpt_every, "save every N epochs");
  train->add_option("--resume", tr_resume, "resume from checkpoint");

  // infer
  auto* inf = app.add_subcommand("infer", "diarize a corpus with a trained model");
  std::string in_ckpt, in_manifest, in_out, in_postdir;
  double in_thr = 0.5;
  int in_smax = 0, in_median = 0;
  inf->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
  inf->add_option("--manifest", in_manifest, "corpus manifest")->required();
  inf->add_option("--out", in_out, "output RTTM path")->required();
  inf->add_option("--threshold", in_thr, "binarization threshold");
  inf->add_option("--s-max", in_smax, "override max decoding iterations");
  inf->add_option("--median", in_median, "median filter window (frames, odd)");
  inf->add_option("--dump-posteriors", in_postdir, "directory for posterior SCEF dumps");

  // score
  auto* sc = app.add_subcommand("score", "score hypothesis RTTM against reference");
  std::string sc_ref, sc_hyp;
  double sc_collar = 0.25;
  bool sc_partial = false, sc_counting = false;
  sc->add_option("--ref", sc_ref, "reference RTTM")->required();
  sc->add_option("--hyp", sc_hyp, "hypothesis RTTM")->required();
  sc->add_option("--collar", sc_collar, "collar seconds");
  sc->add_flag("--allow-partial", sc_partial, "score only matched recording ids");
  sc->add_flag("--counting", sc_counting, "print speaker-counting confusion");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(sim_n, sim_speakers, sim_frames, sim_feat, sim_overlap, sim_shift,
                          sim_noise, sim_seed, sim_out);
    if (train->parsed())
      return cmd_train(tr_manifest, tr_loss, tr_profile, tr_epochs, tr_batch, tr_lr, tr_warmup,
                       tr_seed, tr_smax, tr_dropout, tr_out, tr_ckpt_every, tr_resume);
    if (inf->parsed())
      return cmd_infer(in_ckpt, in_manifest, in_out, in_thr, in_smax, in_median, in_postdir);
    if (sc->parsed()) return cmd_score(sc_ref, sc_hyp, sc_collar, sc_partial, sc_counting);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
