#pragma once

#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sceend/model.hpp"
#include "sceend/optim.hpp"

namespace sceend {

/// Single-file checkpoint: a plain-text manifest (config, training
/// progress, array names/shapes/offsets) terminated by a DATA line,
/// followed by one blob of little-endian 64-bit floats. Offsets are in
/// doubles from the blob start. Round trips are bitwise.
struct CheckpointMeta {
  long step = 0;
  int epoch = 0;
};

namespace detail {

inline void write_config_lines(std::ostream& f, const ModelConfig& c) {
  f << "config\tfeat_dim\t" << c.feat_dim << "\n";
  f << "config\thidden_dim\t" << c.hidden_dim << "\n";
  f << "config\tnum_blocks\t" << c.num_blocks << "\n";
  f << "config\tnum_heads\t" << c.num_heads << "\n";
  f << "config\tffn_dim\t" << c.ffn_dim << "\n";
  f << "config\tmax_speakers\t" << c.max_speakers << "\n";
  f << "config\tdropout\t" << c.dropout << "\n";
  f << "config\tthreshold\t" << c.threshold << "\n";
}

}  // namespace detail

inline void checkpoint_save(ModelParams& params, const std::string& path,
                            const CheckpointMeta& meta = {}, OptimState* opt = nullptr) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f << "SCCK\t1\n";
  detail::write_config_lines(f, params.cfg);
  f << "step\t" << meta.step << "\n";
  f << "epoch\t" << meta.epoch << "\n";

  auto named = params.named();
  std::vector<const Matrix*> blobs;
  size_t offset = 0;
  auto emit = [&](const std::string& name, const Matrix& m) {
    f << "array\t" << name << "\t" << m.rows << "\t" << m.cols << "\t" << offset << "\n";
    blobs.push_back(&m);
    offset += m.size();
  };
  for (auto& [name, m] : named) emit(name, *m);
  if (opt) {
    opt->ensure_shapes(params.all());
    f << "optim_step\t" << opt->step << "\n";
    for (size_t i = 0; i < named.size(); ++i) {
      emit("adam.m." + named[i].first, opt->m[i]);
      emit("adam.v." + named[i].first, opt->v[i]);
    }
  }
  f << "DATA\n";
  for (const Matrix* m : blobs)
    f.write(reinterpret_cast<const char*>(m->data.data()), m->size() * sizeof(double));
  if (!f) throw IoError("write failed: " + path);
}

struct LoadedCheckpoint {
  ModelParams params;
  CheckpointMeta meta;
  std::optional<OptimState> opt;
};

inline LoadedCheckpoint checkpoint_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "SCCK\t1")
    throw IoError(path + ": not a version-1 checkpoint");

  ModelConfig cfg;
  CheckpointMeta meta;
  long optim_step = -1;
  struct ArraySpec {
    std::string name;
    int rows, cols;
    size_t offset;
  };
  std::vector<ArraySpec> arrays;
  while (std::getline(f, line)) {
    if (line == "DATA") break;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "config") {
      std::string key;
      double v;
      ss >> key >> v;
      if (key == "feat_dim") cfg.feat_dim = static_cast<int>(v);
      else if (key == "hidden_dim") cfg.hidden_dim = static_cast<int>(v);
      else if (key == "num_blocks") cfg.num_blocks = static_cast<int>(v);
      else if (key == "num_heads") cfg.num_heads = static_cast<int>(v);
      else if (key == "ffn_dim") cfg.ffn_dim = static_cast<int>(v);
      else if (key == "max_speakers") cfg.max_speakers = static_cast<int>(v);
      else if (key == "dropout") cfg.dropout = v;
      else if (key == "threshold") cfg.threshold = v;
      else throw IoError(path + ": unknown config key " + key);
    } else if (tag == "step") {
      ss >> meta.step;
    } else if (tag == "epoch") {
      ss >> meta.epoch;
    } else if (tag == "optim_step") {
      ss >> optim_step;
    } else if (tag == "array") {
      ArraySpec a;
      if (!(ss >> a.name >> a.rows >> a.cols >> a.offset))
        throw IoError(path + ": malformed array line");
      arrays.push_back(std::move(a));
    } else {
      throw IoError(path + ": unknown manifest tag " + tag);
    }
  }
  if (line != "DATA") throw IoError(path + ": manifest not terminated by DATA");

  size_t total = 0;
  for (auto& a : arrays) total = std::max(total, a.offset + static_cast<size_t>(a.rows) * a.cols);
  std::vector<double> blob(total);
  f.read(reinterpret_cast<char*>(blob.data()), total * sizeof(double));
  if (static_cast<size_t>(f.gcount()) != total * sizeof(double))
    throw IoError(path + ": truncated blob");

  LoadedCheckpoint out;
  out.params = init_model(cfg, 0);  // shapes only; overwritten below
  out.meta = meta;
  auto named = out.params.named();

  auto find_array = [&](const std::string& name) -> const ArraySpec* {
    for (auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  };
  auto load_into = [&](const std::string& name, Matrix& m) {
    const ArraySpec* a = find_array(name);
    if (!a) throw IoError(path + ": missing array " + name);
    if (a->rows != m.rows || a->cols != m.cols)
      throw IoError(path + ": shape mismatch for " + name);
    std::memcpy(m.data.data(), blob.data() + a->offset, m.size() * sizeof(double));
  };
  for (auto& [name, m] : named) load_into(name, *m);

  if (optim_step >= 0) {
    OptimState opt;
    opt.step = optim_step;
    for (auto& [name, m] : named) {
      Matrix mm(m->rows, m->cols), vv(m->rows, m->cols);
      load_into("adam.m." + name, mm);
      load_into("adam.v." + name, vv);
      opt.m.push_back(std::move(mm));
      opt.v.push_back(std::move(vv));
    }
    out.opt = std::move(opt);
  }
  return out;
}

}  // namespace sceend
