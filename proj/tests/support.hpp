#pragma once

#include "mian/cim.hpp"
#include "mian/config.hpp"
#include "mian/hlm.hpp"
#include "mian/model.hpp"
#include "reference_model.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace mian::testing {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, Scalar scale = 1.0) {
  std::normal_distribution<Scalar> dist(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

/// m=u=4, d=8, 2 heads, 1 layer, full model.
inline ModelConfig tiny_model(Ablation ablation = {}) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.m = 4;
  c.u = 4;
  c.classifier_hidden = 8;
  c.ablation = ablation;
  c.seed = 3;
  return c;
}

/// Random sample whose first `n_valid` text rows are live.
inline NewsSample random_sample(const ModelConfig& cfg, Index n_valid, std::mt19937_64& rng, int label = kReal) {
  NewsSample s;
  s.text_tokens = random_matrix(cfg.m, cfg.d_model, rng);
  s.text_tokens.bottomRows(cfg.m - n_valid).setZero();
  s.text_mask = KeyMask::Constant(cfg.m, false);
  s.text_mask.head(n_valid).setConstant(true);
  s.text_cls = random_matrix(1, cfg.d_model, rng);
  s.image_patches = random_matrix(cfg.u, cfg.d_model, rng);
  s.image_cls = random_matrix(1, cfg.d_model, rng);
  s.label = label;
  s.fake_type = label == kReal ? FakeType::Real : FakeType::Mismatched;
  return s;
}

inline oracle::Mat to_mat(const Matrix& m) {
  oracle::Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline std::vector<double> to_vec(const RowVector& v) { return {v.data(), v.data() + v.size()}; }

inline oracle::Input to_oracle(const NewsSample& s) {
  oracle::Input in;
  in.text = to_mat(s.text_tokens);
  in.text_cls = to_vec(s.text_cls);
  in.text_mask.assign(s.text_mask.data(), s.text_mask.data() + s.text_mask.size());
  in.image = to_mat(s.image_patches);
  in.image_cls = to_vec(s.image_cls);
  return in;
}

inline oracle::Output oracle_forward(const NewsSample& s, const ModelConfig& cfg, const ModelParams& params) {
  oracle::Shape shape{cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.a_value};
  oracle::Flags flags{!cfg.ablation.intra_lg, !cfg.ablation.intra_ll_ic, !cfg.ablation.intra_lg_ic,
                      !cfg.ablation.inter_ic};
  return oracle::reference_forward(to_oracle(s), shape, flags,
                                   [&](const std::string& path) { return to_mat(params.at(path).data); });
}

inline oracle::ParamLookup lookup(const ModelParams& params) {
  return [&params](const std::string& path) { return to_mat(params.at(path).data); };
}

// Binders mirroring the model's parameter layout, for kernel-level tests.

inline MultiHeadParams bind_attention(Tape& tape, ModelParams& ps, const std::string& prefix, int heads,
                                      bool with_inverse) {
  MultiHeadParams mh;
  for (int h = 0; h < heads; ++h) {
    const std::string hp = prefix + ".head" + std::to_string(h);
    HeadParams head{tape.param(ps.at(hp + ".Wq")), tape.param(ps.at(hp + ".Wk")), tape.param(ps.at(hp + ".Wv")),
                    std::nullopt};
    if (with_inverse) head.gate = GateParams{tape.param(ps.at(hp + ".gate.W")), tape.param(ps.at(hp + ".gate.b"))};
    mh.heads.push_back(head);
  }
  mh.wcat = tape.param(ps.at(prefix + ".Wcat"));
  return mh;
}

inline BlockParams bind_block(Tape& tape, ModelParams& ps, const std::string& prefix) {
  auto p = [&](const char* name) { return tape.param(ps.at(prefix + ".block." + name)); };
  return {p("Wfc1"), p("Wfc2"), p("b"), p("ln1.gain"), p("ln1.bias"), p("ln2.gain"), p("ln2.bias")};
}

inline HlmParams bind_hlm(Tape& tape, ModelParams& ps, const std::string& prefix, const ModelConfig& cfg,
                          const HlmOptions& opts) {
  HlmParams out;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = prefix + ".l2l.layer" + std::to_string(l);
    out.attention.push_back(bind_attention(tape, ps, lp, cfg.n_heads, opts.ll_inverse));
    out.blocks.push_back(bind_block(tape, ps, lp));
  }
  out.l2g.w1 = tape.param(ps.at(prefix + ".l2g.W1"));
  out.l2g.w2 = tape.param(ps.at(prefix + ".l2g.W2"));
  out.l2g.w3 = tape.param(ps.at(prefix + ".l2g.W3"));
  if (opts.lg_inverse) {
    out.l2g.gate = GateParams{tape.param(ps.at(prefix + ".l2g.gate.W")), tape.param(ps.at(prefix + ".l2g.gate.b"))};
  }
  out.w_fuse = tape.param(ps.at(prefix + ".fuse.W"));
  return out;
}

inline CimParams bind_cim(Tape& tape, ModelParams& ps, const ModelConfig& cfg, bool with_inverse) {
  CimParams out;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string t2o = "cim.t2o.layer" + std::to_string(l);
    const std::string o2t = "cim.o2t.layer" + std::to_string(l);
    out.text_from_image.push_back(
        {bind_attention(tape, ps, t2o, cfg.n_heads, with_inverse), bind_block(tape, ps, t2o)});
    out.image_from_text.push_back(
        {bind_attention(tape, ps, o2t, cfg.n_heads, with_inverse), bind_block(tape, ps, o2t)});
  }
  return out;
}

inline Scalar max_abs_diff(const Matrix& a, const oracle::Mat& b) {
  Scalar worst = 0.0;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - b[i][j]));
  return worst;
}

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

/// Runs a shell command, capturing stdout and stderr together.
inline CommandResult run_command(const std::string& command) {
  CommandResult r;
  FILE* pipe = popen((command + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

/// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mian_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mian::testing
