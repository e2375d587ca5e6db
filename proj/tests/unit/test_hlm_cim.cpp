#include "mian/cim.hpp"
#include "mian/hlm.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

namespace mian {
namespace {

using namespace mian::testing;

struct Branch {
  Matrix tokens;
  RowVector cls;
  KeyMask mask;
};

Branch random_branch(Index n, Index n_valid, Index d, std::mt19937_64& rng) {
  Branch b{random_matrix(n, d, rng), random_matrix(1, d, rng), KeyMask::Constant(n, false)};
  b.tokens.bottomRows(n - n_valid).setZero();
  b.mask.head(n_valid).setConstant(true);
  return b;
}

HlmOptions options_for(const Ablation& a) {
  HlmOptions o;
  o.use_lg = !a.intra_lg;
  o.ll_inverse = !a.intra_ll_ic;
  o.lg_inverse = !a.intra_lg_ic;
  return o;
}

HlmOutput run_hlm(Tape& tape, ModelParams& params, const ModelConfig& cfg, const Branch& b,
                  const HlmOptions& opts) {
  const ModalitySequence seq{tape.constant(b.tokens), tape.constant(b.cls), b.mask};
  return hlm_forward(seq, cfg.attention(), bind_hlm(tape, params, "hlm.text", cfg, opts), opts);
}

TEST(GlobalFeature, MeanOfValidTokensThenCls) {
  Tape tape;
  Matrix tokens(3, 2);
  tokens << 1, 2, 1, 2, 0, 0;
  RowVector cls(2);
  cls << 7, 8;
  KeyMask mask(3);
  mask << true, true, false;
  const Matrix g = global_feature({tape.constant(tokens), tape.constant(cls), mask}).value();
  ASSERT_EQ(g.cols(), 4);
  EXPECT_EQ(g(0, 0), 1.0);
  EXPECT_EQ(g(0, 1), 2.0);
  EXPECT_EQ(g(0, 2), 7.0);
  EXPECT_EQ(g(0, 3), 8.0);

  Matrix one(2, 1);
  one << 2, 0;
  KeyMask first(2);
  first << true, false;
  EXPECT_EQ(global_feature({tape.constant(one), tape.constant(Matrix::Zero(1, 1)), first}).value()(0, 0), 2.0);
  EXPECT_THROW(global_feature({tape.constant(one), tape.constant(Matrix::Zero(1, 1)), KeyMask::Constant(2, false)}),
               std::invalid_argument);
}

TEST(LocalToLocal, ZeroLayersIsIdentity) {
  std::mt19937_64 rng(31);
  ModelConfig cfg = tiny_model();
  const Branch b = random_branch(4, 4, cfg.d_model, rng);
  MultiHeadConfig mh = cfg.attention();
  mh.n_layers = 0;
  Tape tape;
  const Var out = local_to_local({tape.constant(b.tokens), tape.constant(b.cls), b.mask}, mh, HlmParams{}, {});
  EXPECT_EQ(out.value(), b.tokens);
}

TEST(LocalToGlobal, ZeroScoringVectorGivesUniformWeights) {
  std::mt19937_64 rng(32);
  ModelConfig cfg = tiny_model();
  ModelParams params = init_params(cfg);
  params.at("hlm.text.l2g.W3").data.setZero();
  const Branch b = random_branch(4, 3, cfg.d_model, rng);
  Tape tape;
  const HlmOptions opts;
  const HlmParams p = bind_hlm(tape, params, "hlm.text", cfg, opts);
  const ModalitySequence seq{tape.constant(b.tokens), tape.constant(b.cls), b.mask};
  const LocalToGlobalResult r = local_to_global(seq, global_feature(seq), p.l2g, opts);
  const Matrix w = r.weights.value();
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(w(i, 0), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(w(3, 0), 0.0);
  EXPECT_EQ(r.inv_weights.value()(3, 0), 0.0);
  EXPECT_NEAR(r.inv_weights.value().sum(), 1.0, 1e-12);
}

TEST(LocalToGlobal, WeightsMatchOracle) {
  std::mt19937_64 rng(33);
  ModelConfig cfg = tiny_model();
  cfg.d_model = 4;
  ModelParams params = init_params(cfg);
  for (Index n_valid : {1, 2, 3}) {
    const Branch b = random_branch(3, n_valid, 4, rng);
    Tape tape;
    const HlmOptions opts;
    const ModalitySequence seq{tape.constant(b.tokens), tape.constant(b.cls), b.mask};
    const LocalToGlobalResult r =
        local_to_global(seq, global_feature(seq), bind_hlm(tape, params, "hlm.text", cfg, opts).l2g, opts);
    const std::vector<double> want =
        oracle::reference_l2g_weights(to_mat(b.tokens), to_vec(b.cls), std::vector<bool>(b.mask.data(), b.mask.data() + 3),
                                      "hlm.text", lookup(params));
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(r.weights.value()(i, 0), want[i], 1e-10);
    EXPECT_NEAR(r.weights.value().sum(), 1.0, 1e-6);
  }
}

TEST(Hlm, MatchesOracleUnderEveryAblation) {
  std::mt19937_64 rng(34);
  ModelConfig cfg = tiny_model();
  cfg.n_layers = 2;
  ModelParams params = init_params(cfg);
  const oracle::Shape shape{cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.a_value};
  for (int bits = 0; bits < 8; ++bits) {
    const Ablation a{(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0, false};
    const HlmOptions opts = options_for(a);
    const Branch b = random_branch(5, 3, cfg.d_model, rng);
    Tape tape;
    const HlmOutput out = run_hlm(tape, params, cfg, b, opts);
    const oracle::Flags flags{opts.use_lg, opts.ll_inverse, opts.lg_inverse, true};
    const oracle::Mat want = oracle::reference_hierarchical(to_mat(b.tokens), to_vec(b.cls),
                                                            std::vector<bool>(b.mask.data(), b.mask.data() + 5), shape, flags,
                                                            "hlm.text", lookup(params));
    EXPECT_LT(max_abs_diff(out.seq.value(), want), 1e-8) << a.variant_name();
    EXPECT_EQ(out.seq.rows(), 5);
    EXPECT_EQ(out.seq.cols(), cfg.d_model);
  }
}

TEST(Hlm, WithoutLocalToGlobalOutputIsLocalToLocal) {
  std::mt19937_64 rng(35);
  ModelConfig cfg = tiny_model();
  ModelParams params = init_params(cfg);
  HlmOptions opts;
  opts.use_lg = false;
  const Branch b = random_branch(4, 4, cfg.d_model, rng);
  Tape tape;
  const HlmOutput out = run_hlm(tape, params, cfg, b, opts);
  const Var ll = local_to_local({tape.constant(b.tokens), tape.constant(b.cls), b.mask}, cfg.attention(),
                                bind_hlm(tape, params, "hlm.text", cfg, opts), opts);
  EXPECT_EQ(out.seq.value(), ll.value());
}

TEST(Hlm, PaddedRowContentNeverReachesOutputs) {
  std::mt19937_64 rng(36);
  ModelConfig cfg = tiny_model();
  cfg.m = 6;
  ModelParams params = init_params(cfg);
  const Branch clean = random_branch(6, 3, cfg.d_model, rng);
  Branch dirty = clean;
  dirty.tokens.bottomRows(3) = random_matrix(3, cfg.d_model, rng, 5.0);
  Tape tape;
  const HlmOutput a = run_hlm(tape, params, cfg, clean, HlmOptions{});
  const HlmOutput b = run_hlm(tape, params, cfg, dirty, HlmOptions{});
  EXPECT_EQ(a.seq.value(), b.seq.value());
  EXPECT_EQ(a.ll.value(), b.ll.value());
  EXPECT_EQ(a.lg_weights.value(), b.lg_weights.value());
  EXPECT_EQ(a.lg_pooled.value(), b.lg_pooled.value());
}

TEST(Hlm, DisabledBlocksReceiveNoGradient) {
  std::mt19937_64 rng(37);
  ModelConfig cfg = tiny_model();
  const Branch b = random_branch(4, 3, cfg.d_model, rng);
  for (int bits = 1; bits < 8; ++bits) {
    const Ablation a{(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0, false};
    ModelParams params = init_params(cfg);
    const HlmOptions opts = options_for(a);
    Tape tape;
    // Bind everything so that disabled blocks are reachable by name but unused.
    HlmOptions all;
    const HlmParams p = bind_hlm(tape, params, "hlm.text", cfg, all);
    const HlmOutput out =
        hlm_forward({tape.constant(b.tokens), tape.constant(b.cls), b.mask}, cfg.attention(), p, opts);
    tape.backward(sum(mul(out.seq, tape.constant(random_matrix(4, cfg.d_model, rng)))));
    for (const auto& [path, t] : params) {
      if (path.rfind("hlm.text", 0) != 0) continue;
      const bool lg_block = path.find(".l2g.") != std::string::npos || path.find(".fuse.") != std::string::npos;
      const bool disabled = (a.intra_lg && lg_block) ||
                            (a.intra_lg_ic && path.find(".l2g.gate.") != std::string::npos) ||
                            (a.intra_ll_ic && path.find(".l2l.") != std::string::npos &&
                             path.find(".gate.") != std::string::npos);
      if (disabled) {
        EXPECT_TRUE(!t.has_grad() || t.grad.isZero(0.0)) << a.variant_name() << ' ' << path;
      } else {
        EXPECT_TRUE(t.has_grad() && !t.grad.isZero(0.0)) << a.variant_name() << ' ' << path;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Cross-modal interaction

struct CimSetup {
  ModelConfig cfg = tiny_model();
  ModelParams params;
  Matrix text, image;
  KeyMask text_mask;
};

CimSetup cim_setup(std::uint64_t seed, Index n_valid = 3) {
  std::mt19937_64 rng(seed);
  CimSetup s;
  s.cfg.u = 5;
  s.params = init_params(s.cfg);
  s.text = random_matrix(s.cfg.m, s.cfg.d_model, rng);
  s.image = random_matrix(s.cfg.u, s.cfg.d_model, rng);
  s.text_mask = KeyMask::Constant(s.cfg.m, false);
  s.text_mask.head(n_valid).setConstant(true);
  return s;
}

TEST(Cim, ShapesAndMaskedKeys) {
  CimSetup s = cim_setup(41);
  Tape tape;
  const CimOutput out = cim_forward(tape.constant(s.text), tape.constant(s.image), s.text_mask, s.cfg.attention(),
                                    bind_cim(tape, s.params, s.cfg, true), {});
  EXPECT_EQ(out.text_enriched.rows(), s.cfg.m);
  EXPECT_EQ(out.image_enriched.rows(), s.cfg.u);
  EXPECT_EQ(out.co_weights_t.rows(), s.cfg.m);
  EXPECT_EQ(out.co_weights_t.cols(), s.cfg.u);
  EXPECT_EQ(out.co_weights_o.rows(), s.cfg.u);
  EXPECT_EQ(out.co_weights_o.cols(), s.cfg.m);
  for (const Matrix* w : {&out.co_weights_t, &out.co_weights_o, &out.inv_weights_t, &out.inv_weights_o}) {
    for (Index i = 0; i < w->rows(); ++i) EXPECT_NEAR(w->row(i).sum(), 1.0, 1e-12);
  }
  for (Index j = 3; j < s.cfg.m; ++j) {
    EXPECT_TRUE(out.co_weights_o.col(j).isZero(0.0));
    EXPECT_TRUE(out.inv_weights_o.col(j).isZero(0.0));
  }
}

TEST(Cim, MatchesOracleWithAndWithoutInverse) {
  CimSetup s = cim_setup(42);
  const oracle::Shape shape{s.cfg.d_model, s.cfg.n_heads, 1, 1.0};
  const std::vector<bool> tmask(s.text_mask.data(), s.text_mask.data() + s.cfg.m);
  const std::vector<bool> all(s.cfg.u, true);
  for (bool inverse : {true, false}) {
    Tape tape;
    CimOptions opts;
    opts.with_inverse = inverse;
    const CimOutput out = cim_forward(tape.constant(s.text), tape.constant(s.image), s.text_mask,
                                      s.cfg.attention(), bind_cim(tape, s.params, s.cfg, inverse), opts);
    const auto lk = lookup(s.params);
    const oracle::Mat t = to_mat(s.text), o = to_mat(s.image);
    const oracle::Mat want_t = oracle::reference_block(
        t, oracle::reference_multi_head(t, o, all, inverse, shape, "cim.t2o.layer0", lk), "cim.t2o.layer0", lk);
    const oracle::Mat want_o = oracle::reference_block(
        o, oracle::reference_multi_head(o, t, tmask, inverse, shape, "cim.o2t.layer0", lk), "cim.o2t.layer0", lk);
    EXPECT_LT(max_abs_diff(out.text_enriched.value(), want_t), 1e-8);
    EXPECT_LT(max_abs_diff(out.image_enriched.value(), want_o), 1e-8);
    EXPECT_EQ(out.inv_weights_t.size() == 0, !inverse);
  }
}

TEST(Cim, ConstantSourceRowsIgnoreWeights) {
  CimSetup s = cim_setup(43);
  std::mt19937_64 rng(44);
  const Matrix row = random_matrix(1, s.cfg.d_model, rng);
  const Matrix image = row.replicate(s.cfg.u, 1);
  Tape tape;
  const CoAttentionParams p = bind_cim(tape, s.params, s.cfg, false).text_from_image[0];
  CoAttendOptions opts;
  opts.with_inverse = false;
  const CoAttendResult r = co_attend(tape.constant(s.text), tape.constant(image), s.cfg.attention(), p, opts);
  // Every head returns v·Wv for each query, whatever the weights.
  std::vector<Var> heads;
  for (const HeadParams& h : p.attention.heads) heads.push_back(matmul(tape.constant(row), h.wv));
  const Var broadcast = matmul(tape.constant(Matrix::Ones(s.cfg.m, 1)), matmul(concat_cols(heads), p.attention.wcat));
  const Matrix want = transformer_block(tape.constant(s.text), broadcast, p.block).value();
  EXPECT_LT((r.enriched.value() - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cim, SymmetricInputsGiveSymmetricOutputs) {
  CimSetup s = cim_setup(45, 4);
  s.cfg.u = s.cfg.m;
  s.params = init_params(s.cfg);
  for (auto& [path, t] : s.params) {
    if (path.rfind("cim.o2t.", 0) == 0) t.data = s.params.at("cim.t2o." + path.substr(8)).data;
  }
  Tape tape;
  const Var x = tape.constant(s.text);
  const CimOutput out = cim_forward(x, x, KeyMask::Constant(s.cfg.m, true), s.cfg.attention(),
                                    bind_cim(tape, s.params, s.cfg, true), {});
  EXPECT_EQ(out.text_enriched.value(), out.image_enriched.value());
}

TEST(Cim, SaturatedGateMatchesNoInverse) {
  CimSetup s = cim_setup(46);
  for (auto& [path, t] : s.params) {
    if (path.rfind("cim.", 0) == 0 && path.find(".gate.") != std::string::npos) {
      if (path.back() == 'W') t.data.setZero();
      else t.data.setConstant(20.0);
    }
  }
  Tape tape;
  CimOptions with, without;
  without.with_inverse = false;
  const CimOutput a = cim_forward(tape.constant(s.text), tape.constant(s.image), s.text_mask, s.cfg.attention(),
                                  bind_cim(tape, s.params, s.cfg, true), with);
  const CimOutput b = cim_forward(tape.constant(s.text), tape.constant(s.image), s.text_mask, s.cfg.attention(),
                                  bind_cim(tape, s.params, s.cfg, false), without);
  EXPECT_LT((a.text_enriched.value() - b.text_enriched.value()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((a.image_enriched.value() - b.image_enriched.value()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Cim, GradientsReachBothModalities) {
  CimSetup s = cim_setup(47);
  Tape tape;
  const Var text = tape.variable(s.text), image = tape.variable(s.image);
  const CimOutput out =
      cim_forward(text, image, s.text_mask, s.cfg.attention(), bind_cim(tape, s.params, s.cfg, true), {});
  std::mt19937_64 rng(1);
  tape.backward(sum(mul(out.text_enriched, tape.constant(random_matrix(s.cfg.m, s.cfg.d_model, rng)))));
  EXPECT_GT(image.grad().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(text.grad().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Cim, WithoutInverseGatesGetNoGradient) {
  CimSetup s = cim_setup(48);
  Tape tape;
  CimOptions opts;
  opts.with_inverse = false;
  CimParams p = bind_cim(tape, s.params, s.cfg, true);  // gates bound but unused
  const CimOutput out =
      cim_forward(tape.constant(s.text), tape.constant(s.image), s.text_mask, s.cfg.attention(), p, opts);
  std::mt19937_64 rng(2);
  tape.backward(add(sum(mul(out.text_enriched, tape.constant(random_matrix(s.cfg.m, s.cfg.d_model, rng)))),
                    sum(mul(out.image_enriched, tape.constant(random_matrix(s.cfg.u, s.cfg.d_model, rng))))));
  for (const auto& [path, t] : s.params) {
    if (path.rfind("cim.", 0) != 0) continue;
    const bool gate = path.find(".gate.") != std::string::npos;
    EXPECT_EQ(!t.has_grad() || t.grad.isZero(0.0), gate) << path;
  }
  EXPECT_EQ(out.inv_weights_t.size(), 0);
  EXPECT_EQ(out.inv_weights_o.size(), 0);
}

}  // namespace
}  // namespace mian
