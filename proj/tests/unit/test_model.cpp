#include "mian/grad_check.hpp"
#include "mian/train.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>

namespace mian {
namespace {

using namespace mian::testing;

std::vector<Ablation> all_ablations() {
  std::vector<Ablation> out;
  for (int bits = 0; bits < 16; ++bits) {
    out.push_back(Ablation{(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0, (bits & 8) != 0});
  }
  return out;
}

TEST(Ablation, NamesAndParsing) {
  EXPECT_EQ(Ablation{}.variant_name(), "MIAN");
  const std::vector<Ablation> singles = Ablation::single_variants();
  ASSERT_EQ(singles.size(), 4u);
  EXPECT_EQ(singles[0].variant_name(), "w/o intra-lg");
  EXPECT_EQ(singles[1].variant_name(), "w/o intra-lg-ic");
  EXPECT_EQ(singles[2].variant_name(), "w/o intra-ll-ic");
  EXPECT_EQ(singles[3].variant_name(), "w/o inter-ic");
  EXPECT_EQ(Ablation::parse("inter_ic").variant_name(), "w/o inter-ic");
  EXPECT_EQ(Ablation::parse(" intra-lg , w/o inter-ic"), (Ablation{true, false, false, true}));
  EXPECT_EQ(Ablation::parse(""), Ablation{});
  EXPECT_EQ(Ablation::parse("none"), Ablation{});
  EXPECT_THROW(Ablation::parse("intra_xx"), std::invalid_argument);
  for (const Ablation& a : all_ablations()) EXPECT_EQ(Ablation::parse(a.to_list()), a);
}

TEST(ModelConfig, FingerprintCoversArchitectureOnly) {
  const ModelConfig base = tiny_model();
  ModelConfig other = base;
  other.seed = 99;
  other.a_value = 7.3;
  EXPECT_EQ(base.fingerprint(), other.fingerprint());
  std::set<std::uint64_t> seen;
  for (const Ablation& a : all_ablations()) {
    ModelConfig c = base;
    c.ablation = a;
    seen.insert(c.fingerprint());
  }
  EXPECT_EQ(seen.size(), 16u);
  other = base;
  other.d_model = 16;
  EXPECT_NE(base.fingerprint(), other.fingerprint());
}

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny_model();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_model();
  c.m = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(ModelConfig{}.validate());
  EXPECT_EQ(ModelConfig{}.m, 196);
  EXPECT_EQ(ModelConfig{}.n_heads, 12);
  EXPECT_EQ(ModelConfig{}.n_layers, 2);
}

TEST(InitParams, LayoutAndScales) {
  const ModelConfig cfg = tiny_model();
  const ModelParams p = init_params(cfg);
  EXPECT_EQ(p.at("hlm.text.l2l.layer0.head1.Wq").shape, (std::vector<Index>{8, 4}));
  EXPECT_EQ(p.at("hlm.image.l2g.W2").shape, (std::vector<Index>{16, 8}));
  EXPECT_EQ(p.at("cim.o2t.layer0.head0.gate.W").shape, (std::vector<Index>{8, 4}));
  EXPECT_EQ(p.at("classifier.W1").shape, (std::vector<Index>{32, 8}));
  EXPECT_EQ(p.at("cim.t2o.layer0.block.ln1.gain").data, Matrix::Ones(1, 8));
  EXPECT_TRUE(p.at("classifier.b1").data.isZero(0.0));
  const Scalar limit = std::sqrt(6.0 / (8 + 8));
  EXPECT_LE(p.at("hlm.text.l2g.W1").data.cwiseAbs().maxCoeff(), limit);
  // Same seed, same values; different seed, different values.
  const ModelParams again = init_params(cfg);
  for (const auto& [path, t] : p) EXPECT_EQ(t.data, again.at(path).data) << path;
  ModelConfig reseeded = cfg;
  reseeded.seed = cfg.seed + 1;
  EXPECT_NE(init_params(reseeded).at("hlm.text.l2g.W1").data, p.at("hlm.text.l2g.W1").data);
}

TEST(Forward, MatchesOracleForEveryAblation) {
  std::mt19937_64 rng(51);
  for (const Ablation& a : all_ablations()) {
    const ModelConfig cfg = tiny_model(a);
    const ModelParams params = init_params(cfg);
    for (Index n_valid : {1, 2, 4}) {
      const NewsSample s = random_sample(cfg, n_valid, rng);
      const Prediction got = forward(s, cfg, params);
      const oracle::Output want = oracle_forward(s, cfg, params);
      EXPECT_NEAR(got.y_hat, want.y_hat, 1e-9) << a.variant_name();
      EXPECT_NEAR(got.logit, want.logit, 1e-9) << a.variant_name();
      ASSERT_EQ(got.r_n.size(), static_cast<Index>(want.r_n.size()));
      for (Index i = 0; i < got.r_n.size(); ++i) EXPECT_NEAR(got.r_n(i), want.r_n[i], 1e-9);
    }
  }
}

TEST(Forward, OutputIsAProbability) {
  std::mt19937_64 rng(52);
  const ModelConfig cfg = tiny_model();
  const ModelParams params = init_params(cfg);
  for (int i = 0; i < 20; ++i) {
    const Prediction p = forward(random_sample(cfg, 3, rng), cfg, params);
    EXPECT_GT(p.y_hat, 0.0);
    EXPECT_LT(p.y_hat, 1.0);
    EXPECT_DOUBLE_EQ(p.y_hat, 1.0 / (1.0 + std::exp(-p.logit)));
    EXPECT_EQ(p.r_n.size(), 4 * cfg.d_model);
  }
}

TEST(Forward, RejectsMismatchedSamples) {
  std::mt19937_64 rng(53);
  const ModelConfig cfg = tiny_model();
  const ModelParams params = init_params(cfg);
  NewsSample s = random_sample(cfg, 2, rng);
  s.image_patches = Matrix::Zero(5, cfg.d_model);
  EXPECT_THROW(forward(s, cfg, params), DimensionError);
  s = random_sample(cfg, 2, rng);
  s.text_mask.setConstant(false);
  EXPECT_THROW(forward(s, cfg, params), std::invalid_argument);
}

TEST(Forward, PaddedRowsDoNotMatter) {
  std::mt19937_64 rng(54);
  ModelConfig cfg = tiny_model();
  cfg.m = 6;
  const ModelParams params = init_params(cfg);
  const NewsSample s = random_sample(cfg, 3, rng);
  NewsSample permuted = s;
  permuted.text_tokens.row(3).swap(permuted.text_tokens.row(5));
  NewsSample dirty = s;
  dirty.text_tokens.bottomRows(3) = random_matrix(3, cfg.d_model, rng);
  const Prediction a = forward(s, cfg, params);
  EXPECT_EQ(a.y_hat, forward(permuted, cfg, params).y_hat);
  EXPECT_EQ(a.r_n, forward(dirty, cfg, params).r_n);
}

TEST(Forward, WithoutLocalToGlobalIgnoresItsParameters) {
  std::mt19937_64 rng(55);
  const ModelConfig cfg = tiny_model(Ablation::parse("intra_lg"));
  ModelParams params = init_params(cfg);
  const NewsSample s = random_sample(cfg, 3, rng);
  const Prediction before = forward(s, cfg, params);
  for (auto& [path, t] : params) {
    if (path.find(".l2g.") != std::string::npos || path.find(".fuse.") != std::string::npos) t.data.setRandom();
  }
  EXPECT_EQ(before.y_hat, forward(s, cfg, params).y_hat);
}

TEST(Forward, TraceCoversEverySite) {
  std::mt19937_64 rng(56);
  const ModelConfig cfg = tiny_model();
  const ModelParams params = init_params(cfg);
  AttentionTrace trace;
  forward(random_sample(cfg, 3, rng), cfg, params, &trace);
  std::set<std::string> sites;
  for (const auto& [site, w] : trace.sites) sites.insert(site);
  for (const char* s : {"hlm.text.l2l.layer0.head0.att", "hlm.text.l2l.layer0.head1.inv", "hlm.image.l2g.att",
                        "hlm.text.l2g.inv", "cim.t2o.layer0.head0.att", "cim.o2t.layer0.head1.inv"}) {
    EXPECT_TRUE(sites.count(s)) << s;
  }
  // Site names are parameter prefixes.
  for (const std::string& s : sites) {
    const std::string prefix = s.substr(0, s.rfind('.'));
    bool found = false;
    for (const auto& [path, t] : params) found |= path.rfind(prefix, 0) == 0;
    EXPECT_TRUE(found) << s;
  }
}

TEST(Loss, Values) {
  EXPECT_NEAR(loss(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss(0.5, 0), 0.69315, 1e-5);
  EXPECT_LT(loss(0.999999, 1), 1e-5);
  EXPECT_NEAR(loss(0.9, 0), -std::log(0.1), 1e-12);
  EXPECT_NEAR(loss(0.9, 0), 2.30259, 1e-5);
  EXPECT_TRUE(std::isfinite(loss(0.0, 1)));
  EXPECT_TRUE(std::isfinite(loss(1.0, 0)));
}

TEST(PredictLabel, ThresholdIsInclusive) {
  EXPECT_EQ(predict_label(0.7), 1);
  EXPECT_EQ(predict_label(0.5), 1);
  EXPECT_EQ(predict_label(0.49999), 0);
  EXPECT_EQ(predict_label(0.6, 0.7), 0);
}

TEST(Gradients, FullModelMatchesCentralDifferences) {
  std::mt19937_64 rng(57);
  const ModelConfig cfg = tiny_model();
  ModelParams params = init_params(cfg);
  const std::vector<NewsSample> samples{random_sample(cfg, 3, rng, kReal), random_sample(cfg, 4, rng, kFake)};
  const GradCheckReport report = grad_check(
      [&](Tape& tape) {
        Var total = binary_cross_entropy(forward(tape, samples[0], cfg, params).y_hat, samples[0].label);
        return add(total, binary_cross_entropy(forward(tape, samples[1], cfg, params).y_hat, samples[1].label));
      },
      params);
  EXPECT_EQ(report.entries.size(), params.size());
  for (const GradCheckEntry& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.path;
}

TEST(Gradients, DisabledBlocksGetExactlyZero) {
  std::mt19937_64 rng(58);
  for (const Ablation& a : Ablation::single_variants()) {
    const ModelConfig cfg = tiny_model(a);
    ModelParams params = init_params(cfg);
    const NewsSample s = random_sample(cfg, 3, rng);
    Tape tape;
    tape.backward(binary_cross_entropy(forward(tape, s, cfg, params).y_hat, s.label));
    for (const auto& [path, t] : params) {
      const bool gate = path.find(".gate.") != std::string::npos;
      const bool lg = path.find(".l2g.") != std::string::npos || path.find(".fuse.") != std::string::npos;
      const bool disabled = (a.intra_lg && lg) || (a.intra_lg_ic && lg && gate) ||
                            (a.intra_ll_ic && gate && path.find(".l2l.") != std::string::npos) ||
                            (a.inter_ic && gate && path.rfind("cim.", 0) == 0);
      const bool zero = !t.has_grad() || t.grad.isZero(0.0);
      EXPECT_EQ(zero, disabled) << a.variant_name() << ' ' << path;
    }
  }
}

TEST(Training, OverfitsEightSamples) {
  std::mt19937_64 rng(59);
  const ModelConfig cfg = tiny_model();
  std::vector<NewsSample> samples;
  for (int i = 0; i < 8; ++i) samples.push_back(random_sample(cfg, 2 + i % 3, rng, i % 2 ? kReal : kFake));
  TrainConfig t;
  t.epochs = 500;
  t.batch_size = 8;
  t.lr0 = 1e-3;
  t.step_size = 1000;
  const TrainResult r = train(cfg, samples, {}, t);
  EXPECT_LT(r.history.back().loss, 0.01);
  EXPECT_EQ(r.history.back().accuracy, 1.0);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripIsBitwise) {
  const ModelConfig cfg = tiny_model(Ablation::parse("inter_ic"));
  ModelParams params = init_params(cfg);
  const auto dir = scratch_dir("ckpt_roundtrip");
  save_checkpoint(params, cfg, dir / "a.ckpt");
  const ModelParams loaded = load_checkpoint(dir / "a.ckpt", cfg);
  ASSERT_EQ(loaded.size(), params.size());
  for (const auto& [path, t] : params) {
    EXPECT_EQ(loaded.at(path).shape, t.shape);
    EXPECT_EQ(std::memcmp(loaded.at(path).data.data(), t.data.data(), sizeof(Scalar) * t.size()), 0) << path;
  }
  EXPECT_EQ(encode_checkpoint(loaded, cfg.fingerprint()), encode_checkpoint(params, cfg.fingerprint()));
}

TEST(Checkpoint, HeaderLayout) {
  ModelParams p;
  p.add("w", Tensor::from({1, 2}, Matrix::Constant(1, 2, 1.0)));
  const std::vector<std::uint8_t> bytes = encode_checkpoint(p, 0x0102030405060708ull);
  const std::vector<std::uint8_t> want{
      'M', 'I', 'A', 'N', 'C', 'K', 'P', 'T',  // magic
      1, 0, 0, 0,                              // version
      8, 7, 6, 5, 4, 3, 2, 1,                  // fingerprint
      1, 0, 0, 0,                              // count
      1, 0, 'w',                               // path
      2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0,      // rank, dims
      0, 0, 0, 0, 0, 0, 0xf0, 0x3f,            // 1.0
      0, 0, 0, 0, 0, 0, 0xf0, 0x3f};
  EXPECT_EQ(bytes, want);
}

TEST(Checkpoint, FingerprintAndShapeGuards) {
  const ModelConfig cfg = tiny_model();
  const auto dir = scratch_dir("ckpt_guards");
  save_checkpoint(init_params(cfg), cfg, dir / "a.ckpt");
  ModelConfig wider = cfg;
  wider.d_model = 16;
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt", wider), FingerprintError);
  ModelConfig ablated = cfg;
  ablated.ablation.inter_ic = true;
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt", ablated), FingerprintError);
}

constexpr std::uint64_t kAnyOffset = ~0ull;

TEST(Checkpoint, CorruptFilesAreDiagnosed) {
  const ModelConfig cfg = tiny_model();
  const std::vector<std::uint8_t> good = encode_checkpoint(init_params(cfg), cfg.fingerprint());
  auto expect_parse_error = [](std::vector<std::uint8_t> bytes, std::uint64_t offset, const char* needle) {
    try {
      decode_checkpoint(bytes);
      ADD_FAILURE() << "accepted corrupt checkpoint (" << needle << ")";
    } catch (const ParseError& e) {
      if (offset != kAnyOffset) EXPECT_EQ(e.offset(), offset) << e.what();
      EXPECT_LE(e.offset(), bytes.size());
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  std::vector<std::uint8_t> bad = good;
  bad[0] = 'X';
  expect_parse_error(bad, 0, "magic");
  bad = good;
  bad[8] = 2;
  expect_parse_error(bad, 8, "version");
  bad.assign(good.begin(), good.begin() + static_cast<long>(good.size() - 3));
  expect_parse_error(bad, kAnyOffset, "truncated");
  bad = good;
  bad[20] += 1;  // header claims one more parameter than present
  expect_parse_error(bad, good.size(), "truncated");
  bad = good;
  bad[20] -= 1;  // header claims one fewer
  try {
    decode_checkpoint(bad);
    ADD_FAILURE() << "accepted count mismatch";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("count mismatch"), std::string::npos) << e.what();
  }
  bad = good;
  const double nan = std::nan("");
  std::memcpy(bad.data() + bad.size() - 8, &nan, 8);
  expect_parse_error(bad, good.size() - 8, "non-finite");
}

}  // namespace
}  // namespace mian
