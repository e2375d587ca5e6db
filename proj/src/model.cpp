#include "mian/model.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <sstream>

namespace mian {

// ---------------------------------------------------------------------------
// Ablation

namespace {

struct AblationKey {
  const char* key;
  const char* label;
  bool Ablation::*flag;
};

constexpr AblationKey kAblationKeys[] = {
    {"intra_lg", "w/o intra-lg", &Ablation::intra_lg},
    {"intra_lg_ic", "w/o intra-lg-ic", &Ablation::intra_lg_ic},
    {"intra_ll_ic", "w/o intra-ll-ic", &Ablation::intra_ll_ic},
    {"inter_ic", "w/o inter-ic", &Ablation::inter_ic},
};

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

std::string Ablation::variant_name() const {
  if (none()) return "MIAN";
  std::string out;
  for (const auto& k : kAblationKeys) {
    if (!(this->*k.flag)) continue;
    if (!out.empty()) out += " + ";
    out += k.label;
  }
  return out;
}

std::string Ablation::to_list() const {
  std::string out;
  for (const auto& k : kAblationKeys) {
    if (!(this->*k.flag)) continue;
    if (!out.empty()) out += ",";
    out += k.key;
  }
  return out;
}

Ablation Ablation::parse(std::string_view comma_list) {
  Ablation a;
  std::size_t start = 0;
  while (start <= comma_list.size()) {
    const std::size_t end = std::min(comma_list.find(',', start), comma_list.size());
    std::string item = trim(comma_list.substr(start, end - start));
    start = end + 1;
    if (item.empty() || item == "none") continue;
    if (item.rfind("w/o ", 0) == 0) item = trim(item.substr(4));
    std::replace(item.begin(), item.end(), '-', '_');
    bool matched = false;
    for (const auto& k : kAblationKeys) {
      if (item == k.key) {
        a.*k.flag = true;
        matched = true;
      }
    }
    if (!matched) throw std::invalid_argument("unknown ablation '" + item + "'");
  }
  return a;
}

std::vector<Ablation> Ablation::single_variants() {
  std::vector<Ablation> out;
  for (const auto& k : kAblationKeys) {
    Ablation a;
    a.*k.flag = true;
    out.push_back(a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration and parameter layout

void ModelConfig::validate() const {
  attention().validate();
  if (m < 1 || u < 1) throw std::invalid_argument("ModelConfig: m and u must be positive");
  if (d_model % 2 != 0) throw std::invalid_argument("ModelConfig: d_model must be even for positional encoding");
  if (classifier_hidden < 0) throw std::invalid_argument("ModelConfig: classifier_hidden must be non-negative");
  if (!std::isfinite(a_value)) throw std::invalid_argument("ModelConfig: a_value must be finite");
}

std::uint64_t ModelConfig::fingerprint() const {
  std::ostringstream os;
  os << "mian;d_model=" << d_model << ";n_heads=" << n_heads << ";n_layers=" << n_layers << ";m=" << m
     << ";u=" << u << ";hidden=" << hidden() << ";ablation=" << ablation.to_list();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

enum class Init { Glorot, Zero, One };

struct ParamSpec {
  std::string path;
  std::vector<Index> shape;
  Init init;
};

void declare_attention_layer(std::vector<ParamSpec>& out, const std::string& p, const ModelConfig& cfg) {
  const Index d = cfg.d_model;
  const Index dk = cfg.attention().d_k();
  for (int h = 0; h < cfg.n_heads; ++h) {
    const std::string head = p + ".head" + std::to_string(h);
    out.push_back({head + ".Wq", {d, dk}, Init::Glorot});
    out.push_back({head + ".Wk", {d, dk}, Init::Glorot});
    out.push_back({head + ".Wv", {d, dk}, Init::Glorot});
    out.push_back({head + ".gate.W", {2 * dk, dk}, Init::Glorot});
    out.push_back({head + ".gate.b", {dk}, Init::Zero});
  }
  out.push_back({p + ".Wcat", {d, d}, Init::Glorot});
  out.push_back({p + ".block.Wfc1", {d, d}, Init::Glorot});
  out.push_back({p + ".block.Wfc2", {d, d}, Init::Glorot});
  out.push_back({p + ".block.b", {d}, Init::Zero});
  out.push_back({p + ".block.ln1.gain", {d}, Init::One});
  out.push_back({p + ".block.ln1.bias", {d}, Init::Zero});
  out.push_back({p + ".block.ln2.gain", {d}, Init::One});
  out.push_back({p + ".block.ln2.bias", {d}, Init::Zero});
}

std::vector<ParamSpec> declare_params(const ModelConfig& cfg) {
  std::vector<ParamSpec> out;
  const Index d = cfg.d_model;
  for (const char* branch : {"text", "image"}) {
    const std::string p = std::string("hlm.") + branch;
    for (int l = 0; l < cfg.n_layers; ++l) declare_attention_layer(out, p + ".l2l.layer" + std::to_string(l), cfg);
    out.push_back({p + ".l2g.W1", {d, d}, Init::Glorot});
    out.push_back({p + ".l2g.W2", {2 * d, d}, Init::Glorot});
    out.push_back({p + ".l2g.W3", {d, 1}, Init::Glorot});
    out.push_back({p + ".l2g.gate.W", {2 * d, d}, Init::Glorot});
    out.push_back({p + ".l2g.gate.b", {d}, Init::Zero});
    out.push_back({p + ".fuse.W", {2 * d, d}, Init::Glorot});
  }
  for (const char* dir : {"t2o", "o2t"}) {
    for (int l = 0; l < cfg.n_layers; ++l) {
      declare_attention_layer(out, std::string("cim.") + dir + ".layer" + std::to_string(l), cfg);
    }
  }
  const Index h = cfg.hidden();
  out.push_back({"classifier.W1", {4 * d, h}, Init::Glorot});
  out.push_back({"classifier.b1", {h}, Init::Zero});
  out.push_back({"classifier.W2", {h, 1}, Init::Glorot});
  out.push_back({"classifier.b2", {1}, Init::Zero});
  return out;
}

template <typename Params>
class Binder {
 public:
  Binder(Tape& tape, Params& params, const ModelConfig& cfg) : tape_(tape), params_(params), cfg_(cfg) {}

  Var operator()(const std::string& path) const { return tape_.param(params_.at(path)); }

  GateParams gate(const std::string& p) const { return {(*this)(p + ".gate.W"), (*this)(p + ".gate.b")}; }

  BlockParams block(const std::string& p) const {
    return {(*this)(p + ".block.Wfc1"),     (*this)(p + ".block.Wfc2"),     (*this)(p + ".block.b"),
            (*this)(p + ".block.ln1.gain"), (*this)(p + ".block.ln1.bias"), (*this)(p + ".block.ln2.gain"),
            (*this)(p + ".block.ln2.bias")};
  }

  MultiHeadParams attention(const std::string& p, bool with_inverse) const {
    MultiHeadParams mh;
    for (int h = 0; h < cfg_.n_heads; ++h) {
      const std::string head = p + ".head" + std::to_string(h);
      HeadParams hp{(*this)(head + ".Wq"), (*this)(head + ".Wk"), (*this)(head + ".Wv"), std::nullopt};
      if (with_inverse) hp.gate = gate(head);
      mh.heads.push_back(std::move(hp));
    }
    mh.wcat = (*this)(p + ".Wcat");
    return mh;
  }

  HlmParams hlm(const std::string& p, const HlmOptions& opts) const {
    HlmParams out;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string layer = p + ".l2l.layer" + std::to_string(l);
      out.attention.push_back(attention(layer, opts.ll_inverse));
      out.blocks.push_back(block(layer));
    }
    if (opts.use_lg) {
      out.l2g.w1 = (*this)(p + ".l2g.W1");
      out.l2g.w2 = (*this)(p + ".l2g.W2");
      out.l2g.w3 = (*this)(p + ".l2g.W3");
      if (opts.lg_inverse) out.l2g.gate = gate(p + ".l2g");
      out.w_fuse = (*this)(p + ".fuse.W");
    }
    return out;
  }

  CimParams cim(bool with_inverse) const {
    CimParams out;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string suffix = ".layer" + std::to_string(l);
      out.text_from_image.push_back({attention("cim.t2o" + suffix, with_inverse), block("cim.t2o" + suffix)});
      out.image_from_text.push_back({attention("cim.o2t" + suffix, with_inverse), block("cim.o2t" + suffix)});
    }
    return out;
  }

 private:
  Tape& tape_;
  Params& params_;
  const ModelConfig& cfg_;
};

void check_sample(const NewsSample& s, const ModelConfig& cfg) {
  const Index d = cfg.d_model;
  if (s.text_tokens.rows() != cfg.m || s.text_tokens.cols() != d || s.image_patches.rows() != cfg.u ||
      s.image_patches.cols() != d || s.text_cls.size() != d || s.image_cls.size() != d ||
      s.text_mask.size() != cfg.m) {
    throw DimensionError("forward: sample with text " + shape_string(s.text_tokens.rows(), s.text_tokens.cols()) +
                         " and image " + shape_string(s.image_patches.rows(), s.image_patches.cols()) +
                         " does not match config m=" + std::to_string(cfg.m) + ", u=" + std::to_string(cfg.u) +
                         ", d=" + std::to_string(d));
  }
  if (!s.text_mask.any()) throw std::invalid_argument("forward: text is fully masked");
}

template <typename Params>
ForwardPass forward_impl(Tape& tape, const NewsSample& sample, const ModelConfig& cfg, Params& params,
                         AttentionTrace* trace) {
  cfg.validate();
  check_sample(sample, cfg);
  const MultiHeadConfig mh = cfg.attention();
  const Binder<Params> bind(tape, params, cfg);

  const KeyMask image_mask = KeyMask::Constant(cfg.u, true);
  const ModalitySequence text{tape.constant(sample.text_tokens + positional_encoding(cfg.m, cfg.d_model)),
                              tape.constant(sample.text_cls), sample.text_mask};
  const ModalitySequence image{tape.constant(sample.image_patches + positional_encoding(cfg.u, cfg.d_model)),
                               tape.constant(sample.image_cls), image_mask};

  HlmOptions hopts;
  hopts.use_lg = !cfg.ablation.intra_lg;
  hopts.ll_inverse = !cfg.ablation.intra_ll_ic;
  hopts.lg_inverse = !cfg.ablation.intra_lg_ic;
  hopts.a_value = cfg.a_value;
  hopts.trace = trace;

  ForwardPass fp;
  hopts.site = "hlm.text";
  fp.text = hlm_forward(text, mh, bind.hlm("hlm.text", hopts), hopts);
  hopts.site = "hlm.image";
  fp.image = hlm_forward(image, mh, bind.hlm("hlm.image", hopts), hopts);

  CimOptions copts;
  copts.with_inverse = !cfg.ablation.inter_ic;
  copts.a_value = cfg.a_value;
  copts.trace = trace;
  fp.cim = cim_forward(fp.text.seq, fp.image.seq, sample.text_mask, mh, bind.cim(copts.with_inverse), copts);

  fp.r_n = concat_cols({mean_rows(fp.text.seq, sample.text_mask), mean_rows(fp.image.seq),
                        mean_rows(fp.cim.text_enriched, sample.text_mask), mean_rows(fp.cim.image_enriched)});
  const Var hidden = relu(add(matmul(fp.r_n, bind("classifier.W1")), bind("classifier.b1")));
  fp.logit = add(matmul(hidden, bind("classifier.W2")), bind("classifier.b2"));
  fp.y_hat = sigmoid(fp.logit);
  return fp;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ModelParams params;
  for (const ParamSpec& spec : declare_params(cfg)) {
    const Index rows = spec.shape.size() == 1 ? 1 : spec.shape[0];
    const Index cols = spec.shape.back();
    Matrix value(rows, cols);
    switch (spec.init) {
      case Init::Zero: value.setZero(); break;
      case Init::One: value.setOnes(); break;
      case Init::Glorot: {
        const Scalar limit = std::sqrt(6.0 / static_cast<Scalar>(rows + cols));
        std::uniform_real_distribution<Scalar> dist(-limit, limit);
        for (Index i = 0; i < value.size(); ++i) value.data()[i] = dist(rng);
        break;
      }
    }
    params.add(spec.path, Tensor::from(spec.shape, std::move(value)));
  }
  return params;
}

ForwardPass forward(Tape& tape, const NewsSample& sample, const ModelConfig& cfg, ModelParams& params,
                    AttentionTrace* trace) {
  return forward_impl(tape, sample, cfg, params, trace);
}

Prediction forward(const NewsSample& sample, const ModelConfig& cfg, const ModelParams& params,
                   AttentionTrace* trace) {
  Tape tape(Tape::Mode::Inference);
  const ForwardPass fp = forward_impl(tape, sample, cfg, params, trace);
  return {fp.y_hat.value()(0, 0), fp.logit.value()(0, 0), fp.r_n.value().row(0)};
}

Scalar loss(Scalar y_hat, int y) {
  const Scalar p = std::clamp(y_hat, kProbabilityClamp, 1.0 - kProbabilityClamp);
  const auto t = static_cast<Scalar>(y);
  return -t * std::log(p) - (1.0 - t) * std::log(1.0 - p);
}

int predict_label(Scalar y_hat, Scalar threshold) { return y_hat >= threshold ? kReal : kFake; }

// ---------------------------------------------------------------------------
// Checkpoints

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, std::uint64_t fingerprint) {
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 8));
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint64_t>(fingerprint);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [path, t] : params) {
    if (path.size() > 0xffff) throw std::invalid_argument("checkpoint: path too long: " + path);
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(path.size()));
    w.bytes(path);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (Index dim : t.shape) w.uint<std::uint32_t>(static_cast<std::uint32_t>(dim));
    for (Index i = 0; i < t.size(); ++i) w.f64(t.data.data()[i]);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(8, "magic") != std::string_view(kCheckpointMagic, 8)) {
    throw ParseError(0, "bad magic, expected MIANCKPT");
  }
  const std::uint64_t version_at = r.offset();
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw ParseError(version_at, "unsupported version " + std::to_string(version));

  Checkpoint ck;
  ck.fingerprint = r.uint<std::uint64_t>("fingerprint");
  const auto count = r.uint<std::uint32_t>("parameter count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint64_t entry_at = r.offset();
    const auto len = r.uint<std::uint16_t>("path length");
    std::string path = r.bytes(len, "path");
    if (path.empty()) throw ParseError(entry_at, "empty parameter path");
    const std::uint64_t rank_at = r.offset();
    const auto rank = r.uint<std::uint32_t>("rank");
    if (rank < 1 || rank > 2) throw ParseError(rank_at, "rank " + std::to_string(rank) + " for '" + path + "'");
    std::vector<Index> shape;
    std::uint64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint64_t dim_at = r.offset();
      const auto dim = r.uint<std::uint32_t>("dimension");
      if (dim == 0) throw ParseError(dim_at, "zero dimension for '" + path + "'");
      shape.push_back(dim);
      n *= dim;
    }
    r.require(8 * n, "parameter values");
    const Index rows = rank == 1 ? 1 : shape[0];
    Matrix value(rows, shape.back());
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t at = r.offset();
      const double v = r.f64("parameter value");
      if (!std::isfinite(v)) throw ParseError(at, "non-finite value in '" + path + "'");
      value.data()[i] = v;
    }
    if (ck.params.contains(path)) throw ParseError(entry_at, "duplicate parameter '" + path + "'");
    ck.params.add(path, Tensor::from(std::move(shape), std::move(value)));
  }
  if (r.remaining() != 0) {
    throw ParseError(r.offset(), "parameter count mismatch: header declares " + std::to_string(count) +
                                     " parameters but " + std::to_string(r.remaining()) + " bytes follow them");
  }
  return ck;
}

void save_checkpoint(const ModelParams& params, const ModelConfig& cfg, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(params, cfg.fingerprint()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file(path);
  return decode_checkpoint(bytes);
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.fingerprint != cfg.fingerprint()) {
    std::ostringstream os;
    os << "checkpoint fingerprint " << std::hex << ck.fingerprint << " does not match config fingerprint "
       << cfg.fingerprint();
    throw FingerprintError(os.str());
  }
  const std::vector<ParamSpec> expected = declare_params(cfg);
  if (expected.size() != ck.params.size()) {
    throw std::invalid_argument("checkpoint holds " + std::to_string(ck.params.size()) + " parameters, config needs " +
                                std::to_string(expected.size()));
  }
  for (const ParamSpec& spec : expected) {
    if (!ck.params.contains(spec.path) || ck.params.at(spec.path).shape != spec.shape) {
      throw std::invalid_argument("checkpoint parameter '" + spec.path + "' is missing or has the wrong shape");
    }
  }
  return std::move(ck.params);
}

}  // namespace mian
