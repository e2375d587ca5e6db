#pragma once

#include "mian/attention.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mian {

/// One modality branch as seen by the hierarchical module. Text has m tokens
/// (padding rows masked out); images have u patches and are fully unmasked.
struct ModalitySequence {
  Var tokens;    // n×d, positional encoding already added
  Var cls;       // 1×d encoder summary token
  KeyMask mask;  // n, true = valid
};

struct LocalToGlobalParams {
  Var w1;  // d×d, applied to the local tokens
  Var w2;  // 2d×d, applied to the global feature
  Var w3;  // d×1, scoring vector
  std::optional<GateParams> gate;
};

struct HlmParams {
  std::vector<MultiHeadParams> attention;  // one per Local-to-Local layer
  std::vector<BlockParams> blocks;
  LocalToGlobalParams l2g;
  Var w_fuse;  // 2d×d
};

struct HlmOptions {
  bool use_lg = true;      // false: "w/o intra-lg"
  bool ll_inverse = true;  // false: "w/o intra-ll-ic"
  bool lg_inverse = true;  // false: "w/o intra-lg-ic"
  Scalar a_value = 1.0;
  AttentionTrace* trace = nullptr;
  std::string site;  // e.g. "hlm.text"
};

struct LocalToGlobalResult {
  Var weights;      // n×1, zero on masked rows
  Var inv_weights;  // n×1, unset without the inverse branch
  Var tokens;       // n×d reweighted locals
  Var pooled;       // 1×d, column sum of `tokens`
};

struct HlmOutput {
  Var seq;  // n×d fused hierarchical sequence
  Var ll;
  // Unset when the Local-to-Global block is disabled.
  Var lg_weights;
  Var lg_tokens;
  Var lg_pooled;
};

/// n_layers rounds of masked multi-head self-attention, each followed by a
/// transformer block. With zero layers this is the identity.
Var local_to_local(const ModalitySequence& seq, const MultiHeadConfig& cfg, const HlmParams& params,
                   const HlmOptions& options);

/// [masked mean of tokens, cls], 1×2d.
Var global_feature(const ModalitySequence& seq);

/// Global-feature-guided token weighting: h = tanh((T·W1) ⊙ tanh(g·W2)),
/// weights = softmax(h·W3) over valid rows. The inverse branch reweights with
/// softmax(A − weights) and gates the two token sets together.
LocalToGlobalResult local_to_global(const ModalitySequence& seq, const Var& g, const LocalToGlobalParams& params,
                                    const HlmOptions& options);

/// Zeroes padding rows, then runs Local-to-Local and, unless disabled,
/// Local-to-Global, fusing both as [ll, lg_tokens]·W_fuse.
HlmOutput hlm_forward(const ModalitySequence& seq, const MultiHeadConfig& cfg, const HlmParams& params,
                      const HlmOptions& options);

}  // namespace mian
