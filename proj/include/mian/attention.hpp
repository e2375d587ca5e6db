#pragma once

#include "mian/ops.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mian {

/// Row-stochastic weights and the attended values they produce.
struct AttentionResult {
  Var weights;  // nq×nk
  Var output;   // nq×dv
};

struct MultiHeadConfig {
  int d_model = 768;
  int n_heads = 12;
  int n_layers = 2;

  int d_k() const { return d_model / n_heads; }
  /// Throws std::invalid_argument unless n_heads divides d_model.
  void validate() const;
};

/// Sigmoid gate over [r_cons, r_incons]: W is 2d×d, b is 1×d.
struct GateParams {
  Var w;
  Var b;
};

struct HeadParams {
  Var wq, wk, wv;             // d_model×d_k each
  std::optional<GateParams> gate;  // required when the inverse branch is on
};

struct MultiHeadParams {
  std::vector<HeadParams> heads;
  Var wcat;  // d_model×d_model
};

/// Residual + feed-forward block with two layer norms.
struct BlockParams {
  Var w_fc1, w_fc2, b;
  Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

/// Optional sink for attention weight matrices, keyed by site name.
struct AttentionTrace {
  std::vector<std::pair<std::string, Matrix>> sites;

  void record(std::string site, const Matrix& weights) { sites.emplace_back(std::move(site), weights); }
};

/// softmax(Q·Kᵀ/√dk) with masked keys at exactly zero; output = weights·V.
AttentionResult scaled_dot_attention(const Var& q, const Var& k, const Var& v,
                                     const std::optional<KeyMask>& key_mask = std::nullopt);

inline constexpr Scalar kRowStochasticTolerance = 1e-4;

/// softmax(A − weights) over unmasked keys. The result does not depend on
/// `a_value` (softmax is shift invariant); it is kept as a parameter only so
/// the scalar matrix A remains explicit. Throws std::invalid_argument if
/// `weights` is not row-stochastic within 1e-4.
Var inverse_weights(const Var& weights, const std::optional<KeyMask>& key_mask, Scalar a_value = 1.0);

/// Inverse weights and their attended output inv_weights·V.
AttentionResult inverse_attention(const Var& weights, const Var& v,
                                  const std::optional<KeyMask>& key_mask = std::nullopt,
                                  Scalar a_value = 1.0);

/// g = σ([r_cons, r_incons]·W + b); out = g⊙r_cons + (1−g)⊙r_incons.
Var gate_combine(const Var& r_cons, const Var& r_incons, const GateParams& gate);

struct MultiHeadOptions {
  std::optional<KeyMask> key_mask;
  bool with_inverse = false;
  Scalar a_value = 1.0;
  AttentionTrace* trace = nullptr;
  std::string site;  // trace prefix, e.g. "hlm.text.l2l.layer0"
};

struct MultiHeadResult {
  Var output;                    // nq×d_model
  std::vector<Var> weights;      // per head, nq×nk
  std::vector<Var> inv_weights;  // per head; empty without the inverse branch
};

/// Multi-head attention of `x_q` over `x_kv`. Each head's inverse branch, when
/// enabled, is merged into that head's output by its own gate before the heads
/// are concatenated and projected by W_cat.
MultiHeadResult multi_head_attention_detailed(const Var& x_q, const Var& x_kv, const MultiHeadConfig& cfg,
                                             const MultiHeadParams& params, const MultiHeadOptions& options = {});
inline Var multi_head_attention(const Var& x_q, const Var& x_kv, const MultiHeadConfig& cfg,
                                const MultiHeadParams& params, const MultiHeadOptions& options = {}) {
  return multi_head_attention_detailed(x_q, x_kv, cfg, params, options).output;
}

/// R̂ = LN(X + attended·W_fc1); R = LN(R̂ + ReLU(R̂·W_fc2 + b)).
Var transformer_block(const Var& x, const Var& attended, const BlockParams& params);

/// Sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(...).
/// Throws std::invalid_argument for odd d.
Matrix positional_encoding(Index n_positions, Index d);

}  // namespace mian
