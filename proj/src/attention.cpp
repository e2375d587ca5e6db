#include "mian/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace mian {

void MultiHeadConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_layers < 0) {
    throw std::invalid_argument("MultiHeadConfig: d_model and n_heads must be positive, n_layers non-negative");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("MultiHeadConfig: n_heads " + std::to_string(n_heads) +
                                " does not divide d_model " + std::to_string(d_model));
  }
}

AttentionResult scaled_dot_attention(const Var& q, const Var& k, const Var& v,
                                     const std::optional<KeyMask>& key_mask) {
  if (q.cols() != k.cols()) {
    throw DimensionError("scaled_dot_attention: query " + shape_string(q.rows(), q.cols()) +
                         " and key " + shape_string(k.rows(), k.cols()) + " disagree on d_k");
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("scaled_dot_attention: " + std::to_string(k.rows()) + " keys but " +
                         std::to_string(v.rows()) + " values");
  }
  const Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<Scalar>(q.cols())));
  const Var weights = key_mask ? softmax_rows(scores, *key_mask) : softmax_rows(scores);
  return {weights, matmul(weights, v)};
}

Var inverse_weights(const Var& weights, const std::optional<KeyMask>& key_mask, Scalar a_value) {
  const Matrix& w = weights.value();
  for (Index i = 0; i < w.rows(); ++i) {
    const Scalar total = w.row(i).sum();
    if (std::abs(total - 1.0) > kRowStochasticTolerance || w.row(i).minCoeff() < -kRowStochasticTolerance) {
      throw std::invalid_argument("inverse_attention: row " + std::to_string(i) +
                                  " of the input weights is not a probability distribution (sum " +
                                  std::to_string(total) + ")");
    }
  }
  const Var shifted = affine(weights, -1.0, a_value);
  return key_mask ? softmax_rows(shifted, *key_mask) : softmax_rows(shifted);
}

AttentionResult inverse_attention(const Var& weights, const Var& v, const std::optional<KeyMask>& key_mask,
                                  Scalar a_value) {
  if (weights.cols() != v.rows()) {
    throw DimensionError("inverse_attention: weights " + shape_string(weights.rows(), weights.cols()) +
                         " against values " + shape_string(v.rows(), v.cols()));
  }
  const Var inv = inverse_weights(weights, key_mask, a_value);
  return {inv, matmul(inv, v)};
}

Var gate_combine(const Var& r_cons, const Var& r_incons, const GateParams& gate) {
  if (r_cons.rows() != r_incons.rows() || r_cons.cols() != r_incons.cols()) {
    throw DimensionError("gate_combine: " + shape_string(r_cons.rows(), r_cons.cols()) + " vs " +
                         shape_string(r_incons.rows(), r_incons.cols()));
  }
  const Index d = r_cons.cols();
  if (gate.w.rows() != 2 * d || gate.w.cols() != d || gate.b.rows() != 1 || gate.b.cols() != d) {
    throw DimensionError("gate_combine: gate W " + shape_string(gate.w.rows(), gate.w.cols()) + ", b " +
                         shape_string(gate.b.rows(), gate.b.cols()) + " for feature width " +
                         std::to_string(d));
  }
  const Var g = sigmoid(add(matmul(concat_cols(r_cons, r_incons), gate.w), gate.b));
  // g⊙a + (1−g)⊙b, bounded by its endpoints even at g≈1.
  return lerp(r_cons, r_incons, g);
}

MultiHeadResult multi_head_attention_detailed(const Var& x_q, const Var& x_kv, const MultiHeadConfig& cfg,
                                             const MultiHeadParams& params, const MultiHeadOptions& options) {
  cfg.validate();
  if (x_q.cols() != cfg.d_model || x_kv.cols() != cfg.d_model) {
    throw DimensionError("multi_head_attention: inputs " + shape_string(x_q.rows(), x_q.cols()) + " and " +
                         shape_string(x_kv.rows(), x_kv.cols()) + " for d_model " +
                         std::to_string(cfg.d_model));
  }
  if (static_cast<int>(params.heads.size()) != cfg.n_heads) {
    throw std::invalid_argument("multi_head_attention: " + std::to_string(params.heads.size()) +
                                " head parameter sets for " + std::to_string(cfg.n_heads) + " heads");
  }
  MultiHeadResult result;
  std::vector<Var> heads;
  heads.reserve(params.heads.size());
  for (std::size_t i = 0; i < params.heads.size(); ++i) {
    const HeadParams& hp = params.heads[i];
    const Var q = matmul(x_q, hp.wq);
    const Var k = matmul(x_kv, hp.wk);
    const Var v = matmul(x_kv, hp.wv);
    AttentionResult cons = scaled_dot_attention(q, k, v, options.key_mask);
    const std::string head_site = options.site + ".head" + std::to_string(i);
    if (options.trace) options.trace->record(head_site + ".att", cons.weights.value());
    result.weights.push_back(cons.weights);
    if (!options.with_inverse) {
      heads.push_back(cons.output);
      continue;
    }
    if (!hp.gate) throw std::invalid_argument("multi_head_attention: inverse branch needs gate parameters");
    AttentionResult incons = inverse_attention(cons.weights, v, options.key_mask, options.a_value);
    if (options.trace) options.trace->record(head_site + ".inv", incons.weights.value());
    result.inv_weights.push_back(incons.weights);
    heads.push_back(gate_combine(cons.output, incons.output, *hp.gate));
  }
  result.output = matmul(concat_cols(heads), params.wcat);
  return result;
}

Var transformer_block(const Var& x, const Var& attended, const BlockParams& p) {
  if (x.rows() != attended.rows() || x.cols() != attended.cols()) {
    throw DimensionError("transformer_block: input " + shape_string(x.rows(), x.cols()) + " vs attended " +
                         shape_string(attended.rows(), attended.cols()));
  }
  const Var r_hat = layer_norm(add(x, matmul(attended, p.w_fc1)), p.ln1_gain, p.ln1_bias);
  const Var ffn = relu(add(matmul(r_hat, p.w_fc2), p.b));
  return layer_norm(add(r_hat, ffn), p.ln2_gain, p.ln2_bias);
}

Matrix positional_encoding(Index n_positions, Index d) {
  if (d <= 0 || d % 2 != 0) {
    throw std::invalid_argument("positional_encoding: dimension must be even, got " + std::to_string(d));
  }
  Matrix pe(n_positions, d);
  for (Index pos = 0; pos < n_positions; ++pos) {
    for (Index i = 0; i < d / 2; ++i) {
      const Scalar angle =
          static_cast<Scalar>(pos) / std::pow(10000.0, static_cast<Scalar>(2 * i) / static_cast<Scalar>(d));
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace mian
