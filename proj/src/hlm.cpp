#include "mian/hlm.hpp"

#include <stdexcept>

namespace mian {

Var local_to_local(const ModalitySequence& seq, const MultiHeadConfig& cfg, const HlmParams& params,
                   const HlmOptions& options) {
  if (params.attention.size() < static_cast<std::size_t>(cfg.n_layers) ||
      params.blocks.size() < static_cast<std::size_t>(cfg.n_layers)) {
    throw std::invalid_argument("local_to_local: missing layer parameters");
  }
  Var x = seq.tokens;
  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    MultiHeadOptions mh;
    mh.key_mask = seq.mask;
    mh.with_inverse = options.ll_inverse;
    mh.a_value = options.a_value;
    mh.trace = options.trace;
    mh.site = options.site + ".l2l.layer" + std::to_string(layer);
    const Var attended = multi_head_attention(x, x, cfg, params.attention[layer], mh);
    x = transformer_block(x, attended, params.blocks[layer]);
  }
  return x;
}

Var global_feature(const ModalitySequence& seq) {
  return concat_cols(mean_rows(seq.tokens, seq.mask), seq.cls);
}

LocalToGlobalResult local_to_global(const ModalitySequence& seq, const Var& g, const LocalToGlobalParams& p,
                                    const HlmOptions& options) {
  const Var guide = tanh(matmul(g, p.w2));
  const Var h = tanh(mul(matmul(seq.tokens, p.w1), guide));
  const Var scores = transpose(matmul(h, p.w3));  // 1×n
  const Var weights_row = softmax_rows(scores, seq.mask);
  if (options.trace) options.trace->record(options.site + ".l2g.att", weights_row.value());

  LocalToGlobalResult out;
  out.weights = transpose(weights_row);
  const Var cons = scale_rows(seq.tokens, out.weights);
  if (options.lg_inverse) {
    if (!p.gate) throw std::invalid_argument("local_to_global: inverse branch needs gate parameters");
    const Var inv_row = inverse_weights(weights_row, seq.mask, options.a_value);
    if (options.trace) options.trace->record(options.site + ".l2g.inv", inv_row.value());
    out.inv_weights = transpose(inv_row);
    const Var incons = scale_rows(seq.tokens, out.inv_weights);
    out.tokens = gate_combine(cons, incons, *p.gate);
  } else {
    out.tokens = cons;
  }
  out.pooled = sum_rows(out.tokens);
  return out;
}

HlmOutput hlm_forward(const ModalitySequence& input, const MultiHeadConfig& cfg, const HlmParams& params,
                      const HlmOptions& options) {
  if (input.mask.size() != input.tokens.rows()) {
    throw DimensionError("hlm_forward: mask of length " + std::to_string(input.mask.size()) + " for " +
                         shape_string(input.tokens.rows(), input.tokens.cols()));
  }
  // Padding rows are zeroed on entry, so nothing stored there reaches any output.
  ModalitySequence seq = input;
  if (!seq.mask.all()) {
    const Matrix keep = seq.mask.cast<Scalar>().matrix();
    seq.tokens = scale_rows(seq.tokens, seq.tokens.tape().constant(keep));
  }
  HlmOutput out;
  out.ll = local_to_local(seq, cfg, params, options);
  if (!options.use_lg) {
    out.seq = out.ll;
    return out;
  }
  const LocalToGlobalResult lg = local_to_global(seq, global_feature(seq), params.l2g, options);
  out.lg_weights = lg.weights;
  out.lg_tokens = lg.tokens;
  out.lg_pooled = lg.pooled;
  out.seq = matmul(concat_cols(out.ll, lg.tokens), params.w_fuse);
  return out;
}

}  // namespace mian
