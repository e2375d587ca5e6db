#include "mian/cim.hpp"

#include <stdexcept>

namespace mian {
namespace {

Matrix head_mean(const std::vector<Var>& weights) {
  if (weights.empty()) return {};
  Matrix total = weights.front().value();
  for (std::size_t i = 1; i < weights.size(); ++i) total += weights[i].value();
  return total / static_cast<Scalar>(weights.size());
}

}  // namespace

CoAttendResult co_attend(const Var& target, const Var& source, const MultiHeadConfig& cfg,
                         const CoAttentionParams& params, const CoAttendOptions& options) {
  if (target.cols() != source.cols()) {
    throw DimensionError("co_attend: target " + shape_string(target.rows(), target.cols()) + " and source " +
                         shape_string(source.rows(), source.cols()) + " differ in width");
  }
  MultiHeadOptions mh;
  mh.key_mask = options.source_mask;
  mh.with_inverse = options.with_inverse;
  mh.a_value = options.a_value;
  mh.trace = options.trace;
  mh.site = options.site;
  MultiHeadResult attended = multi_head_attention_detailed(target, source, cfg, params.attention, mh);

  CoAttendResult out;
  out.enriched = transformer_block(target, attended.output, params.block);
  out.weights = std::move(attended.weights);
  out.inv_weights = std::move(attended.inv_weights);
  return out;
}

CimOutput cim_forward(const Var& text, const Var& image, const KeyMask& text_mask, const MultiHeadConfig& cfg,
                      const CimParams& params, const CimOptions& options) {
  if (text_mask.size() != text.rows()) {
    throw DimensionError("cim_forward: text mask of length " + std::to_string(text_mask.size()) + " for " +
                         shape_string(text.rows(), text.cols()));
  }
  if (params.text_from_image.size() < static_cast<std::size_t>(cfg.n_layers) ||
      params.image_from_text.size() < static_cast<std::size_t>(cfg.n_layers)) {
    throw std::invalid_argument("cim_forward: missing layer parameters");
  }
  CimOutput out;
  Var t = text;
  Var o = image;
  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    const std::string suffix = ".layer" + std::to_string(layer);

    CoAttendOptions t2o;
    t2o.with_inverse = options.with_inverse;
    t2o.a_value = options.a_value;
    t2o.trace = options.trace;
    t2o.site = options.site + ".t2o" + suffix;
    CoAttendResult text_side = co_attend(t, o, cfg, params.text_from_image[layer], t2o);

    CoAttendOptions o2t = t2o;
    o2t.source_mask = text_mask;
    o2t.site = options.site + ".o2t" + suffix;
    CoAttendResult image_side = co_attend(o, t, cfg, params.image_from_text[layer], o2t);

    t = text_side.enriched;
    o = image_side.enriched;
    out.co_weights_t = head_mean(text_side.weights);
    out.co_weights_o = head_mean(image_side.weights);
    out.inv_weights_t = head_mean(text_side.inv_weights);
    out.inv_weights_o = head_mean(image_side.inv_weights);
  }
  out.text_enriched = t;
  out.image_enriched = o;
  return out;
}

}  // namespace mian
