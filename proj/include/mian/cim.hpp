#pragma once

#include "mian/attention.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mian {

struct CoAttentionParams {
  MultiHeadParams attention;
  BlockParams block;
};

/// Per-layer parameters for each direction; the two directions never share.
struct CimParams {
  std::vector<CoAttentionParams> text_from_image;  // "t2o"
  std::vector<CoAttentionParams> image_from_text;  // "o2t"
};

struct CoAttendOptions {
  std::optional<KeyMask> source_mask;
  bool with_inverse = true;
  Scalar a_value = 1.0;
  AttentionTrace* trace = nullptr;
  std::string site;
};

struct CoAttendResult {
  Var enriched;                  // nt×d
  std::vector<Var> weights;      // per head, nt×ns
  std::vector<Var> inv_weights;  // per head; empty without the inverse branch
};

/// Queries from `target`, keys and values from `source`. Each head's
/// consistency and inverse outputs are gated together, heads are projected by
/// W_cat, and the result passes through the residual/feed-forward block.
CoAttendResult co_attend(const Var& target, const Var& source, const MultiHeadConfig& cfg,
                         const CoAttentionParams& params, const CoAttendOptions& options);

struct CimOptions {
  bool with_inverse = true;  // false: "w/o inter-ic"
  Scalar a_value = 1.0;
  AttentionTrace* trace = nullptr;
  std::string site = "cim";
};

/// Weight matrices are the head average of the last layer; inverse ones are
/// empty when the inverse branch is off or there are no layers.
struct CimOutput {
  Var text_enriched;   // m×d
  Var image_enriched;  // u×d
  Matrix co_weights_t;   // m×u
  Matrix co_weights_o;   // u×m
  Matrix inv_weights_t;  // m×u
  Matrix inv_weights_o;  // u×m
};

/// n_layers rounds of bidirectional co-attention; both directions of a round
/// read the previous round's sequences.
CimOutput cim_forward(const Var& text, const Var& image, const KeyMask& text_mask, const MultiHeadConfig& cfg,
                      const CimParams& params, const CimOptions& options);

}  // namespace mian
