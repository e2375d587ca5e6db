#pragma once

#include "mian/cim.hpp"
#include "mian/data.hpp"
#include "mian/hlm.hpp"
#include "mian/params.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mian {

/// Blocks switched off for the ablation variants. All false is the full model.
struct Ablation {
  bool intra_lg = false;     // drop the Local-to-Global block
  bool intra_lg_ic = false;  // drop inverse attention inside Local-to-Global
  bool intra_ll_ic = false;  // drop inverse attention inside Local-to-Local
  bool inter_ic = false;     // drop inverse attention inside co-attention

  bool none() const { return !(intra_lg || intra_lg_ic || intra_ll_ic || inter_ic); }
  /// "MIAN", "w/o intra-lg", ...; combinations are joined with " + ".
  std::string variant_name() const;
  /// Comma list of keys (intra_lg, intra_lg_ic, intra_ll_ic, inter_ic).
  std::string to_list() const;
  static Ablation parse(std::string_view comma_list);
  /// The four single-block variants in table order.
  static std::vector<Ablation> single_variants();

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct ModelConfig {
  int d_model = 768;
  int n_heads = 12;
  int n_layers = 2;
  int m = 196;
  int u = 196;
  int classifier_hidden = 0;  // 0 means d_model
  Ablation ablation;
  Scalar a_value = 1.0;
  std::uint64_t seed = 42;

  MultiHeadConfig attention() const { return {d_model, n_heads, n_layers}; }
  int hidden() const { return classifier_hidden > 0 ? classifier_hidden : d_model; }
  void validate() const;
  /// FNV-1a hash of the architecture-defining fields (dimensions, layers,
  /// heads, classifier width, ablation). Seeds and a_value are excluded.
  std::uint64_t fingerprint() const;
};

/// Glorot-uniform weights (scale √(6/(fan_in+fan_out))), zero biases, unit
/// layer-norm gains; drawn in a fixed order from `cfg.seed`. Every block's
/// parameters exist regardless of the ablation set.
ModelParams init_params(const ModelConfig& cfg);

struct Prediction {
  Scalar y_hat = 0.5;
  Scalar logit = 0.0;
  RowVector r_n;
};

/// Tape-level view of one forward pass.
struct ForwardPass {
  Var y_hat;
  Var logit;
  Var r_n;  // 1×4d
  HlmOutput text;
  HlmOutput image;
  CimOutput cim;
};

/// Positional encoding, HLM per branch, CIM, pooled 4d representation, and the
/// MLP classifier. Parameters are bound with Tape::param, so a training tape
/// accumulates gradients into `params`.
ForwardPass forward(Tape& tape, const NewsSample& sample, const ModelConfig& cfg, ModelParams& params,
                    AttentionTrace* trace = nullptr);
/// Inference-only forward pass.
Prediction forward(const NewsSample& sample, const ModelConfig& cfg, const ModelParams& params,
                   AttentionTrace* trace = nullptr);

/// −y·log ŷ − (1−y)·log(1−ŷ) with ŷ clamped to [1e-12, 1 − 1e-12].
Scalar loss(Scalar y_hat, int y);
/// 1 iff y_hat ≥ threshold.
int predict_label(Scalar y_hat, Scalar threshold = 0.5);

inline constexpr char kCheckpointMagic[] = "MIANCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class FingerprintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout (little-endian): magic "MIANCKPT"; u32 version; u64 fingerprint;
/// u32 param count; per param: u16 path length, UTF-8 path, u32 rank,
/// u32 dims[rank], f64 values.
std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, std::uint64_t fingerprint);

struct Checkpoint {
  std::uint64_t fingerprint = 0;
  ModelParams params;
};
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelParams& params, const ModelConfig& cfg, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Throws FingerprintError if the file was written for a different config,
/// and std::invalid_argument if its parameter set does not match `cfg`.
ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg);

}  // namespace mian
