#pragma once

#include "mian/train.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mian {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string path;  // empty: synthesize from `synth`
  Scalar train_fraction = 0.9;
  SynthSpec synth;   // m, u and d follow the model section
};

/// Everything one experiment needs, read from flat `key = value` text.
///
///   model.{d_model, n_heads, n_layers, m, u, classifier_hidden, a_value}
///   train.{epochs, batch_size, lr0, optimizer, step_size, gamma, threshold}
///   data.{path, train_fraction, n_samples, n_topics, noise_sigma,
///         corrupt_fraction, class_mix}
///   seed, ablation
///
/// `seed` drives initialization, shuffling, the split and synthesis. `#`
/// starts a comment. Unknown or repeated keys are errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::uint64_t seed = 42;

  RunConfig();
  void validate() const;
  /// Canonical text form; parse_run_config(to_text()) reproduces the config.
  std::string to_text() const;
  /// Synthesis parameters with dimensions taken from the model section.
  SynthSpec synth_spec() const;
};

RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Synthesis spec file: n_samples, m, u, d, n_topics, noise_sigma,
/// corrupt_fraction, class_mix (four comma-separated weights), seed.
SynthSpec parse_synth_spec(std::string_view text);
SynthSpec load_synth_spec(const std::filesystem::path& path);

}  // namespace mian
