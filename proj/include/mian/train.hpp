#pragma once

#include "mian/model.hpp"

#include <json.hpp>

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mian {

enum class Optimizer { Adam, Sgd };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view name);

/// Learning rate from the original fine-tuning setup. Far too small for
/// training from scratch, so the desk default below is used instead.
inline constexpr Scalar kFineTuneLearningRate = 2e-6;

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  Scalar lr0 = 1e-3;
  Optimizer optimizer = Optimizer::Adam;
  int step_size = 20;  // epochs between decays
  Scalar gamma = 0.5;
  std::uint64_t seed = 42;
  Scalar threshold = 0.5;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar adam_eps = 1e-8;

  void validate() const;
};

/// StepLR: lr0 · gamma^⌊epoch / step_size⌋.
Scalar lr_at(int epoch, const TrainConfig& cfg);

struct ClassMetrics {
  Scalar precision = 0.0;
  Scalar recall = 0.0;
  Scalar f1 = 0.0;
};

struct MetricsReport {
  int epoch = 0;
  std::string split;
  std::string variant = "MIAN";
  Index n = 0;
  Scalar accuracy = 0.0;
  Scalar loss = 0.0;
  ClassMetrics fake;
  ClassMetrics real;
  /// Accuracy per FakeType value 0..3; empty when no sample has that type.
  std::array<std::optional<Scalar>, 4> by_type{};

  /// One JSON-lines record: epoch, split, variant, acc, loss, fake, real, by_type.
  nlohmann::json to_json() const;
};

/// Confusion-based metrics. Precision, recall and F1 are reported per class
/// with that class treated as positive; undefined ratios are 0.
MetricsReport compute_metrics(std::span<const int> labels, std::span<const int> predictions,
                              std::span<const FakeType> types);

MetricsReport evaluate(const ModelConfig& cfg, const ModelParams& params, std::span<const NewsSample> samples,
                       Scalar threshold = 0.5, std::string split = "test");

/// Raised when a loss or activation becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ModelParams params;
  std::vector<MetricsReport> history;  // train then test, per epoch
};

using EpochCallback = std::function<void(const MetricsReport&)>;

/// Mini-batch training on mean batch BCE. Samples are reshuffled each epoch
/// from `tcfg.seed`; gradients are accumulated in ascending batch position.
/// Train metrics come from the in-epoch forward passes, test metrics from a
/// pass over `test_set` after the epoch (skipped when it is empty).
TrainResult train(const ModelConfig& cfg, std::span<const NewsSample> train_set,
                  std::span<const NewsSample> test_set, const TrainConfig& tcfg,
                  const EpochCallback& on_epoch = {});
/// Continues from `initial` instead of a fresh init_params(cfg).
TrainResult train(const ModelConfig& cfg, ModelParams initial, std::span<const NewsSample> train_set,
                  std::span<const NewsSample> test_set, const TrainConfig& tcfg,
                  const EpochCallback& on_epoch = {});

struct AblationRow {
  Ablation ablation;
  MetricsReport test;  // final-epoch test metrics
};

struct AblationTable {
  std::vector<AblationRow> rows;

  std::string markdown() const;
  nlohmann::json to_json() const;
  const AblationRow& at(const std::string& variant) const;
};

/// Trains the full model and the four single-block ablations with the same
/// seeds and data order.
AblationTable run_ablation_suite(const ModelConfig& base, const TrainConfig& tcfg,
                                 std::span<const NewsSample> train_set, std::span<const NewsSample> test_set,
                                 const EpochCallback& on_epoch = {});

}  // namespace mian
