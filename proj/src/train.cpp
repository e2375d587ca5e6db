#include "mian/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace mian {

std::string to_string(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

Optimizer parse_optimizer(std::string_view name) {
  if (name == "adam") return Optimizer::Adam;
  if (name == "sgd") return Optimizer::Sgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be positive");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw std::invalid_argument("TrainConfig: lr0 must be non-negative");
  if (step_size < 1) throw std::invalid_argument("TrainConfig: step_size must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("TrainConfig: gamma must be in (0, 1]");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("TrainConfig: threshold must be in (0, 1)");
}

Scalar lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  Scalar lr = cfg.lr0;
  for (int k = epoch / cfg.step_size; k > 0; --k) lr *= cfg.gamma;
  return lr;
}

// ---------------------------------------------------------------------------
// Metrics

nlohmann::json MetricsReport::to_json() const {
  using nlohmann::json;
  auto cls = [](const ClassMetrics& c) { return json{{"pre", c.precision}, {"rec", c.recall}, {"f1", c.f1}}; };
  json types = json::object();
  for (std::size_t t = 0; t < by_type.size(); ++t) {
    types[std::to_string(t)] = by_type[t] ? json(*by_type[t]) : json(nullptr);
  }
  return json{{"epoch", epoch},   {"split", split},    {"variant", variant},
              {"acc", accuracy},  {"loss", loss},      {"n", n},
              {"fake", cls(fake)}, {"real", cls(real)}, {"by_type", types}};
}

namespace {

ClassMetrics class_metrics(Index tp, Index fp, Index fn) {
  ClassMetrics c;
  c.precision = tp + fp > 0 ? static_cast<Scalar>(tp) / static_cast<Scalar>(tp + fp) : 0.0;
  c.recall = tp + fn > 0 ? static_cast<Scalar>(tp) / static_cast<Scalar>(tp + fn) : 0.0;
  const Scalar pr = c.precision + c.recall;
  c.f1 = pr > 0.0 ? 2.0 * c.precision * c.recall / pr : 0.0;
  return c;
}

}  // namespace

MetricsReport compute_metrics(std::span<const int> labels, std::span<const int> predictions,
                              std::span<const FakeType> types) {
  if (labels.size() != predictions.size() || labels.size() != types.size()) {
    throw std::invalid_argument("compute_metrics: labels, predictions and types differ in length");
  }
  if (labels.empty()) throw std::invalid_argument("compute_metrics: empty sample set");

  // confusion[label][prediction]
  Index confusion[2][2] = {{0, 0}, {0, 0}};
  std::array<Index, 4> type_total{}, type_correct{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if ((y != kFake && y != kReal) || (p != kFake && p != kReal)) {
      throw std::invalid_argument("compute_metrics: labels and predictions must be 0 or 1");
    }
    ++confusion[y][p];
    const auto t = static_cast<std::size_t>(types[i]);
    if (t < type_total.size()) {
      ++type_total[t];
      if (y == p) ++type_correct[t];
    }
  }

  MetricsReport r;
  r.n = static_cast<Index>(labels.size());
  r.accuracy = static_cast<Scalar>(confusion[0][0] + confusion[1][1]) / static_cast<Scalar>(r.n);
  r.fake = class_metrics(confusion[kFake][kFake], confusion[kReal][kFake], confusion[kFake][kReal]);
  r.real = class_metrics(confusion[kReal][kReal], confusion[kFake][kReal], confusion[kReal][kFake]);
  for (std::size_t t = 0; t < type_total.size(); ++t) {
    if (type_total[t] > 0) r.by_type[t] = static_cast<Scalar>(type_correct[t]) / static_cast<Scalar>(type_total[t]);
  }
  return r;
}

MetricsReport evaluate(const ModelConfig& cfg, const ModelParams& params, std::span<const NewsSample> samples,
                       Scalar threshold, std::string split) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty sample set");
  std::vector<int> labels, preds;
  std::vector<FakeType> types;
  Scalar total_loss = 0.0;
  for (const NewsSample& s : samples) {
    const Prediction p = forward(s, cfg, params);
    labels.push_back(s.label);
    preds.push_back(predict_label(p.y_hat, threshold));
    types.push_back(s.fake_type);
    total_loss += loss(p.y_hat, s.label);
  }
  MetricsReport r = compute_metrics(labels, preds, types);
  r.loss = total_loss / static_cast<Scalar>(samples.size());
  r.split = std::move(split);
  r.variant = cfg.ablation.variant_name();
  return r;
}

// ---------------------------------------------------------------------------
// Training

namespace {

class OptimizerState {
 public:
  explicit OptimizerState(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(ModelParams& params, Scalar lr) {
    ++t_;
    const Scalar bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<Scalar>(t_));
    const Scalar bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<Scalar>(t_));
    for (auto& [path, tensor] : params) {
      if (!tensor.has_grad()) continue;
      if (cfg_.optimizer == Optimizer::Sgd) {
        tensor.data -= lr * tensor.grad;
        continue;
      }
      auto [it, fresh] = moments_.try_emplace(path);
      if (fresh) {
        it->second.first = Matrix::Zero(tensor.data.rows(), tensor.data.cols());
        it->second.second = Matrix::Zero(tensor.data.rows(), tensor.data.cols());
      }
      Matrix& m = it->second.first;
      Matrix& v = it->second.second;
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * tensor.grad;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * tensor.grad.cwiseAbs2();
      tensor.data.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.adam_eps);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;
  long t_ = 0;
};

}  // namespace

TrainResult train(const ModelConfig& cfg, std::span<const NewsSample> train_set,
                  std::span<const NewsSample> test_set, const TrainConfig& tcfg, const EpochCallback& on_epoch) {
  return train(cfg, init_params(cfg), train_set, test_set, tcfg, on_epoch);
}

TrainResult train(const ModelConfig& cfg, ModelParams initial, std::span<const NewsSample> train_set,
                  std::span<const NewsSample> test_set, const TrainConfig& tcfg, const EpochCallback& on_epoch) {
  cfg.validate();
  tcfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");

  TrainResult result{std::move(initial), {}};
  ModelParams& params = result.params;
  OptimizerState opt(tcfg);
  std::mt19937_64 rng(tcfg.seed);
  std::vector<std::size_t> order(train_set.size());
  const std::string variant = cfg.ablation.variant_name();

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const Scalar lr = lr_at(epoch, tcfg);

    std::vector<int> labels, preds;
    std::vector<FakeType> types;
    Scalar epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
      params.zero_grad();
      for (std::size_t k = start; k < stop; ++k) {
        const NewsSample& s = train_set[order[k]];
        try {
          Tape tape(Tape::Mode::Train);
          const ForwardPass fp = forward(tape, s, cfg, params);
          const Var l = binary_cross_entropy(fp.y_hat, static_cast<Scalar>(s.label));
          const Scalar lv = l.value()(0, 0);
          if (!std::isfinite(lv)) throw NumericError("non-finite loss");
          tape.backward(l);
          epoch_loss += lv;
          labels.push_back(s.label);
          preds.push_back(predict_label(fp.y_hat.value()(0, 0), tcfg.threshold));
          types.push_back(s.fake_type);
        } catch (const NumericError& e) {
          throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", sample " +
                                std::to_string(order[k]) + ": " + e.what());
        }
      }
      params.scale_grad(1.0 / static_cast<Scalar>(stop - start));
      opt.step(params, lr);
    }
    for (const auto& [path, tensor] : params) {
      if (!tensor.data.allFinite()) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": parameter '" + path +
                              "' is non-finite");
      }
    }

    MetricsReport tr = compute_metrics(labels, preds, types);
    tr.epoch = epoch;
    tr.split = "train";
    tr.variant = variant;
    tr.loss = epoch_loss / static_cast<Scalar>(train_set.size());
    result.history.push_back(tr);
    if (on_epoch) on_epoch(tr);
    if (!test_set.empty()) {
      MetricsReport te = evaluate(cfg, params, test_set, tcfg.threshold, "test");
      te.epoch = epoch;
      result.history.push_back(te);
      if (on_epoch) on_epoch(te);
    }
  }
  params.zero_grad();
  return result;
}

// ---------------------------------------------------------------------------
// Ablation suite

AblationTable run_ablation_suite(const ModelConfig& base, const TrainConfig& tcfg,
                                 std::span<const NewsSample> train_set, std::span<const NewsSample> test_set,
                                 const EpochCallback& on_epoch) {
  if (test_set.empty()) throw std::invalid_argument("run_ablation_suite: empty test set");
  std::vector<Ablation> variants{Ablation{}};
  for (const Ablation& a : Ablation::single_variants()) variants.push_back(a);

  AblationTable table;
  for (const Ablation& a : variants) {
    ModelConfig cfg = base;
    cfg.ablation = a;
    TrainResult r = train(cfg, train_set, test_set, tcfg, on_epoch);
    table.rows.push_back({a, r.history.back()});
  }
  return table;
}

const AblationRow& AblationTable::at(const std::string& variant) const {
  for (const AblationRow& r : rows) {
    if (r.ablation.variant_name() == variant) return r;
  }
  throw std::out_of_range("no ablation row named '" + variant + "'");
}

std::string AblationTable::markdown() const {
  static const char* kTypeNames[] = {"Real", "Fab. text", "Fab. image", "Mismatched"};
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "| Variant | Acc. | Fake F1 | Real F1 |";
  for (const char* t : kTypeNames) os << ' ' << t << " acc. |";
  os << "\n|---|---|---|---|";
  for (std::size_t i = 0; i < 4; ++i) os << "---|";
  os << '\n';
  for (const AblationRow& r : rows) {
    os << "| " << r.ablation.variant_name() << " | " << r.test.accuracy << " | " << r.test.fake.f1 << " | "
       << r.test.real.f1 << " |";
    for (const auto& v : r.test.by_type) {
      if (v) {
        os << ' ' << *v << " |";
      } else {
        os << " - |";
      }
    }
    os << '\n';
  }
  return os.str();
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const AblationRow& r : rows) {
    nlohmann::json row = r.test.to_json();
    row["ablation"] = r.ablation.to_list();
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace mian
