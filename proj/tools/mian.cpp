// Command-line driver: synth, train, eval, gradcheck, inspect, ablate.

#include "mian/config.hpp"
#include "mian/grad_check.hpp"
#include "mian/train.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace mian;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitVerification = 4;

constexpr Scalar kGradCheckTolerance = 1e-4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " '" + path + "' does not exist");
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write '" + path.string() + "'");
  return out;
}

// Gradient checks run at this size unless a config says otherwise.
RunConfig tiny_config() {
  RunConfig c;
  c.model.d_model = 8;
  c.model.n_heads = 2;
  c.model.n_layers = 1;
  c.model.m = 4;
  c.model.u = 4;
  c.model.classifier_hidden = 8;
  return c;
}

RunConfig config_or_default(const std::string& path, const RunConfig& fallback = {}) {
  if (path.empty()) return fallback;
  require_file(path, "config");
  return load_run_config(path);
}

std::vector<NewsSample> load_data(const std::string& path, const RunConfig& cfg) {
  std::vector<NewsSample> data;
  if (path.empty()) {
    data = generate(cfg.synth_spec());
  } else {
    require_file(path, "data file");
    data = read_embeddings(path);
  }
  if (data.empty()) throw UsageError("data set is empty");
  const NewsSample& s = data.front();
  if (s.m() != cfg.model.m || s.u() != cfg.model.u || s.d() != cfg.model.d_model) {
    throw UsageError("data has m=" + std::to_string(s.m()) + ", u=" + std::to_string(s.u()) + ", d=" +
                     std::to_string(s.d()) + " but the config expects m=" + std::to_string(cfg.model.m) +
                     ", u=" + std::to_string(cfg.model.u) + ", d=" + std::to_string(cfg.model.d_model));
  }
  return data;
}

void print_counts(const std::vector<NewsSample>& data) {
  std::array<Index, 4> counts{};
  for (const NewsSample& s : data) {
    const auto t = static_cast<std::size_t>(s.fake_type);
    if (t < counts.size()) ++counts[t];
  }
  for (std::size_t t = 0; t < counts.size(); ++t) {
    std::cout << std::left << std::setw(18) << to_string(static_cast<FakeType>(t)) << counts[t] << '\n';
  }
}

void log_epoch(const MetricsReport& r) {
  std::cerr << r.variant << " epoch " << r.epoch << ' ' << r.split << " loss " << r.loss << " acc " << r.accuracy
            << '\n';
}

// Reconstructs the model config from a checkpoint when no config file is
// given: dimensions from parameter shapes, ablation from the fingerprint.
ModelConfig infer_model_config(const Checkpoint& ck, const NewsSample& sample) {
  ModelConfig cfg;
  const Tensor& w1 = ck.params.at("classifier.W1");
  cfg.d_model = static_cast<int>(w1.data.rows() / 4);
  cfg.classifier_hidden = static_cast<int>(w1.data.cols());
  cfg.m = static_cast<int>(sample.m());
  cfg.u = static_cast<int>(sample.u());
  cfg.n_layers = 0;
  while (ck.params.contains("hlm.text.l2l.layer" + std::to_string(cfg.n_layers) + ".Wcat")) ++cfg.n_layers;
  cfg.n_heads = 0;
  while (ck.params.contains("hlm.text.l2l.layer0.head" + std::to_string(cfg.n_heads) + ".Wq")) ++cfg.n_heads;
  for (int bits = 0; bits < 16; ++bits) {
    cfg.ablation = Ablation{(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0, (bits & 8) != 0};
    if (cfg.fingerprint() == ck.fingerprint) return cfg;
  }
  throw FingerprintError("checkpoint does not match any model shape inferred from the data; pass --config");
}

struct LoadedModel {
  ModelConfig cfg;
  ModelParams params;
  Scalar threshold = 0.5;
};

LoadedModel load_model(const std::string& checkpoint, const std::string& config, const NewsSample& sample) {
  require_file(checkpoint, "checkpoint");
  LoadedModel out;
  if (config.empty()) {
    const Checkpoint ck = read_checkpoint(checkpoint);
    out.cfg = infer_model_config(ck, sample);
  } else {
    const RunConfig rc = config_or_default(config);
    out.cfg = rc.model;
    out.threshold = rc.train.threshold;
  }
  out.params = load_checkpoint(checkpoint, out.cfg);
  return out;
}

std::vector<NewsSample> read_data_file(const std::string& path) {
  require_file(path, "data file");
  std::vector<NewsSample> data = read_embeddings(path);
  if (data.empty()) throw UsageError("data file '" + path + "' holds no records");
  return data;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& spec_path, const std::string& out, std::optional<std::uint64_t> seed) {
  SynthSpec spec;
  if (!spec_path.empty()) {
    require_file(spec_path, "spec");
    spec = load_synth_spec(spec_path);
  }
  if (seed) spec.seed = *seed;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const std::vector<NewsSample> data = generate(spec);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_embeddings(data, out);
  std::cout << "wrote " << data.size() << " samples to " << out << '\n';
  print_counts(data);
  return kExitOk;
}

int cmd_train(const std::string& config, const std::string& data_path, const std::string& checkpoint,
              const std::string& metrics, const std::string& ablation) {
  RunConfig rc = config_or_default(config);
  if (!ablation.empty()) rc.model.ablation = Ablation::parse(ablation);
  const std::vector<NewsSample> data = load_data(data_path.empty() ? rc.data.path : data_path, rc);
  const Split sp = split(data, rc.data.train_fraction, rc.seed);

  std::ofstream metrics_out = open_out(metrics);
  const TrainResult result = train(rc.model, sp.train, sp.test, rc.train, [&](const MetricsReport& r) {
    metrics_out << r.to_json().dump() << '\n';
    metrics_out.flush();
    log_epoch(r);
  });
  if (fs::path(checkpoint).has_parent_path()) fs::create_directories(fs::path(checkpoint).parent_path());
  save_checkpoint(result.params, rc.model, checkpoint);
  const MetricsReport& last = result.history.back();
  std::cout << rc.model.ablation.variant_name() << ": final " << last.split << " accuracy " << last.accuracy << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path, const std::string& metrics,
             const std::string& config) {
  const std::vector<NewsSample> data = read_data_file(data_path);
  const LoadedModel model = load_model(checkpoint, config, data.front());
  const MetricsReport r = evaluate(model.cfg, model.params, data, model.threshold, "eval");
  const std::string json = r.to_json().dump();
  if (!metrics.empty()) open_out(metrics) << json << '\n';
  std::cout << json << '\n';
  return kExitOk;
}

int cmd_gradcheck(const std::string& config, std::size_t n_samples) {
  const RunConfig rc = config_or_default(config, tiny_config());
  SynthSpec spec = rc.synth_spec();
  spec.n_samples = static_cast<Index>(n_samples);
  const std::vector<NewsSample> samples = generate(spec);
  ModelParams params = init_params(rc.model);

  const GradCheckReport report = grad_check(
      [&](Tape& tape) {
        Var total;
        for (const NewsSample& s : samples) {
          const Var l = binary_cross_entropy(forward(tape, s, rc.model, params).y_hat, s.label);
          total = total.valid() ? add(total, l) : l;
        }
        return total;
      },
      params);

  std::cout << std::left << std::setw(48) << "parameter" << std::right << std::setw(8) << "count" << std::setw(14)
            << "max_rel" << std::setw(14) << "max_abs" << '\n';
  std::cout << std::scientific << std::setprecision(3);
  for (const GradCheckEntry& e : report.entries) {
    std::cout << std::left << std::setw(48) << e.path << std::right << std::setw(8) << e.count << std::setw(14)
              << e.max_rel_error << std::setw(14) << e.max_abs_error << '\n';
  }
  const bool ok = report.passed(kGradCheckTolerance);
  std::cout << "max relative error " << report.max_rel_error() << " over " << report.entries.size()
            << " parameters: " << (ok ? "PASS" : "FAIL") << " (tolerance " << kGradCheckTolerance << ")\n";
  return ok ? kExitOk : kExitVerification;
}

int cmd_inspect(const std::string& checkpoint, const std::string& data_path, std::size_t index,
                const std::string& out_dir, const std::string& config) {
  const std::vector<NewsSample> data = read_data_file(data_path);
  if (index >= data.size()) {
    throw UsageError("sample " + std::to_string(index) + " out of range (" + std::to_string(data.size()) +
                     " samples)");
  }
  const LoadedModel model = load_model(checkpoint, config, data.front());
  AttentionTrace trace;
  const Prediction p = forward(data[index], model.cfg, model.params, &trace);

  fs::create_directories(out_dir);
  for (const auto& [site, weights] : trace.sites) {
    std::ofstream csv = open_out(fs::path(out_dir) / (site + ".csv"));
    csv << std::setprecision(17);
    for (Index r = 0; r < weights.rows(); ++r) {
      for (Index c = 0; c < weights.cols(); ++c) csv << (c ? "," : "") << weights(r, c);
      csv << '\n';
    }
    std::cout << site << ' ' << weights.rows() << 'x' << weights.cols() << '\n';
  }
  std::cout << "y_hat " << std::setprecision(6) << p.y_hat << " label " << data[index].label << " type "
            << to_string(data[index].fake_type) << '\n';
  return kExitOk;
}

int cmd_ablate(const std::string& config, const std::string& data_path, const std::string& out_dir) {
  const RunConfig rc = config_or_default(config);
  const std::vector<NewsSample> data = load_data(data_path.empty() ? rc.data.path : data_path, rc);
  const Split sp = split(data, rc.data.train_fraction, rc.seed);
  const AblationTable table = run_ablation_suite(rc.model, rc.train, sp.train, sp.test, log_epoch);

  fs::create_directories(out_dir);
  open_out(fs::path(out_dir) / "ablation.md") << table.markdown();
  open_out(fs::path(out_dir) / "ablation.json") << table.to_json().dump(2) << '\n';
  std::cout << table.markdown();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal inverse attention network: synthesis, training and diagnostics"};
  app.require_subcommand(1);

  std::string config, data, out, checkpoint, metrics, spec, ablation;
  std::optional<std::uint64_t> seed;
  std::size_t sample = 0;
  std::size_t n_grad_samples = 2;
  std::function<int()> run;

  auto* synth = app.add_subcommand("synth", "Write a synthetic MIANEMB1 data set");
  synth->add_option("--spec", spec, "Synthesis spec file (defaults apply when omitted)");
  synth->add_option("--out", out, "Output MIANEMB1 path")->required();
  synth->add_option("--seed", seed, "Override the spec seed");
  synth->callback([&] { run = [&] { return cmd_synth(spec, out, seed); }; });

  auto* tr = app.add_subcommand("train", "Train a model and write checkpoint and JSONL metrics");
  tr->add_option("--config", config, "Run config file");
  tr->add_option("--data", data, "MIANEMB1 data (synthesized from the config when omitted)");
  tr->add_option("--out-checkpoint", checkpoint, "Checkpoint output path")->required();
  tr->add_option("--metrics", metrics, "JSONL metrics output path")->required();
  tr->add_option("--ablation", ablation, "Comma list of blocks to disable, overriding the config");
  tr->callback([&] { run = [&] { return cmd_train(config, data, checkpoint, metrics, ablation); }; });

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a data set");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  ev->add_option("--data", data, "MIANEMB1 data")->required();
  ev->add_option("--metrics", metrics, "JSON metrics output path");
  ev->add_option("--config", config, "Run config (inferred from the checkpoint when omitted)");
  ev->callback([&] { run = [&] { return cmd_eval(checkpoint, data, metrics, config); }; });

  auto* gc = app.add_subcommand("gradcheck", "Compare taped gradients with central differences");
  gc->add_option("--config", config, "Run config (tiny built-in config when omitted)");
  gc->add_option("--samples", n_grad_samples, "Synthetic samples in the checked loss")->check(CLI::PositiveNumber);
  gc->callback([&] { run = [&] { return cmd_gradcheck(config, n_grad_samples); }; });

  auto* in = app.add_subcommand("inspect", "Dump attention weights of one sample as CSV");
  in->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  in->add_option("--data", data, "MIANEMB1 data")->required();
  in->add_option("--sample", sample, "Sample index")->required();
  in->add_option("--out", out, "Output directory")->required();
  in->add_option("--config", config, "Run config (inferred from the checkpoint when omitted)");
  in->callback([&] { run = [&] { return cmd_inspect(checkpoint, data, sample, out, config); }; });

  auto* ab = app.add_subcommand("ablate", "Train the full model and the four ablations");
  ab->add_option("--config", config, "Run config file");
  ab->add_option("--data", data, "MIANEMB1 data (synthesized from the config when omitted)");
  ab->add_option("--out", out, "Output directory for ablation.md and ablation.json")->required();
  ab->callback([&] { run = [&] { return cmd_ablate(config, data, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    return run();
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}
