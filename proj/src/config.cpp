#include "mian/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace mian {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("invalid value '" + std::string(value) + "' for key '" + std::string(key) + "'");
  }
  return out;
}

std::array<Scalar, 4> parse_mix(std::string_view key, std::string_view value) {
  std::array<Scalar, 4> mix{};
  std::size_t i = 0;
  std::size_t start = 0;
  while (start <= value.size()) {
    const std::size_t end = std::min(value.find(',', start), value.size());
    if (i == mix.size()) throw ConfigError("'" + std::string(key) + "' takes exactly four weights");
    mix[i++] = parse_number<Scalar>(key, trim(value.substr(start, end - start)));
    start = end + 1;
  }
  if (i != mix.size()) throw ConfigError("'" + std::string(key) + "' takes exactly four weights");
  return mix;
}

using Setter = std::function<void(std::string_view key, std::string_view value)>;

// Applies every `key = value` line through `setters`, rejecting unknown and
// repeated keys with the offending line number.
void apply_lines(std::string_view text, const std::map<std::string, Setter, std::less<>>& setters) {
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) throw ConfigError(where + "repeated key '" + std::string(key) + "'");
    try {
      it->second(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + e.what());
    }
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

template <typename T>
Setter set(T& field) {
  return [&field](std::string_view key, std::string_view value) { field = parse_number<T>(key, value); };
}

}  // namespace

RunConfig::RunConfig() {
  // Desk-scale defaults sized for the synthetic set.
  model.d_model = 32;
  model.n_heads = 4;
  model.n_layers = 1;
  model.m = 16;
  model.u = 16;
  model.classifier_hidden = 32;
}

void RunConfig::validate() const {
  try {
    model.validate();
    train.validate();
    if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) {
      throw std::invalid_argument("data.train_fraction must be in (0, 1)");
    }
    if (data.path.empty()) synth_spec().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

SynthSpec RunConfig::synth_spec() const {
  SynthSpec s = data.synth;
  s.m = model.m;
  s.u = model.u;
  s.d = model.d_model;
  s.seed = seed;
  return s;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "seed = " << seed << '\n' << "ablation = " << model.ablation.to_list() << '\n';
  os << "model.d_model = " << model.d_model << '\n'
     << "model.n_heads = " << model.n_heads << '\n'
     << "model.n_layers = " << model.n_layers << '\n'
     << "model.m = " << model.m << '\n'
     << "model.u = " << model.u << '\n'
     << "model.classifier_hidden = " << model.classifier_hidden << '\n'
     << "model.a_value = " << model.a_value << '\n';
  os << "train.epochs = " << train.epochs << '\n'
     << "train.batch_size = " << train.batch_size << '\n'
     << "train.lr0 = " << train.lr0 << '\n'
     << "train.optimizer = " << to_string(train.optimizer) << '\n'
     << "train.step_size = " << train.step_size << '\n'
     << "train.gamma = " << train.gamma << '\n'
     << "train.threshold = " << train.threshold << '\n';
  if (!data.path.empty()) os << "data.path = " << data.path << '\n';
  os << "data.train_fraction = " << data.train_fraction << '\n'
     << "data.n_samples = " << data.synth.n_samples << '\n'
     << "data.n_topics = " << data.synth.n_topics << '\n'
     << "data.noise_sigma = " << data.synth.noise_sigma << '\n'
     << "data.corrupt_fraction = " << data.synth.corrupt_fraction << '\n'
     << "data.class_mix = " << data.synth.class_mix[0] << ", " << data.synth.class_mix[1] << ", "
     << data.synth.class_mix[2] << ", " << data.synth.class_mix[3] << '\n';
  return os.str();
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig c;
  ModelConfig& m = c.model;
  TrainConfig& t = c.train;
  SynthSpec& s = c.data.synth;
  const std::map<std::string, Setter, std::less<>> setters{
      {"seed", set(c.seed)},
      {"ablation", [&](std::string_view, std::string_view v) { m.ablation = Ablation::parse(v); }},
      {"model.d_model", set(m.d_model)},
      {"model.n_heads", set(m.n_heads)},
      {"model.n_layers", set(m.n_layers)},
      {"model.m", set(m.m)},
      {"model.u", set(m.u)},
      {"model.classifier_hidden", set(m.classifier_hidden)},
      {"model.a_value", set(m.a_value)},
      {"train.epochs", set(t.epochs)},
      {"train.batch_size", set(t.batch_size)},
      {"train.lr0", set(t.lr0)},
      {"train.optimizer", [&](std::string_view, std::string_view v) { t.optimizer = parse_optimizer(v); }},
      {"train.step_size", set(t.step_size)},
      {"train.gamma", set(t.gamma)},
      {"train.threshold", set(t.threshold)},
      {"data.path", [&](std::string_view, std::string_view v) { c.data.path = std::string(v); }},
      {"data.train_fraction", set(c.data.train_fraction)},
      {"data.n_samples", set(s.n_samples)},
      {"data.n_topics", set(s.n_topics)},
      {"data.noise_sigma", set(s.noise_sigma)},
      {"data.corrupt_fraction", set(s.corrupt_fraction)},
      {"data.class_mix", [&](std::string_view k, std::string_view v) { s.class_mix = parse_mix(k, v); }},
  };
  apply_lines(text, setters);
  c.model.seed = c.seed;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text(path)); }

SynthSpec parse_synth_spec(std::string_view text) {
  SynthSpec s;
  const std::map<std::string, Setter, std::less<>> setters{
      {"n_samples", set(s.n_samples)},
      {"m", set(s.m)},
      {"u", set(s.u)},
      {"d", set(s.d)},
      {"n_topics", set(s.n_topics)},
      {"noise_sigma", set(s.noise_sigma)},
      {"corrupt_fraction", set(s.corrupt_fraction)},
      {"class_mix", [&](std::string_view k, std::string_view v) { s.class_mix = parse_mix(k, v); }},
      {"seed", set(s.seed)},
  };
  apply_lines(text, setters);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) { return parse_synth_spec(read_text(path)); }

}  // namespace mian
