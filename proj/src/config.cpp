#include "ldam/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ldam {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a number, got '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "embed_dim", "hidden",     "max_note_len", "ngram",      "ts_ngram",         "conv_channels",
      "mode",      "attention",  "lambda_label", "epochs",     "batch_size",       "lr",
      "seed",      "shuffle",    "checkpoint_every",          "early_stop_patience"};
  return keys;
}

ConfigMap parse_key_values(const std::string& text, const std::string& where, const std::vector<std::string>& keys) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string at = where + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(at + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError(at + ": unknown key '" + key + "'");
    if (value.empty()) throw ConfigError(at + ": empty value for '" + key + "'");
    if (!out.emplace(key, value).second) throw ConfigError(at + ": '" + key + "' given twice");
  }
  return out;
}

ConfigMap parse_config(const std::string& text, const std::string& where) {
  return parse_key_values(text, where, config_keys());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

ConfigMap load_config_file(const std::filesystem::path& path) { return parse_config(read_text_file(path), path.string()); }

const std::vector<std::string>& synth_spec_keys() {
  static const std::vector<std::string> keys{"n_samples",        "note_length", "filler_vocab",     "base_label_rate",
                                             "token_noise_rate", "trigger_name_noise", "triggers_per_label", "shift"};
  return keys;
}

SynthSpec synth_spec_from_config(const ConfigMap& entries, const TaskSchema& schema, std::uint64_t seed) {
  std::size_t triggers = 2;
  double shift = 2.0;
  if (auto it = entries.find("triggers_per_label"); it != entries.end()) {
    triggers = parse_integer<std::size_t>(it->first, it->second);
  }
  if (auto it = entries.find("shift"); it != entries.end()) shift = parse_double(it->first, it->second);
  if (triggers == 0) throw ConfigError("triggers_per_label must be >= 1");
  SynthSpec spec = SynthSpec::defaults(schema, triggers, shift);
  spec.seed = seed;
  for (const auto& [key, value] : entries) {
    if (key == "n_samples") spec.n_samples = parse_integer<std::size_t>(key, value);
    else if (key == "note_length") spec.note_length = parse_integer<std::size_t>(key, value);
    else if (key == "filler_vocab") spec.filler_vocab = parse_integer<std::size_t>(key, value);
    else if (key == "base_label_rate") spec.base_label_rate = parse_double(key, value);
    else if (key == "token_noise_rate") spec.token_noise_rate = parse_double(key, value);
    else if (key == "trigger_name_noise") spec.trigger_name_noise = parse_double(key, value);
    else if (key != "triggers_per_label" && key != "shift") throw ConfigError("unknown synth spec key '" + key + "'");
  }
  try {
    spec.validate(schema);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

void apply_config(const ConfigMap& entries, ModelConfig& model, TrainConfig& train) {
  for (const auto& [key, value] : entries) {
    try {
      if (key == "embed_dim") model.embed_dim = parse_integer<Eigen::Index>(key, value);
      else if (key == "hidden") model.hidden = parse_integer<Eigen::Index>(key, value);
      else if (key == "max_note_len") model.max_note_len = parse_integer<Eigen::Index>(key, value);
      else if (key == "ngram") model.ngram = parse_integer<Eigen::Index>(key, value);
      else if (key == "ts_ngram") model.ts_ngram = parse_integer<Eigen::Index>(key, value);
      else if (key == "conv_channels") model.conv_channels = parse_integer<Eigen::Index>(key, value);
      else if (key == "mode") model.mode = parse_modality(value);
      else if (key == "attention") model.attention = parse_attention(value);
      else if (key == "lambda_label") model.lambda_label = parse_double(key, value);
      else if (key == "epochs") train.epochs = parse_integer<int>(key, value);
      else if (key == "batch_size") train.batch_size = parse_integer<std::size_t>(key, value);
      else if (key == "lr") train.lr = parse_double(key, value);
      else if (key == "seed") train.seed = parse_integer<std::uint64_t>(key, value);
      else if (key == "shuffle") train.shuffle = parse_bool(key, value);
      else if (key == "checkpoint_every") train.checkpoint_every = parse_integer<int>(key, value);
      else if (key == "early_stop_patience") {
        if (value == "off" || value == "none") train.early_stop_patience.reset();
        else train.early_stop_patience = parse_integer<int>(key, value);
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  try {
    model.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string config_to_string(const ModelConfig& model, const TrainConfig& train) {
  char lr[64], lambda[64];
  std::snprintf(lr, sizeof lr, "%.17g", train.lr);
  std::snprintf(lambda, sizeof lambda, "%.17g", model.lambda_label);
  std::ostringstream os;
  os << "embed_dim = " << model.embed_dim << '\n'
     << "hidden = " << model.hidden << '\n'
     << "max_note_len = " << model.max_note_len << '\n'
     << "ngram = " << model.ngram << '\n'
     << "ts_ngram = " << model.ts_ngram << '\n'
     << "conv_channels = " << model.conv_channels << '\n'
     << "mode = " << to_string(model.mode) << '\n'
     << "attention = " << to_string(model.attention) << '\n'
     << "lambda_label = " << lambda << '\n'
     << "epochs = " << train.epochs << '\n'
     << "batch_size = " << train.batch_size << '\n'
     << "lr = " << lr << '\n'
     << "seed = " << train.seed << '\n'
     << "shuffle = " << (train.shuffle ? "true" : "false") << '\n'
     << "checkpoint_every = " << train.checkpoint_every << '\n'
     << "early_stop_patience = " << (train.early_stop_patience ? std::to_string(*train.early_stop_patience) : "off")
     << '\n';
  return os.str();
}

}  // namespace ldam
