#pragma once

#include "ldam/training.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldam {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ConfigMap = std::map<std::string, std::string>;

/// Keys understood by apply_config, in documentation order.
const std::vector<std::string>& config_keys();

/// Flat `key = value` file; `#` starts a comment. Unknown or repeated keys are errors.
ConfigMap load_config_file(const std::filesystem::path& path);
ConfigMap parse_config(const std::string& text, const std::string& where = "<config>");
ConfigMap parse_key_values(const std::string& text, const std::string& where, const std::vector<std::string>& keys);
std::string read_text_file(const std::filesystem::path& path);

/// Applies every entry to the two configs; values are validated as they are parsed.
void apply_config(const ConfigMap& entries, ModelConfig& model, TrainConfig& train);

/// Scalar generator settings for `synth --spec`; triggers_per_label and shift shape the defaults.
const std::vector<std::string>& synth_spec_keys();
SynthSpec synth_spec_from_config(const ConfigMap& entries, const TaskSchema& schema, std::uint64_t seed);

/// Round-trips through parse_config + apply_config.
std::string config_to_string(const ModelConfig& model, const TrainConfig& train);

}  // namespace ldam
