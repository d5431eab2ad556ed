#pragma once

#include "ldam/embeddings.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ldam {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One patient record: pre-tokenized note, N_S x T indicator matrix, N_Y binary labels.
struct EhrSample {
  std::string id;
  std::vector<std::string> note_tokens;
  Eigen::MatrixXd timeseries;
  Eigen::VectorXd labels;
};

struct TaskSchema {
  std::vector<std::string> indicator_names;
  std::vector<std::string> label_names;
  Eigen::Index time_steps = 48;
  /// Per-indicator constants substituted for missing readings (defaults to 0).
  std::vector<double> reference_values;
  /// Numeric sentinel treated as missing, in addition to JSON null.
  std::optional<double> missing_value;

  Eigen::Index num_indicators() const { return static_cast<Eigen::Index>(indicator_names.size()); }
  Eigen::Index num_labels() const { return static_cast<Eigen::Index>(label_names.size()); }
  void validate() const;

  /// 17 indicators and 25 risk labels of the MIMIC-III benchmark task, T = 48.
  static TaskSchema desk_default();
};

TaskSchema load_schema(const std::filesystem::path& path);
TaskSchema schema_from_json(const std::string& text, const std::string& where = "<string>");
std::string schema_to_json(const TaskSchema& schema);
void save_schema(const TaskSchema& schema, const std::filesystem::path& path);

/// Throws DataError naming `where` if the sample breaks any schema invariant.
void validate_sample(const EhrSample& sample, const TaskSchema& schema, const std::string& where);

/// JSON-Lines: {"id", "note", "ts", "y"} per line. Empty file -> empty vector.
std::vector<EhrSample> load_dataset(const std::filesystem::path& path, const TaskSchema& schema);
std::vector<EhrSample> parse_dataset(std::istream& in, const TaskSchema& schema, const std::string& origin);
void save_dataset(const std::vector<EhrSample>& samples, const std::filesystem::path& path);
std::string sample_to_json_line(const EhrSample& sample);

/// Planted-signal generator settings. Label j is tied to trigger_tokens[j] and to
/// a mean shift on channel trigger_channels[j].
struct SynthSpec {
  std::uint64_t seed = 7;
  std::size_t n_samples = 1000;
  std::size_t note_length = 20;  // filler tokens per note, triggers are inserted on top
  std::size_t filler_vocab = 300;
  std::vector<std::vector<std::string>> trigger_tokens;
  std::vector<std::pair<Eigen::Index, double>> trigger_channels;
  double base_label_rate = 0.15;
  /// Probability that a negative label's trigger token still appears (spurious mention).
  double token_noise_rate = 0.02;
  /// Trigger vectors in the companion embedding table are the label-name vector plus
  /// this much isotropic noise (both unit norm before mixing), then renormalized.
  double trigger_name_noise = 1.0;

  void validate(const TaskSchema& schema) const;
  std::vector<std::string> filler_tokens() const;

  /// `triggers_per_label` tokens per label, channel j mod N_S shifted by `shift`.
  static SynthSpec defaults(const TaskSchema& schema, std::size_t triggers_per_label = 2, double shift = 2.0);
};

std::vector<EhrSample> generate_synthetic(const SynthSpec& spec, const TaskSchema& schema);

/// Embedding table for a synthetic corpus: names and fillers use toy_embed under the
/// spec seed, each trigger token sits near the name vector of its label.
EmbeddingTable synthetic_embeddings(const SynthSpec& spec, const TaskSchema& schema, Eigen::Index dim);

/// Seeded shuffle, then the first round(ratio * n) samples go to the first half.
std::pair<std::vector<EhrSample>, std::vector<EhrSample>> split(const std::vector<EhrSample>& dataset, double ratio,
                                                                std::uint64_t seed);

/// Lowercase, drop non-alphabetic characters, split on whitespace, remove stop words.
std::vector<std::string> normalize_text(const std::string& raw, const std::vector<std::string>& stop_words);
const std::vector<std::string>& default_stop_words();

}  // namespace ldam
