#include "ldam/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace ldam {

using nlohmann::json;

namespace {

// Letters-only code for an index: 0 -> "a", 25 -> "z", 26 -> "ba", ...
std::string letter_code(std::size_t n) {
  std::string s;
  do {
    s.insert(s.begin(), static_cast<char>('a' + n % 26));
    n /= 26;
  } while (n > 0);
  return s;
}

void require_unique_nonempty(const std::vector<std::string>& names, const std::string& what) {
  if (names.empty()) throw DataError("schema: " + what + " must not be empty");
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw DataError("schema: empty entry in " + what);
    if (!seen.insert(n).second) throw DataError("schema: duplicate entry '" + n + "' in " + what);
  }
}

}  // namespace

void TaskSchema::validate() const {
  require_unique_nonempty(indicator_names, "indicator_names");
  require_unique_nonempty(label_names, "label_names");
  if (time_steps < 1) throw DataError("schema: T must be >= 1");
  if (!reference_values.empty() && reference_values.size() != indicator_names.size()) {
    throw DataError("schema: reference_values needs one entry per indicator");
  }
}

TaskSchema TaskSchema::desk_default() {
  TaskSchema s;
  s.indicator_names = {"Capillary refill rate",
                       "Diastolic blood pressure",
                       "Fraction inspired oxygen",
                       "Glascow coma scale eye opening",
                       "Glascow coma scale motor response",
                       "Glascow coma scale total",
                       "Glascow coma scale verbal response",
                       "Glucose",
                       "Heart Rate",
                       "Height",
                       "Mean blood pressure",
                       "Oxygen saturation",
                       "Respiratory rate",
                       "Systolic blood pressure",
                       "Temperature",
                       "Weight",
                       "pH"};
  // Acute risks, then chronic, then mixed.
  s.label_names = {"Acute and unspecified renal failure",
                   "Acute cerebrovascular disease",
                   "Acute myocardial infarction",
                   "Complications of surgical procedures or medical care",
                   "Fluid and electrolyte disorders",
                   "Gastrointestinal hemorrhage",
                   "Other lower respiratory disease",
                   "Other upper respiratory disease",
                   "Pleurisy; pneumothorax; pulmonary collapse",
                   "Pneumonia (except that caused by tuberculosis or sexually transmitted disease)",
                   "Respiratory failure; insufficiency; arrest (adult)",
                   "Septicemia (except in labor)",
                   "Shock",
                   "Chronic kidney disease",
                   "Chronic obstructive pulmonary disease and bronchiectasis",
                   "Coronary atherosclerosis and other heart disease",
                   "Diabetes mellitus without complication",
                   "Disorders of lipid metabolism",
                   "Essential hypertension",
                   "Hypertension with complications and secondary hypertension",
                   "Cardiac dysrhythmias",
                   "Conduction disorders",
                   "Congestive heart failure; nonhypertensive",
                   "Diabetes mellitus with complications",
                   "Other liver diseases"};
  s.time_steps = 48;
  return s;
}

TaskSchema schema_from_json(const std::string& text, const std::string& where) {
  TaskSchema s;
  try {
    json j = json::parse(text);
    if (!j.is_object()) throw DataError("schema " + where + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key != "indicator_names" && key != "label_names" && key != "T" && key != "reference_values" &&
          key != "missing_value") {
        throw DataError("schema " + where + ": unknown field '" + key + "'");
      }
    }
    s.indicator_names = j.at("indicator_names").get<std::vector<std::string>>();
    s.label_names = j.at("label_names").get<std::vector<std::string>>();
    s.time_steps = j.at("T").get<Eigen::Index>();
    if (j.contains("reference_values")) s.reference_values = j.at("reference_values").get<std::vector<double>>();
    if (j.contains("missing_value")) s.missing_value = j.at("missing_value").get<double>();
  } catch (const json::exception& e) {
    throw DataError("schema " + where + ": " + e.what());
  }
  s.validate();
  return s;
}

std::string schema_to_json(const TaskSchema& schema) {
  json j;
  j["indicator_names"] = schema.indicator_names;
  j["label_names"] = schema.label_names;
  j["T"] = schema.time_steps;
  if (!schema.reference_values.empty()) j["reference_values"] = schema.reference_values;
  if (schema.missing_value) j["missing_value"] = *schema.missing_value;
  return j.dump(2);
}

TaskSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return schema_from_json(buffer.str(), path.string());
}

void save_schema(const TaskSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write schema file " + path.string());
  out << schema_to_json(schema) << '\n';
}

void validate_sample(const EhrSample& s, const TaskSchema& schema, const std::string& where) {
  if (s.note_tokens.empty()) throw DataError(where + ": note has no tokens");
  if (s.timeseries.rows() != schema.num_indicators() || s.timeseries.cols() != schema.time_steps) {
    throw DataError(where + ": time series is " + std::to_string(s.timeseries.rows()) + "x" +
                    std::to_string(s.timeseries.cols()) + ", expected " + std::to_string(schema.num_indicators()) +
                    "x" + std::to_string(schema.time_steps));
  }
  if (!s.timeseries.allFinite()) throw DataError(where + ": non-finite time-series value");
  if (s.labels.size() != schema.num_labels()) {
    throw DataError(where + ": " + std::to_string(s.labels.size()) + " labels, expected " +
                    std::to_string(schema.num_labels()));
  }
  for (Eigen::Index j = 0; j < s.labels.size(); ++j) {
    if (s.labels(j) != 0.0 && s.labels(j) != 1.0) throw DataError(where + ": label " + std::to_string(j) + " is not 0/1");
  }
}

std::vector<EhrSample> parse_dataset(std::istream& in, const TaskSchema& schema, const std::string& origin) {
  std::vector<EhrSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    EhrSample s;
    try {
      json j = json::parse(line);
      if (!j.is_object()) throw DataError(where + ": record is not a JSON object");
      for (const auto& [key, value] : j.items()) {
        if (key != "id" && key != "note" && key != "ts" && key != "y") {
          throw DataError(where + ": unknown field '" + key + "'");
        }
      }
      s.id = j.at("id").get<std::string>();
      s.note_tokens = j.at("note").get<std::vector<std::string>>();
      const json& ts = j.at("ts");
      if (!ts.is_array() || static_cast<Eigen::Index>(ts.size()) != schema.num_indicators()) {
        throw DataError(where + ": 'ts' must have " + std::to_string(schema.num_indicators()) + " rows, got " +
                        std::to_string(ts.is_array() ? ts.size() : 0));
      }
      s.timeseries.resize(schema.num_indicators(), schema.time_steps);
      for (Eigen::Index i = 0; i < schema.num_indicators(); ++i) {
        const json& row = ts[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != schema.time_steps) {
          throw DataError(where + ": 'ts' row " + std::to_string(i) + " must have " +
                          std::to_string(schema.time_steps) + " values");
        }
        const double reference =
            schema.reference_values.empty() ? 0.0 : schema.reference_values[static_cast<std::size_t>(i)];
        for (Eigen::Index t = 0; t < schema.time_steps; ++t) {
          const json& v = row[static_cast<std::size_t>(t)];
          if (v.is_null()) {
            s.timeseries(i, t) = reference;
          } else if (v.is_number()) {
            const double x = v.get<double>();
            s.timeseries(i, t) = (schema.missing_value && x == *schema.missing_value) ? reference : x;
          } else {
            throw DataError(where + ": non-numeric time-series value in row " + std::to_string(i));
          }
        }
      }
      const json& y = j.at("y");
      if (!y.is_array()) throw DataError(where + ": 'y' must be an array");
      s.labels.resize(static_cast<Eigen::Index>(y.size()));
      for (std::size_t k = 0; k < y.size(); ++k) {
        if (!y[k].is_number_integer() || (y[k].get<int>() != 0 && y[k].get<int>() != 1)) {
          throw DataError(where + ": label " + std::to_string(k) + " is not 0/1");
        }
        s.labels(static_cast<Eigen::Index>(k)) = y[k].get<int>();
      }
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    validate_sample(s, schema, where);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<EhrSample> load_dataset(const std::filesystem::path& path, const TaskSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return parse_dataset(in, schema, path.string());
}

std::string sample_to_json_line(const EhrSample& s) {
  json j;
  j["id"] = s.id;
  j["note"] = s.note_tokens;
  json ts = json::array();
  for (Eigen::Index i = 0; i < s.timeseries.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index t = 0; t < s.timeseries.cols(); ++t) row.push_back(s.timeseries(i, t));
    ts.push_back(std::move(row));
  }
  j["ts"] = std::move(ts);
  json y = json::array();
  for (Eigen::Index k = 0; k < s.labels.size(); ++k) y.push_back(static_cast<int>(s.labels(k)));
  j["y"] = std::move(y);
  return j.dump();
}

void save_dataset(const std::vector<EhrSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset " + path.string());
  for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

SynthSpec SynthSpec::defaults(const TaskSchema& schema, std::size_t triggers_per_label, double shift) {
  SynthSpec spec;
  for (std::size_t j = 0; j < schema.label_names.size(); ++j) {
    std::vector<std::string> set;
    for (std::size_t k = 0; k < triggers_per_label; ++k) set.push_back("trg" + letter_code(j) + "x" + letter_code(k));
    spec.trigger_tokens.push_back(std::move(set));
    spec.trigger_channels.emplace_back(static_cast<Eigen::Index>(j) % schema.num_indicators(), shift);
  }
  return spec;
}

std::vector<std::string> SynthSpec::filler_tokens() const {
  std::vector<std::string> out;
  out.reserve(filler_vocab);
  for (std::size_t i = 0; i < filler_vocab; ++i) out.push_back("fil" + letter_code(i));
  return out;
}

void SynthSpec::validate(const TaskSchema& schema) const {
  const std::size_t labels = schema.label_names.size();
  if (trigger_tokens.size() != labels) throw DataError("synth spec: need one trigger set per label");
  if (trigger_channels.size() != labels) throw DataError("synth spec: need one trigger channel per label");
  if (filler_vocab == 0) throw DataError("synth spec: filler_vocab must be positive");
  if (!(base_label_rate >= 0.0 && base_label_rate <= 1.0)) throw DataError("synth spec: base_label_rate not in [0,1]");
  if (!(token_noise_rate >= 0.0 && token_noise_rate <= 1.0)) {
    throw DataError("synth spec: token_noise_rate not in [0,1]");
  }
  const auto fillers = filler_tokens();
  const std::set<std::string> filler_set(fillers.begin(), fillers.end());
  for (std::size_t j = 0; j < labels; ++j) {
    if (trigger_tokens[j].empty()) throw DataError("synth spec: empty trigger set for label " + std::to_string(j));
    for (const auto& t : trigger_tokens[j]) {
      if (filler_set.count(t)) throw DataError("synth spec: trigger token '" + t + "' collides with filler vocabulary");
    }
    const auto [channel, shift] = trigger_channels[j];
    if (channel < 0 || channel >= schema.num_indicators()) {
      throw DataError("synth spec: trigger channel out of range for label " + std::to_string(j));
    }
    if (!std::isfinite(shift)) throw DataError("synth spec: non-finite mean shift");
  }
  if (!(std::isfinite(trigger_name_noise) && trigger_name_noise >= 0.0)) {
    throw DataError("synth spec: trigger_name_noise must be finite and >= 0");
  }
  if (note_length == 0 && base_label_rate == 0.0 && token_noise_rate == 0.0) {
    throw DataError("synth spec: notes would be empty");
  }
}

std::vector<EhrSample> generate_synthetic(const SynthSpec& spec, const TaskSchema& schema) {
  schema.validate();
  spec.validate(schema);
  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution label_draw(spec.base_label_rate);
  std::bernoulli_distribution noise_draw(spec.token_noise_rate);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto fillers = spec.filler_tokens();
  std::uniform_int_distribution<std::size_t> pick_filler(0, fillers.size() - 1);

  const Eigen::Index n_labels = schema.num_labels();
  std::vector<EhrSample> out;
  out.reserve(spec.n_samples);
  for (std::size_t n = 0; n < spec.n_samples; ++n) {
    EhrSample s;
    s.id = "synth-" + std::to_string(spec.seed) + "-" + std::to_string(n);
    s.labels = Eigen::VectorXd::Zero(n_labels);
    for (Eigen::Index j = 0; j < n_labels; ++j) s.labels(j) = label_draw(rng) ? 1.0 : 0.0;

    for (std::size_t l = 0; l < spec.note_length; ++l) s.note_tokens.push_back(fillers[pick_filler(rng)]);
    for (Eigen::Index j = 0; j < n_labels; ++j) {
      const auto& set = spec.trigger_tokens[static_cast<std::size_t>(j)];
      const bool planted = s.labels(j) == 1.0;
      if (planted || noise_draw(rng)) {
        std::uniform_int_distribution<std::size_t> pick(0, set.size() - 1);
        std::uniform_int_distribution<std::size_t> where(0, s.note_tokens.size());
        const auto& token = set[pick(rng)];
        s.note_tokens.insert(s.note_tokens.begin() + static_cast<std::ptrdiff_t>(where(rng)), token);
      }
    }

    s.timeseries.resize(schema.num_indicators(), schema.time_steps);
    for (Eigen::Index i = 0; i < s.timeseries.rows(); ++i)
      for (Eigen::Index t = 0; t < s.timeseries.cols(); ++t) s.timeseries(i, t) = noise(rng);
    for (Eigen::Index j = 0; j < n_labels; ++j) {
      if (s.labels(j) == 1.0) {
        const auto [channel, shift] = spec.trigger_channels[static_cast<std::size_t>(j)];
        s.timeseries.row(channel).array() += shift;
      }
    }
    if (s.note_tokens.empty()) s.note_tokens.push_back(fillers[pick_filler(rng)]);
    out.push_back(std::move(s));
  }
  return out;
}

EmbeddingTable synthetic_embeddings(const SynthSpec& spec, const TaskSchema& schema, Eigen::Index dim) {
  schema.validate();
  spec.validate(schema);
  EmbeddingTable table(dim, EmbeddingKind::token);
  std::set<std::string> names(schema.label_names.begin(), schema.label_names.end());
  names.insert(schema.indicator_names.begin(), schema.indicator_names.end());
  for (const auto& name : names) table.insert(name, toy_embed(spec.seed, name, dim));
  for (const auto& filler : spec.filler_tokens()) {
    if (!table.contains(filler)) table.insert(filler, toy_embed(spec.seed, filler, dim));
  }
  // A separate stream for the trigger perturbations keeps them independent of the name vectors.
  const std::uint64_t noise_seed = spec.seed ^ 0x9e3779b97f4a7c15ULL;
  for (std::size_t j = 0; j < spec.trigger_tokens.size(); ++j) {
    const Eigen::VectorXd anchor = toy_embed(spec.seed, schema.label_names[j], dim);
    for (const auto& token : spec.trigger_tokens[j]) {
      Eigen::VectorXd v = anchor + spec.trigger_name_noise * toy_embed(noise_seed, token, dim);
      if (v.norm() == 0.0) v = toy_embed(noise_seed, token, dim);
      table.insert(token, v / v.norm());
    }
  }
  return table;
}

std::pair<std::vector<EhrSample>, std::vector<EhrSample>> split(const std::vector<EhrSample>& dataset, double ratio,
                                                                std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DataError("split: ratio must lie strictly between 0 and 1");
  if (dataset.size() < 2) throw DataError("split: need at least 2 samples");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto first = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(dataset.size())));
  first = std::clamp<std::size_t>(first, 1, dataset.size() - 1);
  std::pair<std::vector<EhrSample>, std::vector<EhrSample>> out;
  for (std::size_t i = 0; i < order.size(); ++i) (i < first ? out.first : out.second).push_back(dataset[order[i]]);
  return out;
}

const std::vector<std::string>& default_stop_words() {
  static const std::vector<std::string> words{
      "a",    "an",   "and",  "are",  "as",   "at",    "be",   "by",    "for",  "from", "has",  "he",
      "her",  "his",  "in",   "is",   "it",   "its",   "of",   "on",    "or",   "she",  "that", "the",
      "this", "to",   "was",  "were", "will", "with",  "which", "who",  "had",  "have", "been", "but",
      "not",  "no",   "than", "then", "there", "these", "they", "those", "we",  "you"};
  return words;
}

std::vector<std::string> normalize_text(const std::string& raw, const std::vector<std::string>& stop_words) {
  const std::set<std::string> stop(stop_words.begin(), stop_words.end());
  std::vector<std::string> tokens;
  std::istringstream is(raw);
  std::string word;
  while (is >> word) {
    std::string clean;
    for (unsigned char c : word) {
      if (std::isalpha(c)) clean.push_back(static_cast<char>(std::tolower(c)));
    }
    if (!clean.empty() && !stop.count(clean)) tokens.push_back(std::move(clean));
  }
  return tokens;
}

}  // namespace ldam
