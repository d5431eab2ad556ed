#pragma once

#include "ldam/model.hpp"

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ldam {

class ExplainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HighlightToken {
  std::string token;
  double weight = 0.0;
  bool important = false;
};

struct HighlightedNote {
  std::string id;
  std::vector<HighlightToken> tokens;
  double threshold_fraction = 0.5;

  std::size_t important_count() const;
};

/// Marks the ceil(fraction * L) highest-weighted tokens; equal weights favour the earlier position.
HighlightedNote highlight(const std::vector<std::string>& tokens, const Eigen::VectorXd& beta, double fraction,
                          std::string id = {});
/// Uses the tokens the model actually saw: a note longer than beta is cut to beta's length.
HighlightedNote highlight(const EhrSample& sample, const ForwardOutput& output, double fraction);

/// Descending by weight; ties keep the input order.
std::vector<std::pair<std::string, double>> channel_ranking(const Eigen::VectorXd& alpha,
                                                            const std::vector<std::string>& indicator_names);

std::string highlight_to_json(const HighlightedNote& note);
HighlightedNote highlight_from_json(const std::string& line);
/// Tokens joined by spaces, important ones wrapped as **token**.
std::string highlight_to_text(const HighlightedNote& note);

/// One block of rows for the embedding export; `vectors` holds one column per key.
struct EmbeddingGroup {
  std::string group;
  std::vector<std::string> keys;
  Eigen::MatrixXd vectors;
};

struct EmbeddingRow {
  std::string key;
  std::string group;
  Eigen::VectorXd vector;
};

/// CSV `key,group,v1..vD` with 17 significant digits. Every group must share one
/// dimension; this is checked before the file is opened.
void export_embeddings(std::span<const EmbeddingGroup> groups, const std::filesystem::path& path);
std::vector<EmbeddingRow> load_embedding_export(const std::filesystem::path& path);

/// Label names, indicator names and note vectors in the shared projected space:
/// f1(E^Y), f1(E^S) and z^M for each sample.
std::vector<EmbeddingGroup> projected_embeddings(const TaskSchema& schema, const NameEmbeddings& names,
                                                 const ModelParams& params, const std::vector<std::string>& sample_ids,
                                                 const std::vector<ForwardOutput>& outputs);

}  // namespace ldam
