#include "ldam/explain.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace ldam {

using nlohmann::json;

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ExplainError("unterminated quote in CSV line");
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

std::size_t HighlightedNote::important_count() const {
  return static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [](const HighlightToken& t) { return t.important; }));
}

HighlightedNote highlight(const std::vector<std::string>& tokens, const Eigen::VectorXd& beta, double fraction,
                          std::string id) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ExplainError("highlight fraction must lie in (0, 1]");
  if (static_cast<Eigen::Index>(tokens.size()) != beta.size()) {
    throw ExplainError("highlight: " + std::to_string(tokens.size()) + " tokens but " + std::to_string(beta.size()) +
                       " attention weights");
  }
  const std::size_t n = tokens.size();
  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return beta(static_cast<Eigen::Index>(a)) > beta(static_cast<Eigen::Index>(b));
  });

  HighlightedNote note;
  note.id = std::move(id);
  note.threshold_fraction = fraction;
  for (std::size_t l = 0; l < n; ++l) note.tokens.push_back({tokens[l], beta(static_cast<Eigen::Index>(l)), false});
  for (std::size_t k = 0; k < keep; ++k) note.tokens[order[k]].important = true;
  return note;
}

HighlightedNote highlight(const EhrSample& sample, const ForwardOutput& output, double fraction) {
  const auto len = static_cast<std::size_t>(output.beta.size());
  if (len == 0) throw ExplainError("highlight: model output has no token attention (time-series-only mode?)");
  if (sample.note_tokens.size() < len) throw ExplainError("highlight: note is shorter than its attention vector");
  std::vector<std::string> seen(sample.note_tokens.begin(), sample.note_tokens.begin() + static_cast<std::ptrdiff_t>(len));
  return highlight(seen, output.beta, fraction, sample.id);
}

std::vector<std::pair<std::string, double>> channel_ranking(const Eigen::VectorXd& alpha,
                                                            const std::vector<std::string>& indicator_names) {
  if (alpha.size() != static_cast<Eigen::Index>(indicator_names.size())) {
    throw ExplainError("channel_ranking: " + std::to_string(alpha.size()) + " weights for " +
                       std::to_string(indicator_names.size()) + " indicators");
  }
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < indicator_names.size(); ++i) {
    out.emplace_back(indicator_names[i], alpha(static_cast<Eigen::Index>(i)));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

std::string highlight_to_json(const HighlightedNote& note) {
  json tokens = json::array();
  for (const auto& t : note.tokens) tokens.push_back({{"token", t.token}, {"beta", t.weight}, {"important", t.important}});
  return json{{"id", note.id}, {"threshold_fraction", note.threshold_fraction}, {"tokens", tokens}}.dump();
}

HighlightedNote highlight_from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    HighlightedNote note;
    note.id = j.at("id").get<std::string>();
    note.threshold_fraction = j.at("threshold_fraction").get<double>();
    for (const auto& t : j.at("tokens")) {
      note.tokens.push_back({t.at("token").get<std::string>(), t.at("beta").get<double>(), t.at("important").get<bool>()});
    }
    return note;
  } catch (const json::exception& e) {
    throw ExplainError(std::string("malformed highlight record: ") + e.what());
  }
}

std::string highlight_to_text(const HighlightedNote& note) {
  std::string out;
  for (const auto& t : note.tokens) {
    if (!out.empty()) out += ' ';
    out += t.important ? "**" + t.token + "**" : t.token;
  }
  return out;
}

void export_embeddings(std::span<const EmbeddingGroup> groups, const std::filesystem::path& path) {
  Eigen::Index dim = -1;
  for (const auto& g : groups) {
    if (static_cast<Eigen::Index>(g.keys.size()) != g.vectors.cols()) {
      throw ExplainError("embedding group '" + g.group + "' has " + std::to_string(g.keys.size()) + " keys for " +
                         std::to_string(g.vectors.cols()) + " vectors");
    }
    if (g.keys.empty()) continue;
    if (dim < 0) dim = g.vectors.rows();
    if (g.vectors.rows() != dim) {
      throw ExplainError("embedding group '" + g.group + "' has dimension " + std::to_string(g.vectors.rows()) +
                         ", expected " + std::to_string(dim));
    }
  }
  std::ofstream out(path);
  if (!out) throw ExplainError("cannot write embedding export " + path.string());
  out << "key,group";
  for (Eigen::Index d = 0; d < std::max<Eigen::Index>(dim, 0); ++d) out << ",v" << (d + 1);
  out << '\n';
  char buf[64];
  for (const auto& g : groups) {
    for (std::size_t k = 0; k < g.keys.size(); ++k) {
      out << csv_field(g.keys[k]) << ',' << csv_field(g.group);
      for (Eigen::Index d = 0; d < dim; ++d) {
        std::snprintf(buf, sizeof buf, ",%.17g", g.vectors(d, static_cast<Eigen::Index>(k)));
        out << buf;
      }
      out << '\n';
    }
  }
  if (!out) throw ExplainError("failed while writing " + path.string());
}

std::vector<EmbeddingRow> load_embedding_export(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ExplainError("cannot open embedding export " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ExplainError(path.string() + ": missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "key" || header[1] != "group") {
    throw ExplainError(path.string() + ": header must start with key,group");
  }
  const std::size_t dim = header.size() - 2;
  std::vector<EmbeddingRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != dim + 2) {
      throw ExplainError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim + 2) +
                         " fields");
    }
    EmbeddingRow row{fields[0], fields[1], Eigen::VectorXd(static_cast<Eigen::Index>(dim))};
    for (std::size_t d = 0; d < dim; ++d) {
      try {
        std::size_t used = 0;
        row.vector(static_cast<Eigen::Index>(d)) = std::stod(fields[d + 2], &used);
        if (used != fields[d + 2].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ExplainError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + fields[d + 2] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<EmbeddingGroup> projected_embeddings(const TaskSchema& schema, const NameEmbeddings& names,
                                                 const ModelParams& params, const std::vector<std::string>& sample_ids,
                                                 const std::vector<ForwardOutput>& outputs) {
  if (sample_ids.size() != outputs.size()) throw ExplainError("projected_embeddings: ids and outputs differ in count");
  numerics::NoGradGuard guard;
  auto project = [&](const Matrix& m) -> Eigen::MatrixXd {
    return params.f1(Tensor({m.rows(), m.cols()}, m)).value();
  };
  std::vector<EmbeddingGroup> groups;
  groups.push_back({"label", schema.label_names, project(names.labels)});
  groups.push_back({"indicator", schema.indicator_names, project(names.indicators)});
  EmbeddingGroup notes{"note", sample_ids, Eigen::MatrixXd(params.f1.weight.extent(0), static_cast<Eigen::Index>(outputs.size()))};
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].z_m.size() != notes.vectors.rows()) throw ExplainError("projected_embeddings: z_m has the wrong size");
    notes.vectors.col(static_cast<Eigen::Index>(i)) = outputs[i].z_m;
  }
  groups.push_back(std::move(notes));
  return groups;
}

}  // namespace ldam
