#include "ldam/embeddings.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace ldam {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

double parse_double(const std::string& field, const std::string& where) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw EmbeddingError(where + ": non-numeric field '" + field + "'");
  }
  return v;
}

// FNV-1a, so the toy embedder does not depend on std::hash.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

EmbeddingTable::EmbeddingTable(Eigen::Index dim, EmbeddingKind kind) : dim_(dim), kind_(kind) {
  if (dim <= 0) throw EmbeddingError("embedding dimension must be positive");
}

void EmbeddingTable::insert(const std::string& key, Eigen::VectorXd vec) {
  if (vec.size() != dim_) {
    throw EmbeddingError("embedding for '" + key + "' has " + std::to_string(vec.size()) +
                         " components, table dim is " + std::to_string(dim_));
  }
  if (!entries_.emplace(key, std::move(vec)).second) throw EmbeddingError("duplicate key '" + key + "'");
}

Eigen::VectorXd EmbeddingTable::lookup(const std::string& key) const {
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;
  if (kind_ == EmbeddingKind::token) return Eigen::VectorXd::Zero(dim_);
  throw EmbeddingError("no embedding for name '" + key + "'");
}

EmbeddingTable EmbeddingTable::with_kind(EmbeddingKind kind) const {
  EmbeddingTable copy = *this;
  copy.kind_ = kind;
  return copy;
}

EmbeddingTable load_table(const std::filesystem::path& path, EmbeddingKind kind) {
  std::ifstream in(path);
  if (!in) throw EmbeddingError("cannot open embedding file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("dim=", 0) != 0) {
    throw EmbeddingError(path.string() + ":1: malformed header, expected 'dim=<D>'");
  }
  Eigen::Index dim = 0;
  const std::string dim_text = line.substr(4);
  auto [ptr, ec] = std::from_chars(dim_text.data(), dim_text.data() + dim_text.size(), dim);
  if (ec != std::errc() || ptr != dim_text.data() + dim_text.size() || dim <= 0) {
    throw EmbeddingError(path.string() + ":1: malformed header '" + line + "'");
  }
  EmbeddingTable table(dim, kind);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto fields = split_tabs(line);
    if (static_cast<Eigen::Index>(fields.size()) != dim + 1) {
      throw EmbeddingError(where + ": ragged row with " + std::to_string(fields.size() - 1) + " values, expected " +
                           std::to_string(dim));
    }
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = parse_double(fields[static_cast<std::size_t>(i + 1)], where);
    try {
      table.insert(fields[0], std::move(v));
    } catch (const EmbeddingError& e) {
      throw EmbeddingError(where + ": " + e.what());
    }
  }
  return table;
}

void save_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw EmbeddingError("cannot write embedding file " + path.string());
  out << "dim=" << table.dim() << '\n';
  char buf[32];
  for (const auto& [key, vec] : table.entries()) {
    out << key;
    for (Eigen::Index i = 0; i < vec.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", vec(i));
      out << '\t' << buf;
    }
    out << '\n';
  }
  if (!out) throw EmbeddingError("write failed for " + path.string());
}

Eigen::VectorXd toy_embed(std::uint64_t seed, const std::string& key, Eigen::Index dim) {
  if (dim < 1) throw EmbeddingError("toy_embed: dim must be >= 1");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(key)), static_cast<std::uint32_t>(fnv1a(key) >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  do {
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = normal(rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

EmbeddingProvider EmbeddingProvider::from_file(const std::filesystem::path& path) {
  auto p = from_table(load_table(path), "file:" + path.string());
  return p;
}

EmbeddingProvider EmbeddingProvider::from_table(EmbeddingTable table, std::string origin) {
  EmbeddingProvider p;
  p.dim_ = table.dim();
  p.table_ = std::move(table);
  p.origin_ = std::move(origin);
  return p;
}

EmbeddingProvider EmbeddingProvider::toy(std::uint64_t seed, Eigen::Index dim) {
  if (dim < 1) throw EmbeddingError("toy embedding dim must be >= 1");
  EmbeddingProvider p;
  p.dim_ = dim;
  p.seed_ = seed;
  return p;
}

std::string EmbeddingProvider::descriptor() const {
  if (is_toy()) return "toy:" + std::to_string(seed_) + ":" + std::to_string(dim_);
  return origin_;
}

EmbeddingProvider EmbeddingProvider::from_descriptor(const std::string& descriptor) {
  if (descriptor.rfind("file:", 0) == 0) return from_file(descriptor.substr(5));
  if (descriptor.rfind("toy:", 0) == 0) {
    std::istringstream is(descriptor.substr(4));
    std::uint64_t seed = 0;
    char colon = 0;
    Eigen::Index dim = 0;
    if (is >> seed >> colon >> dim && colon == ':' && is.peek() == std::char_traits<char>::eof()) {
      return toy(seed, dim);
    }
  }
  throw EmbeddingError("unrecognised embedding source '" + descriptor + "'");
}

Eigen::VectorXd EmbeddingProvider::token(const std::string& token) const {
  if (table_) return table_->lookup(token);
  return toy_embed(seed_, token, dim_);
}

Eigen::VectorXd EmbeddingProvider::name(const std::string& name) const {
  if (table_) {
    if (!table_->contains(name)) throw EmbeddingError("no embedding for name '" + name + "'");
    return table_->lookup(name);
  }
  return toy_embed(seed_, name, dim_);
}

Matrix embed_note(const EmbeddingProvider& provider, const std::vector<std::string>& tokens) {
  if (tokens.empty()) throw EmbeddingError("embed_note: empty note");
  Matrix out(provider.dim(), static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t l = 0; l < tokens.size(); ++l) out.col(static_cast<Eigen::Index>(l)) = provider.token(tokens[l]);
  return out;
}

Matrix embed_names(const EmbeddingProvider& provider, const std::vector<std::string>& names) {
  if (names.empty()) throw EmbeddingError("embed_names: no names");
  Matrix out(provider.dim(), static_cast<Eigen::Index>(names.size()));
  for (std::size_t n = 0; n < names.size(); ++n) out.col(static_cast<Eigen::Index>(n)) = provider.name(names[n]);
  return out;
}

}  // namespace ldam
