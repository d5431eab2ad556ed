#pragma once

#include "ldam/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldam {

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EmbeddingKind { token, name };

/// Fixed string -> D-vector lookup. Missing token-kind keys resolve to the zero
/// (UNK) vector; missing name-kind keys are an error.
class EmbeddingTable {
 public:
  EmbeddingTable(Eigen::Index dim, EmbeddingKind kind);

  Eigen::Index dim() const { return dim_; }
  EmbeddingKind kind() const { return kind_; }
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, Eigen::VectorXd>& entries() const { return entries_; }

  /// Throws on duplicate key or wrong dimension.
  void insert(const std::string& key, Eigen::VectorXd vec);
  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  Eigen::VectorXd lookup(const std::string& key) const;

  EmbeddingTable with_kind(EmbeddingKind kind) const;

 private:
  Eigen::Index dim_;
  EmbeddingKind kind_;
  std::map<std::string, Eigen::VectorXd> entries_;
};

/// Reads the `dim=<D>` + tab-separated table format.
EmbeddingTable load_table(const std::filesystem::path& path, EmbeddingKind kind = EmbeddingKind::token);
/// Writes entries in key order with 17 significant digits.
void save_table(const EmbeddingTable& table, const std::filesystem::path& path);

/// Deterministic, unit-norm pseudo-embedding for `key` under `seed`.
Eigen::VectorXd toy_embed(std::uint64_t seed, const std::string& key, Eigen::Index dim);

/// Frozen source of E^M / E^S / E^Y columns: a loaded table or the toy embedder.
class EmbeddingProvider {
 public:
  static EmbeddingProvider from_file(const std::filesystem::path& path);
  static EmbeddingProvider from_table(EmbeddingTable table, std::string origin = "memory");
  static EmbeddingProvider toy(std::uint64_t seed, Eigen::Index dim);

  Eigen::Index dim() const { return dim_; }
  bool is_toy() const { return !table_.has_value(); }
  std::uint64_t toy_seed() const { return seed_; }
  /// "toy:<seed>:<dim>" or "file:<path>", enough to rebuild the provider.
  std::string descriptor() const;
  static EmbeddingProvider from_descriptor(const std::string& descriptor);

  Eigen::VectorXd token(const std::string& token) const;
  Eigen::VectorXd name(const std::string& name) const;

 private:
  EmbeddingProvider() = default;

  Eigen::Index dim_ = 0;
  std::uint64_t seed_ = 0;
  std::optional<EmbeddingTable> table_;
  std::string origin_;
};

/// {D, L}: column l embeds token l. Throws on an empty note.
Matrix embed_note(const EmbeddingProvider& provider, const std::vector<std::string>& tokens);
/// {D, N}: column n embeds the whole name string n.
Matrix embed_names(const EmbeddingProvider& provider, const std::vector<std::string>& names);

}  // namespace ldam
