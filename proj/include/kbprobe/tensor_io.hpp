// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Embedding interchange format, label sidecars, manifests and collections.
//
// Embedding file layout (little-endian):
//   magic "XKBE" | version u16 = 1 | dtype u8 = 0 (f32) | reserved u8 = 0
//   | n u32 | d u32 | n*d f32 row-major
//
// Labels sidecar (JSON):
//   {"label_names": [...], "labels": [...], "pair_ids": [...] | null,
//    "sample_ids": [...] | null}

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbprobe/types.hpp"

namespace kbprobe {

inline constexpr char kEmbeddingMagic[4] = {'X', 'K', 'B', 'E'};
inline constexpr std::uint16_t kEmbeddingVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::size_t kEmbeddingHeaderBytes = 16;

/// Last-token hidden states of one language at one layer.
struct EmbeddingSet {
  std::string language;
  int layer = 0;
  MatrixF data;
  std::vector<int> labels;
  std::vector<std::string> label_names;
  std::optional<std::vector<std::int64_t>> pair_ids;
  std::optional<std::vector<std::string>> sample_ids;

  std::size_t n() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(data.cols()); }

  /// Throws Error(Validation) naming the first violated invariant.
  void validate() const;

  bool operator==(const EmbeddingSet& other) const;
};

struct ManifestRecord {
  std::string language;
  int layer = 0;
  std::string embeddings_path;
  std::string labels_path;
};

struct Manifest {
  std::string model;
  std::string dataset;
  bool parallel = false;
  std::vector<ManifestRecord> records;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Train/test partition of the rows of one EmbeddingSet.
struct SplitSpec {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  std::uint64_t seed = 0;
  double fraction = 0.8;

  /// Disjoint, covering 0..n-1, and pair-respecting when pair_ids are given.
  void validate(std::size_t n,
                const std::optional<std::vector<std::int64_t>>& pair_ids = std::nullopt) const;

  bool operator==(const SplitSpec&) const = default;
};

/// Per-language splits, keyed by language code.
using SplitMap = std::map<std::string, SplitSpec>;

/// {"splits": {lang: {...}}, "schema_version": "1"}
void save_splits(const SplitMap& splits, const std::filesystem::path& path);
SplitMap load_splits(const std::filesystem::path& path);

struct CellKey {
  std::string language;
  int layer = 0;

  auto operator<=>(const CellKey&) const = default;
};

/// All (language, layer) sets referenced by one manifest. Immutable after load.
class Collection {
 public:
  Collection() = default;
  Collection(std::string model, std::string dataset, bool parallel,
             std::map<CellKey, EmbeddingSet> sets);

  const std::string& model() const { return model_; }
  const std::string& dataset() const { return dataset_; }
  bool parallel() const { return parallel_; }

  /// Sorted, unique.
  std::vector<std::string> languages() const;
  std::vector<int> layers() const;

  bool contains(const std::string& language, int layer) const;
  /// Throws Error(Validation) when the cell is missing.
  const EmbeddingSet& at(const std::string& language, int layer) const;

  const std::map<CellKey, EmbeddingSet>& sets() const { return sets_; }
  std::size_t size() const { return sets_.size(); }

 private:
  std::string model_;
  std::string dataset_;
  bool parallel_ = false;
  std::map<CellKey, EmbeddingSet> sets_;
};

void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& embeddings_path,
                          const std::filesystem::path& labels_path);

/// Language and layer are not stored in the files; they are left empty/zero.
EmbeddingSet read_embedding_file(const std::filesystem::path& embeddings_path,
                                 const std::filesystem::path& labels_path);

/// Matrix-only reader, used by read_embedding_file.
MatrixF read_embedding_matrix(const std::filesystem::path& embeddings_path);

/// Relative record paths resolve against the manifest's directory.
Collection load_collection(const std::filesystem::path& manifest_path);

/// Succeeds iff both sets have equal n and, when both carry sample_ids, the ids match row-wise.
void validate_parallel(const EmbeddingSet& a, const EmbeddingSet& b);

/// Copies the selected rows into a new f64 matrix.
MatrixD gather_rows(const MatrixF& data, std::span<const std::size_t> rows);
std::vector<int> gather(std::span<const int> values, std::span<const std::size_t> rows);

}  // namespace kbprobe
