// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbprobe/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <unordered_map>

#include "json_util.hpp"
#include "kbprobe/error.hpp"

namespace kbprobe {

using detail::Json;

namespace {

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xffu));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size)))
    fail(ErrorCode::Io, "read failed: " + path.string());
  return bytes;
}

void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

Json labels_to_json(const EmbeddingSet& set) {
  Json j;
  j["label_names"] = set.label_names;
  j["labels"] = set.labels;
  j["pair_ids"] = set.pair_ids ? Json(*set.pair_ids) : Json(nullptr);
  j["sample_ids"] = set.sample_ids ? Json(*set.sample_ids) : Json(nullptr);
  return j;
}

void labels_from_json(const Json& j, EmbeddingSet& set, const std::string& what) {
  detail::with_format_errors(what, [&] {
    set.label_names = j.at("label_names").get<std::vector<std::string>>();
    set.labels = j.at("labels").get<std::vector<int>>();
    if (j.contains("pair_ids") && !j["pair_ids"].is_null())
      set.pair_ids = j["pair_ids"].get<std::vector<std::int64_t>>();
    if (j.contains("sample_ids") && !j["sample_ids"].is_null())
      set.sample_ids = j["sample_ids"].get<std::vector<std::string>>();
  });
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

void EmbeddingSet::validate() const {
  const auto rows = n();
  if (rows == 0) fail(ErrorCode::Validation, "embedding set is empty (n = 0)");
  if (d() == 0) fail(ErrorCode::Validation, "embedding set has zero dimensions (d = 0)");
  if (labels.size() != rows)
    fail(ErrorCode::Validation, "labels length " + std::to_string(labels.size()) +
                                    " does not match row count " + std::to_string(rows));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= label_names.size())
      fail(ErrorCode::Validation, "label " + std::to_string(labels[i]) + " at row " +
                                      std::to_string(i) + " is outside label_names (size " +
                                      std::to_string(label_names.size()) + ")");
  }
  if (pair_ids) {
    if (pair_ids->size() != rows)
      fail(ErrorCode::Validation, "pair_ids length " + std::to_string(pair_ids->size()) +
                                      " does not match row count " + std::to_string(rows));
    std::unordered_map<std::int64_t, int> counts;
    for (auto id : *pair_ids) {
      if (++counts[id] > 2)
        fail(ErrorCode::Validation, "pair_id " + std::to_string(id) + " occurs more than twice");
    }
  }
  if (sample_ids && sample_ids->size() != rows)
    fail(ErrorCode::Validation, "sample_ids length " + std::to_string(sample_ids->size()) +
                                    " does not match row count " + std::to_string(rows));
}

bool EmbeddingSet::operator==(const EmbeddingSet& other) const {
  if (language != other.language || layer != other.layer || labels != other.labels ||
      label_names != other.label_names || pair_ids != other.pair_ids ||
      sample_ids != other.sample_ids)
    return false;
  if (data.rows() != other.data.rows() || data.cols() != other.data.cols()) return false;
  return std::memcmp(data.data(), other.data.data(), sizeof(float) * data.size()) == 0;
}

void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& embeddings_path,
                          const std::filesystem::path& labels_path) {
  set.validate();
  if (set.n() > UINT32_MAX || set.d() > UINT32_MAX)
    fail(ErrorCode::Validation, "matrix shape exceeds u32 header fields");

  std::vector<unsigned char> bytes;
  bytes.reserve(kEmbeddingHeaderBytes + 4 * set.n() * set.d());
  bytes.insert(bytes.end(), std::begin(kEmbeddingMagic), std::end(kEmbeddingMagic));
  put_u16(bytes, kEmbeddingVersion);
  bytes.push_back(kDtypeF32);
  bytes.push_back(0);
  put_u32(bytes, static_cast<std::uint32_t>(set.n()));
  put_u32(bytes, static_cast<std::uint32_t>(set.d()));
  const float* values = set.data.data();
  for (Eigen::Index i = 0; i < set.data.size(); ++i) put_u32(bytes, std::bit_cast<std::uint32_t>(values[i]));

  write_all(embeddings_path, bytes);
  detail::write_json_file(labels_path, labels_to_json(set));
}

MatrixF read_embedding_matrix(const std::filesystem::path& embeddings_path) {
  const auto bytes = read_all(embeddings_path);
  const std::string name = embeddings_path.string();
  if (bytes.size() < kEmbeddingHeaderBytes)
    fail(ErrorCode::Format, name + ": file too short for header (" + std::to_string(bytes.size()) +
                                " bytes)");
  if (std::memcmp(bytes.data(), kEmbeddingMagic, 4) != 0)
    fail(ErrorCode::Format, name + ": bad magic");
  const auto version = get_u16(bytes.data() + 4);
  if (version != kEmbeddingVersion)
    fail(ErrorCode::Format, name + ": unsupported version " + std::to_string(version));
  const auto dtype = bytes[6];
  if (dtype != kDtypeF32)
    fail(ErrorCode::Format, name + ": unsupported dtype " + std::to_string(dtype));
  const std::uint64_t n = get_u32(bytes.data() + 8);
  const std::uint64_t d = get_u32(bytes.data() + 12);
  if (n == 0 || d == 0)
    fail(ErrorCode::Format, name + ": empty matrix (n = " + std::to_string(n) +
                                ", d = " + std::to_string(d) + ")");
  const std::uint64_t expected = kEmbeddingHeaderBytes + 4 * n * d;
  if (bytes.size() != expected)
    fail(ErrorCode::Format, name + ": size mismatch: header declares " + std::to_string(n) + "x" +
                                std::to_string(d) + " (" + std::to_string(expected) +
                                " bytes) but file has " + std::to_string(bytes.size()) + " bytes");

  MatrixF data(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  float* out = data.data();
  const unsigned char* p = bytes.data() + kEmbeddingHeaderBytes;
  for (std::uint64_t i = 0; i < n * d; ++i, p += 4) out[i] = std::bit_cast<float>(get_u32(p));
  return data;
}

EmbeddingSet read_embedding_file(const std::filesystem::path& embeddings_path,
                                 const std::filesystem::path& labels_path) {
  EmbeddingSet set;
  set.data = read_embedding_matrix(embeddings_path);
  labels_from_json(detail::read_json_file(labels_path), set, labels_path.string());
  set.validate();
  return set;
}

Manifest read_manifest(const std::filesystem::path& path) {
  const Json j = detail::read_json_file(path);
  return detail::with_format_errors(path.string(), [&] {
    Manifest m;
    m.model = j.value("model", std::string{});
    m.dataset = j.value("dataset", std::string{});
    m.parallel = j.value("parallel", false);
    for (const auto& r : j.at("records")) {
      ManifestRecord rec;
      rec.language = r.at("language").get<std::string>();
      rec.layer = r.at("layer").get<int>();
      rec.embeddings_path = r.at("embeddings_path").get<std::string>();
      rec.labels_path = r.at("labels_path").get<std::string>();
      m.records.push_back(std::move(rec));
    }
    return m;
  });
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  Json j;
  j["model"] = manifest.model;
  j["dataset"] = manifest.dataset;
  j["parallel"] = manifest.parallel;
  j["records"] = Json::array();
  for (const auto& r : manifest.records) {
    j["records"].push_back({{"language", r.language},
                            {"layer", r.layer},
                            {"embeddings_path", r.embeddings_path},
                            {"labels_path", r.labels_path}});
  }
  detail::write_json_file(path, j);
}

void SplitSpec::validate(std::size_t n,
                         const std::optional<std::vector<std::int64_t>>& pair_ids) const {
  std::vector<signed char> side(n, -1);
  auto mark = [&](const std::vector<std::size_t>& indices, signed char s, const char* name) {
    for (auto i : indices) {
      if (i >= n)
        fail(ErrorCode::Validation, std::string(name) + " index " + std::to_string(i) +
                                        " out of range for n = " + std::to_string(n));
      if (side[i] != -1)
        fail(ErrorCode::Validation, "row " + std::to_string(i) + " assigned more than once");
      side[i] = s;
    }
  };
  mark(train_indices, 0, "train");
  mark(test_indices, 1, "test");
  for (std::size_t i = 0; i < n; ++i)
    if (side[i] == -1) fail(ErrorCode::Validation, "row " + std::to_string(i) + " is in neither split");
  if (pair_ids) {
    if (pair_ids->size() != n) fail(ErrorCode::Validation, "pair_ids length does not match n");
    std::unordered_map<std::int64_t, signed char> pair_side;
    for (std::size_t i = 0; i < n; ++i) {
      auto [it, inserted] = pair_side.emplace((*pair_ids)[i], side[i]);
      if (!inserted && it->second != side[i])
        fail(ErrorCode::Validation, "pair_id " + std::to_string((*pair_ids)[i]) + " straddles the split");
    }
  }
}

void save_splits(const SplitMap& splits, const std::filesystem::path& path) {
  Json j;
  j["splits"] = Json::object();
  for (const auto& [language, s] : splits) {
    j["splits"][language] = {{"train_indices", s.train_indices},
                             {"test_indices", s.test_indices},
                             {"seed", s.seed},
                             {"fraction", s.fraction}};
  }
  j["schema_version"] = detail::kSchemaVersion;
  detail::write_json_file(path, j);
}

SplitMap load_splits(const std::filesystem::path& path) {
  const Json j = detail::read_json_file(path);
  return detail::with_format_errors(path.string(), [&] {
    SplitMap out;
    for (const auto& [language, s] : j.at("splits").items()) {
      SplitSpec spec;
      spec.train_indices = s.at("train_indices").get<std::vector<std::size_t>>();
      spec.test_indices = s.at("test_indices").get<std::vector<std::size_t>>();
      spec.seed = s.at("seed").get<std::uint64_t>();
      spec.fraction = s.at("fraction").get<double>();
      out.emplace(language, std::move(spec));
    }
    return out;
  });
}

Collection::Collection(std::string model, std::string dataset, bool parallel,
                       std::map<CellKey, EmbeddingSet> sets)
    : model_(std::move(model)), dataset_(std::move(dataset)), parallel_(parallel), sets_(std::move(sets)) {}

std::vector<std::string> Collection::languages() const {
  std::set<std::string> out;
  for (const auto& [key, _] : sets_) out.insert(key.language);
  return {out.begin(), out.end()};
}

std::vector<int> Collection::layers() const {
  std::set<int> out;
  for (const auto& [key, _] : sets_) out.insert(key.layer);
  return {out.begin(), out.end()};
}

bool Collection::contains(const std::string& language, int layer) const {
  return sets_.contains(CellKey{language, layer});
}

const EmbeddingSet& Collection::at(const std::string& language, int layer) const {
  auto it = sets_.find(CellKey{language, layer});
  if (it == sets_.end())
    fail(ErrorCode::Validation, "collection has no cell (language = " + language +
                                    ", layer = " + std::to_string(layer) + ")");
  return it->second;
}

Collection load_collection(const std::filesystem::path& manifest_path) {
  const Manifest manifest = read_manifest(manifest_path);
  if (manifest.records.empty()) fail(ErrorCode::Validation, "empty manifest");

  const auto base = manifest_path.parent_path();
  std::map<CellKey, EmbeddingSet> sets;
  for (const auto& rec : manifest.records) {
    CellKey key{rec.language, rec.layer};
    if (rec.layer < 0)
      fail(ErrorCode::Validation, "negative layer index " + std::to_string(rec.layer));
    if (sets.contains(key))
      fail(ErrorCode::Validation, "duplicate record (language = " + rec.language +
                                      ", layer = " + std::to_string(rec.layer) + ")");
    const auto emb = resolve(base, rec.embeddings_path);
    const auto lab = resolve(base, rec.labels_path);
    if (!std::filesystem::exists(emb)) fail(ErrorCode::Io, "missing file " + emb.string());
    if (!std::filesystem::exists(lab)) fail(ErrorCode::Io, "missing file " + lab.string());
    EmbeddingSet set = read_embedding_file(emb, lab);
    set.language = rec.language;
    set.layer = rec.layer;
    sets.emplace(std::move(key), std::move(set));
  }

  if (manifest.parallel) {
    std::map<int, const EmbeddingSet*> reference;
    for (const auto& [key, set] : sets) {
      auto [it, inserted] = reference.emplace(key.layer, &set);
      if (inserted) continue;
      try {
        validate_parallel(*it->second, set);
      } catch (const Error& e) {
        fail(ErrorCode::Validation, "parallel manifest violated at layer " + std::to_string(key.layer) +
                                        " (" + it->second->language + " vs " + key.language +
                                        "): " + e.what());
      }
    }
  }
  return Collection(manifest.model, manifest.dataset, manifest.parallel, std::move(sets));
}

void validate_parallel(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.n() != b.n())
    fail(ErrorCode::Validation, "row count mismatch: " + std::to_string(a.n()) + " vs " +
                                    std::to_string(b.n()));
  if (a.sample_ids && b.sample_ids) {
    for (std::size_t i = 0; i < a.n(); ++i) {
      if ((*a.sample_ids)[i] != (*b.sample_ids)[i])
        fail(ErrorCode::Validation, "sample_ids differ at row " + std::to_string(i) + " (\"" +
                                        (*a.sample_ids)[i] + "\" vs \"" + (*b.sample_ids)[i] + "\")");
    }
  }
}

MatrixD gather_rows(const MatrixF& data, std::span<const std::size_t> rows) {
  MatrixD out(static_cast<Eigen::Index>(rows.size()), data.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= static_cast<std::size_t>(data.rows()))
      fail(ErrorCode::InvalidArgument, "row index " + std::to_string(rows[r]) + " out of range");
    out.row(static_cast<Eigen::Index>(r)) = data.row(static_cast<Eigen::Index>(rows[r])).cast<double>();
  }
  return out;
}

std::vector<int> gather(std::span<const int> values, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) {
    if (r >= values.size()) fail(ErrorCode::InvalidArgument, "row index " + std::to_string(r) + " out of range");
    out.push_back(values[r]);
  }
  return out;
}

}  // namespace kbprobe
