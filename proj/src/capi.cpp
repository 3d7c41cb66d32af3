// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbprobe.h"

#include <cstdlib>
#include <cstring>
#include <map>
#include <new>
#include <string>
#include <vector>

#include "json_util.hpp"
#include "kbprobe/align.hpp"
#include "kbprobe/error.hpp"
#include "kbprobe/geometry.hpp"
#include "kbprobe/numerics.hpp"
#include "kbprobe/pipeline.hpp"
#include "kbprobe/probe.hpp"
#include "kbprobe/tensor_io.hpp"

struct kbp_collection {
  kbprobe::Collection value;
};
struct kbp_splits {
  kbprobe::SplitMap value;
};
struct kbp_probe {
  kbprobe::ProbeModel value;
};
struct kbp_map {
  kbprobe::AlignmentMap value;
};
struct kbp_report {
  kbprobe::TransferReport value;
};
struct kbp_lda {
  kbprobe::LdaModel model;
  kbprobe::MatrixD projected;
  std::vector<std::pair<std::string, std::vector<std::string>>> label_columns;
};

namespace {

using namespace kbprobe;

thread_local std::string g_last_error;

kbp_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return KBP_ERR_INVALID_ARGUMENT;
    case ErrorCode::Io: return KBP_ERR_IO;
    case ErrorCode::Format: return KBP_ERR_FORMAT;
    case ErrorCode::Validation: return KBP_ERR_VALIDATION;
    case ErrorCode::Numeric: return KBP_ERR_NUMERIC;
  }
  return KBP_ERR_INTERNAL;
}

// Runs f, translating exceptions into status codes and the thread-local message.
template <typename F>
kbp_status guarded(F&& f) noexcept {
  try {
    g_last_error.clear();
    f();
    return KBP_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return KBP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return KBP_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return KBP_ERR_INTERNAL;
  }
}

template <typename T>
void require(const T* p, const char* name) {
  if (p == nullptr) fail(ErrorCode::InvalidArgument, std::string(name) + " must not be NULL");
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

ProbeConfig to_config(const kbp_probe_config* config) {
  ProbeConfig out;
  if (config != nullptr) {
    out.l2_lambda = config->l2_lambda;
    out.max_iter = config->max_iter;
    out.tol = config->tol;
    out.seed = config->seed;
  }
  return out;
}

std::optional<double> to_rcond(double rcond) {
  return rcond > 0.0 ? std::optional<double>(rcond) : std::nullopt;
}

MethodKind to_method(kbp_method method) {
  switch (method) {
    case KBP_METHOD_VANILLA: return MethodKind::Vanilla;
    case KBP_METHOD_MEAN_SHIFT: return MethodKind::MeanShift;
    case KBP_METHOD_PROJECTION: return MethodKind::Projection;
  }
  fail(ErrorCode::InvalidArgument, "unknown method value " + std::to_string(static_cast<int>(method)));
}

const SplitSpec* find_split(const kbp_splits* splits, const std::string& language) {
  if (splits == nullptr) return nullptr;
  auto it = splits->value.find(language);
  if (it == splits->value.end()) fail(ErrorCode::Validation, "no split for language '" + language + "'");
  return &it->second;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

// Rows of a cell for the requested side, validating the split against the set.
std::vector<std::size_t> rows_for(const EmbeddingSet& set, const SplitSpec* split, bool train) {
  if (split == nullptr) return all_rows(set.n());
  split->validate(set.n(), set.pair_ids);
  return train ? split->train_indices : split->test_indices;
}

MatrixD map_rows(const float* data, std::size_t n, std::size_t d) {
  return Eigen::Map<const MatrixF>(data, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)).cast<double>();
}

AlignmentMap fit_map_cells(const Collection& collection, MethodKind kind, const std::string& source,
                           const std::string& target, int layer, const kbp_splits* splits,
                           std::optional<double> rcond) {
  const auto& src = collection.at(source, layer);
  const auto& tgt = collection.at(target, layer);
  const auto src_rows = rows_for(src, find_split(splits, source), true);
  const auto tgt_rows = rows_for(tgt, find_split(splits, target), true);
  const MatrixD x_in = gather_rows(src.data, src_rows);
  const MatrixD x_ood = gather_rows(tgt.data, tgt_rows);
  AlignmentMap map;
  if (kind == MethodKind::MeanShift) {
    map = fit_mean_shift(x_in, x_ood);
  } else if (kind == MethodKind::Projection) {
    validate_parallel(src, tgt);
    if (src_rows != tgt_rows)
      fail(ErrorCode::Validation, "projection requires identical train rows for '" + source + "' and '" + target + "'");
    map = fit_projection(x_ood, x_in, rcond);
  } else {
    fail(ErrorCode::InvalidArgument, "vanilla is not an alignment map kind");
  }
  map.source_language = source;
  map.target_language = target;
  map.layer = layer;
  return map;
}

}  // namespace

extern "C" {

const char* kbp_version(void) { return "1.0.0"; }

const char* kbp_last_error(void) { return g_last_error.c_str(); }

const char* kbp_status_string(kbp_status status) {
  switch (status) {
    case KBP_OK: return "ok";
    case KBP_ERR_INVALID_ARGUMENT: return "invalid argument";
    case KBP_ERR_IO: return "I/O error";
    case KBP_ERR_FORMAT: return "format error";
    case KBP_ERR_VALIDATION: return "validation error";
    case KBP_ERR_NUMERIC: return "numeric error";
    case KBP_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void kbp_string_free(char* s) { std::free(s); }

kbp_probe_config kbp_probe_config_default(void) {
  const ProbeConfig d;
  return kbp_probe_config{d.l2_lambda, d.max_iter, d.tol, d.seed};
}

kbp_status kbp_embedding_write(const char* embeddings_path, const char* labels_path, const float* data,
                               uint32_t n, uint32_t d, const int32_t* labels, const char* const* label_names,
                               size_t num_label_names, const int64_t* pair_ids, const char* const* sample_ids) {
  return guarded([&] {
    require(embeddings_path, "embeddings_path");
    require(labels_path, "labels_path");
    require(data, "data");
    require(labels, "labels");
    require(label_names, "label_names");
    EmbeddingSet set;
    set.data = Eigen::Map<const MatrixF>(data, n, d);
    set.labels.assign(labels, labels + n);
    for (size_t i = 0; i < num_label_names; ++i) {
      require(label_names[i], "label_names[i]");
      set.label_names.emplace_back(label_names[i]);
    }
    if (pair_ids != nullptr) set.pair_ids = std::vector<std::int64_t>(pair_ids, pair_ids + n);
    if (sample_ids != nullptr) {
      std::vector<std::string> ids;
      for (uint32_t i = 0; i < n; ++i) {
        require(sample_ids[i], "sample_ids[i]");
        ids.emplace_back(sample_ids[i]);
      }
      set.sample_ids = std::move(ids);
    }
    write_embedding_file(set, embeddings_path, labels_path);
  });
}

kbp_status kbp_embedding_shape(const char* embeddings_path, uint32_t* n, uint32_t* d) {
  return guarded([&] {
    require(embeddings_path, "embeddings_path");
    require(n, "n");
    require(d, "d");
    const MatrixF m = read_embedding_matrix(embeddings_path);
    *n = static_cast<uint32_t>(m.rows());
    *d = static_cast<uint32_t>(m.cols());
  });
}

kbp_status kbp_embedding_read(const char* embeddings_path, float* out, size_t out_len) {
  return guarded([&] {
    require(embeddings_path, "embeddings_path");
    require(out, "out");
    const MatrixF m = read_embedding_matrix(embeddings_path);
    if (out_len < static_cast<size_t>(m.size()))
      fail(ErrorCode::InvalidArgument, "output buffer holds " + std::to_string(out_len) + " floats, need " +
                                           std::to_string(m.size()));
    std::memcpy(out, m.data(), sizeof(float) * static_cast<size_t>(m.size()));
  });
}

kbp_status kbp_collection_load(const char* manifest_path, kbp_collection** out) {
  return guarded([&] {
    require(manifest_path, "manifest_path");
    require(out, "out");
    *out = new kbp_collection{load_collection(manifest_path)};
  });
}

void kbp_collection_free(kbp_collection* collection) { delete collection; }

kbp_status kbp_collection_info(const kbp_collection* collection, char** json_out) {
  return guarded([&] {
    require(collection, "collection");
    require(json_out, "json_out");
    const auto& c = collection->value;
    detail::Json j;
    j["model"] = c.model();
    j["dataset"] = c.dataset();
    j["parallel"] = c.parallel();
    j["languages"] = c.languages();
    j["layers"] = c.layers();
    j["cells"] = detail::Json::array();
    for (const auto& [key, set] : c.sets())
      j["cells"].push_back({{"language", key.language}, {"layer", key.layer}, {"n", set.n()}, {"d", set.d()}});
    j["schema_version"] = detail::kSchemaVersion;
    *json_out = copy_string(detail::dump(j));
  });
}

kbp_status kbp_splits_make(const kbp_collection* collection, double fraction, uint64_t seed, kbp_splits** out) {
  return guarded([&] {
    require(collection, "collection");
    require(out, "out");
    const auto& c = collection->value;
    SplitMap splits;
    for (const auto& language : c.languages()) {
      int first_layer = -1;
      for (const auto& [key, _] : c.sets())
        if (key.language == language) {
          first_layer = key.layer;
          break;
        }
      const auto& set = c.at(language, first_layer);
      splits.emplace(language, make_pair_split(set.labels, set.pair_ids, fraction, seed));
    }
    *out = new kbp_splits{std::move(splits)};
  });
}

kbp_status kbp_splits_load(const char* path, kbp_splits** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new kbp_splits{load_splits(path)};
  });
}

kbp_status kbp_splits_save(const kbp_splits* splits, const char* path) {
  return guarded([&] {
    require(splits, "splits");
    require(path, "path");
    save_splits(splits->value, path);
  });
}

void kbp_splits_free(kbp_splits* splits) { delete splits; }

kbp_status kbp_probe_train(const kbp_collection* collection, const char* language, int layer,
                           const kbp_splits* splits, const kbp_probe_config* config, kbp_probe** out) {
  return guarded([&] {
    require(collection, "collection");
    require(language, "language");
    require(out, "out");
    const auto& set = collection->value.at(language, layer);
    if (set.label_names.size() != 2)
      fail(ErrorCode::Validation, "probes are binary; set has " + std::to_string(set.label_names.size()) + " label names");
    const auto rows = rows_for(set, find_split(splits, language), true);
    ProbeModel model = train_probe(gather_rows(set.data, rows), gather(set.labels, rows), to_config(config));
    model.label_names = set.label_names;
    model.train_meta.language = language;
    model.train_meta.layer = layer;
    *out = new kbp_probe{std::move(model)};
  });
}

kbp_status kbp_probe_load(const char* path, kbp_probe** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new kbp_probe{load_probe(path)};
  });
}

kbp_status kbp_probe_save(const kbp_probe* probe, const char* path) {
  return guarded([&] {
    require(probe, "probe");
    require(path, "path");
    save_probe(probe->value, path);
  });
}

void kbp_probe_free(kbp_probe* probe) { delete probe; }

kbp_status kbp_probe_evaluate(const kbp_probe* probe, const kbp_collection* collection, const char* language,
                              int layer, const kbp_splits* splits, const kbp_map* map, double* accuracy_out,
                              size_t* n_out) {
  return guarded([&] {
    require(probe, "probe");
    require(collection, "collection");
    require(language, "language");
    require(accuracy_out, "accuracy_out");
    const auto& set = collection->value.at(language, layer);
    const auto rows = rows_for(set, find_split(splits, language), false);
    MatrixD x = gather_rows(set.data, rows);
    if (map != nullptr) x = apply_map(map->value, x);
    *accuracy_out = accuracy(predict(probe->value, x).classes, gather(set.labels, rows));
    if (n_out != nullptr) *n_out = rows.size();
  });
}

kbp_status kbp_probe_predict(const kbp_probe* probe, const float* data, size_t n, size_t d, double* scores_out,
                             int32_t* classes_out) {
  return guarded([&] {
    require(probe, "probe");
    require(data, "data");
    const auto pred = predict(probe->value, map_rows(data, n, d));
    for (size_t i = 0; i < n; ++i) {
      if (scores_out != nullptr) scores_out[i] = pred.scores[i];
      if (classes_out != nullptr) classes_out[i] = pred.classes[i];
    }
  });
}

kbp_status kbp_map_fit(const kbp_collection* collection, kbp_method kind, const char* source, const char* target,
                       int layer, const kbp_splits* splits, double rcond, kbp_map** out) {
  return guarded([&] {
    require(collection, "collection");
    require(source, "source");
    require(target, "target");
    require(out, "out");
    *out = new kbp_map{fit_map_cells(collection->value, to_method(kind), source, target, layer, splits, to_rcond(rcond))};
  });
}

kbp_status kbp_map_load(const char* path, kbp_map** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new kbp_map{load_map(path)};
  });
}

kbp_status kbp_map_save(const kbp_map* map, const char* path) {
  return guarded([&] {
    require(map, "map");
    require(path, "path");
    save_map(map->value, path);
  });
}

void kbp_map_free(kbp_map* map) { delete map; }

kbp_status kbp_map_apply(const kbp_map* map, const float* data, size_t n, size_t d, float* out) {
  return guarded([&] {
    require(map, "map");
    require(data, "data");
    require(out, "out");
    const MatrixF result = apply_map(map->value, map_rows(data, n, d)).cast<float>();
    std::memcpy(out, result.data(), sizeof(float) * static_cast<size_t>(result.size()));
  });
}

kbp_status kbp_grid_run(const kbp_collection* collection, const kbp_splits* splits, kbp_method method,
                        const int* layers, size_t num_layers, const kbp_probe_config* config, double rcond,
                        unsigned threads, kbp_report** out) {
  return guarded([&] {
    require(collection, "collection");
    require(splits, "splits");
    require(out, "out");
    GridOptions options;
    options.probe = to_config(config);
    options.rcond = to_rcond(rcond);
    options.threads = threads;
    if (layers != nullptr && num_layers > 0) options.layers = std::vector<int>(layers, layers + num_layers);
    *out = new kbp_report{run_transfer_grid(collection->value, splits->value, to_method(method), options)};
  });
}

kbp_status kbp_report_load(const char* path, kbp_report** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new kbp_report{load_report(path)};
  });
}

kbp_status kbp_report_save(const kbp_report* report, const char* path) {
  return guarded([&] {
    require(report, "report");
    require(path, "path");
    save_report(report->value, path);
  });
}

kbp_status kbp_report_to_json(const kbp_report* report, char** json_out) {
  return guarded([&] {
    require(report, "report");
    require(json_out, "json_out");
    *json_out = copy_string(report_to_json(report->value));
  });
}

void kbp_report_free(kbp_report* report) { delete report; }

kbp_status kbp_report_summarize(const kbp_report* const* reports, size_t count, char** json_out) {
  return guarded([&] {
    require(reports, "reports");
    require(json_out, "json_out");
    std::vector<TransferReport> values;
    for (size_t i = 0; i < count; ++i) {
      require(reports[i], "reports[i]");
      values.push_back(reports[i]->value);
    }
    *json_out = copy_string(summarize_to_json(values));
  });
}

kbp_status kbp_report_write_matrix_csv(const kbp_report* report, int layer, const char* path) {
  return guarded([&] {
    require(report, "report");
    require(path, "path");
    write_matrix_csv(report->value, layer, path);
  });
}

kbp_status kbp_spectrum_from_matrix(const float* data, size_t n, size_t d, double threshold,
                                    kbp_spectrum_stats* stats_out, double* sigma_out) {
  return guarded([&] {
    require(data, "data");
    require(stats_out, "stats_out");
    const SpectrumStats stats = spectrum(map_rows(data, n, d), threshold);
    *stats_out = kbp_spectrum_stats{stats.effective_dim, stats.participation_ratio, stats.variance_threshold,
                                    stats.sigma.size()};
    if (sigma_out != nullptr) std::copy(stats.sigma.begin(), stats.sigma.end(), sigma_out);
  });
}

kbp_status kbp_spectrum_compute(const kbp_collection* collection, const char* language, int layer,
                                const char* project_onto, const kbp_splits* splits, double threshold, double rcond,
                                char** json_out) {
  return guarded([&] {
    require(collection, "collection");
    require(language, "language");
    require(json_out, "json_out");
    const auto& set = collection->value.at(language, layer);
    const auto rows = rows_for(set, find_split(splits, language), false);
    MatrixD x = gather_rows(set.data, rows);
    if (project_onto != nullptr) {
      const AlignmentMap map = fit_map_cells(collection->value, MethodKind::Projection, project_onto, language, layer,
                                             splits, to_rcond(rcond));
      x = apply_projection(map, x);
    }
    *json_out = copy_string(spectrum_to_json(spectrum(x, threshold)));
  });
}

kbp_status kbp_lda_fit(const kbp_collection* collection, int layer, kbp_label_set label_set, const char* domains_path,
                       double gamma, kbp_lda** out) {
  return guarded([&] {
    require(collection, "collection");
    require(out, "out");
    const auto& c = collection->value;
    const auto languages = c.languages();

    std::map<std::string, std::vector<std::string>> domains;
    if (label_set == KBP_LABELS_DOMAIN_TRUTH) {
      if (domains_path == nullptr) fail(ErrorCode::InvalidArgument, "domain_truth labels need a domains file");
      const auto j = detail::read_json_file(domains_path);
      domains = detail::with_format_errors(domains_path, [&] {
        return j.get<std::map<std::string, std::vector<std::string>>>();
      });
    } else if (label_set != KBP_LABELS_LANGUAGE && label_set != KBP_LABELS_TRUTH) {
      fail(ErrorCode::InvalidArgument, "unknown label set");
    }

    std::vector<const EmbeddingSet*> sets;
    Eigen::Index total = 0;
    for (const auto& language : languages) {
      if (!c.contains(language, layer)) continue;
      sets.push_back(&c.at(language, layer));
      total += static_cast<Eigen::Index>(sets.back()->n());
    }
    if (sets.empty()) fail(ErrorCode::Validation, "no sets at layer " + std::to_string(layer));
    const auto d = sets.front()->data.cols();
    const auto& truth_names = sets.front()->label_names;

    MatrixD x(total, d);
    std::vector<int> language_ids, truth_ids, domain_ids;
    std::vector<std::string> language_col, truth_col, domain_col;
    std::vector<std::string> language_names, domain_names;
    std::map<std::string, int> domain_index;
    Eigen::Index row = 0;
    for (const auto* set : sets) {
      if (set->data.cols() != d) fail(ErrorCode::Validation, "sets at layer " + std::to_string(layer) + " differ in d");
      if (set->label_names != truth_names)
        fail(ErrorCode::Validation, "sets at layer " + std::to_string(layer) + " differ in label_names");
      const int lang_id = static_cast<int>(language_names.size());
      language_names.push_back(set->language);
      const std::vector<std::string>* dom = nullptr;
      if (label_set == KBP_LABELS_DOMAIN_TRUTH) {
        auto it = domains.find(set->language);
        if (it == domains.end() || it->second.size() != set->n())
          fail(ErrorCode::Validation, "domains file lacks " + std::to_string(set->n()) + " entries for '" +
                                          set->language + "'");
        dom = &it->second;
      }
      for (std::size_t i = 0; i < set->n(); ++i, ++row) {
        x.row(row) = set->data.row(static_cast<Eigen::Index>(i)).cast<double>();
        language_ids.push_back(lang_id);
        language_col.push_back(set->language);
        truth_ids.push_back(set->labels[i]);
        truth_col.push_back(truth_names[static_cast<std::size_t>(set->labels[i])]);
        if (dom != nullptr) {
          const auto& name = (*dom)[i];
          auto [it, inserted] = domain_index.emplace(name, static_cast<int>(domain_names.size()));
          if (inserted) domain_names.push_back(name);
          domain_ids.push_back(it->second);
          domain_col.push_back(name);
        }
      }
    }

    auto lda = std::make_unique<kbp_lda>();
    switch (label_set) {
      case KBP_LABELS_LANGUAGE:
        lda->model = fit_lda(x, language_ids, language_names, gamma);
        break;
      case KBP_LABELS_TRUTH:
        lda->model = fit_lda(x, truth_ids, truth_names, gamma);
        break;
      case KBP_LABELS_DOMAIN_TRUTH: {
        auto [ids, names] = cartesian_labels(domain_ids, domain_names, truth_ids, truth_names);
        lda->model = fit_lda(x, ids, names, gamma);
        break;
      }
    }
    lda->projected = project_lda(lda->model, x);
    lda->label_columns.emplace_back("language", std::move(language_col));
    lda->label_columns.emplace_back("truth", std::move(truth_col));
    if (!domain_col.empty()) lda->label_columns.emplace_back("domain", std::move(domain_col));
    *out = lda.release();
  });
}

kbp_status kbp_lda_to_json(const kbp_lda* lda, char** json_out) {
  return guarded([&] {
    require(lda, "lda");
    require(json_out, "json_out");
    *json_out = copy_string(lda_to_json(lda->model));
  });
}

kbp_status kbp_lda_write_csv(const kbp_lda* lda, const char* path) {
  return guarded([&] {
    require(lda, "lda");
    require(path, "path");
    write_projection_csv(path, lda->projected, lda->label_columns);
  });
}

void kbp_lda_free(kbp_lda* lda) { delete lda; }

}  // extern "C"
