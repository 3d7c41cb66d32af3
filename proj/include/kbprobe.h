/* Copyright 2026 The kbprobe Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the kbprobe toolkit: per-layer probing of hidden states, cross-lingual
 * transfer grids, training-free subspace alignment and geometry diagnostics.
 *
 * Conventions:
 *  - Every fallible function returns kbp_status. On failure, kbp_last_error() describes
 *    the problem; the message is thread-local and valid until the next call on that thread.
 *  - Objects are opaque handles created by *_load / *_make / *_fit / *_train / *_run and
 *    released with the matching *_free (NULL is accepted).
 *  - Strings returned through char** are heap-allocated; release them with kbp_string_free.
 *  - Optional pointer arguments may be NULL.
 */

#ifndef KBPROBE_H
#define KBPROBE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(KBP_BUILDING_LIBRARY)
#    define KBP_API __declspec(dllexport)
#  else
#    define KBP_API __declspec(dllimport)
#  endif
#else
#  define KBP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kbp_status {
  KBP_OK = 0,
  KBP_ERR_INVALID_ARGUMENT = 1,
  KBP_ERR_IO = 2,
  KBP_ERR_FORMAT = 3,
  KBP_ERR_VALIDATION = 4,
  KBP_ERR_NUMERIC = 5,
  KBP_ERR_INTERNAL = 6
} kbp_status;

typedef enum kbp_method {
  KBP_METHOD_VANILLA = 0,
  KBP_METHOD_MEAN_SHIFT = 1,
  KBP_METHOD_PROJECTION = 2
} kbp_method;

typedef enum kbp_label_set {
  KBP_LABELS_LANGUAGE = 0,     /* one class per language */
  KBP_LABELS_TRUTH = 1,        /* the binary labels stored with each set */
  KBP_LABELS_DOMAIN_TRUTH = 2  /* Cartesian product of a per-row domain and the binary labels */
} kbp_label_set;

typedef struct kbp_collection kbp_collection;
typedef struct kbp_splits kbp_splits;
typedef struct kbp_probe kbp_probe;
typedef struct kbp_map kbp_map;
typedef struct kbp_report kbp_report;
typedef struct kbp_lda kbp_lda;

typedef struct kbp_probe_config {
  double l2_lambda;
  int max_iter;
  double tol;
  uint64_t seed;
} kbp_probe_config;

typedef struct kbp_spectrum_stats {
  size_t effective_dim;
  double participation_ratio;
  double variance_threshold;
  size_t rank; /* number of singular values reported (min(n, d)) */
} kbp_spectrum_stats;

/* ---- library ---------------------------------------------------------------------- */

KBP_API const char* kbp_version(void);
KBP_API const char* kbp_last_error(void);
KBP_API const char* kbp_status_string(kbp_status status);
KBP_API void kbp_string_free(char* s);
KBP_API kbp_probe_config kbp_probe_config_default(void);

/* ---- embedding files -------------------------------------------------------------- */

/* Writes an XKBE file plus its JSON labels sidecar. data is n*d row-major f32.
 * pair_ids and sample_ids may be NULL. */
KBP_API kbp_status kbp_embedding_write(const char* embeddings_path, const char* labels_path,
                                       const float* data, uint32_t n, uint32_t d,
                                       const int32_t* labels, const char* const* label_names,
                                       size_t num_label_names, const int64_t* pair_ids,
                                       const char* const* sample_ids);

/* Reads the header of an XKBE file. */
KBP_API kbp_status kbp_embedding_shape(const char* embeddings_path, uint32_t* n, uint32_t* d);

/* Reads the matrix of an XKBE file into out (capacity out_len floats, must be >= n*d). */
KBP_API kbp_status kbp_embedding_read(const char* embeddings_path, float* out, size_t out_len);

/* ---- collections and splits ------------------------------------------------------- */

KBP_API kbp_status kbp_collection_load(const char* manifest_path, kbp_collection** out);
KBP_API void kbp_collection_free(kbp_collection* collection);
/* {"model", "dataset", "parallel", "languages", "layers", "cells": [{language, layer, n, d}]} */
KBP_API kbp_status kbp_collection_info(const kbp_collection* collection, char** json_out);

/* One pair-respecting split per language, computed from that language's first layer. */
KBP_API kbp_status kbp_splits_make(const kbp_collection* collection, double fraction, uint64_t seed,
                                   kbp_splits** out);
KBP_API kbp_status kbp_splits_load(const char* path, kbp_splits** out);
KBP_API kbp_status kbp_splits_save(const kbp_splits* splits, const char* path);
KBP_API void kbp_splits_free(kbp_splits* splits);

/* ---- probes ----------------------------------------------------------------------- */

/* Trains on the train rows of `splits` (all rows when splits is NULL). config may be NULL. */
KBP_API kbp_status kbp_probe_train(const kbp_collection* collection, const char* language, int layer,
                                   const kbp_splits* splits, const kbp_probe_config* config,
                                   kbp_probe** out);
KBP_API kbp_status kbp_probe_load(const char* path, kbp_probe** out);
KBP_API kbp_status kbp_probe_save(const kbp_probe* probe, const char* path);
KBP_API void kbp_probe_free(kbp_probe* probe);

/* Accuracy on the test rows of `splits` (all rows when NULL), after applying `map` if given.
 * n_out (optional) receives the number of evaluated rows. */
KBP_API kbp_status kbp_probe_evaluate(const kbp_probe* probe, const kbp_collection* collection,
                                      const char* language, int layer, const kbp_splits* splits,
                                      const kbp_map* map, double* accuracy_out, size_t* n_out);

/* Scores sigmoid(w.x + b) and classes (score >= 0.5) for n rows of dimension d. */
KBP_API kbp_status kbp_probe_predict(const kbp_probe* probe, const float* data, size_t n, size_t d,
                                     double* scores_out, int32_t* classes_out);

/* ---- alignment maps ---------------------------------------------------------------- */

/* Maps `target` (OOD) representations into the `source` (ID) subspace at `layer`, fitted on
 * the train rows of `splits` (all rows when NULL). rcond <= 0 selects the default cutoff. */
KBP_API kbp_status kbp_map_fit(const kbp_collection* collection, kbp_method kind, const char* source,
                               const char* target, int layer, const kbp_splits* splits, double rcond,
                               kbp_map** out);
KBP_API kbp_status kbp_map_load(const char* path, kbp_map** out);
KBP_API kbp_status kbp_map_save(const kbp_map* map, const char* path);
KBP_API void kbp_map_free(kbp_map* map);
/* Applies the map to n x d row-major data; out holds n x d floats. */
KBP_API kbp_status kbp_map_apply(const kbp_map* map, const float* data, size_t n, size_t d, float* out);

/* ---- transfer grid and reports ---------------------------------------------------- */

/* layers == NULL (or num_layers == 0) selects every layer; threads == 0 uses the default. */
KBP_API kbp_status kbp_grid_run(const kbp_collection* collection, const kbp_splits* splits,
                                kbp_method method, const int* layers, size_t num_layers,
                                const kbp_probe_config* config, double rcond, unsigned threads,
                                kbp_report** out);
KBP_API kbp_status kbp_report_load(const char* path, kbp_report** out);
KBP_API kbp_status kbp_report_save(const kbp_report* report, const char* path);
KBP_API kbp_status kbp_report_to_json(const kbp_report* report, char** json_out);
KBP_API void kbp_report_free(kbp_report* report);
/* Per-report (layer, id_avg, ood_avg) curves plus the best source per target language. */
KBP_API kbp_status kbp_report_summarize(const kbp_report* const* reports, size_t count, char** json_out);
KBP_API kbp_status kbp_report_write_matrix_csv(const kbp_report* report, int layer, const char* path);

/* ---- geometry --------------------------------------------------------------------- */

/* Singular-value statistics of the centred n x d matrix. sigma_out (optional) receives
 * min(n, d) values. */
KBP_API kbp_status kbp_spectrum_from_matrix(const float* data, size_t n, size_t d, double threshold,
                                            kbp_spectrum_stats* stats_out, double* sigma_out);

/* Spectrum of language/layer rows (test rows of `splits`, or all rows when NULL). When
 * project_onto is given, the rows are first mapped with a projection fitted from this
 * language onto project_onto (train rows of `splits`, or all rows). */
KBP_API kbp_status kbp_spectrum_compute(const kbp_collection* collection, const char* language, int layer,
                                        const char* project_onto, const kbp_splits* splits, double threshold,
                                        double rcond, char** json_out);

/* LDA over every language at `layer`. domains_path is a JSON object mapping each language to
 * a per-row list of domain names; required for KBP_LABELS_DOMAIN_TRUTH. */
KBP_API kbp_status kbp_lda_fit(const kbp_collection* collection, int layer, kbp_label_set label_set,
                               const char* domains_path, double gamma, kbp_lda** out);
KBP_API kbp_status kbp_lda_to_json(const kbp_lda* lda, char** json_out);
/* Projection of the fitted rows with language, truth (and domain) label columns. */
KBP_API kbp_status kbp_lda_write_csv(const kbp_lda* lda, const char* path);
KBP_API void kbp_lda_free(kbp_lda* lda);

#ifdef __cplusplus
}
#endif

#endif /* KBPROBE_H */
