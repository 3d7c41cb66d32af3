// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Layer x language-pair transfer grid and its aggregates.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbprobe/probe.hpp"
#include "kbprobe/tensor_io.hpp"

namespace kbprobe {

enum class MethodKind { Vanilla = 0, MeanShift = 1, Projection = 2 };

const char* to_string(MethodKind method);
MethodKind parse_method(const std::string& name);

struct LayerBlock {
  int layer = 0;
  std::vector<std::string> languages;
  /// matrix[j][t]: probe trained on languages[j], evaluated on languages[t].
  std::vector<std::vector<double>> matrix;
  double id_avg = 0.0;   // mean of the diagonal
  double ood_avg = 0.0;  // mean of the off-diagonal entries

  bool operator==(const LayerBlock&) const = default;
};

struct TransferReport {
  std::string model;
  MethodKind method = MethodKind::Vanilla;
  std::vector<LayerBlock> layers;
  std::uint64_t split_seed = 0;
  double fraction = 0.0;

  bool operator==(const TransferReport&) const = default;
};

struct GridOptions {
  ProbeConfig probe;
  std::optional<double> rcond;
  unsigned threads = 0;  // 0: resolve_threads default
  std::optional<std::vector<int>> layers;  // nullopt: every layer in the collection
};

/// For each layer and ordered pair (train language j, test language t), trains the probe on
/// j's train rows, maps t's test rows into j's subspace with a map fitted only on the two
/// train splits, and records the accuracy. Diagonal cells are never transformed.
TransferReport run_transfer_grid(const Collection& collection, const SplitMap& splits, MethodKind method,
                                 const GridOptions& options);

/// Several methods over one set of probes; element i equals run_transfer_grid(..., methods[i], ...).
std::vector<TransferReport> run_transfer_grids(const Collection& collection, const SplitMap& splits,
                                               std::span<const MethodKind> methods, const GridOptions& options);

struct CurvePoint {
  int layer = 0;
  double id_avg = 0.0;
  double ood_avg = 0.0;
};

/// Recomputed from the raw matrices.
std::vector<CurvePoint> aggregate_curves(const TransferReport& report);

struct BestSource {
  std::string target;
  int layer = 0;
  std::string source;
  MethodKind method = MethodKind::Vanilla;
  double accuracy = 0.0;
};

/// Per target language, the (layer, source, method) with the highest accuracy. Ties go to the
/// lower layer, then the lexicographically smaller source, then the earlier method
/// (vanilla, mean_shift, projection).
std::vector<BestSource> best_source_per_target(std::span<const TransferReport> reports);

std::string report_to_json(const TransferReport& report);
TransferReport report_from_json(const std::string& text);
void save_report(const TransferReport& report, const std::filesystem::path& path);
TransferReport load_report(const std::filesystem::path& path);

std::string summarize_to_json(std::span<const TransferReport> reports);

/// Rows are train languages, columns test languages.
void write_matrix_csv(const TransferReport& report, int layer, const std::filesystem::path& path);

}  // namespace kbprobe
