// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kbprobe/tensor_io.hpp"
#include "kbprobe/types.hpp"

namespace kbprobe {

/// Pair-respecting seeded split.
///
/// Rows sharing a pair_id move together. Groups (pairs, or single rows when pair_ids is
/// absent) are stratified by the labels they contain, shuffled with a seeded mt19937_64, and
/// the first round(fraction * groups) are assigned to train, apportioned across strata by
/// largest remainder. A stratum with at least two groups keeps one group on each side.
SplitSpec make_pair_split(std::span<const int> labels,
                          const std::optional<std::vector<std::int64_t>>& pair_ids,
                          double fraction, std::uint64_t seed);

struct ProbeConfig {
  double l2_lambda = 1e-3;
  int max_iter = 1000;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

struct TrainMeta {
  std::string language;
  int layer = 0;
  std::uint64_t seed = 0;
  double l2_lambda = 0.0;
  int iterations = 0;
  double final_grad_norm = 0.0;
};

/// Binary linear probe: score = sigmoid(w . x + b), class 1 iff score >= 0.5.
struct ProbeModel {
  VectorD w;
  double b = 0.0;
  std::vector<std::string> label_names{"0", "1"};
  TrainMeta train_meta;

  std::size_t d() const { return static_cast<std::size_t>(w.size()); }
};

/// Minimises mean logistic loss + (l2_lambda / 2) ||w||^2 (bias unpenalised) with damped
/// Newton steps. Stops once the gradient infinity-norm is <= tol or after max_iter steps.
/// Labels must be 0/1 with both classes present.
ProbeModel train_probe(const MatrixD& x, std::span<const int> y, const ProbeConfig& config);

struct Prediction {
  std::vector<int> classes;
  std::vector<double> scores;
};

Prediction predict(const ProbeModel& model, const MatrixD& x);

double accuracy(std::span<const int> predicted, std::span<const int> gold);

void save_probe(const ProbeModel& model, const std::filesystem::path& path);
ProbeModel load_probe(const std::filesystem::path& path);
std::string probe_to_json(const ProbeModel& model);

}  // namespace kbprobe
