// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Training-free alignment of a target-language (OOD) representation set onto a
// source-language (ID) subspace.
//
// Map file layout (little-endian):
//   magic "XKBA" | version u16 = 1 | kind u8 (0 mean_shift, 1 projection) | d u32
//   | payload f32: d values (mean_shift) or d*d row-major values (projection)
// A JSON sidecar at "<path>.json" carries the languages, layer and fit_n.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "kbprobe/types.hpp"

namespace kbprobe {

enum class AlignKind : std::uint8_t { MeanShift = 0, Projection = 1 };

const char* to_string(AlignKind kind);
AlignKind parse_align_kind(const std::string& name);

struct AlignmentMap {
  AlignKind kind = AlignKind::MeanShift;
  VectorD delta_mu;  // mean_shift only
  MatrixD w;         // projection only, d x d
  std::string source_language;
  std::string target_language;
  int layer = 0;
  std::size_t fit_n = 0;

  std::size_t d() const;
  /// Exactly one payload populated, matching kind.
  void validate() const;
};

/// delta_mu = mean(x_in) - mean(x_ood). Row counts may differ.
AlignmentMap fit_mean_shift(const MatrixD& x_in, const MatrixD& x_ood);

/// W = x_ood^+ x_in (minimum-norm least squares). Rows must be parallel.
AlignmentMap fit_projection(const MatrixD& x_ood, const MatrixD& x_in,
                            std::optional<double> rcond = std::nullopt);

/// Caches the pseudo-inverse of one OOD training matrix so that projections onto several
/// source languages share a single SVD. fit(x_in) is bit-identical to
/// fit_projection(x_ood, x_in, rcond).
class ProjectionFitter {
 public:
  ProjectionFitter(const MatrixD& x_ood, std::optional<double> rcond = std::nullopt);

  AlignmentMap fit(const MatrixD& x_in) const;
  Eigen::Index rows() const { return n_; }

 private:
  MatrixD pinv_;
  Eigen::Index n_;
};

MatrixD apply_mean_shift(const AlignmentMap& map, const MatrixD& x);
MatrixD apply_projection(const AlignmentMap& map, const MatrixD& x);
/// Dispatches on map.kind.
MatrixD apply_map(const AlignmentMap& map, const MatrixD& x);

/// The map with its payload rounded to f32, i.e. what save_map/load_map reproduce.
AlignmentMap quantized(const AlignmentMap& map);

void save_map(const AlignmentMap& map, const std::filesystem::path& path);
AlignmentMap load_map(const std::filesystem::path& path);

}  // namespace kbprobe
