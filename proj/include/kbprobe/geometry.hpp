// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kbprobe/types.hpp"

namespace kbprobe {

/// Fisher discriminant axes with shrinkage-regularised within-class scatter.
///
/// S_W is the pooled within-class covariance, regularised as
/// S_W + gamma * (trace(S_W) / d) * I. Axes solve S_B v = lambda S_W' v, are scaled so that
/// v^T S_W' v = 1, ordered by decreasing lambda, and sign-canonicalised so the first
/// nonzero component is positive.
struct LdaModel {
  MatrixD axes;                  // d x c, c = min(classes - 1, d)
  VectorD discriminability;      // generalised eigenvalues, length c
  MatrixD class_means;           // classes x d
  std::vector<double> priors;    // class frequencies
  double gamma = 1e-3;
  std::vector<std::string> label_names;

  std::size_t components() const { return static_cast<std::size_t>(axes.cols()); }
};

LdaModel fit_lda(const MatrixD& x, std::span<const int> labels, std::vector<std::string> label_names,
                 double gamma = 1e-3);

MatrixD project_lda(const LdaModel& model, const MatrixD& x);

/// Class posteriors under the shared-covariance Gaussian model in the discriminant space.
MatrixD lda_posteriors(const LdaModel& model, const MatrixD& x);

/// Combined label set over two factors; classes are the observed (a, b) combinations in
/// lexicographic order, named "a|b".
std::pair<std::vector<int>, std::vector<std::string>> cartesian_labels(
    std::span<const int> a, const std::vector<std::string>& a_names, std::span<const int> b,
    const std::vector<std::string>& b_names);

struct SpectrumStats {
  std::vector<double> sigma;  // singular values of the centred matrix, descending
  std::size_t effective_dim = 0;
  double participation_ratio = 0.0;
  double variance_threshold = 0.95;
};

/// Smallest k with sum_{i<=k} sigma_i^2 >= threshold * sum sigma_i^2, from descending sigma.
/// Returns 0 when every sigma is zero.
std::size_t effective_dim_from_sigma(std::span<const double> sigma, double threshold);
/// (sum sigma^2)^2 / sum sigma^4, or 0 when every sigma is zero.
double participation_ratio_from_sigma(std::span<const double> sigma);

/// The following centre X before taking singular values and need n >= 2.
std::size_t effective_dimensionality(const MatrixD& x, double threshold = 0.95);
double participation_ratio(const MatrixD& x);
SpectrumStats spectrum(const MatrixD& x, double threshold = 0.95);

std::string spectrum_to_json(const SpectrumStats& stats);
std::string lda_to_json(const LdaModel& model);

/// One row per sample: row index, each label column, then lda_1..lda_c.
void write_projection_csv(const std::filesystem::path& path, const MatrixD& projected,
                          const std::vector<std::pair<std::string, std::vector<std::string>>>& label_columns);

}  // namespace kbprobe
