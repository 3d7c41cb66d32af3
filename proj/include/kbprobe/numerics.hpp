// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Dense f64 linear-algebra kernel: centering, thin SVD and pseudo-inverse least squares.
// All functions are pure and deterministic for a fixed build.

#pragma once

#include <optional>

#include "kbprobe/types.hpp"

namespace kbprobe {

struct Centered {
  MatrixD centered;
  VectorD mean;
};

Centered center_columns(const MatrixD& x);

/// Thin SVD X = U diag(sigma) V^T, r = min(n, d), sigma nonincreasing.
struct SvdFactors {
  MatrixD u;      // n x r
  VectorD sigma;  // r
  MatrixD v;      // d x r
};

/// Throws Error(Numeric) on non-finite input.
SvdFactors thin_svd(const MatrixD& x);

/// max(n, d) * machine epsilon (f64). Singular values at or below rcond * sigma_max are dropped.
double default_rcond(Eigen::Index n, Eigen::Index d);

/// Moore-Penrose pseudo-inverse V Sigma^+ U^T; d x n for an n x d input.
MatrixD pseudo_inverse(const MatrixD& a, std::optional<double> rcond = std::nullopt);
MatrixD pseudo_inverse(const SvdFactors& svd, double rcond);

/// Minimum-Frobenius-norm minimiser of ||B - A W||_F, computed as A^+ B.
MatrixD least_squares(const MatrixD& a, const MatrixD& b, std::optional<double> rcond = std::nullopt);

/// Throws Error(Numeric) naming `what` if any entry is NaN or infinite.
void require_finite(const MatrixD& x, const char* what);

}  // namespace kbprobe
