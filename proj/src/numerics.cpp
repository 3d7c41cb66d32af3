// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbprobe/numerics.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "kbprobe/error.hpp"

namespace kbprobe {

void require_finite(const MatrixD& x, const char* what) {
  if (!x.allFinite()) fail(ErrorCode::Numeric, std::string(what) + " contains non-finite values");
}

Centered center_columns(const MatrixD& x) {
  if (x.rows() == 0) fail(ErrorCode::InvalidArgument, "center_columns: matrix has no rows");
  Centered out;
  out.mean = x.colwise().mean().transpose();
  out.centered = x.rowwise() - out.mean.transpose();
  return out;
}

SvdFactors thin_svd(const MatrixD& x) {
  require_finite(x, "thin_svd input");
  const Eigen::Index r = std::min(x.rows(), x.cols());
  SvdFactors out;
  if (r == 0) {
    out.u = MatrixD(x.rows(), 0);
    out.sigma = VectorD(0);
    out.v = MatrixD(x.cols(), 0);
    return out;
  }
  // Eigen's BDCSVD returns singular values sorted in decreasing order.
  Eigen::BDCSVD<MatrixD> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) fail(ErrorCode::Numeric, "thin_svd: decomposition failed");
  out.u = svd.matrixU();
  out.sigma = svd.singularValues();
  out.v = svd.matrixV();
  return out;
}

double default_rcond(Eigen::Index n, Eigen::Index d) {
  return static_cast<double>(std::max<Eigen::Index>({n, d, 1})) * std::numeric_limits<double>::epsilon();
}

MatrixD pseudo_inverse(const SvdFactors& svd, double rcond) {
  if (!(rcond >= 0.0)) fail(ErrorCode::InvalidArgument, "rcond must be nonnegative");
  const Eigen::Index r = svd.sigma.size();
  VectorD inv = VectorD::Zero(r);
  if (r > 0) {
    const double cutoff = rcond * svd.sigma(0);
    for (Eigen::Index i = 0; i < r; ++i)
      if (svd.sigma(i) > cutoff) inv(i) = 1.0 / svd.sigma(i);
  }
  return svd.v * inv.asDiagonal() * svd.u.transpose();
}

MatrixD pseudo_inverse(const MatrixD& a, std::optional<double> rcond) {
  return pseudo_inverse(thin_svd(a), rcond.value_or(default_rcond(a.rows(), a.cols())));
}

MatrixD least_squares(const MatrixD& a, const MatrixD& b, std::optional<double> rcond) {
  if (a.rows() != b.rows())
    fail(ErrorCode::InvalidArgument, "least_squares: row mismatch (" + std::to_string(a.rows()) +
                                         " vs " + std::to_string(b.rows()) + ")");
  require_finite(b, "least_squares right-hand side");
  return pseudo_inverse(a, rcond) * b;
}

}  // namespace kbprobe
