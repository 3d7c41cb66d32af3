// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

namespace kbprobe {

// Storage precision: hidden states are kept as f32, row-major, one row per sample.
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Compute precision. Everything numeric runs in f64.
using MatrixD = Eigen::MatrixXd;
using VectorD = Eigen::VectorXd;
using RowVectorD = Eigen::RowVectorXd;

}  // namespace kbprobe
