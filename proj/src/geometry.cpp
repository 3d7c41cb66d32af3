// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbprobe/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "json_util.hpp"
#include "kbprobe/error.hpp"
#include "kbprobe/numerics.hpp"

namespace kbprobe {

namespace {

// Prefix sums within this relative slack of the target count as reaching it, so that
// analytically tied spectra (e.g. 19 of 20 equal values at 95%) are not lost to rounding.
constexpr double kThresholdSlack = 1e-10;

std::vector<double> centred_sigma(const MatrixD& x) {
  if (x.rows() < 2) fail(ErrorCode::InvalidArgument, "spectrum: need at least 2 rows to centre");
  require_finite(x, "spectrum input");
  const auto svd = thin_svd(center_columns(x).centered);
  return {svd.sigma.data(), svd.sigma.data() + svd.sigma.size()};
}

void canonicalise_sign(Eigen::Ref<VectorD> v) {
  const double scale = v.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > 1e-12 * scale) {
      if (v(i) < 0) v = -v;
      return;
    }
  }
}

}  // namespace

LdaModel fit_lda(const MatrixD& x, std::span<const int> labels, std::vector<std::string> label_names,
                 double gamma) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const auto classes = static_cast<Eigen::Index>(label_names.size());
  if (static_cast<std::size_t>(n) != labels.size())
    fail(ErrorCode::InvalidArgument, "fit_lda: " + std::to_string(n) + " rows but " +
                                         std::to_string(labels.size()) + " labels");
  if (classes < 2) fail(ErrorCode::Validation, "fit_lda: fewer than 2 classes");
  if (!(gamma >= 0.0)) fail(ErrorCode::InvalidArgument, "fit_lda: gamma must be >= 0");
  require_finite(x, "fit_lda input");

  std::vector<Eigen::Index> counts(static_cast<std::size_t>(classes), 0);
  MatrixD means = MatrixD::Zero(classes, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) fail(ErrorCode::InvalidArgument, "fit_lda: label " + std::to_string(y) + " out of range");
    ++counts[static_cast<std::size_t>(y)];
    means.row(y) += x.row(i);
  }
  for (Eigen::Index k = 0; k < classes; ++k) {
    if (counts[static_cast<std::size_t>(k)] < 2)
      fail(ErrorCode::Validation, "fit_lda: class '" + label_names[static_cast<std::size_t>(k)] +
                                      "' has fewer than 2 samples");
    means.row(k) /= static_cast<double>(counts[static_cast<std::size_t>(k)]);
  }

  MatrixD within_dev(n, d);
  for (Eigen::Index i = 0; i < n; ++i) within_dev.row(i) = x.row(i) - means.row(labels[static_cast<std::size_t>(i)]);
  MatrixD sw = MatrixD::Zero(d, d);
  sw.selfadjointView<Eigen::Lower>().rankUpdate(within_dev.transpose(), 1.0 / static_cast<double>(n - classes));
  sw = sw.selfadjointView<Eigen::Lower>();
  const double trace = sw.trace();
  if (!(trace > 0.0)) fail(ErrorCode::Numeric, "fit_lda: within-class scatter is zero");
  sw.diagonal().array() += gamma * trace / static_cast<double>(d);

  const RowVectorD grand = (Eigen::Map<const Eigen::Matrix<Eigen::Index, Eigen::Dynamic, 1>>(counts.data(), classes)
                                .cast<double>()
                                .transpose() *
                            means) /
                           static_cast<double>(n);
  MatrixD between_dev(classes, d);
  for (Eigen::Index k = 0; k < classes; ++k)
    between_dev.row(k) = std::sqrt(static_cast<double>(counts[static_cast<std::size_t>(k)]) / static_cast<double>(n)) *
                         (means.row(k) - grand);
  const MatrixD sb = between_dev.transpose() * between_dev;

  // Whiten with the Cholesky factor of S_W' and solve the symmetric problem.
  Eigen::LLT<MatrixD> llt(sw);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::Numeric, "fit_lda: regularised within-class scatter is not positive definite (increase gamma)");
  const MatrixD l_inv_sb = llt.matrixL().solve(sb);
  const MatrixD whitened = llt.matrixL().solve(l_inv_sb.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixD> eig(0.5 * (whitened + whitened.transpose()));
  if (eig.info() != Eigen::Success) fail(ErrorCode::Numeric, "fit_lda: eigen-decomposition failed");

  const Eigen::Index c = std::min(classes - 1, d);
  LdaModel model;
  model.axes.resize(d, c);
  model.discriminability.resize(c);
  for (Eigen::Index j = 0; j < c; ++j) {
    const Eigen::Index src = d - 1 - j;  // eigenvalues ascend
    model.discriminability(j) = eig.eigenvalues()(src);
    model.axes.col(j) = llt.matrixU().solve(eig.eigenvectors().col(src));
    canonicalise_sign(model.axes.col(j));
  }
  model.class_means = std::move(means);
  model.priors.resize(static_cast<std::size_t>(classes));
  for (Eigen::Index k = 0; k < classes; ++k)
    model.priors[static_cast<std::size_t>(k)] = static_cast<double>(counts[static_cast<std::size_t>(k)]) / static_cast<double>(n);
  model.gamma = gamma;
  model.label_names = std::move(label_names);
  return model;
}

MatrixD project_lda(const LdaModel& model, const MatrixD& x) {
  if (x.cols() != model.axes.rows())
    fail(ErrorCode::InvalidArgument, "project_lda: input has " + std::to_string(x.cols()) +
                                         " columns, model expects " + std::to_string(model.axes.rows()));
  return x * model.axes;
}

MatrixD lda_posteriors(const LdaModel& model, const MatrixD& x) {
  const MatrixD z = project_lda(model, x);
  const MatrixD centres = model.class_means * model.axes;
  const Eigen::Index classes = centres.rows();
  MatrixD post(z.rows(), classes);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index k = 0; k < classes; ++k)
      post(i, k) = std::log(model.priors[static_cast<std::size_t>(k)]) - 0.5 * (z.row(i) - centres.row(k)).squaredNorm();
    const double top = post.row(i).maxCoeff();
    post.row(i) = (post.row(i).array() - top).exp();
    post.row(i) /= post.row(i).sum();
  }
  return post;
}

std::pair<std::vector<int>, std::vector<std::string>> cartesian_labels(
    std::span<const int> a, const std::vector<std::string>& a_names, std::span<const int> b,
    const std::vector<std::string>& b_names) {
  if (a.size() != b.size()) fail(ErrorCode::InvalidArgument, "cartesian_labels: length mismatch");
  std::map<std::pair<int, int>, int> index;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0 || static_cast<std::size_t>(a[i]) >= a_names.size() || b[i] < 0 ||
        static_cast<std::size_t>(b[i]) >= b_names.size())
      fail(ErrorCode::InvalidArgument, "cartesian_labels: label out of range at row " + std::to_string(i));
    index.emplace(std::pair{a[i], b[i]}, 0);
  }
  std::vector<std::string> names;
  for (auto& [key, id] : index) {
    id = static_cast<int>(names.size());
    names.push_back(a_names[static_cast<std::size_t>(key.first)] + "|" + b_names[static_cast<std::size_t>(key.second)]);
  }
  std::vector<int> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = index.at({a[i], b[i]});
  return {std::move(out), std::move(names)};
}

std::size_t effective_dim_from_sigma(std::span<const double> sigma, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    fail(ErrorCode::InvalidArgument, "variance threshold must lie in (0, 1]");
  double total = 0.0;
  for (double s : sigma) total += s * s;
  if (total == 0.0) return 0;
  const double target = threshold * total - kThresholdSlack * total;
  double running = 0.0;
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    running += sigma[k] * sigma[k];
    if (running >= target) return k + 1;
  }
  return sigma.size();
}

double participation_ratio_from_sigma(std::span<const double> sigma) {
  double s2 = 0.0;
  double s4 = 0.0;
  for (double s : sigma) {
    s2 += s * s;
    s4 += s * s * s * s;
  }
  return s4 == 0.0 ? 0.0 : s2 * s2 / s4;
}

std::size_t effective_dimensionality(const MatrixD& x, double threshold) {
  return effective_dim_from_sigma(centred_sigma(x), threshold);
}

double participation_ratio(const MatrixD& x) { return participation_ratio_from_sigma(centred_sigma(x)); }

SpectrumStats spectrum(const MatrixD& x, double threshold) {
  SpectrumStats stats;
  stats.sigma = centred_sigma(x);
  stats.variance_threshold = threshold;
  stats.effective_dim = effective_dim_from_sigma(stats.sigma, threshold);
  stats.participation_ratio = participation_ratio_from_sigma(stats.sigma);
  return stats;
}

std::string spectrum_to_json(const SpectrumStats& stats) {
  detail::Json j;
  j["sigma"] = stats.sigma;
  j["effective_dim"] = stats.effective_dim;
  j["participation_ratio"] = stats.participation_ratio;
  j["variance_threshold"] = stats.variance_threshold;
  j["schema_version"] = detail::kSchemaVersion;
  return detail::dump(j);
}

std::string lda_to_json(const LdaModel& model) {
  detail::Json j;
  j["label_names"] = model.label_names;
  j["gamma"] = model.gamma;
  j["priors"] = model.priors;
  j["discriminability"] = std::vector<double>(model.discriminability.data(),
                                              model.discriminability.data() + model.discriminability.size());
  j["axes"] = detail::Json::array();
  for (Eigen::Index c = 0; c < model.axes.cols(); ++c) {
    const VectorD col = model.axes.col(c);
    j["axes"].push_back(std::vector<double>(col.data(), col.data() + col.size()));
  }
  j["class_means"] = detail::Json::array();
  for (Eigen::Index k = 0; k < model.class_means.rows(); ++k) {
    const VectorD row = model.class_means.row(k).transpose();
    j["class_means"].push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  j["schema_version"] = detail::kSchemaVersion;
  return detail::dump(j);
}

void write_projection_csv(const std::filesystem::path& path, const MatrixD& projected,
                          const std::vector<std::pair<std::string, std::vector<std::string>>>& label_columns) {
  for (const auto& [name, values] : label_columns)
    if (values.size() != static_cast<std::size_t>(projected.rows()))
      fail(ErrorCode::InvalidArgument, "label column '" + name + "' length does not match row count");
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.precision(9);
  out << "row";
  for (const auto& [name, _] : label_columns) out << ',' << name;
  for (Eigen::Index c = 0; c < projected.cols(); ++c) out << ",lda_" << c + 1;
  out << '\n';
  for (Eigen::Index i = 0; i < projected.rows(); ++i) {
    out << i;
    for (const auto& [_, values] : label_columns) out << ',' << values[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < projected.cols(); ++c) out << ',' << projected(i, c);
    out << '\n';
  }
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

}  // namespace kbprobe
