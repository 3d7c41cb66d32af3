// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "expect_error.hpp"
#include "kbprobe/align.hpp"
#include "kbprobe/geometry.hpp"
#include "kbprobe/numerics.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

namespace {

using kbprobe::ErrorCode;
using kbprobe::MatrixD;

struct Labelled {
  MatrixD x;
  std::vector<int> y;
};

Labelled clusters(const std::vector<kbprobe::RowVectorD>& means, Eigen::Index per_class, std::uint64_t seed,
                  double sd = 1.0) {
  const auto d = means.front().size();
  Labelled out;
  out.x = synth::gaussian(per_class * static_cast<Eigen::Index>(means.size()), d, seed, sd);
  for (std::size_t k = 0; k < means.size(); ++k)
    for (Eigen::Index i = 0; i < per_class; ++i) {
      out.x.row(static_cast<Eigen::Index>(k) * per_class + i) += means[k];
      out.y.push_back(static_cast<int>(k));
    }
  return out;
}

// Shared-covariance Gaussian posteriors computed directly from the regularised scatter.
MatrixD gaussian_posteriors(const Labelled& data, int classes, double gamma) {
  const Eigen::Index n = data.x.rows(), d = data.x.cols();
  MatrixD means = MatrixD::Zero(classes, d);
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    means.row(data.y[static_cast<std::size_t>(i)]) += data.x.row(i);
    counts[static_cast<std::size_t>(data.y[static_cast<std::size_t>(i)])] += 1.0;
  }
  for (int k = 0; k < classes; ++k) means.row(k) /= counts[static_cast<std::size_t>(k)];
  MatrixD sw = MatrixD::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto dev = (data.x.row(i) - means.row(data.y[static_cast<std::size_t>(i)])).transpose();
    sw += dev * dev.transpose();
  }
  sw /= static_cast<double>(n - classes);
  sw += gamma * sw.trace() / static_cast<double>(d) * MatrixD::Identity(d, d);
  const MatrixD prec = oracle::gauss_inverse(sw);
  MatrixD post(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    double total = 0.0;
    for (int k = 0; k < classes; ++k) {
      const auto dev = (data.x.row(i) - means.row(k)).transpose();
      post(i, k) = counts[static_cast<std::size_t>(k)] / static_cast<double>(n) *
                   std::exp(-0.5 * (dev.transpose() * prec * dev)(0, 0));
      total += post(i, k);
    }
    post.row(i) /= total;
  }
  return post;
}

TEST(Lda, TwoClustersAlongE1) {
  kbprobe::RowVectorD plus = kbprobe::RowVectorD::Zero(6), minus = kbprobe::RowVectorD::Zero(6);
  plus(0) = 5;
  minus(0) = -5;
  const auto data = clusters({plus, minus}, 100, 1);
  const auto model = kbprobe::fit_lda(data.x, data.y, {"a", "b"});
  ASSERT_EQ(model.components(), 1u);
  const kbprobe::VectorD axis = model.axes.col(0);
  EXPECT_GE(std::abs(axis(0)) / axis.norm(), 0.99);
  EXPECT_GT(model.discriminability(0), 0.0);
}

TEST(Lda, CartesianTwoByTwoGivesThreeAxes) {
  const MatrixD x = synth::gaussian(80, 5, 2);
  std::vector<int> domain(80), truth(80);
  for (int i = 0; i < 80; ++i) {
    domain[static_cast<std::size_t>(i)] = i % 2;
    truth[static_cast<std::size_t>(i)] = (i / 2) % 2;
  }
  const auto [labels, names] = kbprobe::cartesian_labels(domain, {"law", "sci"}, truth, {"false", "true"});
  EXPECT_EQ(names, (std::vector<std::string>{"law|false", "law|true", "sci|false", "sci|true"}));
  EXPECT_EQ(labels[0], 0);
  EXPECT_EQ(labels[3], 3);
  EXPECT_EQ(kbprobe::fit_lda(x, labels, names).components(), 3u);
}

TEST(Lda, CartesianSkipsUnobservedCombinations) {
  const std::vector<int> a{0, 0, 1}, b{1, 1, 1};
  const auto [labels, names] = kbprobe::cartesian_labels(a, {"x", "y"}, b, {"f", "t"});
  EXPECT_EQ(names, (std::vector<std::string>{"x|t", "y|t"}));
  EXPECT_EQ(labels, (std::vector<int>{0, 0, 1}));
}

TEST(Lda, ThreeClassPosteriorsMatchGaussianOracle) {
  kbprobe::RowVectorD m0(2), m1(2), m2(2);
  m0 << 0, 0;
  m1 << 3, 1;
  m2 << -1, 3;
  auto data = clusters({m0, m1, m2}, 30, 3);
  data.x.col(1) *= 0.5;
  const double gamma = 1e-3;
  const auto model = kbprobe::fit_lda(data.x, data.y, {"a", "b", "c"}, gamma);
  const MatrixD post = kbprobe::lda_posteriors(model, data.x);
  const MatrixD ref = gaussian_posteriors(data, 3, gamma);
  EXPECT_LE((post - ref).cwiseAbs().maxCoeff(), 1e-3);
  for (Eigen::Index i = 0; i < post.rows(); ++i) EXPECT_NEAR(post.row(i).sum(), 1.0, 1e-12);
}

TEST(Lda, AxesSolveGeneralisedEigenproblem) {
  kbprobe::RowVectorD m0(2), m1(2), m2(2);
  m0 << 0, 0;
  m1 << 2, 1;
  m2 << -1, 2.5;
  const auto data = clusters({m0, m1, m2}, 25, 4);
  const double gamma = 1e-2;
  const auto model = kbprobe::fit_lda(data.x, data.y, {"a", "b", "c"}, gamma);

  // Dense oracle: eigen-pairs of S_W'^{-1} S_B from the 2x2 characteristic polynomial.
  const MatrixD means = model.class_means;
  const kbprobe::RowVectorD grand = data.x.colwise().mean();
  MatrixD sw = MatrixD::Zero(2, 2), sb = MatrixD::Zero(2, 2);
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    const auto dev = (data.x.row(i) - means.row(data.y[static_cast<std::size_t>(i)])).transpose();
    sw += dev * dev.transpose();
  }
  sw /= static_cast<double>(data.x.rows() - 3);
  sw += gamma * sw.trace() / 2.0 * MatrixD::Identity(2, 2);
  for (int k = 0; k < 3; ++k) {
    const auto dev = (means.row(k) - grand).transpose();
    sb += (1.0 / 3.0) * dev * dev.transpose();
  }
  const MatrixD m = oracle::gauss_inverse(sw) * sb;
  const double tr = m.trace(), det = m.determinant();
  const double disc = std::sqrt(tr * tr / 4 - det);
  const double lambdas[2] = {tr / 2 + disc, tr / 2 - disc};
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(model.discriminability(j), lambdas[j], 1e-6 * lambdas[0]);
    kbprobe::VectorD v(2);
    v << m(0, 1), lambdas[j] - m(0, 0);
    v /= std::sqrt((v.transpose() * sw * v)(0, 0));
    if (v(0) < 0) v = -v;
    EXPECT_LE((model.axes.col(j) - v).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NEAR((model.axes.col(j).transpose() * sw * model.axes.col(j))(0, 0), 1.0, 1e-9);
  }
  // projection of the same data equals the oracle axes applied by hand
  const MatrixD projected = kbprobe::project_lda(model, data.x);
  EXPECT_LE((projected - data.x * model.axes).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lda, SignCanonicalAndDeterministic) {
  const auto data = clusters({kbprobe::RowVectorD::Zero(4), kbprobe::RowVectorD::Ones(4) * 2}, 20, 5);
  const auto a = kbprobe::fit_lda(data.x, data.y, {"a", "b"});
  const auto b = kbprobe::fit_lda(data.x, data.y, {"a", "b"});
  EXPECT_EQ(a.axes, b.axes);
  for (Eigen::Index c = 0; c < a.axes.cols(); ++c) {
    Eigen::Index first = 0;
    while (std::abs(a.axes(first, c)) <= 1e-12 * a.axes.col(c).cwiseAbs().maxCoeff()) ++first;
    EXPECT_GT(a.axes(first, c), 0.0);
  }
}

TEST(Lda, Errors) {
  const MatrixD x = synth::gaussian(6, 2, 6);
  const std::vector<int> single{0, 0, 0, 0, 0, 0};
  EXPECT_KBP_ERROR(kbprobe::fit_lda(x, single, {"a"}), ErrorCode::Validation, "fewer than 2 classes");
  const std::vector<int> singleton{0, 0, 0, 0, 0, 1};
  EXPECT_KBP_ERROR(kbprobe::fit_lda(x, singleton, {"a", "b"}), ErrorCode::Validation, "fewer than 2 samples");
}

TEST(ProjectLda, AxisAndZeroCases) {
  kbprobe::LdaModel model;
  model.axes = MatrixD::Zero(3, 1);
  model.axes(0, 0) = 1.0;
  const MatrixD x = synth::gaussian(5, 3, 7);
  EXPECT_EQ(kbprobe::project_lda(model, x).col(0), x.col(0));
  EXPECT_TRUE(kbprobe::project_lda(model, MatrixD::Zero(4, 3)).isZero(0.0));
  EXPECT_KBP_ERROR(kbprobe::project_lda(model, MatrixD::Zero(4, 2)), ErrorCode::InvalidArgument, "columns");
}

TEST(Spectrum, RankOne) {
  MatrixD x = MatrixD::Zero(4, 3);
  x(0, 0) = 1;
  x(1, 0) = -1;
  x(2, 0) = 2;
  x(3, 0) = -2;
  EXPECT_EQ(kbprobe::effective_dimensionality(x), 1u);
  EXPECT_NEAR(kbprobe::participation_ratio(x), 1.0, 1e-12);
}

TEST(Spectrum, TwentyEqualSingularValues) {
  MatrixD x(40, 20);
  x << MatrixD::Identity(20, 20), -MatrixD::Identity(20, 20);
  const auto stats = kbprobe::spectrum(x);
  EXPECT_EQ(stats.effective_dim, 19u);
  EXPECT_NEAR(stats.participation_ratio, 20.0, 1e-9);
  EXPECT_EQ(kbprobe::effective_dim_from_sigma(stats.sigma, 1.0), 20u);
}

TEST(Spectrum, EqualValuesAnalytic) {
  for (std::size_t r : {1u, 5u, 20u, 64u}) {
    const std::vector<double> sigma(r, 2.5);
    EXPECT_NEAR(kbprobe::participation_ratio_from_sigma(sigma), static_cast<double>(r), 1e-9);
    EXPECT_EQ(kbprobe::effective_dim_from_sigma(sigma, 0.95), static_cast<std::size_t>(std::ceil(0.95 * r - 1e-9)));
  }
}

TEST(Spectrum, ZeroMatrix) {
  const auto stats = kbprobe::spectrum(MatrixD::Zero(5, 3));
  EXPECT_EQ(stats.effective_dim, 0u);
  EXPECT_EQ(stats.participation_ratio, 0.0);
  // constant rows centre to zero as well
  EXPECT_EQ(kbprobe::effective_dimensionality(MatrixD::Constant(5, 3, 4.0)), 0u);
}

TEST(Spectrum, PlantedSignalMatchesPrefixOracle) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const MatrixD signal = synth::gaussian(200, 10, seed * 5, 100.0) * synth::gaussian(10, 64, seed * 5 + 1);
    const MatrixD x = signal + synth::gaussian(200, 64, seed * 5 + 2);
    const auto ref = oracle::gram_singular_values(oracle::center(x));
    for (double threshold : {0.5, 0.9, 0.95, 0.99, 0.9999}) {
      EXPECT_EQ(kbprobe::effective_dimensionality(x, threshold), oracle::prefix_effective_dim(ref, threshold))
          << "seed " << seed << " threshold " << threshold;
    }
    EXPECT_LE(kbprobe::effective_dimensionality(x, 0.95), 10u);
  }
}

TEST(Spectrum, RotationInvariance) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const MatrixD x = synth::gaussian(60, 12, seed) * synth::gaussian(12, 12, seed + 50).cwiseAbs();
    const auto q = kbprobe::thin_svd(synth::gaussian(12, 12, seed + 100)).u;
    EXPECT_EQ(kbprobe::effective_dimensionality(x), kbprobe::effective_dimensionality(x * q));
    EXPECT_NEAR(kbprobe::participation_ratio(x), kbprobe::participation_ratio(x * q), 1e-6);
  }
}

TEST(Spectrum, ScaleInvariance) {
  const MatrixD x = synth::gaussian(30, 8, 9) * synth::gaussian(8, 8, 10);
  const double pr = kbprobe::participation_ratio(x);
  for (double alpha : {-3.0, 1e-4, 250.0}) EXPECT_NEAR(kbprobe::participation_ratio(alpha * x), pr, 1e-9);
}

TEST(Spectrum, SelfConsistency) {
  MatrixD eye5 = MatrixD::Identity(5, 5);
  for (const MatrixD& x : {eye5, MatrixD(synth::gaussian(25, 9, 11))}) {
    const auto stats = kbprobe::spectrum(x, 0.8);
    EXPECT_EQ(stats.effective_dim, kbprobe::effective_dim_from_sigma(stats.sigma, 0.8));
    double s2 = 0, s4 = 0;
    for (double s : stats.sigma) {
      s2 += s * s;
      s4 += s * s * s * s;
    }
    EXPECT_NEAR(stats.participation_ratio, s2 * s2 / s4, 1e-9);
    std::size_t nonzero = 0;
    for (double s : stats.sigma) nonzero += s > 1e-12 * stats.sigma[0];
    EXPECT_LE(stats.effective_dim, nonzero);
    EXPECT_LE(stats.participation_ratio, static_cast<double>(nonzero) + 1e-6);
    EXPECT_DOUBLE_EQ(stats.variance_threshold, 0.8);
  }
}

TEST(Spectrum, ProjectedWorkflowMatchesManualComposition) {
  const MatrixD source = synth::gaussian(100, 20, 12);
  const MatrixD partner = synth::gaussian(100, 4, 13) * synth::gaussian(4, 20, 14);
  const auto map = kbprobe::fit_projection(source, partner);
  const MatrixD projected = source * map.w;
  const auto stats = kbprobe::spectrum(projected);
  const auto ref = oracle::gram_singular_values(oracle::center(projected));
  EXPECT_EQ(stats.effective_dim, oracle::prefix_effective_dim(ref, 0.95));
  double s2 = 0, s4 = 0;
  for (double s : ref) {
    s2 += s * s;
    s4 += s * s * s * s;
  }
  EXPECT_NEAR(stats.participation_ratio, s2 * s2 / s4, 1e-6 * stats.participation_ratio);
}

TEST(Spectrum, ProjectionOntoLowRankPartnerLowersPr) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const MatrixD high = synth::gaussian(300, 48, seed);
    const MatrixD partner = synth::gaussian(300, 6, seed + 10) * synth::gaussian(6, 48, seed + 20);
    const double before = kbprobe::participation_ratio(high);
    const auto map = kbprobe::fit_projection(high, partner);
    const double after = kbprobe::participation_ratio(kbprobe::apply_projection(map, high));
    EXPECT_LT(after, before);
    EXPECT_LE(after, 6.0 + 1e-6);
  }
}

TEST(Spectrum, Errors) {
  EXPECT_KBP_ERROR(kbprobe::spectrum(MatrixD::Ones(1, 4)), ErrorCode::InvalidArgument, "at least 2 rows");
  MatrixD x = MatrixD::Ones(3, 3);
  x(0, 0) = NAN;
  EXPECT_KBP_ERROR(kbprobe::participation_ratio(x), ErrorCode::Numeric, "non-finite");
  const std::vector<double> sigma{1.0};
  EXPECT_KBP_ERROR(kbprobe::effective_dim_from_sigma(sigma, 0.0), ErrorCode::InvalidArgument, "threshold");
}

TEST(GeometryOutputs, JsonAndCsvSchemas) {
  synth::TempDir dir("geo");
  const auto stats = kbprobe::spectrum(synth::gaussian(10, 3, 15));
  const std::string json = kbprobe::spectrum_to_json(stats);
  for (const char* key : {"\"sigma\"", "\"effective_dim\"", "\"participation_ratio\"", "\"variance_threshold\""})
    EXPECT_NE(json.find(key), std::string::npos) << key;
  EXPECT_NE(json.find("\"schema_version\": \"1\"\n}"), std::string::npos);

  const auto data = clusters({kbprobe::RowVectorD::Zero(3), kbprobe::RowVectorD::Ones(3) * 3,
                              kbprobe::RowVectorD::Ones(3) * -3},
                             5, 16);
  const auto model = kbprobe::fit_lda(data.x, data.y, {"a", "b", "c"});
  const std::string lda = kbprobe::lda_to_json(model);
  for (const char* key : {"\"label_names\"", "\"gamma\"", "\"axes\"", "\"class_means\"", "\"discriminability\""})
    EXPECT_NE(lda.find(key), std::string::npos) << key;

  std::vector<std::string> names;
  for (int y : data.y) names.push_back(model.label_names[static_cast<std::size_t>(y)]);
  kbprobe::write_projection_csv(dir / "p.csv", kbprobe::project_lda(model, data.x), {{"class", names}});
  std::ifstream in(dir / "p.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "row,class,lda_1,lda_2");
  EXPECT_EQ(first.rfind("0,a,", 0), 0u);
  EXPECT_KBP_ERROR(kbprobe::write_projection_csv(dir / "q.csv", MatrixD::Zero(2, 1), {{"class", {"a"}}}),
                   ErrorCode::InvalidArgument, "length");
}

}  // namespace
