// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbprobe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "json_util.hpp"
#include "kbprobe/error.hpp"
#include "kbprobe/numerics.hpp"

namespace kbprobe {

namespace {

// std::uniform_int_distribution and std::shuffle are implementation-defined; these are not.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

template <typename T>
void seeded_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

struct Stratum {
  std::vector<std::vector<std::size_t>> groups;
  double ideal = 0.0;
  std::size_t train = 0;
  std::size_t lo = 0;
  std::size_t hi = 0;
};

// Distributes `target` train groups over strata, each within [lo, hi] when possible.
void apportion(std::vector<Stratum>& strata, std::size_t target) {
  std::size_t total = 0;
  for (auto& s : strata) {
    const auto size = s.groups.size();
    s.lo = size >= 2 ? 1 : 0;
    s.hi = size >= 2 ? size - 1 : size;
    s.train = std::clamp(static_cast<std::size_t>(std::floor(s.ideal)), s.lo, s.hi);
    total += s.train;
  }
  auto pick = [&](bool grow, bool strict) -> Stratum* {
    Stratum* best = nullptr;
    double best_gap = 0.0;
    for (auto& s : strata) {
      const bool ok = grow ? s.train < (strict ? s.hi : s.groups.size())
                           : s.train > (strict ? s.lo : 0);
      if (!ok) continue;
      const double gap = s.ideal - static_cast<double>(s.train);
      if (best == nullptr || (grow ? gap > best_gap : gap < best_gap)) {
        best = &s;
        best_gap = gap;
      }
    }
    return best;
  };
  while (total < target) {
    Stratum* s = pick(true, true);
    if (s == nullptr) s = pick(true, false);
    ++s->train;
    ++total;
  }
  while (total > target) {
    Stratum* s = pick(false, true);
    if (s == nullptr) s = pick(false, false);
    --s->train;
    --total;
  }
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct LogisticObjective {
  const MatrixD& design;  // n x (d + 1), last column all ones
  const VectorD& target;  // 0/1
  double lambda;

  Eigen::Index dim() const { return design.cols(); }

  double value(const VectorD& theta) const {
    const VectorD z = design * theta;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) loss += softplus(z(i)) - target(i) * z(i);
    const auto w = theta.head(dim() - 1);
    return loss / static_cast<double>(z.size()) + 0.5 * lambda * w.squaredNorm();
  }

  // Gradient and Hessian at theta; probabilities returned for reuse.
  void derivatives(const VectorD& theta, VectorD& grad, MatrixD& hess) const {
    const auto n = static_cast<double>(design.rows());
    const VectorD z = design * theta;
    VectorD residual(z.size());
    VectorD weight(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double p = sigmoid(z(i));
      residual(i) = p - target(i);
      weight(i) = p * (1.0 - p);
    }
    grad = design.transpose() * residual / n;
    grad.head(dim() - 1) += lambda * theta.head(dim() - 1);

    const MatrixD scaled = weight.cwiseSqrt().asDiagonal() * design;
    hess = MatrixD::Zero(dim(), dim());
    hess.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose(), 1.0 / n);
    hess = hess.selfadjointView<Eigen::Lower>();
    hess.diagonal().head(dim() - 1).array() += lambda;
  }
};

VectorD newton_direction(const MatrixD& hess, const VectorD& grad) {
  Eigen::LLT<MatrixD> llt(hess);
  if (llt.info() == Eigen::Success) return -llt.solve(grad);
  // Nearly singular (e.g. saturated bias): add a growing ridge until it factors.
  double ridge = 1e-12 * std::max(1.0, hess.diagonal().mean());
  for (int attempt = 0; attempt < 30; ++attempt, ridge *= 10.0) {
    MatrixD damped = hess;
    damped.diagonal().array() += ridge;
    llt.compute(damped);
    if (llt.info() == Eigen::Success) return -llt.solve(grad);
  }
  fail(ErrorCode::Numeric, "train_probe: Hessian could not be factored");
}

}  // namespace

SplitSpec make_pair_split(std::span<const int> labels,
                          const std::optional<std::vector<std::int64_t>>& pair_ids,
                          double fraction, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (n < 2) fail(ErrorCode::Validation, "make_pair_split: need at least 2 rows");
  if (!(fraction > 0.0 && fraction < 1.0))
    fail(ErrorCode::InvalidArgument, "make_pair_split: fraction must lie in (0, 1)");
  if (pair_ids && pair_ids->size() != n)
    fail(ErrorCode::Validation, "make_pair_split: pair_ids length does not match labels");

  // Groups in a canonical order: by pair_id value, or by row index.
  std::vector<std::vector<std::size_t>> groups;
  if (pair_ids) {
    std::map<std::int64_t, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < n; ++i) by_id[(*pair_ids)[i]].push_back(i);
    for (auto& [_, rows] : by_id) groups.push_back(std::move(rows));
  } else {
    for (std::size_t i = 0; i < n; ++i) groups.push_back({i});
  }

  std::map<std::vector<int>, Stratum> by_kind;
  for (auto& g : groups) {
    std::vector<int> kind;
    for (auto r : g) kind.push_back(labels[r]);
    std::sort(kind.begin(), kind.end());
    kind.erase(std::unique(kind.begin(), kind.end()), kind.end());
    by_kind[kind].groups.push_back(std::move(g));
  }

  const std::size_t target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(groups.size())));
  if (target == 0 || target == groups.size())
    fail(ErrorCode::Validation, "make_pair_split: fraction " + std::to_string(fraction) + " with " +
                                    std::to_string(groups.size()) + " groups yields an empty side");

  std::mt19937_64 rng(seed);
  std::vector<Stratum> strata;
  for (auto& [_, s] : by_kind) {
    seeded_shuffle(s.groups, rng);
    s.ideal = fraction * static_cast<double>(s.groups.size());
    strata.push_back(std::move(s));
  }
  apportion(strata, target);

  SplitSpec spec;
  spec.seed = seed;
  spec.fraction = fraction;
  for (const auto& s : strata) {
    for (std::size_t g = 0; g < s.groups.size(); ++g) {
      auto& side = g < s.train ? spec.train_indices : spec.test_indices;
      side.insert(side.end(), s.groups[g].begin(), s.groups[g].end());
    }
  }
  std::sort(spec.train_indices.begin(), spec.train_indices.end());
  std::sort(spec.test_indices.begin(), spec.test_indices.end());
  return spec;
}

ProbeModel train_probe(const MatrixD& x, std::span<const int> y, const ProbeConfig& config) {
  if (static_cast<std::size_t>(x.rows()) != y.size())
    fail(ErrorCode::InvalidArgument, "train_probe: " + std::to_string(x.rows()) + " rows but " +
                                         std::to_string(y.size()) + " labels");
  if (x.rows() == 0 || x.cols() == 0) fail(ErrorCode::InvalidArgument, "train_probe: empty input");
  if (!(config.l2_lambda >= 0.0)) fail(ErrorCode::InvalidArgument, "train_probe: l2_lambda must be >= 0");
  if (config.max_iter < 0) fail(ErrorCode::InvalidArgument, "train_probe: max_iter must be >= 0");
  require_finite(x, "train_probe input");

  bool seen[2] = {false, false};
  VectorD target(x.rows());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0 && y[i] != 1)
      fail(ErrorCode::InvalidArgument, "train_probe: label " + std::to_string(y[i]) + " is not binary");
    seen[y[i]] = true;
    target(static_cast<Eigen::Index>(i)) = y[i];
  }
  if (!seen[0] || !seen[1]) fail(ErrorCode::Validation, "train_probe: degenerate labels (single class)");

  const Eigen::Index d = x.cols();
  MatrixD design(x.rows(), d + 1);
  design.leftCols(d) = x;
  design.col(d).setOnes();
  const LogisticObjective objective{design, target, config.l2_lambda};

  VectorD theta = VectorD::Zero(d + 1);
  VectorD grad;
  MatrixD hess;
  double value = objective.value(theta);
  int iterations = 0;
  objective.derivatives(theta, grad, hess);
  while (grad.lpNorm<Eigen::Infinity>() > config.tol && iterations < config.max_iter) {
    const VectorD step = newton_direction(hess, grad);
    const double slope = grad.dot(step);
    double t = 1.0;
    VectorD candidate = theta + step;
    double candidate_value = objective.value(candidate);
    while (candidate_value > value + 1e-4 * t * slope && t > 1e-10) {
      t *= 0.5;
      candidate = theta + t * step;
      candidate_value = objective.value(candidate);
    }
    ++iterations;
    if (!(candidate_value <= value)) break;  // no further progress at working precision
    theta = std::move(candidate);
    value = candidate_value;
    objective.derivatives(theta, grad, hess);
  }

  ProbeModel model;
  model.w = theta.head(d);
  model.b = theta(d);
  model.train_meta.seed = config.seed;
  model.train_meta.l2_lambda = config.l2_lambda;
  model.train_meta.iterations = iterations;
  model.train_meta.final_grad_norm = grad.lpNorm<Eigen::Infinity>();
  return model;
}

Prediction predict(const ProbeModel& model, const MatrixD& x) {
  if (static_cast<std::size_t>(x.cols()) != model.d())
    fail(ErrorCode::InvalidArgument, "predict: input has " + std::to_string(x.cols()) +
                                         " columns, probe expects " + std::to_string(model.d()));
  const VectorD z = (x * model.w).array() + model.b;
  Prediction out;
  out.classes.resize(static_cast<std::size_t>(z.size()));
  out.scores.resize(static_cast<std::size_t>(z.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    out.scores[static_cast<std::size_t>(i)] = sigmoid(z(i));
    // z >= 0 is exactly score >= 0.5 apart from sub-ulp z, and keeps rescaling invariance.
    out.classes[static_cast<std::size_t>(i)] = z(i) >= 0.0 ? 1 : 0;
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> gold) {
  if (predicted.size() != gold.size())
    fail(ErrorCode::InvalidArgument, "accuracy: length mismatch (" + std::to_string(predicted.size()) +
                                         " vs " + std::to_string(gold.size()) + ")");
  if (gold.empty()) fail(ErrorCode::InvalidArgument, "accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

namespace {

detail::Json probe_json(const ProbeModel& model) {
  detail::Json j;
  j["w"] = std::vector<double>(model.w.data(), model.w.data() + model.w.size());
  j["b"] = model.b;
  j["label_names"] = model.label_names;
  j["train_meta"] = {{"language", model.train_meta.language},
                     {"layer", model.train_meta.layer},
                     {"seed", model.train_meta.seed},
                     {"l2_lambda", model.train_meta.l2_lambda},
                     {"iterations", model.train_meta.iterations},
                     {"final_grad_norm", model.train_meta.final_grad_norm}};
  j["schema_version"] = detail::kSchemaVersion;
  return j;
}

}  // namespace

std::string probe_to_json(const ProbeModel& model) { return detail::dump(probe_json(model)); }

void save_probe(const ProbeModel& model, const std::filesystem::path& path) {
  detail::write_json_file(path, probe_json(model));
}

ProbeModel load_probe(const std::filesystem::path& path) {
  const auto j = detail::read_json_file(path);
  ProbeModel model = detail::with_format_errors(path.string(), [&] {
    ProbeModel m;
    const auto w = j.at("w").get<std::vector<double>>();
    m.w = Eigen::Map<const VectorD>(w.data(), static_cast<Eigen::Index>(w.size()));
    m.b = j.at("b").get<double>();
    m.label_names = j.at("label_names").get<std::vector<std::string>>();
    const auto& meta = j.at("train_meta");
    m.train_meta.language = meta.value("language", std::string{});
    m.train_meta.layer = meta.value("layer", 0);
    m.train_meta.seed = meta.value("seed", std::uint64_t{0});
    m.train_meta.l2_lambda = meta.value("l2_lambda", 0.0);
    m.train_meta.iterations = meta.value("iterations", 0);
    m.train_meta.final_grad_norm = meta.value("final_grad_norm", 0.0);
    return m;
  });
  if (model.label_names.size() != 2)
    fail(ErrorCode::Validation, path.string() + ": probe must have exactly 2 label names");
  if (model.w.size() == 0 || !model.w.allFinite() || !std::isfinite(model.b))
    fail(ErrorCode::Validation, path.string() + ": probe weights are empty or non-finite");
  return model;
}

}  // namespace kbprobe
