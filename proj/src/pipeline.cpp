// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbprobe/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <set>

#include "json_util.hpp"
#include "kbprobe/align.hpp"
#include "kbprobe/error.hpp"
#include "kbprobe/parallel.hpp"

namespace kbprobe {

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("KBPROBE_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != nullptr && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

const char* to_string(MethodKind method) {
  switch (method) {
    case MethodKind::Vanilla: return "vanilla";
    case MethodKind::MeanShift: return "mean_shift";
    case MethodKind::Projection: return "projection";
  }
  return "unknown";
}

MethodKind parse_method(const std::string& name) {
  if (name == "vanilla") return MethodKind::Vanilla;
  if (name == "mean_shift") return MethodKind::MeanShift;
  if (name == "projection") return MethodKind::Projection;
  fail(ErrorCode::InvalidArgument, "unknown method '" + name + "' (expected vanilla, mean_shift or projection)");
}

namespace {

// Train/test views of one (language, layer) cell.
struct CellData {
  MatrixD train;
  MatrixD test;
  std::vector<int> train_labels;
  std::vector<int> test_labels;
  ProbeModel probe;
  std::unique_ptr<ProjectionFitter> fitter;  // projection only; this language as OOD
};

void finish_block(LayerBlock& block) {
  const std::size_t m = block.languages.size();
  double diag = 0.0;
  double off = 0.0;
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t t = 0; t < m; ++t) (j == t ? diag : off) += block.matrix[j][t];
  block.id_avg = diag / static_cast<double>(m);
  block.ood_avg = m > 1 ? off / static_cast<double>(m * (m - 1)) : 0.0;
}

void check_inputs(const Collection& collection, const SplitMap& splits, const std::vector<std::string>& languages,
                  const std::vector<int>& layers, bool projection) {
  if (languages.size() < 2) fail(ErrorCode::Validation, "transfer grid needs at least 2 languages");
  if (layers.empty()) fail(ErrorCode::Validation, "transfer grid needs at least one layer");
  if (projection && !collection.parallel())
    fail(ErrorCode::Validation,
         "method projection requires a parallel manifest (row-aligned languages, \"parallel\": true)");
  for (const auto& language : languages) {
    auto it = splits.find(language);
    if (it == splits.end()) fail(ErrorCode::Validation, "no split for language '" + language + "'");
    for (int layer : layers) {
      if (!collection.contains(language, layer))
        fail(ErrorCode::Validation, "missing cell (language = " + language + ", layer = " + std::to_string(layer) + ")");
      const auto& set = collection.at(language, layer);
      if (set.label_names.size() != 2)
        fail(ErrorCode::Validation, "probes are binary; " + language + " has " +
                                        std::to_string(set.label_names.size()) + " label names");
      try {
        it->second.validate(set.n(), set.pair_ids);
      } catch (const Error& e) {
        fail(ErrorCode::Validation, "split for '" + language + "' at layer " + std::to_string(layer) + ": " + e.what());
      }
    }
  }
  if (projection) {
    const auto& reference = splits.at(languages.front()).train_indices;
    for (const auto& language : languages)
      if (splits.at(language).train_indices != reference)
        fail(ErrorCode::Validation, "method projection requires identical train rows across languages; '" +
                                        language + "' differs from '" + languages.front() + "'");
  }
}

}  // namespace

std::vector<TransferReport> run_transfer_grids(const Collection& collection, const SplitMap& splits,
                                               std::span<const MethodKind> methods, const GridOptions& options) {
  if (methods.empty()) fail(ErrorCode::InvalidArgument, "no methods requested");
  const auto languages = collection.languages();
  std::vector<int> layers = options.layers ? *options.layers : collection.layers();
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  const bool projection = std::find(methods.begin(), methods.end(), MethodKind::Projection) != methods.end();
  check_inputs(collection, splits, languages, layers, projection);

  const unsigned threads = resolve_threads(options.threads);
  const std::size_t m = languages.size();

  std::vector<TransferReport> reports(methods.size());
  for (std::size_t r = 0; r < methods.size(); ++r) {
    reports[r].model = collection.model();
    reports[r].method = methods[r];
    reports[r].split_seed = splits.at(languages.front()).seed;
    reports[r].fraction = splits.at(languages.front()).fraction;
  }

  for (int layer : layers) {
    std::vector<CellData> cells(m);
    parallel_for(m, threads, [&](std::size_t j) {
      const auto& set = collection.at(languages[j], layer);
      const auto& split = splits.at(languages[j]);
      CellData& cell = cells[j];
      cell.train = gather_rows(set.data, split.train_indices);
      cell.test = gather_rows(set.data, split.test_indices);
      cell.train_labels = gather(set.labels, split.train_indices);
      cell.test_labels = gather(set.labels, split.test_indices);
      cell.probe = train_probe(cell.train, cell.train_labels, options.probe);
      if (projection) cell.fitter = std::make_unique<ProjectionFitter>(cell.train, options.rcond);
    });

    // results[r][j * m + t]
    std::vector<std::vector<double>> results(methods.size(), std::vector<double>(m * m, 0.0));
    parallel_for(m * m, threads, [&](std::size_t idx) {
      const std::size_t j = idx / m;
      const std::size_t t = idx % m;
      const CellData& source = cells[j];
      const CellData& target = cells[t];
      if (j == t) {
        const double acc = accuracy(predict(source.probe, target.test).classes, target.test_labels);
        for (auto& res : results) res[idx] = acc;
        return;
      }
      for (std::size_t r = 0; r < methods.size(); ++r) {
        MatrixD shifted;
        switch (methods[r]) {
          case MethodKind::Vanilla:
            shifted = target.test;
            break;
          case MethodKind::MeanShift:
            shifted = apply_mean_shift(fit_mean_shift(source.train, target.train), target.test);
            break;
          case MethodKind::Projection:
            shifted = apply_projection(target.fitter->fit(source.train), target.test);
            break;
        }
        results[r][idx] = accuracy(predict(source.probe, shifted).classes, target.test_labels);
      }
    });

    for (std::size_t r = 0; r < methods.size(); ++r) {
      LayerBlock block;
      block.layer = layer;
      block.languages = languages;
      block.matrix.assign(m, std::vector<double>(m));
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t t = 0; t < m; ++t) block.matrix[j][t] = results[r][j * m + t];
      finish_block(block);
      reports[r].layers.push_back(std::move(block));
    }
  }
  return reports;
}

TransferReport run_transfer_grid(const Collection& collection, const SplitMap& splits, MethodKind method,
                                 const GridOptions& options) {
  const MethodKind methods[] = {method};
  return std::move(run_transfer_grids(collection, splits, methods, options).front());
}

std::vector<CurvePoint> aggregate_curves(const TransferReport& report) {
  std::vector<CurvePoint> out;
  for (const auto& block : report.layers) {
    LayerBlock copy = block;
    finish_block(copy);
    out.push_back({block.layer, copy.id_avg, copy.ood_avg});
  }
  return out;
}

std::vector<BestSource> best_source_per_target(std::span<const TransferReport> reports) {
  if (reports.empty()) fail(ErrorCode::InvalidArgument, "best_source_per_target: no reports");
  const auto& ref = reports.front();
  if (ref.layers.empty()) fail(ErrorCode::InvalidArgument, "best_source_per_target: report has no layers");
  std::vector<int> layer_ids;
  for (const auto& b : ref.layers) layer_ids.push_back(b.layer);
  const auto& languages = ref.layers.front().languages;
  for (const auto& report : reports) {
    if (report.layers.size() != ref.layers.size())
      fail(ErrorCode::Validation, "best_source_per_target: reports cover different layers");
    for (std::size_t i = 0; i < report.layers.size(); ++i)
      if (report.layers[i].layer != layer_ids[i] || report.layers[i].languages != languages)
        fail(ErrorCode::Validation, "best_source_per_target: reports differ in layers or languages");
  }

  // Candidate order realises the tie-break: layer, then source name, then method.
  std::vector<std::size_t> block_order(ref.layers.size());
  for (std::size_t i = 0; i < block_order.size(); ++i) block_order[i] = i;
  std::sort(block_order.begin(), block_order.end(),
            [&](std::size_t a, std::size_t b) { return layer_ids[a] < layer_ids[b]; });
  std::vector<std::size_t> source_order(languages.size());
  for (std::size_t i = 0; i < source_order.size(); ++i) source_order[i] = i;
  std::sort(source_order.begin(), source_order.end(),
            [&](std::size_t a, std::size_t b) { return languages[a] < languages[b]; });
  std::vector<std::size_t> report_order(reports.size());
  for (std::size_t i = 0; i < report_order.size(); ++i) report_order[i] = i;
  std::stable_sort(report_order.begin(), report_order.end(), [&](std::size_t a, std::size_t b) {
    return static_cast<int>(reports[a].method) < static_cast<int>(reports[b].method);
  });

  std::vector<BestSource> out;
  for (std::size_t t : source_order) {
    std::optional<BestSource> best;
    for (std::size_t bi : block_order)
      for (std::size_t j : source_order)
        for (std::size_t ri : report_order) {
          const double acc = reports[ri].layers[bi].matrix[j][t];
          if (!best || acc > best->accuracy)
            best = BestSource{languages[t], layer_ids[bi], languages[j], reports[ri].method, acc};
        }
    out.push_back(*best);
  }
  return out;
}

namespace {

detail::Json report_json(const TransferReport& report) {
  detail::Json j;
  j["model"] = report.model;
  j["method"] = to_string(report.method);
  j["split_seed"] = report.split_seed;
  j["fraction"] = report.fraction;
  j["layers"] = detail::Json::array();
  for (const auto& b : report.layers) {
    j["layers"].push_back({{"layer", b.layer},
                           {"languages", b.languages},
                           {"matrix", b.matrix},
                           {"id_avg", b.id_avg},
                           {"ood_avg", b.ood_avg}});
  }
  j["schema_version"] = detail::kSchemaVersion;
  return j;
}

}  // namespace

std::string report_to_json(const TransferReport& report) { return detail::dump(report_json(report)); }

TransferReport report_from_json(const std::string& text) {
  detail::Json j;
  try {
    j = detail::Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("report: invalid JSON: ") + e.what());
  }
  TransferReport report = detail::with_format_errors("report", [&] {
    if (j.value("schema_version", std::string{}) != detail::kSchemaVersion)
      fail(ErrorCode::Format, "report: unsupported schema_version");
    TransferReport r;
    r.model = j.at("model").get<std::string>();
    r.method = parse_method(j.at("method").get<std::string>());
    r.split_seed = j.at("split_seed").get<std::uint64_t>();
    r.fraction = j.at("fraction").get<double>();
    for (const auto& b : j.at("layers")) {
      LayerBlock block;
      block.layer = b.at("layer").get<int>();
      block.languages = b.at("languages").get<std::vector<std::string>>();
      block.matrix = b.at("matrix").get<std::vector<std::vector<double>>>();
      block.id_avg = b.at("id_avg").get<double>();
      block.ood_avg = b.at("ood_avg").get<double>();
      r.layers.push_back(std::move(block));
    }
    return r;
  });
  for (const auto& b : report.layers) {
    const auto m = b.languages.size();
    if (b.matrix.size() != m)
      fail(ErrorCode::Validation, "report: layer " + std::to_string(b.layer) + " matrix is not m x m");
    for (const auto& row : b.matrix) {
      if (row.size() != m)
        fail(ErrorCode::Validation, "report: layer " + std::to_string(b.layer) + " matrix is not m x m");
      for (double v : row)
        if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::Validation, "report: accuracy outside [0, 1]");
    }
  }
  return report;
}

void save_report(const TransferReport& report, const std::filesystem::path& path) {
  detail::write_json_file(path, report_json(report));
}

TransferReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return report_from_json(text);
}

std::string summarize_to_json(std::span<const TransferReport> reports) {
  detail::Json j;
  j["reports"] = detail::Json::array();
  for (const auto& report : reports) {
    detail::Json curves = detail::Json::array();
    for (const auto& p : aggregate_curves(report))
      curves.push_back({{"layer", p.layer}, {"id_avg", p.id_avg}, {"ood_avg", p.ood_avg}});
    j["reports"].push_back({{"model", report.model}, {"method", to_string(report.method)}, {"curves", curves}});
  }
  j["best_source_per_target"] = detail::Json::array();
  for (const auto& best : best_source_per_target(reports)) {
    j["best_source_per_target"].push_back({{"target", best.target},
                                           {"layer", best.layer},
                                           {"source", best.source},
                                           {"method", to_string(best.method)},
                                           {"accuracy", best.accuracy}});
  }
  j["schema_version"] = detail::kSchemaVersion;
  return detail::dump(j);
}

void write_matrix_csv(const TransferReport& report, int layer, const std::filesystem::path& path) {
  auto it = std::find_if(report.layers.begin(), report.layers.end(),
                         [layer](const LayerBlock& b) { return b.layer == layer; });
  if (it == report.layers.end()) fail(ErrorCode::Validation, "report has no layer " + std::to_string(layer));
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "train\\test";
  for (const auto& lang : it->languages) out << ',' << lang;
  out << '\n';
  for (std::size_t j = 0; j < it->languages.size(); ++j) {
    out << it->languages[j];
    for (double v : it->matrix[j]) out << ',' << v;
    out << '\n';
  }
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

}  // namespace kbprobe
