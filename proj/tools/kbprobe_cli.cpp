// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

// kbprobe command-line tool. Exit codes: 0 success, 1 usage error, 2 data or validation error.
// Diagnostics go to stderr; "--out -" streams JSON to stdout where a subcommand emits JSON.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kbprobe.h"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(kbp_status status, const std::string& what) {
  if (status != KBP_OK)
    throw DataError(what + ": " + kbp_status_string(status) + ": " + kbp_last_error());
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Collection = std::unique_ptr<kbp_collection, Deleter<kbp_collection, kbp_collection_free>>;
using Splits = std::unique_ptr<kbp_splits, Deleter<kbp_splits, kbp_splits_free>>;
using Probe = std::unique_ptr<kbp_probe, Deleter<kbp_probe, kbp_probe_free>>;
using Map = std::unique_ptr<kbp_map, Deleter<kbp_map, kbp_map_free>>;
using Report = std::unique_ptr<kbp_report, Deleter<kbp_report, kbp_report_free>>;
using Lda = std::unique_ptr<kbp_lda, Deleter<kbp_lda, kbp_lda_free>>;

std::string take(char* s) {
  std::string out(s);
  kbp_string_free(s);
  return out;
}

Collection load_collection(const std::string& path) {
  kbp_collection* c = nullptr;
  check(kbp_collection_load(path.c_str(), &c), "loading manifest " + path);
  return Collection(c);
}

Splits load_splits(const std::string& path) {
  if (path.empty()) return nullptr;
  kbp_splits* s = nullptr;
  check(kbp_splits_load(path.c_str(), &s), "loading splits " + path);
  return Splits(s);
}

void emit(const std::string& out, const std::string& json) {
  if (out == "-") {
    std::cout << json;
    std::cout.flush();
    return;
  }
  std::ofstream file(out, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot open " + out + " for writing");
  file << json;
  if (!file) throw DataError("write failed: " + out);
}

kbp_method parse_method(const std::string& name) {
  if (name == "vanilla") return KBP_METHOD_VANILLA;
  if (name == "mean_shift") return KBP_METHOD_MEAN_SHIFT;
  if (name == "projection") return KBP_METHOD_PROJECTION;
  throw UsageError("unknown method '" + name + "' (expected vanilla, mean_shift or projection)");
}

std::vector<int> parse_layers(const std::string& spec) {
  if (spec.empty() || spec == "all") return {};
  std::vector<int> layers;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      layers.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("invalid layer list '" + spec + "'");
    }
  }
  return layers;
}

struct ProbeFlags {
  double l2 = 1e-3;
  int max_iter = 1000;
  double tol = 1e-6;

  void add(CLI::App* app) {
    app->add_option("--l2", l2, "L2 penalty on probe weights")->capture_default_str();
    app->add_option("--max-iter", max_iter, "Newton iteration cap")->capture_default_str();
    app->add_option("--tol", tol, "Gradient infinity-norm tolerance")->capture_default_str();
  }

  kbp_probe_config config(std::uint64_t seed) const { return kbp_probe_config{l2, max_iter, tol, seed}; }
};

// Grid options; also loadable from a JSON run config whose keys mirror the flags.
struct GridFlags {
  std::string manifest;
  std::string splits;
  std::string out;
  std::string method = "vanilla";
  std::string layers = "all";
  std::uint64_t seed = 42;
  double fraction = 0.8;
  double rcond = 0.0;
  unsigned threads = 0;
  ProbeFlags probe;
  std::string config;
};

void apply_run_config(CLI::App* app, GridFlags& flags) {
  using nlohmann::json;
  std::ifstream in(flags.config);
  if (!in) throw DataError("cannot open run config " + flags.config);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("run config " + flags.config + ": " + e.what());
  }
  if (!j.is_object()) throw DataError("run config must be a JSON object");
  static const std::set<std::string> known = {"manifest", "splits", "out", "method", "layers", "seed",
                                              "fraction", "rcond", "threads", "l2", "max_iter", "tol"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw DataError("run config: unknown key '" + key + "'");
  // Command-line flags win over config values.
  auto set = [&](const char* key, const char* flag, auto& target) {
    if (j.contains(key) && app->count(flag) == 0) {
      try {
        j.at(key).get_to(target);
      } catch (const json::exception& e) {
        throw DataError(std::string("run config: bad value for '") + key + "': " + e.what());
      }
    }
  };
  set("manifest", "--manifest", flags.manifest);
  set("splits", "--splits", flags.splits);
  set("out", "--out", flags.out);
  set("method", "--method", flags.method);
  set("layers", "--layers", flags.layers);
  set("seed", "--seed", flags.seed);
  set("fraction", "--fraction", flags.fraction);
  set("rcond", "--rcond", flags.rcond);
  set("threads", "--threads", flags.threads);
  set("l2", "--l2", flags.probe.l2);
  set("max_iter", "--max-iter", flags.probe.max_iter);
  set("tol", "--tol", flags.probe.tol);
}

void run_grid(CLI::App* app, GridFlags& flags) {
  if (!flags.config.empty()) apply_run_config(app, flags);
  if (flags.manifest.empty()) throw UsageError("--manifest is required");
  if (flags.out.empty()) throw UsageError("--out is required");
  const kbp_method method = parse_method(flags.method);
  const std::vector<int> layers = parse_layers(flags.layers);

  auto collection = load_collection(flags.manifest);
  Splits splits = load_splits(flags.splits);
  if (!splits) {
    kbp_splits* s = nullptr;
    check(kbp_splits_make(collection.get(), flags.fraction, flags.seed, &s), "making splits");
    splits.reset(s);
  }
  const auto config = flags.probe.config(flags.seed);
  const auto start = std::chrono::steady_clock::now();
  kbp_report* r = nullptr;
  check(kbp_grid_run(collection.get(), splits.get(), method, layers.empty() ? nullptr : layers.data(), layers.size(),
                     &config, flags.rcond, flags.threads, &r),
        "running " + flags.method + " grid");
  Report report(r);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char* json = nullptr;
  check(kbp_report_to_json(report.get(), &json), "serialising report");
  emit(flags.out, take(json));
  std::cerr << "grid (" << flags.method << ") finished in " << seconds << " s\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kbprobe: knowledge-boundary probing and cross-lingual subspace alignment"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kbp_version());

  // split
  std::string split_manifest, split_out;
  double split_fraction = 0.8;
  std::uint64_t split_seed = 42;
  auto* split = app.add_subcommand("split", "Pair-respecting train/test split per language");
  split->add_option("--manifest", split_manifest, "Manifest JSON")->required();
  split->add_option("--fraction", split_fraction, "Train fraction in (0, 1)")->capture_default_str();
  split->add_option("--seed", split_seed, "Shuffle seed")->capture_default_str();
  split->add_option("--out", split_out, "Output splits JSON")->required();

  // probe train / probe eval
  auto* probe = app.add_subcommand("probe", "Train or evaluate a linear probe");
  probe->require_subcommand(1);
  std::string pt_manifest, pt_language, pt_splits, pt_out;
  int pt_layer = 0;
  std::uint64_t pt_seed = 0;
  ProbeFlags pt_flags;
  auto* probe_train = probe->add_subcommand("train", "Train a probe on one (language, layer) cell");
  probe_train->add_option("--manifest", pt_manifest)->required();
  probe_train->add_option("--language", pt_language)->required();
  probe_train->add_option("--layer", pt_layer)->required();
  probe_train->add_option("--splits", pt_splits, "Train on these splits' train rows (default: all rows)");
  probe_train->add_option("--seed", pt_seed, "Recorded in train_meta")->capture_default_str();
  probe_train->add_option("--out", pt_out, "Output probe JSON")->required();
  pt_flags.add(probe_train);

  std::string pe_manifest, pe_probe, pe_language, pe_splits, pe_map, pe_out = "-";
  int pe_layer = 0;
  auto* probe_eval = probe->add_subcommand("eval", "Evaluate a probe, optionally after an alignment map");
  probe_eval->add_option("--manifest", pe_manifest)->required();
  probe_eval->add_option("--probe", pe_probe)->required();
  probe_eval->add_option("--language", pe_language)->required();
  probe_eval->add_option("--layer", pe_layer)->required();
  probe_eval->add_option("--splits", pe_splits, "Evaluate on these splits' test rows (default: all rows)");
  probe_eval->add_option("--map", pe_map, "Alignment map applied before scoring");
  probe_eval->add_option("--out", pe_out, "Output JSON ('-' for stdout)")->capture_default_str();

  // align fit
  auto* align = app.add_subcommand("align", "Fit alignment maps");
  align->require_subcommand(1);
  std::string af_manifest, af_method, af_source, af_target, af_splits, af_out;
  int af_layer = 0;
  double af_rcond = 0.0;
  auto* align_fit = align->add_subcommand("fit", "Fit a map from --target into the --source subspace");
  align_fit->add_option("--manifest", af_manifest)->required();
  align_fit->add_option("--method", af_method, "mean_shift or projection")->required();
  align_fit->add_option("--source", af_source, "In-distribution (probe) language")->required();
  align_fit->add_option("--target", af_target, "Out-of-distribution language to be mapped")->required();
  align_fit->add_option("--layer", af_layer)->required();
  align_fit->add_option("--splits", af_splits, "Fit on these splits' train rows (default: all rows)");
  align_fit->add_option("--rcond", af_rcond, "Relative singular-value cutoff (<= 0: default)");
  align_fit->add_option("--out", af_out, "Output map file (sidecar written to <out>.json)")->required();

  // grid
  GridFlags grid_flags;
  auto* grid = app.add_subcommand("grid", "Layer x language transfer grid");
  grid->add_option("--manifest", grid_flags.manifest);
  grid->add_option("--splits", grid_flags.splits, "Splits JSON (default: generated from --seed/--fraction)");
  grid->add_option("--method", grid_flags.method, "vanilla, mean_shift or projection")->capture_default_str();
  grid->add_option("--layers", grid_flags.layers, "'all' or a comma-separated list")->capture_default_str();
  grid->add_option("--seed", grid_flags.seed)->capture_default_str();
  grid->add_option("--fraction", grid_flags.fraction)->capture_default_str();
  grid->add_option("--rcond", grid_flags.rcond, "Relative singular-value cutoff (<= 0: default)");
  grid->add_option("--threads", grid_flags.threads, "Worker threads (default: $KBPROBE_THREADS or all cores)");
  grid->add_option("--config", grid_flags.config, "JSON run config; flags override its values");
  grid->add_option("--out", grid_flags.out, "Output report JSON ('-' for stdout)");
  grid_flags.probe.add(grid);

  // geometry lda / spectrum
  auto* geometry = app.add_subcommand("geometry", "Subspace geometry diagnostics");
  geometry->require_subcommand(1);
  std::string gl_manifest, gl_label_set = "truth", gl_domains, gl_out, gl_csv;
  int gl_layer = 0;
  double gl_gamma = 1e-3;
  auto* geometry_lda = geometry->add_subcommand("lda", "LDA over every language at one layer");
  geometry_lda->add_option("--manifest", gl_manifest)->required();
  geometry_lda->add_option("--layer", gl_layer)->required();
  geometry_lda->add_option("--label-set", gl_label_set, "language, truth or domain_truth")->capture_default_str();
  geometry_lda->add_option("--domains", gl_domains, "JSON {language: [domain per row]} for domain_truth");
  geometry_lda->add_option("--gamma", gl_gamma, "Within-class shrinkage")->capture_default_str();
  geometry_lda->add_option("--out", gl_out, "Output LDA model JSON ('-' for stdout)")->required();
  geometry_lda->add_option("--csv", gl_csv, "Projected rows with label columns");

  std::string gs_manifest, gs_language, gs_project_onto, gs_splits, gs_out;
  int gs_layer = 0;
  double gs_threshold = 0.95, gs_rcond = 0.0;
  auto* geometry_spectrum = geometry->add_subcommand("spectrum", "Effective dimensionality and participation ratio");
  geometry_spectrum->add_option("--manifest", gs_manifest)->required();
  geometry_spectrum->add_option("--language", gs_language)->required();
  geometry_spectrum->add_option("--layer", gs_layer)->required();
  geometry_spectrum->add_option("--project-onto", gs_project_onto, "Project onto this language's subspace first");
  geometry_spectrum->add_option("--splits", gs_splits, "Use test rows for statistics and train rows for the map");
  geometry_spectrum->add_option("--threshold", gs_threshold, "Variance threshold")->capture_default_str();
  geometry_spectrum->add_option("--rcond", gs_rcond, "Relative singular-value cutoff (<= 0: default)");
  geometry_spectrum->add_option("--out", gs_out, "Output JSON ('-' for stdout)")->required();

  // report summarize
  auto* report = app.add_subcommand("report", "Work with transfer reports");
  report->require_subcommand(1);
  std::vector<std::string> rs_reports;
  std::string rs_out, rs_csv;
  int rs_layer = -1;
  auto* report_summarize = report->add_subcommand("summarize", "Layer curves and best source per target");
  report_summarize->add_option("--report", rs_reports, "Report JSON (repeatable, one per method)")->required();
  report_summarize->add_option("--out", rs_out, "Output summary JSON ('-' for stdout)")->required();
  report_summarize->add_option("--matrix-csv", rs_csv, "Also export one layer matrix of the first report as CSV");
  report_summarize->add_option("--layer", rs_layer, "Layer for --matrix-csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*split) {
      auto collection = load_collection(split_manifest);
      kbp_splits* s = nullptr;
      check(kbp_splits_make(collection.get(), split_fraction, split_seed, &s), "making splits");
      Splits splits(s);
      check(kbp_splits_save(splits.get(), split_out.c_str()), "writing " + split_out);
      std::cerr << "wrote " << split_out << "\n";
    } else if (*probe_train) {
      auto collection = load_collection(pt_manifest);
      auto splits = load_splits(pt_splits);
      const auto config = pt_flags.config(pt_seed);
      kbp_probe* p = nullptr;
      check(kbp_probe_train(collection.get(), pt_language.c_str(), pt_layer, splits.get(), &config, &p),
            "training probe");
      Probe model(p);
      check(kbp_probe_save(model.get(), pt_out.c_str()), "writing " + pt_out);
      std::cerr << "wrote " << pt_out << "\n";
    } else if (*probe_eval) {
      auto collection = load_collection(pe_manifest);
      auto splits = load_splits(pe_splits);
      kbp_probe* p = nullptr;
      check(kbp_probe_load(pe_probe.c_str(), &p), "loading probe " + pe_probe);
      Probe model(p);
      Map map;
      if (!pe_map.empty()) {
        kbp_map* m = nullptr;
        check(kbp_map_load(pe_map.c_str(), &m), "loading map " + pe_map);
        map.reset(m);
      }
      double acc = 0.0;
      std::size_t n = 0;
      check(kbp_probe_evaluate(model.get(), collection.get(), pe_language.c_str(), pe_layer, splits.get(), map.get(),
                               &acc, &n),
            "evaluating probe");
      nlohmann::ordered_json j;
      j["language"] = pe_language;
      j["layer"] = pe_layer;
      j["probe"] = pe_probe;
      j["map"] = pe_map.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(pe_map);
      j["n"] = n;
      j["accuracy"] = acc;
      j["schema_version"] = "1";
      emit(pe_out, j.dump(2) + "\n");
    } else if (*align_fit) {
      kbp_method method = parse_method(af_method);
      if (method == KBP_METHOD_VANILLA) throw UsageError("align fit needs --method mean_shift or projection");
      auto collection = load_collection(af_manifest);
      auto splits = load_splits(af_splits);
      kbp_map* m = nullptr;
      check(kbp_map_fit(collection.get(), method, af_source.c_str(), af_target.c_str(), af_layer, splits.get(),
                        af_rcond, &m),
            "fitting map");
      Map map(m);
      check(kbp_map_save(map.get(), af_out.c_str()), "writing " + af_out);
      std::cerr << "wrote " << af_out << "\n";
    } else if (*grid) {
      run_grid(grid, grid_flags);
    } else if (*geometry_lda) {
      kbp_label_set label_set;
      if (gl_label_set == "language") label_set = KBP_LABELS_LANGUAGE;
      else if (gl_label_set == "truth") label_set = KBP_LABELS_TRUTH;
      else if (gl_label_set == "domain_truth") label_set = KBP_LABELS_DOMAIN_TRUTH;
      else throw UsageError("unknown --label-set '" + gl_label_set + "'");
      if (label_set == KBP_LABELS_DOMAIN_TRUTH && gl_domains.empty())
        throw UsageError("--label-set domain_truth needs --domains");
      auto collection = load_collection(gl_manifest);
      kbp_lda* l = nullptr;
      check(kbp_lda_fit(collection.get(), gl_layer, label_set, gl_domains.empty() ? nullptr : gl_domains.c_str(),
                        gl_gamma, &l),
            "fitting LDA");
      Lda lda(l);
      char* json = nullptr;
      check(kbp_lda_to_json(lda.get(), &json), "serialising LDA");
      emit(gl_out, take(json));
      if (!gl_csv.empty()) check(kbp_lda_write_csv(lda.get(), gl_csv.c_str()), "writing " + gl_csv);
    } else if (*geometry_spectrum) {
      auto collection = load_collection(gs_manifest);
      auto splits = load_splits(gs_splits);
      char* json = nullptr;
      check(kbp_spectrum_compute(collection.get(), gs_language.c_str(), gs_layer,
                                 gs_project_onto.empty() ? nullptr : gs_project_onto.c_str(), splits.get(),
                                 gs_threshold, gs_rcond, &json),
            "computing spectrum");
      emit(gs_out, take(json));
    } else if (*report_summarize) {
      std::vector<Report> owned;
      std::vector<const kbp_report*> views;
      for (const auto& path : rs_reports) {
        kbp_report* r = nullptr;
        check(kbp_report_load(path.c_str(), &r), "loading report " + path);
        owned.emplace_back(r);
        views.push_back(r);
      }
      char* json = nullptr;
      check(kbp_report_summarize(views.data(), views.size(), &json), "summarising reports");
      emit(rs_out, take(json));
      if (!rs_csv.empty()) {
        if (rs_layer < 0) throw UsageError("--matrix-csv needs --layer");
        check(kbp_report_write_matrix_csv(views.front(), rs_layer, rs_csv.c_str()), "writing " + rs_csv);
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
