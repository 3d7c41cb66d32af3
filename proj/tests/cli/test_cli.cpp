// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the installed command-line tool end to end against a synthetic collection.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kbprobe/align.hpp"
#include "kbprobe/geometry.hpp"
#include "synthetic.hpp"

namespace {

using nlohmann::json;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new synth::TempDir("cli");
    synth::GridSpec spec;
    spec.languages = {"en", "km", "th"};
    spec.layers = {0, 19};
    spec.n = 120;
    spec.d = 10;
    spec.seed = 3;
    collection_ = new kbprobe::Collection(synth::make_collection(spec));
    synth::write_collection(*collection_, dir_->path() / "data");
    synth::write_collection(*collection_, dir_->path() / "loose", false);
    auto sets = collection_->sets();
    auto& th = sets.at({"th", 0});
    std::reverse(th.sample_ids->begin(), th.sample_ids->end());
    synth::write_collection(kbprobe::Collection("m", "d", false, std::move(sets)), dir_->path() / "shuffled", false);
  }
  static void TearDownTestSuite() {
    delete collection_;
    delete dir_;
  }

  static std::string manifest() { return (dir_->path() / "data" / "manifest.json").string(); }
  static std::string loose_manifest() { return (dir_->path() / "loose" / "manifest.json").string(); }
  static std::string path(const std::string& name) { return (dir_->path() / name).string(); }

  static Outcome run(const std::string& args) {
    const std::string out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string("'") + KBPROBE_CLI + "' " + args + " >'" + out + "' 2>'" + err + "'";
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
  }

  static json load(const std::string& name) { return json::parse(read_file(path(name))); }

  static bool ends_with_schema_version(const std::string& text) {
    const std::string tail = "\"schema_version\": \"1\"\n}\n";
    return text.size() >= tail.size() && text.compare(text.size() - tail.size(), tail.size(), tail) == 0;
  }

  static inline synth::TempDir* dir_ = nullptr;
  static inline kbprobe::Collection* collection_ = nullptr;
};

TEST_F(Cli, SplitWritesPerLanguageSpecs) {
  const auto r = run("split --manifest " + manifest() + " --fraction 0.8 --seed 42 --out " + path("splits.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  const auto j = load("splits.json");
  for (const char* lang : {"en", "km", "th"}) {
    const auto& s = j["splits"][lang];
    EXPECT_EQ(s["train_indices"].size(), 96u);
    EXPECT_EQ(s["test_indices"].size(), 24u);
    EXPECT_EQ(s["seed"], 42);
    EXPECT_EQ(s["fraction"], 0.8);
  }
  EXPECT_TRUE(ends_with_schema_version(read_file(path("splits.json"))));
}

TEST_F(Cli, ProjectionOnNonParallelManifestExitsTwo) {
  ASSERT_EQ(run("split --manifest " + manifest() + " --seed 1 --out " + path("s1.json")).code, 0);
  const auto r = run("grid --manifest " + loose_manifest() + " --method projection --layers all --splits " +
                     path("s1.json") + " --out " + path("never.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("parallel manifest"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(path("never.json")));
}

TEST_F(Cli, SpectrumWithProjectionMatchesLibraryComposition) {
  const auto r = run("geometry spectrum --manifest " + manifest() +
                     " --language en --layer 19 --project-onto km --out " + path("stats.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = load("stats.json");
  kbprobe::MatrixD en = collection_->at("en", 19).data.cast<double>();
  kbprobe::MatrixD km = collection_->at("km", 19).data.cast<double>();
  const auto map = kbprobe::fit_projection(en, km);
  const auto expected = kbprobe::spectrum(en * map.w, 0.95);
  EXPECT_EQ(j["effective_dim"], expected.effective_dim);
  EXPECT_DOUBLE_EQ(j["participation_ratio"].get<double>(), expected.participation_ratio);
  EXPECT_EQ(j["sigma"].get<std::vector<double>>(), expected.sigma);
  EXPECT_TRUE(ends_with_schema_version(read_file(path("stats.json"))));
}

TEST_F(Cli, GridIsReproducibleAcrossThreadCounts) {
  for (const char* method : {"vanilla", "mean_shift", "projection"}) {
    const std::string base = "grid --manifest " + manifest() + " --method " + method + " --seed 5 --fraction 0.75";
    ASSERT_EQ(run(base + " --threads 1 --out " + path("g1.json")).code, 0);
    ASSERT_EQ(run(base + " --threads 4 --out " + path("g4.json")).code, 0);
    ASSERT_EQ(run(base + " --threads 1 --out " + path("g1b.json")).code, 0);
    const std::string one = read_file(path("g1.json"));
    EXPECT_EQ(one, read_file(path("g4.json"))) << method;
    EXPECT_EQ(one, read_file(path("g1b.json"))) << method;
    EXPECT_TRUE(ends_with_schema_version(one));
    EXPECT_EQ(json::parse(one)["method"], method);
  }
}

TEST_F(Cli, GridEnvironmentThreadsAndStdout) {
  ASSERT_EQ(run("grid --manifest " + manifest() + " --layers 19 --out " + path("env_ref.json") + " --threads 1").code,
            0);
  ::setenv("KBPROBE_THREADS", "3", 1);
  const auto r = run("grid --manifest " + manifest() + " --layers 19 --out -");
  ::unsetenv("KBPROBE_THREADS");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, read_file(path("env_ref.json")));
  EXPECT_EQ(json::parse(r.out)["layers"].size(), 1u);
  EXPECT_NE(r.err.find("finished"), std::string::npos);
}

TEST_F(Cli, RunConfig) {
  std::ofstream(path("cfg.json")) << json{{"manifest", manifest()}, {"method", "mean_shift"}, {"layers", "0"},
                                          {"seed", 9},           {"out", path("cfg_report.json")}}
                                         .dump();
  auto r = run("grid --config " + path("cfg.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = load("cfg_report.json");
  EXPECT_EQ(j["method"], "mean_shift");
  EXPECT_EQ(j["split_seed"], 9);
  EXPECT_EQ(j["layers"].size(), 1u);

  r = run("grid --config " + path("cfg.json") + " --method vanilla --seed 11");
  ASSERT_EQ(r.code, 0) << r.err;
  j = load("cfg_report.json");
  EXPECT_EQ(j["method"], "vanilla");
  EXPECT_EQ(j["split_seed"], 11);

  std::ofstream(path("bad_cfg.json")) << json{{"manifest", manifest()}, {"colour", "blue"}}.dump();
  r = run("grid --config " + path("bad_cfg.json") + " --out " + path("x.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown key 'colour'"), std::string::npos) << r.err;
}

TEST_F(Cli, ProbeAlignAndEvaluate) {
  ASSERT_EQ(run("split --manifest " + manifest() + " --seed 2 --out " + path("s2.json")).code, 0);
  auto r = run("probe train --manifest " + manifest() + " --language en --layer 0 --splits " + path("s2.json") +
               " --out " + path("probe.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load("probe.json")["train_meta"]["language"], "en");

  r = run("align fit --manifest " + manifest() + " --method projection --source en --target th --layer 0 --splits " +
          path("s2.json") + " --out " + path("th_to_en.xkba"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(path("th_to_en.xkba.json")));

  r = run("probe eval --manifest " + manifest() + " --probe " + path("probe.json") + " --language th --layer 0 --splits " +
          path("s2.json") + " --map " + path("th_to_en.xkba"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto eval = json::parse(r.out);
  EXPECT_EQ(eval["n"], 24);
  EXPECT_GE(eval["accuracy"].get<double>(), 0.0);
  EXPECT_TRUE(ends_with_schema_version(r.out));

  // row-aligned sample ids suffice for a single map
  r = run("align fit --manifest " + loose_manifest() + " --method projection --source en --target th --layer 0 --out " +
          path("loose.xkba"));
  EXPECT_EQ(r.code, 0) << r.err;
  const std::string shuffled = (dir_->path() / "shuffled" / "manifest.json").string();
  r = run("align fit --manifest " + shuffled + " --method projection --source en --target th --layer 0 --out " +
          path("nope.xkba"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("sample_ids differ at row 0"), std::string::npos) << r.err;
  r = run("align fit --manifest " + shuffled + " --method mean_shift --source en --target th --layer 0 --out " +
          path("shift.xkba"));
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, SummarizeAndLda) {
  for (const char* method : {"vanilla", "mean_shift", "projection"})
    ASSERT_EQ(run(std::string("grid --manifest ") + manifest() + " --method " + method + " --out " +
                  path(std::string("rep_") + method + ".json"))
                  .code,
              0);
  auto r = run("report summarize --report " + path("rep_vanilla.json") + " --report " + path("rep_mean_shift.json") +
               " --report " + path("rep_projection.json") + " --out " + path("summary.json") + " --matrix-csv " +
               path("m.csv") + " --layer 19");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = load("summary.json");
  EXPECT_EQ(s["reports"].size(), 3u);
  EXPECT_EQ(s["best_source_per_target"].size(), 3u);
  EXPECT_EQ(read_file(path("m.csv")).rfind("train\\test,en,km,th\n", 0), 0u);

  r = run("geometry lda --manifest " + manifest() + " --layer 0 --label-set language --out " + path("lda.json") +
          " --csv " + path("lda.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load("lda.json")["label_names"], json({"en", "km", "th"}));
  EXPECT_EQ(read_file(path("lda.csv")).rfind("row,language,truth,lda_1,lda_2\n", 0), 0u);

  r = run("geometry lda --manifest " + manifest() + " --layer 0 --label-set domain_truth --out " + path("lda2.json"));
  EXPECT_EQ(r.code, 1);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("split --manifest " + manifest()).code, 1);
  EXPECT_EQ(run("split --manifest " + manifest() + " --out x --bogus").code, 1);
  EXPECT_EQ(run("grid --manifest " + manifest() + " --method magic --out " + path("x.json")).code, 1);
  EXPECT_EQ(run("--help").code, 0);
  const auto missing = run("split --manifest " + path("absent.json") + " --out " + path("x.json"));
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("absent.json"), std::string::npos);
  EXPECT_EQ(run("probe train --manifest " + manifest() + " --language xx --layer 0 --out " + path("p.json")).code, 2);
}

}  // namespace
