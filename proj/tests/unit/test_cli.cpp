// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "exo2ego/cli/commands.hpp"

using namespace exo2ego;
using namespace exo2ego::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kSamples = fs::path(EXO2EGO_SOURCE_DIR) / "samples";

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / fmt::format("exo2ego_{}_{}", name, ::getpid())) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

RunConfig quick_config(const fs::path& run) {
    RunConfig c = run_config_from_json(read_json(kSamples / "configs" / "quick.json"));
    c.output_dir = run;
    return c;
}

std::string slurp(const fs::path& p) { return read_text(p); }

/// Every file under `dir` with its bytes, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            out[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
        }
    }
    return out;
}

void run_pipeline(const RunConfig& c, bool force) {
    std::ostringstream sink;
    cmd_synth(c, force, sink);
    TrainOptions t;
    t.force = force;
    cmd_train(c, t, sink);
    cmd_eval(c, {}, sink);
}

}  // namespace

TEST(RunConfig, JsonRoundTripAndHash) {
    const auto c = quick_config("somewhere");
    const auto back = run_config_from_json(run_config_to_json(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(back.synth.episodes, 12);
    EXPECT_EQ(back.model.d, 16);
    auto moved = c;
    moved.output_dir = "elsewhere";
    EXPECT_EQ(config_hash(moved), config_hash(c));
    auto other = c;
    other.seed = 2;
    EXPECT_NE(config_hash(run_config_from_json(run_config_to_json(other))), config_hash(c));
    EXPECT_THROW(run_config_from_json(Json{{"bogus", 1}}), Error);
    EXPECT_THROW(run_config_from_json(Json{{"profile", "huge"}}), Error);
    EXPECT_THROW(run_config_from_json(Json{{"stage_overrides", {{"s2", {{"epochz", 3}}}}}}), Error);
    EXPECT_THROW(run_config_from_json(Json{{"stage_overrides", {{"s9", {{"epochs", 3}}}}}}), Error);
    EXPECT_EQ(*overrides_for(c, trainer::StageId::s2).epochs, 2);
}

TEST(RunConfig, OutputRootFromEnvironment) {
    ::setenv(kOutputRootEnv, "/tmp/somewhere", 1);
    EXPECT_EQ(resolve_run_dir(""), fs::path("/tmp/somewhere/default"));
    EXPECT_EQ(resolve_run_dir("mine"), fs::path("mine"));
    ::unsetenv(kOutputRootEnv);
    EXPECT_EQ(resolve_run_dir(""), fs::path("runs/default"));
}

TEST(RunLock, ExcludesSecondWriter) {
    TempDir t("lock");
    {
        RunLock a(t.path());
        EXPECT_THROW(RunLock b(t.path()), Error);
    }
    EXPECT_NO_THROW(RunLock c(t.path()));
}

TEST(StoredConfig, MismatchNeedsForce) {
    TempDir t("cfg");
    auto c = quick_config(t.path());
    store_run_config(t.path(), c, false);
    EXPECT_NO_THROW(store_run_config(t.path(), c, false));
    auto d = c;
    d.seed = 9;
    EXPECT_THROW(store_run_config(t.path(), d, false), Error);
    EXPECT_NO_THROW(store_run_config(t.path(), d, true));
    EXPECT_EQ(load_run_config(t.path()).seed, 9u);
}

TEST(BuildClips, CountsMatchExpansionAndRerunIsIdentical) {
    TempDir t("clips");
    auto c = quick_config(t.path());
    std::ostringstream sink;
    const auto r = cmd_build_clips(c, kSamples / "narrations", false, sink);
    std::vector<corpus::NarrationTrack> tracks;
    for (const char* f : {"kitchen.json", "workshop.json"}) {
        const auto t2 = cli::detail::read_tracks(kSamples / "narrations" / f);
        tracks.insert(tracks.end(), t2.begin(), t2.end());
    }
    const double alpha = corpus::compute_alpha(tracks);
    std::size_t expected = 0;
    for (const auto& tr : tracks) {
        expected += corpus::expand_narrations(tr, alpha).clips.size();
    }
    EXPECT_EQ(r.tracks, 3u);
    EXPECT_EQ(r.clips, expected);
    const auto manifest = slurp(t.path() / "corpus" / "manifest.json");
    EXPECT_EQ(corpus::corpus_from_json(Json::parse(manifest)).clip_count(), expected);
    EXPECT_THROW(cmd_build_clips(c, kSamples / "narrations", false, sink), Error);
    cmd_build_clips(c, kSamples / "narrations", true, sink);
    EXPECT_EQ(slurp(t.path() / "corpus" / "manifest.json"), manifest);
    std::ostringstream stats;
    cmd_stats(t.path(), stats);
    EXPECT_NE(stats.str().find(fmt::format("| clips | {} |", expected)), std::string::npos);
}

TEST(BuildClips, EmptyAndMalformedInputs) {
    TempDir t("clips_bad");
    const auto in = t.path() / "in";
    fs::create_directories(in);
    auto c = quick_config(t.path() / "run");
    std::ostringstream sink;
    try {
        cmd_build_clips(c, in, false, sink);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("no tracks found"), std::string::npos);
    }
    write_text(in / "broken.json", "{\n  \"video_id\": \"v\",\n  \"duration_s\": 3.0,\n  \"entries\": [ oops ]\n}\n");
    try {
        cmd_build_clips(c, in, false, sink);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("broken.json:4:"), std::string::npos) << e.what();
    }
}

TEST(Train, LineageOrderAndAblationLogs) {
    TempDir t("train");
    auto c = quick_config(t.path());
    std::ostringstream sink;
    cmd_synth(c, false, sink);

    TrainOptions s2;
    s2.stage = "s2";
    try {
        cmd_train(c, s2, sink);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("requires stage s1"), std::string::npos) << e.what();
    }

    TrainOptions o;
    o.stage = "init";
    cmd_train(c, o, sink);
    o.stage = "s1";
    cmd_train(c, o, sink);
    EXPECT_EQ(trainer::read_checkpoint_manifest(t.path() / "checkpoints" / "s1").at("lineage"),
              Json({"init", "s1"}));
    EXPECT_THROW(cmd_train(c, o, sink), Error);

    s2.ablation = "fwd-only-ccl";
    cmd_train(c, s2, sink);
    std::ifstream log(t.path() / "logs" / "s2.ndjson");
    std::string line;
    int n = 0;
    while (std::getline(log, line)) {
        const auto j = Json::parse(line);
        EXPECT_EQ(j.at("loss").at("weights").at("ccl_backward").get<double>(), 0.0);
        EXPECT_GT(j.at("loss").at("weights").at("ccl_forward").get<double>(), 0.0);
        EXPECT_EQ(j.at("loss").at("ccl_backward").get<double>(), 0.0);
        ++n;
    }
    EXPECT_GT(n, 0);
    const auto man = trainer::read_checkpoint_manifest(t.path() / "checkpoints" / "s2");
    EXPECT_EQ(man.at("ablation"), "fwd-only-ccl");
    EXPECT_EQ(man.at("config_hash"), config_hash(c));
}

TEST(Train, AllowSkipRecordsTheGap) {
    TempDir t("skip");
    auto c = quick_config(t.path());
    std::ostringstream sink;
    cmd_synth(c, false, sink);
    TrainOptions o;
    o.stage = "s1";
    o.allow_skip = true;
    cmd_train(c, o, sink);
    const auto man = trainer::read_checkpoint_manifest(t.path() / "checkpoints" / "s1");
    EXPECT_EQ(man.at("lineage"), Json({"s1"}));
    EXPECT_EQ(man.at("skipped"), Json({"init"}));
}

TEST(Pipeline, EndToEndIsByteReproducible) {
    TempDir a("e2e_a");
    TempDir b("e2e_b");
    const auto ca = quick_config(a.path());
    const auto cb = quick_config(b.path());
    run_pipeline(ca, false);
    run_pipeline(cb, false);
    std::ostringstream sink;
    cmd_report({a.path()}, a.path() / "report", true, sink);
    cmd_report({b.path()}, b.path() / "report", true, sink);

    auto ta = tree(a.path());
    auto tb = tree(b.path());
    for (auto* t : {&ta, &tb}) {
        for (auto it = t->begin(); it != t->end();) {
            // Wall times are the only non-deterministic content.
            it = it->first.starts_with("reports/") || it->first == "logs/lm_warmup.json" ? t->erase(it) : std::next(it);
        }
    }
    ASSERT_EQ(ta.size(), tb.size());
    for (const auto& [k, v] : ta) {
        if (k.starts_with("report/")) {
            continue;  // names the run directory
        }
        EXPECT_EQ(v, tb.at(k)) << k;
    }
    EXPECT_TRUE(ta.contains("checkpoints/s3/manifest.json"));
    EXPECT_TRUE(ta.contains("eval/s3/metrics.json"));
    EXPECT_TRUE(ta.contains("report/loss_curves.svg"));
    EXPECT_TRUE(ta.contains("report/metric_radar.svg"));

    const auto md = slurp(a.path() / "report" / "report.md");
    EXPECT_NE(md.find("| metric | init | s1 | s2 | s3 |"), std::string::npos);
    const auto first = slurp(a.path() / "report" / "report.md");
    cmd_report({a.path()}, a.path() / "report", true, sink);
    EXPECT_EQ(slurp(a.path() / "report" / "report.md"), first);

    // Forced rerun in place reproduces the dataset and checkpoints.
    const auto before = tree(a.path() / "checkpoints");
    run_pipeline(ca, true);
    EXPECT_EQ(tree(a.path() / "checkpoints"), before);
}

TEST(Report, GridHasOneRowPerRunAndNeedsLogs) {
    TempDir a("grid_a");
    TempDir b("grid_b");
    std::ostringstream sink;
    for (const auto& [dir, abl] : {std::pair{a.path(), "none"}, std::pair{b.path(), "no-kl"}}) {
        auto c = quick_config(dir);
        cmd_synth(c, false, sink);
        TrainOptions o;
        o.ablation = abl;
        cmd_train(c, o, sink);
    }
    const auto r = build_report({a.path(), b.path()});
    const auto grid = ablation_grid(r);
    ASSERT_EQ(grid.size(), 2u);
    EXPECT_EQ(grid[0].ablation, "none");
    EXPECT_EQ(grid[1].ablation, "no-kl");
    EXPECT_NE(render_report_markdown(r).find("# Ablation grid"), std::string::npos);

    TempDir empty("grid_empty");
    EXPECT_THROW(build_report({empty.path()}), Error);
}

TEST(Eval, CorruptCheckpointIsRejected) {
    TempDir t("corrupt");
    auto c = quick_config(t.path());
    std::ostringstream sink;
    cmd_synth(c, false, sink);
    TrainOptions o;
    o.stage = "init";
    cmd_train(c, o, sink);
    const auto dir = t.path() / "checkpoints" / "init" / "params";
    const auto victim = fs::directory_iterator(dir)->path();
    auto bytes = read_bytes(victim);
    bytes.back() ^= 0x5a;
    write_bytes(victim, bytes);
    EXPECT_THROW(cmd_eval(c, {}, sink), Error);
}
