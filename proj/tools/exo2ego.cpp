// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

// exo2ego: corpus construction, synthesis, staged training, evaluation and
// reports. Exit codes: 0 success, 1 user error, 2 internal invariant broken.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "exo2ego/cli/commands.hpp"

namespace fs = std::filesystem;
using namespace exo2ego;
using namespace exo2ego::cli;

namespace {

struct Common {
    std::string run;
    std::string config;
    std::optional<std::string> profile;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> model_seed;
    bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--run", c.run, "Run directory (default: $EXO2EGO_OUTPUT_ROOT/default or runs/default)");
    cmd->add_option("--config", c.config, "RunConfig JSON merged over the stored or default config");
    cmd->add_option("--profile", c.profile, "toy or paper-default");
    cmd->add_option("--seed", c.seed, "Dataset seed");
    cmd->add_option("--model-seed", c.model_seed, "Model initialisation and training seed");
    cmd->add_flag("--force", c.force, "Overwrite existing outputs and a differing stored config");
}

/// Stored config, then --config, then flags; stored back into the run.
RunConfig resolve(const Common& c, const Json& extra = Json::object()) {
    const fs::path run = resolve_run_dir(c.run);
    RunConfig cfg = load_run_config(run);
    if (!c.config.empty()) {
        cfg = merge_run_config(cfg, read_json(c.config));
    }
    Json flags = extra;
    if (c.profile) flags["profile"] = *c.profile;
    if (c.seed) flags["seed"] = *c.seed;
    if (c.model_seed) flags["model"]["seed"] = *c.model_seed;
    cfg = merge_run_config(cfg, flags);
    cfg.output_dir = run;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"exo2ego: ego-exo feature mapping toolkit"};
    app.require_subcommand(1);

    Common common;

    auto* build = app.add_subcommand("build-clips", "Expand narration tracks into clip intervals");
    std::string input;
    add_common(build, common);
    build->add_option("--input", input, "Directory of narration track JSON files")->required();

    auto* stats = app.add_subcommand("stats", "Print clip statistics of a corpus manifest");
    std::string stats_target;
    stats->add_option("target", stats_target, "Manifest file, corpus directory or run directory")->required();

    auto* synth = app.add_subcommand("synth", "Synthesise the paired ego/exo dataset");
    add_common(synth, common);
    std::optional<std::string> mode;
    std::optional<int> episodes;
    synth->add_option("--mode", mode, "linear or gridworld");
    synth->add_option("--episodes", episodes, "Episode count");

    auto* train = app.add_subcommand("train", "Run a training stage");
    add_common(train, common);
    TrainOptions topt;
    train->add_option("--stage", topt.stage, "init, s1, s2, s3 or all")->capture_default_str();
    train->add_option("--ablation", topt.ablation, "Ablation preset")->capture_default_str();
    train->add_flag("--allow-skip", topt.allow_skip, "Run without the prerequisite stage and record the gap");

    auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(evalc, common);
    std::string ckpt;
    std::string items;
    evalc->add_option("--checkpoint", ckpt, "Checkpoint directory (default: latest stage of the run)");
    evalc->add_option("--items", items, "JSON-lines item file (default: build the synthetic set)");

    auto* report = app.add_subcommand("report", "Tables and plots over run directories");
    std::vector<std::string> runs;
    std::string out_dir;
    bool plots = false;
    report->add_option("runs", runs, "Run directories")->required();
    report->add_option("--out", out_dir, "Output directory (default: <first run>/report)");
    report->add_flag("--plots", plots, "Also write SVG plots");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (stats->parsed()) {
            cmd_stats(stats_target, std::cout);
            return 0;
        }
        if (report->parsed()) {
            std::vector<fs::path> dirs(runs.begin(), runs.end());
            const fs::path dest = out_dir.empty() ? dirs.front() / "report" : fs::path(out_dir);
            RunLock lock(dest.parent_path().empty() ? fs::path(".") : dest.parent_path());
            cmd_report(dirs, dest, plots, std::cout);
            return 0;
        }

        Json extra = Json::object();
        if (synth->parsed()) {
            if (mode) extra["world"]["mode"] = *mode;
            if (episodes) extra["synth"]["episodes"] = *episodes;
        }
        const RunConfig cfg = resolve(common, extra);
        RunLock lock(cfg.output_dir);
        store_run_config(cfg.output_dir, cfg, common.force);

        if (build->parsed()) {
            cmd_build_clips(cfg, input, common.force, std::cout);
        } else if (synth->parsed()) {
            cmd_synth(cfg, common.force, std::cout);
        } else if (train->parsed()) {
            topt.force = common.force;
            cmd_train(cfg, topt, std::cout);
        } else if (evalc->parsed()) {
            cmd_eval(cfg, {ckpt, items}, std::cout);
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const InvariantViolation& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    } catch (const Json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
