// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Cross-stage and cross-run summaries built from the training reports, step
// logs and eval metrics of run directories. Wall-clock times are left out so
// a rerun renders the same bytes.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/json_util.hpp"
#include "exo2ego/trainer/stage.hpp"

namespace exo2ego::cli {

namespace fs = std::filesystem;

struct StageSummary {
    std::string stage;
    Json train;                  ///< reports/train_<stage>.json
    std::optional<Json> eval;    ///< eval/<stage>/metrics.json
    std::vector<double> loss;    ///< total loss per step
    std::vector<double> cycle;   ///< ccl_forward + ccl_backward per step
};

struct RunSummary {
    std::string dir;
    std::string config_hash;
    std::string ablation = "none";
    std::string profile;
    std::uint64_t seed = 0;
    std::vector<StageSummary> stages;

    const StageSummary* find(const std::string& stage) const {
        for (const auto& s : stages) {
            if (s.stage == stage) {
                return &s;
            }
        }
        return nullptr;
    }
};

struct Report {
    std::vector<RunSummary> runs;
};

namespace detail {

inline std::optional<double> json_path(const Json& j, std::initializer_list<const char*> keys) {
    const Json* cur = &j;
    for (const char* k : keys) {
        if (!cur->is_object() || !cur->contains(k)) {
            return std::nullopt;
        }
        cur = &cur->at(k);
    }
    if (!cur->is_number()) {
        return std::nullopt;
    }
    return cur->get<double>();
}

inline std::optional<double> task_metric(const std::optional<Json>& eval, const std::string& task, const char* key) {
    if (!eval) {
        return std::nullopt;
    }
    for (const auto& t : eval->value("tasks", Json::array())) {
        if (t.value("task", std::string()) == task && t.contains(key)) {
            return t.at(key).get<double>();
        }
    }
    return std::nullopt;
}

inline std::string cell(const std::optional<double>& v, int digits = 4) {
    return v ? fmt::format("{:.{}f}", *v, digits) : std::string("-");
}

}  // namespace detail

inline RunSummary load_run_summary(const fs::path& dir) {
    require(fs::is_directory(dir), fmt::format("run directory '{}' does not exist", dir.string()));
    RunSummary r;
    r.dir = dir.string();
    for (trainer::StageId s : trainer::kAllStages) {
        const std::string name = trainer::to_string(s);
        const auto rep = dir / "reports" / fmt::format("train_{}.json", name);
        if (!fs::exists(rep)) {
            continue;
        }
        StageSummary ss;
        ss.stage = name;
        ss.train = read_json(rep);
        r.config_hash = ss.train.value("config_hash", r.config_hash);
        r.ablation = ss.train.value("ablation", r.ablation);
        r.profile = ss.train.value("profile", r.profile);
        if (ss.train.contains("stage_config")) {
            r.seed = ss.train.at("stage_config").value("seed", r.seed);
        }
        const auto metrics = dir / "eval" / name / "metrics.json";
        if (fs::exists(metrics)) {
            ss.eval = read_json(metrics);
        }
        std::ifstream log(dir / "logs" / fmt::format("{}.ndjson", name));
        std::string line;
        while (std::getline(log, line)) {
            if (line.empty()) {
                continue;
            }
            const Json step = parse_json_text(line, (dir / "logs" / fmt::format("{}.ndjson", name)).string());
            const auto& l = step.at("loss");
            ss.loss.push_back(l.at("total").get<double>());
            ss.cycle.push_back(l.at("ccl_forward").get<double>() + l.at("ccl_backward").get<double>());
        }
        r.stages.push_back(std::move(ss));
    }
    return r;
}

inline Report build_report(const std::vector<fs::path>& runs) {
    require(!runs.empty(), "report needs at least one run directory");
    Report rep;
    for (const auto& d : runs) {
        auto r = load_run_summary(d);
        if (!r.stages.empty()) {
            rep.runs.push_back(std::move(r));
        }
    }
    std::vector<std::string> names;
    for (const auto& d : runs) {
        names.push_back(d.string());
    }
    require(!rep.runs.empty(), fmt::format("no training logs found in {}", fmt::join(names, ", ")));
    return rep;
}

struct MetricRow {
    std::string label;
    std::function<std::optional<double>(const StageSummary&)> get;
};

inline std::vector<MetricRow> stage_metric_rows() {
    using detail::json_path;
    using detail::task_metric;
    return {
        {"steps", [](const StageSummary& s) { return json_path(s.train, {"report", "steps"}); }},
        {"loss, leading decile", [](const StageSummary& s) { return json_path(s.train, {"report", "loss_leading_decile"}); }},
        {"loss, trailing decile", [](const StageSummary& s) { return json_path(s.train, {"report", "loss_trailing_decile"}); }},
        {"final vtg", [](const StageSummary& s) { return json_path(s.train, {"report", "final_loss", "vtg"}); }},
        {"final ccl forward", [](const StageSummary& s) { return json_path(s.train, {"report", "final_loss", "ccl_forward"}); }},
        {"final ccl backward", [](const StageSummary& s) { return json_path(s.train, {"report", "final_loss", "ccl_backward"}); }},
        {"final kl", [](const StageSummary& s) { return json_path(s.train, {"report", "final_loss", "kl"}); }},
        {"held-out cycle error", [](const StageSummary& s) { return json_path(s.train, {"report", "probe_end", "cycle"}); }},
        {"held-out kl", [](const StageSummary& s) { return json_path(s.train, {"report", "probe_end", "kl"}); }},
        {"held-out retrieval top-1", [](const StageSummary& s) { return json_path(s.train, {"report", "probe_end", "retrieval_top1"}); }},
        {"mcq accuracy", [](const StageSummary& s) { return task_metric(s.eval, "mcq", "accuracy"); }},
        {"retrieval accuracy", [](const StageSummary& s) { return task_metric(s.eval, "retrieval", "accuracy"); }},
        {"retrieval mAP", [](const StageSummary& s) { return task_metric(s.eval, "retrieval", "map"); }},
        {"retrieval nDCG", [](const StageSummary& s) { return task_metric(s.eval, "retrieval", "ndcg"); }},
        {"multilabel mAP", [](const StageSummary& s) { return task_metric(s.eval, "multilabel", "map"); }},
        {"multilabel nDCG", [](const StageSummary& s) { return task_metric(s.eval, "multilabel", "ndcg"); }},
        {"open accuracy", [](const StageSummary& s) { return task_metric(s.eval, "open", "accuracy"); }},
        {"open score (0-5)", [](const StageSummary& s) { return task_metric(s.eval, "open", "score"); }},
    };
}

struct GridRow {
    std::string dir;
    std::string ablation;
    std::uint64_t seed = 0;
    std::optional<double> retrieval;
    std::optional<double> cycle;
    std::optional<double> kl;
    std::optional<double> mcq;
};

inline std::vector<GridRow> ablation_grid(const Report& r) {
    std::vector<GridRow> out;
    for (const auto& run : r.runs) {
        GridRow g{run.dir, run.ablation, run.seed, {}, {}, {}, {}};
        if (const auto* s2 = run.find("s2")) {
            g.retrieval = detail::json_path(s2->train, {"report", "probe_end", "retrieval_top1"});
            g.cycle = detail::json_path(s2->train, {"report", "probe_end", "cycle"});
            g.kl = detail::json_path(s2->train, {"report", "probe_end", "kl"});
        }
        for (auto it = run.stages.rbegin(); it != run.stages.rend() && !g.mcq; ++it) {
            g.mcq = detail::task_metric(it->eval, "mcq", "accuracy");
        }
        out.push_back(std::move(g));
    }
    return out;
}

inline std::string render_report_markdown(const Report& r) {
    std::string s = "# Stage comparison\n";
    const auto rows = stage_metric_rows();
    for (const auto& run : r.runs) {
        s += fmt::format("\n## {}\n\n- config hash: {}\n- profile: {}\n- ablation: {}\n- seed: {}\n\n", run.dir,
                         run.config_hash, run.profile, run.ablation, run.seed);
        s += "| metric |";
        std::string rule = "|---|";
        for (const auto& st : run.stages) {
            s += fmt::format(" {} |", st.stage);
            rule += "---:|";
        }
        s += "\n" + rule + "\n";
        for (const auto& row : rows) {
            s += fmt::format("| {} |", row.label);
            for (const auto& st : run.stages) {
                s += fmt::format(" {} |", detail::cell(row.get(st), row.label == "steps" ? 0 : 4));
            }
            s += "\n";
        }
    }
    if (r.runs.size() > 1) {
        s += "\n# Ablation grid\n\n| run | ablation | seed | s2 retrieval top-1 | s2 cycle error | s2 kl | mcq accuracy |\n";
        s += "|---|---|---:|---:|---:|---:|---:|\n";
        for (const auto& g : ablation_grid(r)) {
            s += fmt::format("| {} | {} | {} | {} | {} | {} | {} |\n", g.dir, g.ablation, g.seed, detail::cell(g.retrieval),
                             detail::cell(g.cycle), detail::cell(g.kl, 6), detail::cell(g.mcq));
        }
    }
    return s;
}

inline Json report_to_json(const Report& r) {
    auto opt = [](const std::optional<double>& v) { return v ? fixed_number(*v, 6) : Json(nullptr); };
    Json runs = Json::array();
    const auto rows = stage_metric_rows();
    for (const auto& run : r.runs) {
        Json stages = Json::object();
        for (const auto& st : run.stages) {
            Json m = Json::object();
            for (const auto& row : rows) {
                m[row.label] = opt(row.get(st));
            }
            stages[st.stage] = std::move(m);
        }
        runs.push_back({{"dir", run.dir},
                        {"config_hash", run.config_hash},
                        {"profile", run.profile},
                        {"ablation", run.ablation},
                        {"seed", run.seed},
                        {"stages", std::move(stages)}});
    }
    Json grid = Json::array();
    for (const auto& g : ablation_grid(r)) {
        grid.push_back({{"dir", g.dir},
                        {"ablation", g.ablation},
                        {"seed", g.seed},
                        {"s2_retrieval_top1", opt(g.retrieval)},
                        {"s2_cycle", opt(g.cycle)},
                        {"s2_kl", opt(g.kl)},
                        {"mcq_accuracy", opt(g.mcq)}});
    }
    return {{"runs", std::move(runs)}, {"ablation_grid", std::move(grid)}};
}

namespace svg {

inline std::string header(int w, int h) {
    return fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
                       "font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
                       w, h, w, h, w, h);
}

inline constexpr std::array<const char*, 6> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

/// One panel per series, each scaled to its own range.
inline std::string panels(const std::vector<std::pair<std::string, std::vector<double>>>& series, const std::string& title) {
    const int pw = 260;
    const int ph = 180;
    const int n = static_cast<int>(series.size());
    std::string s = header(std::max(1, n) * pw, ph + 30);
    s += fmt::format("<text x=\"8\" y=\"16\" font-size=\"13\">{}</text>\n", title);
    for (int k = 0; k < n; ++k) {
        const auto& [name, ys] = series[static_cast<std::size_t>(k)];
        const int x0 = k * pw + 40;
        const int y0 = 30;
        const int w = pw - 55;
        const int h = ph - 40;
        s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n", x0, y0, w, h);
        s += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", x0, y0 + h + 16, name);
        if (ys.empty()) {
            continue;
        }
        const auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
        const double lo = *lo_it;
        const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
        s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", x0 - 3, y0 + 8, hi);
        s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", x0 - 3, y0 + h, lo);
        s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1\" points=\"", kColors[static_cast<std::size_t>(k) % kColors.size()]);
        const double dx = ys.size() > 1 ? static_cast<double>(w) / static_cast<double>(ys.size() - 1) : 0.0;
        for (std::size_t i = 0; i < ys.size(); ++i) {
            s += fmt::format("{:.1f},{:.1f} ", x0 + dx * static_cast<double>(i), y0 + h - (ys[i] - lo) / (hi - lo) * h);
        }
        s += "\"/>\n";
    }
    s += "</svg>\n";
    return s;
}

/// Radar chart, one polygon per stage; axes are scaled to [0, 1].
inline std::string radar(const std::vector<std::string>& axes, const std::vector<std::pair<std::string, std::vector<double>>>& polys) {
    const double cx = 200;
    const double cy = 190;
    const double rad = 130;
    std::string s = header(420, 400);
    s += "<text x=\"8\" y=\"16\" font-size=\"13\">Evaluation metrics by stage</text>\n";
    const std::size_t n = axes.size();
    auto pt = [&](std::size_t i, double v) {
        const double a = -std::numbers::pi / 2 + 2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
        return std::pair{cx + rad * v * std::cos(a), cy + rad * v * std::sin(a)};
    };
    for (std::size_t i = 0; i < n; ++i) {
        const auto [x, y] = pt(i, 1.0);
        const auto [lx, ly] = pt(i, 1.12);
        s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#bbb\"/>\n", cx, cy, x, y);
        s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", lx, ly, axes[i]);
    }
    for (std::size_t k = 0; k < polys.size(); ++k) {
        const char* color = kColors[k % kColors.size()];
        s += fmt::format("<polygon fill=\"{}\" fill-opacity=\"0.12\" stroke=\"{}\" points=\"", color, color);
        for (std::size_t i = 0; i < n; ++i) {
            const auto [x, y] = pt(i, std::clamp(polys[k].second[i], 0.0, 1.0));
            s += fmt::format("{:.1f},{:.1f} ", x, y);
        }
        s += "\"/>\n";
        s += fmt::format("<text x=\"330\" y=\"{}\" fill=\"{}\">{}</text>\n", 40 + 16 * static_cast<int>(k), color, polys[k].first);
    }
    s += "</svg>\n";
    return s;
}

}  // namespace svg

/// report.md and report.json, plus SVG plots of the first run when asked.
inline void write_report(const Report& r, const fs::path& dest, bool plots) {
    fs::create_directories(dest);
    write_text(dest / "report.md", render_report_markdown(r));
    write_text(dest / "report.json", dump_json(report_to_json(r)));
    if (!plots) {
        return;
    }
    const auto& run = r.runs.front();
    std::vector<std::pair<std::string, std::vector<double>>> loss;
    std::vector<std::pair<std::string, std::vector<double>>> cycle;
    for (const auto& st : run.stages) {
        loss.emplace_back(st.stage, st.loss);
        if (st.stage == "s2") {
            cycle.emplace_back("s2 training cycle loss", st.cycle);
        }
    }
    write_text(dest / "loss_curves.svg", svg::panels(loss, "Total loss per step"));
    if (!cycle.empty()) {
        write_text(dest / "cycle_curves.svg", svg::panels(cycle, "Cycle-consistency loss per step"));
    }
    const std::vector<std::string> axes = {"mcq acc", "retrieval acc", "retrieval mAP", "multilabel mAP", "multilabel nDCG",
                                           "open score / 5"};
    std::vector<std::pair<std::string, std::vector<double>>> polys;
    for (const auto& st : run.stages) {
        if (!st.eval) {
            continue;
        }
        polys.push_back({st.stage,
                         {detail::task_metric(st.eval, "mcq", "accuracy").value_or(0.0),
                          detail::task_metric(st.eval, "retrieval", "accuracy").value_or(0.0),
                          detail::task_metric(st.eval, "retrieval", "map").value_or(0.0),
                          detail::task_metric(st.eval, "multilabel", "map").value_or(0.0),
                          detail::task_metric(st.eval, "multilabel", "ndcg").value_or(0.0),
                          detail::task_metric(st.eval, "open", "score").value_or(0.0) / 5.0}});
    }
    if (!polys.empty()) {
        write_text(dest / "metric_radar.svg", svg::radar(axes, polys));
    }
}

}  // namespace exo2ego::cli
