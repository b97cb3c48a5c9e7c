// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Procedural paired-view world. An episode is an agent on an N x N grid
// walking between objects and acting on them; every raw frame has a latent
// state z (agent position, current verb/object one-hots, per-episode
// sinusoids). Two renderers turn an episode into views:
//
//   gridworld  exo = full occupancy channels seen from view v (the grid is
//              rotated by 90 degrees per exo index), ego = (2r+1)^2 crop
//              centred on the agent
//   linear     exo_v = M_exo[v] z, ego = M_ego z, so exo_v = T*_v ego with
//              T*_v = M_exo[v] M_ego^-1

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "exo2ego/common/error.hpp"
#include "exo2ego/common/hash.hpp"
#include "exo2ego/common/matrix.hpp"
#include "exo2ego/common/rng.hpp"
#include "exo2ego/corpus/narration.hpp"

namespace exo2ego::synth {

enum class RenderMode { gridworld, linear };
enum class View { ego, exo };

inline const char* to_string(RenderMode m) { return m == RenderMode::linear ? "linear" : "gridworld"; }
inline const char* to_string(View v) { return v == View::ego ? "ego" : "exo"; }

inline RenderMode parse_render_mode(const std::string& s) {
    if (s == "linear") {
        return RenderMode::linear;
    }
    require(s == "gridworld", fmt::format("unknown render mode '{}'", s));
    return RenderMode::gridworld;
}

inline constexpr std::array<const char*, 8> kVerbPhrases = {"picks up", "puts down", "opens", "closes",
                                                            "washes",   "cuts",      "stirs", "pours"};
inline constexpr std::array<const char*, 10> kObjectNames = {"bowl", "bottle", "cup",   "drawer", "knife",
                                                             "pan",  "plate",  "spoon", "sponge", "lid"};

struct WorldConfig {
    RenderMode mode = RenderMode::linear;
    int grid = 5;               ///< N
    int ego_radius = 1;         ///< r
    int exo_views = 4;          ///< 1..5
    int n_verbs = 6;
    int n_objects = 6;
    int actions = 8;            ///< program length per episode
    double action_gap_s = 2.0;  ///< mean spacing between actions
    double fps = 8.0;
    int d_z = 32;               ///< latent width; also the frame width in linear mode
    std::uint64_t world_seed = 7;

    double duration_s() const { return action_gap_s * actions; }
    int raw_frames() const { return static_cast<int>(std::lround(duration_s() * fps)); }
    int channels() const { return 1 + n_objects + n_verbs; }
    int ego_width() const { return ego_cells() * channels(); }
    int ego_cells() const { return (2 * ego_radius + 1) * (2 * ego_radius + 1); }

    int frame_dim(View v) const {
        if (mode == RenderMode::linear) {
            return d_z;
        }
        return v == View::ego ? ego_width() : grid * grid * channels();
    }

    void validate() const {
        require(grid >= 2, "grid must be at least 2");
        require(ego_radius >= 0, "ego_radius must be non-negative");
        require(exo_views >= 1 && exo_views <= 5, "exo_views must be in [1, 5]");
        require(n_verbs >= 1 && n_verbs <= static_cast<int>(kVerbPhrases.size()),
                fmt::format("n_verbs must be in [1, {}]", kVerbPhrases.size()));
        require(n_objects >= 1 && n_objects <= static_cast<int>(kObjectNames.size()),
                fmt::format("n_objects must be in [1, {}]", kObjectNames.size()));
        require(n_objects <= grid * grid, fmt::format("infeasible world: {} objects do not fit on a {}x{} grid",
                                                      n_objects, grid, grid));
        require(actions >= 1, "actions must be positive");
        require(action_gap_s > 0.0 && fps > 0.0, "action_gap_s and fps must be positive");
        require(raw_frames() >= 1, "episode has no frames");
        require(d_z >= 2 + n_verbs + n_objects,
                fmt::format("d_z = {} cannot hold position + {} verbs + {} objects", d_z, n_verbs, n_objects));
    }
};

struct Action {
    double t = 0.0;
    int verb = 0;
    int object = 0;

    bool operator==(const Action&) const = default;
};

struct Cell {
    int row = 0;
    int col = 0;

    bool operator==(const Cell&) const = default;
};

struct Episode {
    std::uint64_t seed = 0;
    std::string id;
    double duration_s = 0.0;
    double fps = 0.0;
    std::vector<Action> program;
    std::vector<Cell> object_cells;  ///< indexed by object
    std::vector<Cell> agent;         ///< per raw frame
    std::vector<int> segment;        ///< per raw frame: index of the current action
    Matrix<double> latent;           ///< raw frames x d_z

    int frames() const { return static_cast<int>(agent.size()); }
    double frame_time(int j) const { return static_cast<double>(j) / fps; }
};

inline std::string episode_id(std::uint64_t seed) { return fmt::format("ep{:06d}", seed); }

namespace detail {

/// Manhattan path from a to b, rows first; includes both ends.
inline std::vector<Cell> grid_path(Cell a, Cell b) {
    std::vector<Cell> path{a};
    Cell c = a;
    while (c.row != b.row) {
        c.row += b.row > c.row ? 1 : -1;
        path.push_back(c);
    }
    while (c.col != b.col) {
        c.col += b.col > c.col ? 1 : -1;
        path.push_back(c);
    }
    return path;
}

inline int nearest_action(const std::vector<Action>& program, double t) {
    int best = 0;
    for (int k = 1; k < static_cast<int>(program.size()); ++k) {
        if (std::abs(program[k].t - t) < std::abs(program[best].t - t)) {
            best = k;
        }
    }
    return best;
}

}  // namespace detail

/// Deterministic in (seed, cfg).
inline Episode gen_episode(std::uint64_t seed, const WorldConfig& cfg) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0xe915));
    Episode ep;
    ep.seed = seed;
    ep.id = episode_id(seed);
    ep.duration_s = cfg.duration_s();
    ep.fps = cfg.fps;

    std::vector<int> cells(static_cast<std::size_t>(cfg.grid * cfg.grid));
    for (std::size_t i = 0; i < cells.size(); ++i) {
        cells[i] = static_cast<int>(i);
    }
    rng.shuffle(cells);
    for (int o = 0; o < cfg.n_objects; ++o) {
        ep.object_cells.push_back({cells[o] / cfg.grid, cells[o] % cfg.grid});
    }

    const double gap = cfg.action_gap_s;
    for (int k = 0; k < cfg.actions; ++k) {
        Action a;
        a.t = gap * (k + 0.5 + rng.uniform(-0.2, 0.2));
        a.verb = static_cast<int>(rng.index(cfg.n_verbs));
        a.object = static_cast<int>(rng.index(cfg.n_objects));
        ep.program.push_back(a);
    }

    // The agent rests at an object for the first and last quarter of each
    // gap and walks the Manhattan path in between.
    const int n_frames = cfg.raw_frames();
    for (int j = 0; j < n_frames; ++j) {
        const double t = ep.frame_time(j);
        const auto& prog = ep.program;
        Cell pos = ep.object_cells[prog.front().object];
        for (std::size_t k = 0; k + 1 < prog.size(); ++k) {
            if (t < prog[k].t || t >= prog[k + 1].t) {
                continue;
            }
            const auto path = detail::grid_path(ep.object_cells[prog[k].object], ep.object_cells[prog[k + 1].object]);
            const double p = (t - prog[k].t) / (prog[k + 1].t - prog[k].t);
            const double walk = std::clamp((p - 0.25) / 0.5, 0.0, 1.0);
            const auto step = static_cast<std::size_t>(std::floor(walk * static_cast<double>(path.size() - 1) + 0.5));
            pos = path[std::min(step, path.size() - 1)];
        }
        if (t >= prog.back().t) {
            pos = ep.object_cells[prog.back().object];
        }
        ep.agent.push_back(pos);
        ep.segment.push_back(detail::nearest_action(prog, t));
    }

    const int n_freq = (cfg.d_z - 2 - cfg.n_verbs - cfg.n_objects) / 2;
    std::vector<double> omega(n_freq), phase(n_freq);
    for (int f = 0; f < n_freq; ++f) {
        omega[f] = rng.uniform(0.5, 3.0);
        phase[f] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    ep.latent = Matrix<double>::Zero(n_frames, cfg.d_z);
    const double scale = cfg.grid > 1 ? 2.0 / (cfg.grid - 1) : 0.0;
    for (int j = 0; j < n_frames; ++j) {
        auto z = ep.latent.row(j);
        const Action& a = ep.program[ep.segment[j]];
        z(0) = ep.agent[j].row * scale - 1.0;
        z(1) = ep.agent[j].col * scale - 1.0;
        z(2 + a.verb) = 1.0;
        z(2 + cfg.n_verbs + a.object) = 1.0;
        const int base = 2 + cfg.n_verbs + cfg.n_objects;
        for (int f = 0; f < n_freq; ++f) {
            const double arg = omega[f] * ep.frame_time(j) + phase[f];
            z(base + 2 * f) = std::sin(arg);
            z(base + 2 * f + 1) = std::cos(arg);
        }
    }
    return ep;
}

inline std::string narration_text(const Action& a) {
    return fmt::format("C {} the {}", kVerbPhrases.at(a.verb), kObjectNames.at(a.object));
}

inline corpus::NarrationTrack narrate(const Episode& ep) {
    require(!ep.program.empty(), "empty program");
    corpus::NarrationTrack track;
    track.video_id = ep.id;
    track.duration_s = ep.duration_s;
    track.annotator_id = "template";
    for (const auto& a : ep.program) {
        track.entries.push_back({a.t, narration_text(a)});
    }
    return track;
}

/// Fixed view matrices of one world. Only the linear renderer uses them.
struct World {
    WorldConfig cfg;
    Matrix<double> m_ego;
    std::vector<Matrix<double>> m_exo;

    /// T*_v = M_exo[v] M_ego^-1.
    Matrix<double> ground_truth_map(int view) const {
        ensure(cfg.mode == RenderMode::linear, "ground-truth map exists only in linear mode");
        return m_exo.at(view) * m_ego.inverse();
    }

    std::string map_digest() const {
        Fnv1a h;
        for (int v = 0; v < cfg.exo_views; ++v) {
            const Matrix<double> t = ground_truth_map(v);
            h.update_values(std::span<const double>(t.data(), static_cast<std::size_t>(t.size())));
        }
        return h.hex();
    }
};

namespace detail {

/// Q1 diag(s) Q2 with Haar-ish orthogonal factors and singular values in
/// [0.5, 1.5]; condition number at most 3.
inline Matrix<double> well_conditioned(Rng& rng, int n) {
    auto orthogonal = [&] {
        Eigen::MatrixXd g(n, n);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            g.data()[i] = rng.normal();
        }
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        return Eigen::MatrixXd(qr.householderQ());
    };
    const Eigen::MatrixXd q1 = orthogonal();
    const Eigen::MatrixXd q2 = orthogonal();
    Eigen::VectorXd s(n);
    for (int i = 0; i < n; ++i) {
        s(i) = rng.uniform(0.5, 1.5);
    }
    return q1 * s.asDiagonal() * q2;
}

}  // namespace detail

inline World make_world(const WorldConfig& cfg) {
    cfg.validate();
    World w;
    w.cfg = cfg;
    if (cfg.mode == RenderMode::linear) {
        Rng rng(mix_seed(cfg.world_seed, 0x11ea));
        w.m_ego = detail::well_conditioned(rng, cfg.d_z);
        for (int v = 0; v < cfg.exo_views; ++v) {
            w.m_exo.push_back(detail::well_conditioned(rng, cfg.d_z));
        }
    }
    return w;
}

namespace detail {

inline Cell rotate_cell(Cell c, int quarter_turns, int n) {
    for (int q = 0; q < quarter_turns % 4; ++q) {
        c = {c.col, n - 1 - c.row};
    }
    return c;
}

/// Writes the occupancy channels of frame j as seen through cell_map.
template <class CellMap>
void paint_grid(const WorldConfig& cfg, const Episode& ep, int j, CellMap&& cell_map, Eigen::Ref<Eigen::RowVectorXd> out) {
    const int ch = cfg.channels();
    auto put = [&](Cell c, int channel) {
        const int slot = cell_map(c);
        if (slot >= 0) {
            out(slot * ch + channel) = 1.0;
        }
    };
    put(ep.agent[j], 0);
    for (int o = 0; o < cfg.n_objects; ++o) {
        put(ep.object_cells[o], 1 + o);
    }
    // The verb is visible at the agent's cell only while it is at the
    // object being acted on.
    const Action& a = ep.program[ep.segment[j]];
    if (ep.agent[j] == ep.object_cells[a.object]) {
        put(ep.agent[j], 1 + cfg.n_objects + a.verb);
    }
}

}  // namespace detail

/// Raw frames (ep.frames() x frame_dim(exo)) for exo camera `view`.
inline Matrix<double> render_exo(const World& w, const Episode& ep, int view) {
    const auto& cfg = w.cfg;
    require(view >= 0 && view < cfg.exo_views, fmt::format("exo view {} out of range", view));
    Matrix<double> out = Matrix<double>::Zero(ep.frames(), cfg.frame_dim(View::exo));
    if (cfg.mode == RenderMode::linear) {
        out = ep.latent * w.m_exo[view].transpose();
        return out;
    }
    const int n = cfg.grid;
    for (int j = 0; j < ep.frames(); ++j) {
        detail::paint_grid(cfg, ep, j, [&](Cell c) {
            const Cell r = detail::rotate_cell(c, view, n);
            return r.row * n + r.col;
        }, out.row(j));
    }
    return out;
}

inline Matrix<double> render_ego(const World& w, const Episode& ep) {
    const auto& cfg = w.cfg;
    Matrix<double> out = Matrix<double>::Zero(ep.frames(), cfg.frame_dim(View::ego));
    if (cfg.mode == RenderMode::linear) {
        out = ep.latent * w.m_ego.transpose();
        return out;
    }
    const int r = cfg.ego_radius;
    const int side = 2 * r + 1;
    for (int j = 0; j < ep.frames(); ++j) {
        const Cell centre = ep.agent[j];
        detail::paint_grid(cfg, ep, j, [&](Cell c) {
            const int dr = c.row - centre.row + r;
            const int dc = c.col - centre.col + r;
            if (dr < 0 || dr >= side || dc < 0 || dc >= side) {
                return -1;
            }
            return dr * side + dc;
        }, out.row(j));
    }
    return out;
}

}  // namespace exo2ego::synth
