#pragma once

// End-to-end incremental pipeline: per-keyframe relative motions feed window
// rotation averaging; translations and structure come from known-rotation
// solves that never feed back into the rotation estimates, so they may run
// inline or be deferred. Loop events trigger system-wide averaging and a
// direction-constrained known-rotation solve over sampled tracks.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ba.hpp"
#include "core.hpp"
#include "errors.hpp"
#include "krot.hpp"
#include "krot_tdc.hpp"
#include "metrics.hpp"
#include "relmotion.hpp"
#include "rotavg.hpp"

namespace linf::pipeline {

enum class KrotMode { inline_solve, deferred };

struct PipelineConfig {
    int window_size = 10;
    int loop_sample_size = 300;
    double alpha = 2.0 * M_PI / 180.0;  // direction-cone half angle (radians)
    KrotMode krot_mode = KrotMode::inline_solve;
    double krot_tol = 1e-6;
    int min_shared_tracks = 20;
    bool tdc_every_event = false;   // default: only at the final loop event
    bool skip_krot_stage = false;   // rotation-only run, used by compare_runtime
    uint64_t seed = 0;
    rotavg::RotAvgConfig rot_cfg;
    relmotion::RelMotionConfig rel_cfg;

    void validate() const {
        if (window_size < 2) throw BadParams("window_size must be at least 2");
        if (loop_sample_size < 2) throw BadParams("loop_sample_size too small");
        if (!(alpha > 0.0 && alpha < M_PI / 2)) throw AlphaOutOfRange();
    }
};

struct LoopEvent {
    int64_t at_frame = -1;
    std::vector<int64_t> matched_frames;  // all precede at_frame
};

struct PipelineResult {
    std::map<int64_t, KeyframePose> trajectory;
    std::map<int64_t, Rotation> rotations;
    std::map<int64_t, Vec3> map_points;
    std::map<int64_t, KeyframePose> trajectory_pre_closure;  // snapshot before the first loop event
    std::vector<std::string> log;
    std::vector<int64_t> step_frames;
    std::vector<double> rotavg_seconds;  // rotation-stage wall time per step
    bool completed = false;
};

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

inline std::vector<relmotion::Correspondence> shared_correspondences(const std::vector<FeatureTrack> &tracks,
                                                                     int64_t a, int64_t b) {
    std::vector<relmotion::Correspondence> out;
    for (const auto &tr : tracks) {
        const Observation *oa = tr.find(a), *ob = tr.find(b);
        if (oa && ob) out.push_back({oa->u, ob->u});
    }
    return out;
}

// Tracks restricted to a frame set, keeping only those with >= 2 views there.
inline std::vector<FeatureTrack> restrict_tracks(const std::vector<FeatureTrack> &tracks,
                                                 const std::set<int64_t> &frames) {
    std::vector<FeatureTrack> out;
    for (const auto &tr : tracks) {
        FeatureTrack sub;
        sub.track_id = tr.track_id;
        for (const auto &o : tr.observations)
            if (frames.count(o.frame_id)) sub.add(o.frame_id, o.u);
        if (sub.observations.size() >= 2) out.push_back(std::move(sub));
    }
    return out;
}

// Convert the estimator's frame-k epipolar translation into the frame-j
// baseline direction the covisibility graph stores (x_k = R x_j + t_e, and
// the baseline C_j -> C_k in frame-j coordinates is -R^T t_e).
inline Vec3 baseline_direction_frame_j(const Rotation &r_jk, const Vec3 &t_e) {
    return Vec3(-(r_jk.matrix().transpose() * t_e)).normalized();
}

struct KrotJob {
    int64_t frame = -1;
    std::map<int64_t, Rotation> rotations;  // snapshot over the window
    std::vector<FeatureTrack> tracks;       // restricted to the window
};

// Solve one window job and merge its centres into the trajectory by a
// similarity over the frames both already agree on. Rotations always come
// from the job snapshot; the similarity only transports centres.
inline void solve_and_merge(const KrotJob &job, const PipelineConfig &cfg,
                            std::map<int64_t, KeyframePose> &trajectory, std::vector<std::string> &log) {
    if (job.tracks.empty()) {
        log.push_back("krot frame=" + std::to_string(job.frame) + " status=skipped reason=no-tracks");
        return;
    }
    krot::KRotSolution sol;
    try {
        sol = krot::solve_krot(krot::build_krot(job.rotations, job.tracks), cfg.krot_tol);
    } catch (const Error &err) {
        log.push_back("krot frame=" + std::to_string(job.frame) + " status=infeasible detail=" + err.what());
        return;
    }
    log.push_back("krot frame=" + std::to_string(job.frame) + " status=ok gamma=" + fmt(sol.gamma_star));

    std::map<int64_t, KeyframePose> window_poses;
    for (const auto &[fid, t] : sol.translations)
        window_poses.emplace(fid, KeyframePose(job.rotations.at(fid), t));

    std::map<int64_t, KeyframePose> common_est, common_gt;
    for (const auto &[fid, p] : window_poses) {
        auto it = trajectory.find(fid);
        if (it != trajectory.end()) {
            common_est.emplace(fid, p);
            common_gt.emplace(fid, it->second);
        }
    }
    Similarity sim;  // identity when there is no prior trajectory to stitch to
    if (common_est.size() >= 3) {
        try {
            sim = align_similarity(common_est, common_gt).sim;
        } catch (const DegenerateConfiguration &) {
        }
    }
    for (const auto &[fid, p] : window_poses) {
        trajectory.insert_or_assign(fid, KeyframePose::from_centre(job.rotations.at(fid), sim.apply(p.centre())));
    }
}

}  // namespace detail

inline std::vector<LoopEvent> detect_loops_proximity(const std::map<int64_t, KeyframePose> &poses, double radius,
                                                     int min_gap = 10) {
    std::vector<LoopEvent> out;
    if (radius <= 0.0) return out;
    std::vector<std::pair<int64_t, Vec3>> seq;
    for (const auto &[fid, p] : poses) seq.emplace_back(fid, p.centre());
    for (size_t i = 0; i < seq.size(); ++i) {
        LoopEvent ev;
        ev.at_frame = seq[i].first;
        for (size_t j = 0; j + static_cast<size_t>(min_gap) <= i; ++j) {
            if ((seq[i].second - seq[j].second).norm() <= radius) ev.matched_frames.push_back(seq[j].first);
        }
        if (!ev.matched_frames.empty()) out.push_back(std::move(ev));
    }
    return out;
}

inline PipelineResult run_linf_slam(const std::vector<int64_t> &keyframes, const std::vector<FeatureTrack> &tracks,
                                    const std::vector<LoopEvent> &loops, const PipelineConfig &cfg = {}) {
    cfg.validate();
    PipelineResult out;
    if (keyframes.empty()) {
        out.completed = true;
        return out;
    }

    std::map<int64_t, LoopEvent> loop_at;
    int64_t last_event_frame = -1;
    for (const auto &l : loops) {
        loop_at[l.at_frame] = l;
        last_event_frame = std::max(last_event_frame, l.at_frame);
    }

    CovisibilityGraph graph;
    graph.add_node(keyframes[0]);
    rotavg::RotationEstimate rot_est;
    rot_est.rotations.emplace(keyframes[0], Rotation());
    std::vector<detail::KrotJob> queue;
    bool pre_closure_taken = false;

    auto drain_queue = [&]() {
        for (const auto &job : queue) detail::solve_and_merge(job, cfg, out.trajectory, out.log);
        queue.clear();
    };

    for (size_t i = 0; i < keyframes.size(); ++i) {
        const int64_t t = keyframes[i];
        double rot_seconds = 0.0;  // rotation-averaging solve time only
        if (i > 0) {
            const size_t s = i >= static_cast<size_t>(cfg.window_size) ? i - cfg.window_size + 1 : 0;
            const size_t overlap = s > 0 ? s - 1 : 0;  // include one frame before the window

            for (size_t j = overlap; j < i; ++j) {
                const int64_t fj = keyframes[j];
                if (graph.has_edge(fj, t)) continue;
                auto corrs = detail::shared_correspondences(tracks, fj, t);
                if (static_cast<int>(corrs.size()) < cfg.min_shared_tracks) continue;
                relmotion::RelMotionConfig rcfg = cfg.rel_cfg;
                rcfg.ransac.seed = cfg.seed ^ (static_cast<uint64_t>(fj) << 20) ^ static_cast<uint64_t>(t);
                try {
                    const auto rel = relmotion::estimate_relative(corrs, rcfg);
                    CovisEdge e;
                    e.j = fj;
                    e.k = t;
                    e.r_jk = rel.r_jk;
                    e.weight = static_cast<int>(corrs.size());
                    if (rel.t_e) e.t_e = detail::baseline_direction_frame_j(rel.r_jk, *rel.t_e);
                    graph.add_edge(e);
                } catch (const Error &err) {
                    out.log.push_back("relmotion pair=" + std::to_string(fj) + "," + std::to_string(t) +
                                      " status=failed detail=" + err.what());
                }
            }

            CovisibilityGraph wgraph;
            try {
                wgraph = graph_window(graph, keyframes[overlap], t);
                const auto r0 = std::chrono::steady_clock::now();
                rot_est = rotavg::incremental_update(rot_est, wgraph, t, cfg.rot_cfg);
                rot_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - r0).count();
            } catch (const Error &err) {
                throw DisconnectedGraph("track starvation at frame " + std::to_string(t) + ": " + err.what());
            }

            // Known-rotation stage: a pure snapshot job, inline or queued.
            detail::KrotJob job;
            job.frame = t;
            std::set<int64_t> wframes;
            for (int64_t id : wgraph.nodes()) wframes.insert(id);
            for (int64_t id : wframes) job.rotations.emplace(id, rot_est.rotations.at(id));
            job.tracks = detail::restrict_tracks(tracks, wframes);
            if (cfg.skip_krot_stage) {
                // benchmark mode: rotations only
            } else if (cfg.krot_mode == KrotMode::inline_solve) {
                detail::solve_and_merge(job, cfg, out.trajectory, out.log);
            } else {
                queue.push_back(std::move(job));
            }
        } else {
            out.trajectory.emplace(t, KeyframePose());
            out.log.push_back("init frame=" + std::to_string(t));
        }

        auto ev = loop_at.find(t);
        if (ev != loop_at.end()) {
            // Deferred jobs must land before closure so the merge order matches
            // the inline schedule.
            drain_queue();
            if (!pre_closure_taken) {
                out.trajectory_pre_closure = out.trajectory;
                pre_closure_taken = true;
            }
            for (int64_t m : ev->second.matched_frames) {
                if (graph.has_edge(m, t)) continue;
                auto corrs = detail::shared_correspondences(tracks, m, t);
                if (static_cast<int>(corrs.size()) < cfg.min_shared_tracks) continue;
                relmotion::RelMotionConfig rcfg = cfg.rel_cfg;
                rcfg.ransac.seed = cfg.seed ^ (static_cast<uint64_t>(m) << 20) ^ static_cast<uint64_t>(t);
                try {
                    const auto rel = relmotion::estimate_relative(corrs, rcfg);
                    CovisEdge e;
                    e.j = m;
                    e.k = t;
                    e.r_jk = rel.r_jk;
                    e.weight = static_cast<int>(corrs.size());
                    if (rel.t_e) e.t_e = detail::baseline_direction_frame_j(rel.r_jk, *rel.t_e);
                    graph.add_edge(e);
                    out.log.push_back("loop edge=" + std::to_string(m) + "," + std::to_string(t));
                } catch (const Error &err) {
                    out.log.push_back("loop pair=" + std::to_string(m) + "," + std::to_string(t) +
                                      " status=failed detail=" + err.what());
                }
            }
            const auto r0 = std::chrono::steady_clock::now();
            rot_est = rotavg::irls_rotation_average(graph, rot_est.rotations, cfg.rot_cfg);
            rot_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - r0).count();
            out.log.push_back("rotavg full frame=" + std::to_string(t) + " cost=" + detail::fmt(rot_est.cost));

            if (cfg.tdc_every_event || t == last_event_frame) {
                // Direction constraints from every loop edge with an epipolar
                // direction; structure from a uniform sample of tracks.
                std::vector<tdc::DirectionEdge> dirs;
                for (const auto &l : loops) {
                    if (l.at_frame > t) continue;
                    for (int64_t m : l.matched_frames) {
                        const CovisEdge *e = graph.edge(m, l.at_frame);
                        if (!e || !e->t_e) continue;
                        tdc::DirectionEdge de;
                        de.j = e->j;
                        de.k = e->k;
                        de.t_world = tdc::world_direction(rot_est.rotations.at(e->j), *e->t_e);
                        dirs.push_back(de);
                    }
                }
                std::set<int64_t> solved;
                for (size_t j = 0; j <= i; ++j) solved.insert(keyframes[j]);
                auto candidates = detail::restrict_tracks(tracks, solved);
                std::vector<FeatureTrack> sample;
                if (static_cast<int>(candidates.size()) <= cfg.loop_sample_size) {
                    sample = candidates;
                } else {
                    std::mt19937_64 rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
                    std::vector<size_t> idx(candidates.size());
                    std::iota(idx.begin(), idx.end(), size_t{0});
                    std::shuffle(idx.begin(), idx.end(), rng);
                    idx.resize(cfg.loop_sample_size);
                    std::sort(idx.begin(), idx.end());
                    for (size_t id : idx) sample.push_back(candidates[id]);
                }
                try {
                    const auto sol = tdc::solve_tdc(tdc::build_tdc(rot_est.rotations, sample, dirs, cfg.alpha),
                                                    cfg.krot_tol);
                    out.log.push_back("krot_tdc frame=" + std::to_string(t) +
                                      " status=ok gamma=" + detail::fmt(sol.gamma_star));
                    std::map<int64_t, KeyframePose> tdc_poses;
                    for (const auto &[fid, c] : sol.centres)
                        tdc_poses.emplace(fid, KeyframePose::from_centre(rot_est.rotations.at(fid), c));
                    // The closed map replaces the trajectory; frames the sample
                    // missed are carried over through the stitching similarity.
                    std::map<int64_t, KeyframePose> common_est, common_gt;
                    for (const auto &[fid, p] : tdc_poses) {
                        auto it = out.trajectory.find(fid);
                        if (it != out.trajectory.end()) {
                            common_est.emplace(fid, p);
                            common_gt.emplace(fid, it->second);
                        }
                    }
                    Similarity sim;
                    if (common_est.size() >= 3) {
                        try {
                            sim = align_similarity(common_est, common_gt).sim;
                        } catch (const DegenerateConfiguration &) {
                        }
                    }
                    for (const auto &[fid, p] : tdc_poses) {
                        out.trajectory.insert_or_assign(
                            fid, KeyframePose::from_centre(rot_est.rotations.at(fid), sim.apply(p.centre())));
                    }
                } catch (const Error &err) {
                    out.log.push_back("krot_tdc frame=" + std::to_string(t) +
                                      " status=infeasible detail=" + err.what());
                }
            }
        }

        out.step_frames.push_back(t);
        out.rotavg_seconds.push_back(rot_seconds);
    }

    drain_queue();
    out.rotations = rot_est.rotations;
    // Trajectory rotations follow the final averaged estimates; centres keep
    // their stitched values.
    for (auto &[fid, p] : out.trajectory) {
        auto it = out.rotations.find(fid);
        if (it != out.rotations.end()) p = KeyframePose::from_centre(it->second, p.centre());
    }

    // Final full-map triangulation with fixed poses.
    for (const auto &tr : tracks) {
        try {
            const auto [mp, gamma] = krot::triangulate_point_linf(tr, out.trajectory);
            out.map_points[tr.track_id] = mp.x;
        } catch (const Error &) {
            // underconstrained or cheirality-infeasible tracks are skipped
        }
    }
    out.completed = true;
    return out;
}

struct RuntimeSeries {
    std::vector<int64_t> frames;
    std::vector<double> rotavg_seconds;
    std::vector<double> ba_seconds;
};

// Wall-clock comparison of the two incremental back-ends on the same
// sequence: per-step window rotation averaging vs per-step windowed BA.
inline RuntimeSeries compare_runtime(const std::vector<int64_t> &keyframes, const std::vector<FeatureTrack> &tracks,
                                     const PipelineConfig &cfg = {}, const ba::BaConfig &ba_cfg = {}) {
    RuntimeSeries out;
    PipelineConfig rot_cfg = cfg;
    rot_cfg.skip_krot_stage = true;  // the comparison is rotation averaging vs BA
    const auto linf_run = run_linf_slam(keyframes, tracks, {}, rot_cfg);

    std::vector<ba::LoopEvent> no_loops;
    const auto ba_run = ba::run_ba_slam(keyframes, tracks, no_loops, ba_cfg);
    if (!ba_run.init_ok || ba_run.step_seconds.empty()) return out;

    // BA timings start after its initialization pair; align both series on
    // the trailing frames they have in common.
    std::map<int64_t, double> linf_by_frame;
    for (size_t i = 0; i < linf_run.step_frames.size(); ++i)
        linf_by_frame[linf_run.step_frames[i]] = linf_run.rotavg_seconds[i];
    const size_t nba = ba_run.step_seconds.size();
    for (size_t i = 0; i < nba; ++i) {
        const int64_t fid = keyframes[keyframes.size() - nba + i];
        auto it = linf_by_frame.find(fid);
        if (it == linf_by_frame.end()) continue;
        out.frames.push_back(fid);
        out.rotavg_seconds.push_back(it->second);
        out.ba_seconds.push_back(ba_run.step_seconds[i]);
    }
    return out;
}

inline void write_runtime_csv(const std::string &path, const RuntimeSeries &series) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << std::setprecision(17) << "frame_id,rotavg_seconds,ba_seconds\n";
    for (size_t i = 0; i < series.frames.size(); ++i) {
        f << series.frames[i] << ',' << series.rotavg_seconds[i] << ',' << series.ba_seconds[i] << '\n';
    }
}

}  // namespace linf::pipeline
