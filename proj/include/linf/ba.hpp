#pragma once

// Minimal bundle adjustment (Levenberg-Marquardt over poses and points with
// analytic Jacobians) and a windowed BA-SLAM loop used as the comparison
// baseline for the L-infinity pipeline.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "linf/core.hpp"
#include "linf/errors.hpp"
#include "linf/relmotion.hpp"

namespace linf::ba {

enum class RobustLoss { none, cauchy };

struct BaConfig {
    int max_iter = 100;
    double lm_damping_init = 1e-4;
    double lm_damping_cap = 1e12;
    RobustLoss loss = RobustLoss::none;
    double cauchy_scale = 1e-2;                  // normalized units
    double outlier_distance_threshold = 150.0;   // world units, SLAM-loop heuristic
    int window = 10;
    double min_parallax_deg = 1.0;               // map-initialization pair test
};

struct BaResult {
    std::map<int64_t, KeyframePose> poses;
    std::map<int64_t, Vec3> points;
    double cost = 0.0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline double rho(double s, const BaConfig &cfg) {  // on squared residual s
    if (cfg.loss == RobustLoss::none) return s;
    const double c2 = cfg.cauchy_scale * cfg.cauchy_scale;
    return c2 * std::log1p(s / c2);
}

inline double rho_weight(double s, const BaConfig &cfg) {  // d rho / d s
    if (cfg.loss == RobustLoss::none) return 1.0;
    const double c2 = cfg.cauchy_scale * cfg.cauchy_scale;
    return 1.0 / (1.0 + s / c2);
}

// Residual r = u - pi(R X + t) and its Jacobians with respect to the
// right-tangent rotation update R <- R Exp(delta), t, and X.
struct ObsJacobian {
    Vec2 r;
    Eigen::Matrix<double, 2, 3> d_rot, d_t, d_x;
    bool valid = false;  // positive depth
};

inline ObsJacobian linearize(const KeyframePose &pose, const Vec3 &x, const Vec2 &u) {
    ObsJacobian out;
    const Vec3 p = pose.r.matrix() * x + pose.t;
    if (p.z() <= kDepthTol) return out;
    out.valid = true;
    out.r = u - Vec2(p.x() / p.z(), p.y() / p.z());
    Eigen::Matrix<double, 2, 3> dpi;
    dpi << 1.0 / p.z(), 0.0, -p.x() / (p.z() * p.z()), 0.0, 1.0 / p.z(), -p.y() / (p.z() * p.z());
    out.d_x = -dpi * pose.r.matrix();
    out.d_t = -dpi;
    out.d_rot = dpi * pose.r.matrix() * so3::hat(x);  // d(R Exp(d) x)/dd = -R [x]_x
    return out;
}

}  // namespace detail

// Max abs deviation between the analytic Jacobian and central differences.
inline double jacobian_check(const KeyframePose &pose, const Vec3 &x, const Vec2 &u, double step = 1e-6) {
    const auto base = detail::linearize(pose, x, u);
    if (!base.valid) throw NonPositiveDepth();
    auto resid = [&](const KeyframePose &p, const Vec3 &px) {
        const Vec3 q = p.r.matrix() * px + p.t;
        return Vec2(u - Vec2(q.x() / q.z(), q.y() / q.z()));
    };
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
        Vec3 d = Vec3::Zero();
        d[i] = step;
        const KeyframePose pp(pose.r * Rotation::exp(d), pose.t);
        const KeyframePose pm(pose.r * Rotation::exp(-d), pose.t);
        const Vec2 fd = (resid(pp, x) - resid(pm, x)) / (2.0 * step);
        worst = std::max(worst, (fd - base.d_rot.col(i)).lpNorm<Eigen::Infinity>());

        const Vec2 fdt = (resid(KeyframePose(pose.r, pose.t + d), x) - resid(KeyframePose(pose.r, pose.t - d), x)) /
                         (2.0 * step);
        worst = std::max(worst, (fdt - base.d_t.col(i)).lpNorm<Eigen::Infinity>());

        const Vec2 fdx = (resid(pose, x + d) - resid(pose, x - d)) / (2.0 * step);
        worst = std::max(worst, (fdx - base.d_x.col(i)).lpNorm<Eigen::Infinity>());
    }
    return worst;
}

// Levenberg-Marquardt bundle adjustment. Frozen frames keep their poses; one
// translation coordinate of the first free frame is additionally pinned to
// remove the scale gauge when any frame is frozen.
inline BaResult bundle_adjust(const std::map<int64_t, KeyframePose> &poses, const std::map<int64_t, Vec3> &points,
                              const std::vector<FeatureTrack> &tracks, const std::set<int64_t> &frozen,
                              const BaConfig &cfg = {}) {
    if (cfg.max_iter <= 0 || cfg.lm_damping_init <= 0.0) throw BadParams("invalid BA configuration");
    BaResult res;
    res.poses = poses;
    res.points = points;

    std::map<int64_t, int> pose_idx, point_idx;
    for (const auto &[fid, p] : poses)
        if (!frozen.count(fid)) pose_idx[fid] = static_cast<int>(pose_idx.size());
    for (const auto &[tid, x] : points) point_idx[tid] = static_cast<int>(point_idx.size());
    const int np = static_cast<int>(pose_idx.size()), nx = static_cast<int>(point_idx.size());
    const int dim = 6 * np + 3 * nx;

    // scale gauge: pin one translation coordinate of the first free frame
    int pinned_coord = -1;
    if (!frozen.empty() && np > 0) {
        const int64_t fid = pose_idx.begin()->first;
        int axis = 0;
        poses.at(fid).t.cwiseAbs().maxCoeff(&axis);
        pinned_coord = 6 * pose_idx.at(fid) + 3 + axis;
    }

    struct Obs {
        int64_t fid, tid;
        Vec2 u;
    };
    std::vector<Obs> obs;
    for (const auto &tr : tracks) {
        if (!point_idx.count(tr.track_id)) continue;
        for (const auto &o : tr.observations)
            if (poses.count(o.frame_id)) obs.push_back({o.frame_id, tr.track_id, o.u});
    }

    auto eval_cost = [&](const std::map<int64_t, KeyframePose> &ps, const std::map<int64_t, Vec3> &xs) {
        double c = 0.0;
        for (const auto &o : obs) {
            const Vec3 p = ps.at(o.fid).r.matrix() * xs.at(o.tid) + ps.at(o.fid).t;
            if (p.z() <= kDepthTol) return std::numeric_limits<double>::infinity();
            const Vec2 r = o.u - Vec2(p.x() / p.z(), p.y() / p.z());
            c += detail::rho(r.squaredNorm(), cfg);
        }
        return c;
    };

    double cost = eval_cost(res.poses, res.points);
    if (!std::isfinite(cost)) throw NonPositiveDepth("BA initialised with a point behind a camera");
    double lambda = cfg.lm_damping_init;

    for (res.iterations = 0; res.iterations < cfg.max_iter; ++res.iterations) {
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
        for (const auto &o : obs) {
            const auto lin = detail::linearize(res.poses.at(o.fid), res.points.at(o.tid), o.u);
            if (!lin.valid) continue;
            const double w = detail::rho_weight(lin.r.squaredNorm(), cfg);
            Eigen::Matrix<double, 2, 9> j;
            j << lin.d_rot, lin.d_t, lin.d_x;
            int cols[9];
            const auto pit = pose_idx.find(o.fid);
            for (int i = 0; i < 6; ++i) cols[i] = (pit == pose_idx.end()) ? -1 : 6 * pit->second + i;
            for (int i = 0; i < 3; ++i) cols[6 + i] = 6 * np + 3 * point_idx.at(o.tid) + i;
            for (int a = 0; a < 9; ++a) {
                if (cols[a] < 0 || cols[a] == pinned_coord) continue;
                g[cols[a]] -= w * j.col(a).dot(lin.r);
                for (int b = 0; b < 9; ++b) {
                    if (cols[b] < 0 || cols[b] == pinned_coord) continue;
                    h(cols[a], cols[b]) += w * j.col(a).dot(j.col(b));
                }
            }
        }

        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd hd = h;
            for (int i = 0; i < dim; ++i) hd(i, i) += lambda * std::max(1e-12, h(i, i));
            if (pinned_coord >= 0) hd(pinned_coord, pinned_coord) = 1.0;
            const Eigen::VectorXd step = hd.ldlt().solve(g);
            if (!step.allFinite()) {
                lambda *= 10.0;
                if (lambda > cfg.lm_damping_cap) throw DivergedOrStalled("LM damping cap exceeded");
                continue;
            }
            std::map<int64_t, KeyframePose> ps = res.poses;
            std::map<int64_t, Vec3> xs = res.points;
            for (const auto &[fid, bi] : pose_idx) {
                ps.at(fid).r = ps.at(fid).r * Rotation::exp(step.segment<3>(6 * bi));
                ps.at(fid).t += step.segment<3>(6 * bi + 3);
            }
            for (const auto &[tid, bi] : point_idx) xs.at(tid) += step.segment<3>(6 * np + 3 * bi);

            const double trial = eval_cost(ps, xs);
            if (std::isfinite(trial) && trial <= cost) {
                const double rel = (cost - trial) / std::max(cost, 1e-300);
                res.poses = std::move(ps);
                res.points = std::move(xs);
                cost = trial;
                lambda = std::max(1e-12, lambda / 3.0);
                accepted = true;
                if (rel < 1e-10 || cost < 1e-30) {
                    res.converged = true;
                    res.cost = cost;
                    ++res.iterations;
                    return res;
                }
            } else {
                lambda *= 10.0;
                if (lambda > cfg.lm_damping_cap) throw DivergedOrStalled("LM damping cap exceeded");
            }
        }
    }
    res.cost = cost;
    return res;
}

// Midpoint triangulation of a track from the two widest-baseline solved views.
inline std::optional<Vec3> midpoint_triangulate(const FeatureTrack &tr, const std::map<int64_t, KeyframePose> &poses) {
    const Observation *a = nullptr, *b = nullptr;
    double best = -1.0;
    for (size_t i = 0; i < tr.observations.size(); ++i) {
        if (!poses.count(tr.observations[i].frame_id)) continue;
        for (size_t j = i + 1; j < tr.observations.size(); ++j) {
            if (!poses.count(tr.observations[j].frame_id)) continue;
            const double base = (poses.at(tr.observations[i].frame_id).centre() -
                                 poses.at(tr.observations[j].frame_id).centre())
                                    .norm();
            if (base > best) {
                best = base;
                a = &tr.observations[i];
                b = &tr.observations[j];
            }
        }
    }
    if (!a || best <= 0.0) return std::nullopt;
    const KeyframePose &pa = poses.at(a->frame_id), &pb = poses.at(b->frame_id);
    const Vec3 da = pa.r.matrix().transpose() * Vec3(a->u.x(), a->u.y(), 1.0);
    const Vec3 db = pb.r.matrix().transpose() * Vec3(b->u.x(), b->u.y(), 1.0);
    const Vec3 ca = pa.centre(), cb = pb.centre();
    Eigen::Matrix<double, 3, 2> m;
    m.col(0) = da;
    m.col(1) = -db;
    const Eigen::Vector2d z = m.colPivHouseholderQr().solve(Vec3(cb - ca));
    if (!z.allFinite() || z[0] <= 0.0 || z[1] <= 0.0) return std::nullopt;
    return 0.5 * ((ca + z[0] * da) + (cb + z[1] * db));
}

struct LoopEvent {
    int64_t at_frame = -1, matched_frame = -1;
};

struct BaSlamResult {
    std::map<int64_t, KeyframePose> poses;
    std::map<int64_t, Vec3> points;
    bool init_ok = false;
    std::vector<int64_t> init_deferred;      // frames seen before initialization succeeded
    std::optional<int64_t> disconnected_at;  // keyframe that lost every track
    std::vector<double> step_seconds;        // per-keyframe optimisation wall time
    bool completed = false;
};

// Windowed BA-SLAM loop: initialise from the first adequate pair, spawn
// points by midpoint triangulation, windowed BA per keyframe, full BA on loop
// events, distance-based track removal.
inline BaSlamResult run_ba_slam(const std::vector<int64_t> &keyframes, const std::vector<FeatureTrack> &tracks,
                                const std::vector<LoopEvent> &loops, const BaConfig &cfg = {}) {
    BaSlamResult out;
    if (keyframes.empty()) return out;

    auto shared = [&](int64_t a, int64_t b) {
        std::vector<relmotion::Correspondence> c;
        std::vector<const FeatureTrack *> which;
        for (const auto &tr : tracks) {
            const Observation *oa = tr.find(a), *ob = tr.find(b);
            if (oa && ob) {
                c.push_back({oa->u, ob->u});
                which.push_back(&tr);
            }
        }
        return std::pair{std::move(c), std::move(which)};
    };

    // Step 1: map initialization from the first pair with adequate parallax
    size_t init_at = 0;
    for (size_t i = 1; i < keyframes.size() && !out.init_ok; ++i) {
        auto [corrs, which] = shared(keyframes[0], keyframes[i]);
        if (corrs.size() < 8) {
            out.init_deferred.push_back(keyframes[i]);
            continue;
        }
        relmotion::RelativeMotion rel;
        try {
            rel = relmotion::estimate_relative(corrs);
        } catch (const Error &) {
            out.init_deferred.push_back(keyframes[i]);
            continue;
        }
        if (rel.method != relmotion::Method::essential || !rel.t_e) {
            out.init_deferred.push_back(keyframes[i]);
            continue;  // low parallax: defer initialization
        }
        // median parallax of the pair must clear the configured floor
        std::vector<double> par;
        for (const auto &c : corrs) {
            const Vec3 va = (rel.r_jk.matrix() * Vec3(c.u_j.x(), c.u_j.y(), 1.0)).normalized();
            const Vec3 vb = Vec3(c.u_k.x(), c.u_k.y(), 1.0).normalized();
            par.push_back(std::acos(std::clamp(va.dot(vb), -1.0, 1.0)));
        }
        std::nth_element(par.begin(), par.begin() + par.size() / 2, par.end());
        if (par[par.size() / 2] < cfg.min_parallax_deg * M_PI / 180.0) {
            out.init_deferred.push_back(keyframes[i]);
            continue;
        }

        out.poses.emplace(keyframes[0], KeyframePose());
        out.poses.emplace(keyframes[i], KeyframePose(rel.r_jk, *rel.t_e));
        for (const FeatureTrack *tr : which)
            if (auto x = midpoint_triangulate(*tr, out.poses)) out.points[tr->track_id] = *x;
        if (out.points.size() < 8) {
            out.poses.clear();
            out.points.clear();
            out.init_deferred.push_back(keyframes[i]);
            continue;
        }
        out.init_ok = true;
        init_at = i;
    }
    if (!out.init_ok) return out;  // initialization failed on the whole sequence

    std::set<int64_t> solved;
    for (const auto &[fid, p] : out.poses) solved.insert(fid);
    std::vector<int64_t> order;  // solved frames in keyframe order
    for (size_t i = 0; i <= init_at; ++i)
        if (solved.count(keyframes[i])) order.push_back(keyframes[i]);

    auto spawn_points = [&]() {
        for (const auto &tr : tracks) {
            if (out.points.count(tr.track_id)) continue;
            int views = 0;
            for (const auto &o : tr.observations) views += solved.count(o.frame_id) ? 1 : 0;
            if (views < 2) continue;
            if (auto x = midpoint_triangulate(tr, out.poses)) out.points[tr.track_id] = *x;
        }
    };

    auto prune_outliers = [&]() {
        Vec3 centroid = Vec3::Zero();
        for (const auto &[fid, p] : out.poses) centroid += p.centre();
        centroid /= static_cast<double>(out.poses.size());
        for (auto it = out.points.begin(); it != out.points.end();) {
            if ((it->second - centroid).norm() > cfg.outlier_distance_threshold)
                it = out.points.erase(it);
            else
                ++it;
        }
    };

    auto window_tracks = [&](const std::set<int64_t> &frames) {
        std::vector<FeatureTrack> sel;
        for (const auto &tr : tracks) {
            if (!out.points.count(tr.track_id)) continue;
            for (const auto &o : tr.observations)
                if (frames.count(o.frame_id)) {
                    sel.push_back(tr);
                    break;
                }
        }
        return sel;
    };

    auto run_window = [&](bool full) {
        std::set<int64_t> win;
        if (full) {
            win = solved;
        } else {
            for (auto it = order.rbegin(); it != order.rend() && win.size() < static_cast<size_t>(cfg.window); ++it)
                win.insert(*it);
        }
        std::set<int64_t> frozen;
        for (int64_t fid : solved)
            if (!win.count(fid)) frozen.insert(fid);
        if (frozen.empty()) frozen.insert(order.front());
        const auto sel = window_tracks(win);
        const auto r = bundle_adjust(out.poses, out.points, sel, frozen, cfg);
        out.poses = r.poses;
        out.points = r.points;
    };

    for (size_t i = init_at + 1; i < keyframes.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const int64_t fid = keyframes[i];
        out.poses.emplace(fid, out.poses.at(order.back()));  // constant-position prediction
        solved.insert(fid);
        order.push_back(fid);
        spawn_points();
        prune_outliers();
        // a solved keyframe retaining zero mapped tracks disconnects the camera
        int live = 0;
        for (const auto &tr : tracks)
            if (out.points.count(tr.track_id) && tr.find(fid)) ++live;
        if (live == 0) {
            out.disconnected_at = fid;
            return out;
        }
        bool loop_here = false;
        for (const auto &l : loops) loop_here = loop_here || (l.at_frame == fid);
        try {
            run_window(loop_here);
        } catch (const DivergedOrStalled &) {
            // reported, not fatal: keep the last accepted state
        }
        const auto t1 = std::chrono::steady_clock::now();
        out.step_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    out.completed = true;
    return out;
}

}  // namespace linf::ba
