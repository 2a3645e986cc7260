#pragma once

// Synthetic scene generation: deterministic trajectories with bounded
// observation noise, used as the verification substrate for the solvers.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "core.hpp"
#include "errors.hpp"

namespace linf::synth {

enum class SceneKind { Circle, TwoLoop, Straight, PureRotation, WalkAndTurn };

struct NoiseModel {
    double pixel_sigma = 1.0 / 500.0;  // normalized-coordinate sigma (1px at f=500)
    double bound_sigmas = 3.0;         // hard truncation of the noise vector norm
    double outlier_rate = 0.0;         // probability an observation is replaced
    double direction_noise_deg = 0.0;  // perturbation applied to loop directions downstream

    double bound() const { return bound_sigmas * pixel_sigma; }
};

struct SceneParams {
    int frames = 20;
    int points = 100;
    double radius = 5.0;      // circle/two-loop radius; straight-line spacing scale
    double sweep_deg = 90.0;  // pure-rotation total yaw sweep
    double fov_limit = 0.8;   // max |u| coordinate accepted as visible
    NoiseModel noise;
};

struct SyntheticScene {
    SceneKind kind = SceneKind::Circle;
    std::map<int64_t, KeyframePose> gt_poses;
    std::vector<MapPoint> gt_points;
    std::vector<FeatureTrack> tracks;
    std::vector<std::pair<int64_t, int64_t>> loops;     // (at_frame, matched_frame)
    std::vector<std::pair<int64_t, int64_t>> outliers;  // (track_id, frame_id) labels
    double noise_bound = 0.0;                           // hard bound on injected noise norm
};

namespace detail {

inline Rotation look_at(const Vec3 &centre, const Vec3 &target, const Vec3 &up_hint = Vec3(0, -1, 0)) {
    Vec3 z = (target - centre).normalized();
    Vec3 x = up_hint.cross(z);
    if (x.norm() < 1e-9) x = Vec3(1, 0, 0).cross(z);
    x.normalize();
    Vec3 y = z.cross(x);
    Mat3 r;
    r.row(0) = x.transpose();
    r.row(1) = y.transpose();
    r.row(2) = z.transpose();
    return Rotation(r);
}

inline Rotation yaw(double angle) {
    Mat3 r;
    r << std::cos(angle), 0, std::sin(angle), 0, 1, 0, -std::sin(angle), 0, std::cos(angle);
    return Rotation(r);
}

// 2-D Gaussian with the vector norm truncated at `bound` (resampling).
inline Vec2 truncated_noise(std::mt19937_64 &rng, double sigma, double bound) {
    if (sigma <= 0.0) return Vec2::Zero();
    std::normal_distribution<double> n(0.0, sigma);
    for (int i = 0; i < 1000; ++i) {
        Vec2 v(n(rng), n(rng));
        if (v.norm() <= bound) return v;
    }
    return Vec2::Zero();
}

}  // namespace detail

inline SyntheticScene generate(SceneKind kind, const SceneParams &params, uint64_t seed) {
    if (params.frames < 2 || params.points < 1 || params.radius <= 0.0 || params.fov_limit <= 0.0 ||
        params.noise.pixel_sigma < 0.0 || params.noise.bound_sigmas <= 0.0 ||
        params.noise.outlier_rate < 0.0 || params.noise.outlier_rate >= 1.0) {
        throw BadParams();
    }

    SyntheticScene scene;
    scene.kind = kind;
    scene.noise_bound = params.noise.bound();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    const int n = params.frames;
    const double r = params.radius;

    // Camera trajectory and the point-cloud region that all kinds observe.
    Vec3 cloud_centre = Vec3::Zero();
    double cloud_radius = 0.5 * r;
    switch (kind) {
        case SceneKind::Circle:
        case SceneKind::TwoLoop: {
            const bool two = kind == SceneKind::TwoLoop;
            for (int j = 0; j < n; ++j) {
                // Two-loop parameterizes over n-1 steps so frame n-1 returns
                // exactly to the start; the midpoint frame sits within half a step.
                const double theta = two ? 4.0 * M_PI * j / (n - 1) : 2.0 * M_PI * j / n;
                const Vec3 c(r * std::cos(theta), 0.0, r * std::sin(theta));
                scene.gt_poses.emplace(j, KeyframePose::from_centre(detail::look_at(c, Vec3::Zero()), c));
            }
            if (two) {
                // The start is revisited once per loop: halfway through and at the end.
                scene.loops.emplace_back((n - 1) / 2, 0);
                scene.loops.emplace_back(n - 1, 0);
            }
            break;
        }
        case SceneKind::Straight: {
            const double step = r / n;
            for (int j = 0; j < n; ++j) {
                const Vec3 c(step * j, 0, 0);
                scene.gt_poses.emplace(j, KeyframePose::from_centre(Rotation(), c));
            }
            cloud_centre = Vec3(0.5 * r, 0, 2.0 * r);
            cloud_radius = 0.8 * r;
            break;
        }
        case SceneKind::PureRotation: {
            const double sweep = params.sweep_deg * M_PI / 180.0;
            for (int j = 0; j < n; ++j) {
                scene.gt_poses.emplace(j, KeyframePose(detail::yaw(sweep * j / (n - 1)), Vec3::Zero()));
            }
            cloud_centre = Vec3(0.5 * r, 0, 2.0 * r);
            cloud_radius = 1.5 * r;
            break;
        }
        case SceneKind::WalkAndTurn: {
            const double step = r / n;
            const int half = n / 2;
            for (int j = 0; j < n; ++j) {
                Vec3 c;
                Rotation rot;
                if (j < half) {
                    c = Vec3(step * j, 0, 0);
                } else {
                    c = Vec3(step * half, 0, step * (j - half));
                    rot = detail::yaw(-M_PI / 2.0);
                }
                scene.gt_poses.emplace(j, KeyframePose::from_centre(rot, c));
            }
            cloud_centre = Vec3(0.5 * r, 0, 1.5 * r);
            cloud_radius = 1.2 * r;
            break;
        }
    }

    std::bernoulli_distribution make_outlier(params.noise.outlier_rate);
    std::uniform_real_distribution<double> gross(-0.5, 0.5);

    for (int i = 0; i < params.points; ++i) {
        Vec3 x;
        bool visible_somewhere = false;
        // Rejection-sample a point that at least two cameras observe.
        for (int attempt = 0; attempt < 200 && !visible_somewhere; ++attempt) {
            x = cloud_centre + cloud_radius * Vec3(unit(rng), unit(rng), unit(rng));
            int seen = 0;
            for (const auto &[fid, pose] : scene.gt_poses) {
                if (pose.depth_of(x) <= 0.05) continue;
                const Vec2 u = project(x, pose);
                if (u.cwiseAbs().maxCoeff() <= params.fov_limit) ++seen;
            }
            visible_somewhere = seen >= 2;
        }
        if (!visible_somewhere) throw BadParams("could not place a point visible from two frames");

        FeatureTrack tr;
        tr.track_id = i;
        for (const auto &[fid, pose] : scene.gt_poses) {
            if (pose.depth_of(x) <= 0.05) continue;
            Vec2 u = project(x, pose);
            if (u.cwiseAbs().maxCoeff() > params.fov_limit) continue;
            if (params.noise.outlier_rate > 0.0 && make_outlier(rng)) {
                u = Vec2(gross(rng), gross(rng));
                scene.outliers.emplace_back(i, fid);
            } else {
                u += detail::truncated_noise(rng, params.noise.pixel_sigma, scene.noise_bound);
            }
            tr.add(fid, u);
        }
        if (tr.observations.size() >= 2) {
            scene.gt_points.push_back({x, i});
            scene.tracks.push_back(std::move(tr));
        }
    }
    return scene;
}

}  // namespace linf::synth
