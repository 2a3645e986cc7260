#pragma once

#include <map>
#include <set>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "linf/core.hpp"
#include "linf/socp.hpp"

namespace linf::krot {

struct GaugeConfig {
    int64_t fixed_frame = -1;     // -1: lowest solved frame id
    int scale_measurement = -1;   // -1: first measurement seen by the fixed frame
};

struct Measurement {
    int64_t track_id = -1;
    int64_t frame_id = -1;
    Vec2 u = Vec2::Zero();
};

// Known rotation problem over v = [points...; translations...] with the gauge
// camera's translation eliminated. One cone per observation.
struct KRotProblem {
    std::vector<Measurement> measurements;
    std::map<int64_t, Rotation> rotations;
    std::map<int64_t, int> point_offset;   // track_id -> column of X_i
    std::map<int64_t, int> trans_offset;   // frame_id -> column of t_j (gauge frame absent)
    int64_t gauge_frame = -1;
    int scale_measurement = 0;
    double depth_floor = 1e-6;
    int n = 0;

    // gamma-independent ratio system ||A v|| / b^T v of measurement mi
    conic::ConeConstraint ratio_cone(size_t mi) const {
        const Measurement &m = measurements[mi];
        const MeasurementBlock blk = build_A_b(rotations.at(m.frame_id), m.u);
        conic::ConeConstraint c;
        const bool fixed = (m.frame_id == gauge_frame);
        const int k = fixed ? 3 : 6;
        c.a.resize(2, k);
        c.b.resize(k);
        c.a0 = Eigen::Vector2d::Zero();
        c.beta = 0.0;
        const int po = point_offset.at(m.track_id);
        c.cols = {po, po + 1, po + 2};
        c.a.leftCols(3) = blk.a.leftCols(3);
        c.b.head(3) = blk.b.head(3);
        if (!fixed) {
            const int to = trans_offset.at(m.frame_id);
            c.cols.insert(c.cols.end(), {to, to + 1, to + 2});
            c.a.rightCols(3) = blk.a.rightCols(3);
            c.b.tail(3) = blk.b.tail(3);
        }
        return c;
    }

    std::vector<conic::LinearConstraint> linear_constraints() const {
        std::vector<conic::LinearConstraint> lin;
        lin.reserve(measurements.size());
        for (size_t i = 0; i < measurements.size(); ++i) {
            conic::ConeConstraint r = ratio_cone(i);
            conic::LinearConstraint l;
            l.g = r.b;
            l.cols = r.cols;
            l.h = (static_cast<int>(i) == scale_measurement) ? 1.0 : depth_floor;
            lin.push_back(std::move(l));
        }
        return lin;
    }

    conic::ConstraintSystem at_gamma(double gamma) const {
        std::vector<conic::ConeConstraint> cones;
        cones.reserve(measurements.size());
        for (size_t i = 0; i < measurements.size(); ++i) {
            conic::ConeConstraint c = ratio_cone(i);
            c.b *= gamma;
            c.beta *= gamma;
            cones.push_back(std::move(c));
        }
        return {std::move(cones), linear_constraints()};
    }

    double max_ratio(const Eigen::VectorXd &v) const {
        double worst = 0.0;
        for (size_t i = 0; i < measurements.size(); ++i) worst = std::max(worst, ratio_cone(i).ratio(v));
        return worst;
    }
};

struct KRotSolution {
    std::map<int64_t, MapPoint> points;
    std::map<int64_t, Vec3> translations;
    double gamma_star = 0.0;
    conic::GammaSolveResult certificate;
};

inline KRotProblem build_krot(const std::map<int64_t, Rotation> &rotations,
                              const std::vector<FeatureTrack> &tracks, const GaugeConfig &gauge = {}) {
    KRotProblem p;
    p.rotations = rotations;
    if (rotations.empty()) throw MissingRotation("no rotations supplied");
    p.gauge_frame = (gauge.fixed_frame >= 0) ? gauge.fixed_frame : rotations.begin()->first;
    if (!rotations.count(p.gauge_frame)) throw MissingRotation("gauge frame has no rotation");

    for (const auto &tr : tracks) {
        int seen = 0;
        for (const auto &obs : tr.observations)
            if (rotations.count(obs.frame_id)) ++seen;
        if (seen < 2) throw UnderconstrainedTrack("track " + std::to_string(tr.track_id));
        for (const auto &obs : tr.observations)
            if (rotations.count(obs.frame_id)) p.measurements.push_back({tr.track_id, obs.frame_id, obs.u});
    }

    int col = 0;
    for (const auto &m : p.measurements)
        if (!p.point_offset.count(m.track_id)) {
            p.point_offset[m.track_id] = col;
            col += 3;
        }
    for (const auto &[fid, r] : rotations) {
        bool used = false;
        for (const auto &m : p.measurements)
            if (m.frame_id == fid) { used = true; break; }
        if (used && fid != p.gauge_frame) {
            p.trans_offset[fid] = col;
            col += 3;
        }
    }
    p.n = col;

    if (gauge.scale_measurement >= 0) {
        p.scale_measurement = gauge.scale_measurement;
    } else {
        p.scale_measurement = 0;
        for (size_t i = 0; i < p.measurements.size(); ++i)
            if (p.measurements[i].frame_id == p.gauge_frame) {
                p.scale_measurement = static_cast<int>(i);
                break;
            }
    }
    if (p.scale_measurement >= static_cast<int>(p.measurements.size()))
        throw Error("scale measurement index out of range");
    return p;
}

namespace detail {

// L2 probe: minimize sum ||A_i v||^2 with the scale measurement's depth pinned
// to 1 (equality KKT solve). Cheap and usually strictly cheirality-positive.
inline Eigen::VectorXd linear_probe(const KRotProblem &p) {
    std::vector<Eigen::Triplet<double>> trip;
    for (size_t i = 0; i < p.measurements.size(); ++i) {
        const conic::ConeConstraint c = p.ratio_cone(i);
        const Eigen::MatrixXd ata = c.a.transpose() * c.a;
        for (size_t r = 0; r < c.cols.size(); ++r)
            for (size_t cc = 0; cc < c.cols.size(); ++cc) trip.emplace_back(c.cols[r], c.cols[cc], ata(r, cc));
    }
    const conic::ConeConstraint sc = p.ratio_cone(p.scale_measurement);
    for (size_t r = 0; r < sc.cols.size(); ++r) {
        trip.emplace_back(sc.cols[r], p.n, sc.b[r]);
        trip.emplace_back(p.n, sc.cols[r], sc.b[r]);
    }
    for (int i = 0; i < p.n; ++i) trip.emplace_back(i, i, 1e-12);

    Eigen::SparseMatrix<double> kkt(p.n + 1, p.n + 1);
    kkt.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p.n + 1);
    rhs[p.n] = 1.0;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(kkt);
    if (lu.info() != Eigen::Success) return Eigen::VectorXd::Zero(p.n);
    Eigen::VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) return Eigen::VectorXd::Zero(p.n);
    // double the scale so the pinned depth sits strictly inside its constraint
    return 2.0 * sol.head(p.n);
}

inline bool probe_valid(const KRotProblem &p, const Eigen::VectorXd &v) {
    if (v.size() != p.n) return false;
    for (size_t i = 0; i < p.measurements.size(); ++i) {
        const double den = p.ratio_cone(i).rhs(v);
        const double need = (static_cast<int>(i) == p.scale_measurement) ? 1.0 : 2.0 * p.depth_floor;
        if (den < need) return false;
    }
    return true;
}

}  // namespace detail

inline KRotSolution solve_krot(const KRotProblem &p, double tol = 1e-6,
                               std::optional<Eigen::VectorXd> warm_start = std::nullopt) {
    if (p.measurements.empty()) throw Error("empty known rotation problem");
    conic::SolverOptions opts;

    Eigen::VectorXd probe = warm_start && detail::probe_valid(p, *warm_start) ? *warm_start : detail::linear_probe(p);
    std::optional<Eigen::VectorXd> start;
    double hi = 1.0;
    if (detail::probe_valid(p, probe)) {
        std::vector<conic::ConeConstraint> ratios;
        for (size_t i = 0; i < p.measurements.size(); ++i) ratios.push_back(p.ratio_cone(i));
        hi = std::max(conic::initial_upper_bound(ratios, p.linear_constraints(), probe), 8.0 * tol);
        start = probe;
    } else {
        hi = 10.0;  // generous bracket; the phase-1 start inside the engine takes over
    }

    const auto builder = [&p](double g) { return p.at_gamma(g); };
    conic::GammaSolveResult res;
    try {
        res = conic::bisect_gamma(builder, p.n, 0.0, hi, tol, opts, start);
    } catch (const BadBracket &) {
        try {
            res = conic::bisect_gamma(builder, p.n, 0.0, std::max(1e3, 10.0 * hi), tol, opts, start);
        } catch (const BadBracket &) {
            throw Infeasible("no cheirality-consistent configuration at any residual level");
        }
    }

    KRotSolution sol;
    sol.gamma_star = res.gamma_star;
    sol.certificate = res;
    for (const auto &[tid, off] : p.point_offset) sol.points[tid] = MapPoint{res.x_star.segment<3>(off), tid};
    sol.translations[p.gauge_frame] = Vec3::Zero();
    for (const auto &[fid, off] : p.trans_offset) sol.translations[fid] = res.x_star.segment<3>(off);

    // re-check the certificate with the plain projection kernel
    for (const auto &m : p.measurements) {
        const KeyframePose pose(p.rotations.at(m.frame_id), sol.translations.at(m.frame_id));
        if (residual_ratio(sol.points.at(m.track_id).x, pose, m.u) > res.feasible_at + 1e-9)
            throw NumericalFailure("certificate violated by returned point");
    }
    return sol;
}

// Globally optimal per-point L-infinity triangulation with fixed poses.
inline std::pair<MapPoint, double> triangulate_point_linf(const FeatureTrack &track,
                                                          const std::map<int64_t, KeyframePose> &poses,
                                                          double tol = 1e-9) {
    std::vector<const Observation *> obs;
    for (const auto &o : track.observations)
        if (poses.count(o.frame_id)) obs.push_back(&o);
    if (obs.size() < 2) throw UnderconstrainedTrack("track " + std::to_string(track.track_id));

    std::vector<conic::ConeConstraint> ratios;
    std::vector<conic::LinearConstraint> lins;
    for (const Observation *o : obs) {
        const KeyframePose &pose = poses.at(o->frame_id);
        const MeasurementBlock blk = build_A_b(pose.r, o->u);
        conic::ConeConstraint c;
        c.a = blk.a.leftCols(3);
        c.a0 = blk.a.rightCols(3) * pose.t;
        c.b = blk.b.head(3);
        c.beta = pose.t.z();
        c.cols = {0, 1, 2};
        conic::LinearConstraint l;
        l.g = c.b;
        l.cols = c.cols;
        l.h = 1e-9 - c.beta;  // depth >= 1e-9
        lins.push_back(std::move(l));
        ratios.push_back(std::move(c));
    }

    // midpoint probe from the first and last rays
    const KeyframePose &pa = poses.at(obs.front()->frame_id);
    const KeyframePose &pb = poses.at(obs.back()->frame_id);
    const Vec3 ca = pa.centre(), cb = pb.centre();
    const Vec3 da = pa.r.matrix().transpose() * Vec3(obs.front()->u.x(), obs.front()->u.y(), 1.0);
    const Vec3 db = pb.r.matrix().transpose() * Vec3(obs.back()->u.x(), obs.back()->u.y(), 1.0);
    Eigen::Matrix2d g;
    g << da.dot(da), -da.dot(db), -da.dot(db), db.dot(db);
    Vec3 probe;
    if (std::abs(g.determinant()) > 1e-14) {
        const Eigen::Vector2d s = g.inverse() * Eigen::Vector2d(da.dot(cb - ca), -db.dot(cb - ca));
        probe = 0.5 * (ca + s[0] * da + cb + s[1] * db);
    } else {
        probe = 0.5 * (ca + da + cb + db);
    }

    conic::SolverOptions opts;
    double hi = 10.0;
    std::optional<Eigen::VectorXd> start;
    bool ok = true;
    for (const auto &l : lins)
        if (l.margin(probe) <= 0.0) ok = false;
    if (ok) {
        hi = std::max(conic::initial_upper_bound(ratios, lins, probe), 8.0 * tol);
        start = probe;
    }

    const auto builder = [&](double gamma) -> conic::ConstraintSystem {
        std::vector<conic::ConeConstraint> cones = ratios;
        for (auto &c : cones) {
            c.b *= gamma;
            c.beta *= gamma;
        }
        return {std::move(cones), lins};
    };
    conic::GammaSolveResult res;
    try {
        res = conic::bisect_gamma(builder, 3, 0.0, hi, tol, opts, start);
    } catch (const BadBracket &) {
        try {
            res = conic::bisect_gamma(builder, 3, 0.0, 1e4, tol, opts, start);
        } catch (const BadBracket &) {
            throw Infeasible("rays have no common point in front of the cameras");
        } catch (const Infeasible &) {
            throw Infeasible("rays have no common point in front of the cameras");
        }
    } catch (const Infeasible &) {
        throw Infeasible("rays have no common point in front of the cameras");
    }
    return {MapPoint{res.x_star, track.track_id}, res.gamma_star};
}

struct SupportRemovalResult {
    KRotProblem problem;
    KRotSolution solution;
    std::vector<std::pair<int64_t, int64_t>> removed;  // (track_id, frame_id)
    int rounds = 0;
};

// Iteratively drop the support set until gamma_target is met (max 10 rounds).
inline SupportRemovalResult remove_support_set(const KRotProblem &problem, const KRotSolution &solution,
                                               double gamma_target, double tol = 1e-6) {
    SupportRemovalResult out;
    out.problem = problem;
    out.solution = solution;
    for (out.rounds = 0; out.rounds < 10 && out.solution.gamma_star > gamma_target; ++out.rounds) {
        const Eigen::VectorXd &v = out.solution.certificate.x_star;
        std::vector<Measurement> kept;
        for (size_t i = 0; i < out.problem.measurements.size(); ++i) {
            if (out.problem.ratio_cone(i).ratio(v) >= out.solution.gamma_star - std::max(1e-9, 2.0 * tol))
                out.removed.emplace_back(out.problem.measurements[i].track_id, out.problem.measurements[i].frame_id);
            else
                kept.push_back(out.problem.measurements[i]);
        }
        // drop tracks left with fewer than two views
        std::map<int64_t, int> views;
        for (const auto &m : kept) views[m.track_id]++;
        std::vector<FeatureTrack> tracks;
        std::map<int64_t, FeatureTrack> by_track;
        for (const auto &m : kept) {
            if (views[m.track_id] < 2) continue;
            auto &tr = by_track[m.track_id];
            tr.track_id = m.track_id;
            tr.add(m.frame_id, m.u);
        }
        for (auto &[tid, tr] : by_track) tracks.push_back(std::move(tr));
        if (tracks.empty()) throw AllMeasurementsRemoved();

        GaugeConfig g;
        g.fixed_frame = out.problem.gauge_frame;
        KRotProblem next;
        try {
            next = build_krot(out.problem.rotations, tracks, g);
        } catch (const UnderconstrainedTrack &) {
            throw AllMeasurementsRemoved("removal left an underconstrained problem");
        }
        next.depth_floor = out.problem.depth_floor;
        out.problem = std::move(next);
        out.solution = solve_krot(out.problem, tol);
    }
    return out;
}

}  // namespace linf::krot
