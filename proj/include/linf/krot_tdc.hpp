#pragma once

// Known-rotation estimation with translation-direction cone constraints (the
// loop-closure formulation), plus a structure-free directions-only mode.
//
// Variables are stacked [X_i...; C_j...] where C_j are camera centres; the
// gauge frame's centre is fixed to zero and eliminated. Structure cones
//   || S_ij (X_i - C_j) || <= gamma * R_j^(3) (X_i - C_j)
// scale with gamma; direction cones
//   || Z^(1:2) (C_k - C_j) || <= tan(alpha) * t_jk^T (C_k - C_j)
// are gamma-independent hard constraints equivalent to
// angle(C_k - C_j, t_jk) <= alpha for alpha < 90 degrees.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include "linf/core.hpp"
#include "linf/errors.hpp"
#include "linf/krot.hpp"
#include "linf/socp.hpp"

namespace linf::tdc {

// Relative translation direction between frames j and k, world coordinates.
struct DirectionEdge {
    int64_t j = -1, k = -1;
    Vec3 t_world = Vec3::UnitZ();  // unit, points from C_j towards C_k
};

// Frame-j epipolar direction lifted to world coordinates.
inline Vec3 world_direction(const Rotation &r_j, const Vec3 &t_e, const CameraIntrinsics &k = {}) {
    const Mat3 m = k.identity ? r_j.matrix() : Mat3(k.k.inverse() * r_j.matrix());
    return Vec3(m.transpose() * t_e).normalized();
}

// Minimal rotation taking t_jk to e3; deterministic 180-degree rotation about
// x for the antipodal case.
inline Rotation build_z(const Vec3 &t_jk) {
    const Vec3 e3 = Vec3::UnitZ();
    const double c = std::clamp(t_jk.dot(e3), -1.0, 1.0);
    if (c > 1.0 - 1e-15) return Rotation();
    Vec3 axis = t_jk.cross(e3);
    const double n = axis.norm();
    if (n < 1e-12) return Rotation::exp(Vec3(M_PI, 0, 0));  // t = -e3
    return Rotation::exp(std::acos(c) * axis / n);
}

struct DirectionConstraint {
    int64_t j = -1, k = -1;
    Vec3 t_jk = Vec3::UnitZ();  // world frame, unit
    double alpha = 0.0;
    Rotation z_mat;  // z_mat * t_jk = e3

    static DirectionConstraint make(int64_t j, int64_t k, const Vec3 &t, double alpha) {
        if (!(alpha > 0.0 && alpha < M_PI / 2)) throw AlphaOutOfRange();
        if (std::abs(t.norm() - 1.0) > 1e-9) throw BadParams("direction must be a unit vector");
        DirectionConstraint d;
        d.j = j;
        d.k = k;
        d.t_jk = t;
        d.alpha = alpha;
        d.z_mat = build_z(t);
        if ((d.z_mat.matrix() * t - Vec3::UnitZ()).norm() > 1e-9)
            throw NumericalFailure("direction frame construction failed");
        return d;
    }
};

struct TdcProblem {
    std::vector<krot::Measurement> measurements;  // sampled structure tracks
    std::map<int64_t, Rotation> rotations;
    std::vector<DirectionConstraint> directions;
    std::map<int64_t, int> point_offset;   // track_id -> column of X_i
    std::map<int64_t, int> centre_offset;  // frame_id -> column of C_j (gauge frame absent)
    int64_t gauge_frame = -1;
    int scale_measurement = -1;  // index into measurements; -1 when structure-free
    double depth_floor = 1e-6;
    int n = 0;

    // S_ij = R^(1:2) - u R^(3) for measurement mi.
    Eigen::Matrix<double, 2, 3> s_block(size_t mi) const {
        const auto &m = measurements[mi];
        const Mat3 r = rotations.at(m.frame_id).matrix();
        Eigen::Matrix<double, 2, 3> s = r.topRows<2>();
        s -= m.u * r.row(2);
        return s;
    }

    // Structure cone in ratio form: ||a v|| / (b^T v) = reprojection ratio.
    conic::ConeConstraint structure_cone(size_t mi) const {
        const auto &m = measurements[mi];
        const Eigen::Matrix<double, 2, 3> s = s_block(mi);
        const Eigen::RowVector3d r3 = rotations.at(m.frame_id).matrix().row(2);
        const bool gauged = (m.frame_id == gauge_frame);
        const int k = gauged ? 3 : 6;
        conic::ConeConstraint c;
        c.a.setZero(2, k);
        c.b.setZero(k);
        c.cols.clear();
        const int px = point_offset.at(m.track_id);
        for (int d = 0; d < 3; ++d) c.cols.push_back(px + d);
        c.a.leftCols<3>() = s;
        c.b.head<3>() = r3.transpose();
        if (!gauged) {
            const int cx = centre_offset.at(m.frame_id);
            for (int d = 0; d < 3; ++d) c.cols.push_back(cx + d);
            c.a.rightCols<3>() = -s;
            c.b.tail<3>() = -r3.transpose();
        }
        c.a0.setZero(2);
        c.beta = 0.0;
        return c;
    }

    // Hard direction cone || Z^(1:2) (C_k - C_j) || <= tan(alpha) t^T (C_k - C_j).
    conic::ConeConstraint direction_cone(const DirectionConstraint &d) const {
        const Eigen::Matrix<double, 2, 3> z12 = d.z_mat.matrix().topRows<2>();
        const Vec3 e = std::tan(d.alpha) * d.t_jk;
        conic::ConeConstraint c;
        const bool gj = (d.j == gauge_frame), gk = (d.k == gauge_frame);
        const int k = (gj || gk) ? 3 : 6;
        c.a.setZero(2, k);
        c.b.setZero(k);
        c.cols.clear();
        int at = 0;
        if (!gj) {
            const int cx = centre_offset.at(d.j);
            for (int dd = 0; dd < 3; ++dd) c.cols.push_back(cx + dd);
            c.a.middleCols<3>(at) = -z12;
            c.b.segment<3>(at) = -e;
            at += 3;
        }
        if (!gk) {
            const int cx = centre_offset.at(d.k);
            for (int dd = 0; dd < 3; ++dd) c.cols.push_back(cx + dd);
            c.a.middleCols<3>(at) = z12;
            c.b.segment<3>(at) = e;
        }
        c.a0.setZero(2);
        c.beta = 0.0;
        return c;
    }

    // Depth floors for every structure measurement plus the scale constraint.
    std::vector<conic::LinearConstraint> linear_constraints() const {
        std::vector<conic::LinearConstraint> lins;
        for (size_t i = 0; i < measurements.size(); ++i) {
            const conic::ConeConstraint c = structure_cone(i);
            conic::LinearConstraint l;
            l.g = c.b;
            l.cols = c.cols;
            l.h = depth_floor;
            lins.push_back(std::move(l));
        }
        if (scale_measurement >= 0) {
            const conic::ConeConstraint c = structure_cone(scale_measurement);
            conic::LinearConstraint l;
            l.g = c.b;
            l.cols = c.cols;
            l.h = 1.0;
            lins.push_back(std::move(l));
        }
        return lins;
    }

    std::pair<std::vector<conic::ConeConstraint>, std::vector<conic::LinearConstraint>> at_gamma(double gamma) const {
        std::vector<conic::ConeConstraint> cones;
        cones.reserve(measurements.size() + directions.size());
        for (size_t i = 0; i < measurements.size(); ++i) {
            conic::ConeConstraint c = structure_cone(i);
            c.b *= gamma;
            c.beta *= gamma;
            cones.push_back(std::move(c));
        }
        for (const auto &d : directions) cones.push_back(direction_cone(d));
        return {std::move(cones), linear_constraints()};
    }

    double max_structure_ratio(const Eigen::VectorXd &v) const {
        double worst = 0.0;
        for (size_t i = 0; i < measurements.size(); ++i) worst = std::max(worst, structure_cone(i).ratio(v));
        return worst;
    }

    bool directions_hold(const Eigen::VectorXd &v, double slack = 0.0) const {
        for (const auto &d : directions) {
            const conic::ConeConstraint c = direction_cone(d);
            if (c.lhs(v) > c.rhs(v) + slack) return false;
        }
        return true;
    }
};

struct TdcSolution {
    std::map<int64_t, Vec3> points;        // track_id -> X
    std::map<int64_t, Vec3> centres;       // frame_id -> C
    std::map<int64_t, Vec3> translations;  // t = -R C
    double gamma_star = 0.0;
    conic::GammaSolveResult certificate;
};

inline TdcProblem build_tdc(const std::map<int64_t, Rotation> &rotations, const std::vector<FeatureTrack> &tracks,
                            const std::vector<DirectionEdge> &edges, double alpha,
                            const krot::GaugeConfig &gauge = {}) {
    if (!(alpha > 0.0 && alpha < M_PI / 2)) throw AlphaOutOfRange();
    TdcProblem p;
    p.rotations = rotations;

    for (const auto &tr : tracks) {
        int views = 0;
        for (const auto &o : tr.observations)
            if (rotations.count(o.frame_id)) ++views;
        if (views < 2) throw UnderconstrainedTrack();
        for (const auto &o : tr.observations) {
            if (!rotations.count(o.frame_id)) continue;
            p.measurements.push_back({tr.track_id, o.frame_id, o.u});
        }
    }
    for (const auto &e : edges) {
        if (!rotations.count(e.j) || !rotations.count(e.k)) throw MissingRotation();
        p.directions.push_back(DirectionConstraint::make(e.j, e.k, e.t_world, alpha));
    }

    // frames = union of measurement frames and direction-edge frames
    std::set<int64_t> frames;
    for (const auto &m : p.measurements) frames.insert(m.frame_id);
    for (const auto &d : p.directions) {
        frames.insert(d.j);
        frames.insert(d.k);
    }
    if (frames.empty()) throw BadParams("empty problem");

    p.gauge_frame = (gauge.fixed_frame >= 0) ? gauge.fixed_frame : *frames.begin();
    if (!frames.count(p.gauge_frame)) throw MissingNode("gauge frame not referenced by the problem");

    int at = 0;
    std::set<int64_t> tids;
    for (const auto &m : p.measurements) tids.insert(m.track_id);
    for (int64_t tid : tids) {
        p.point_offset[tid] = at;
        at += 3;
    }
    for (int64_t fid : frames) {
        if (fid == p.gauge_frame) continue;
        p.centre_offset[fid] = at;
        at += 3;
    }
    p.n = at;

    if (!p.measurements.empty()) {
        p.scale_measurement = 0;
        if (gauge.scale_measurement >= 0 && gauge.scale_measurement < static_cast<int>(p.measurements.size()))
            p.scale_measurement = gauge.scale_measurement;
    }
    return p;
}

namespace detail {

// Least-squares probe: minimize sum ||S (X - C)||^2 subject to the scale
// measurement's depth = 1, through the sparse KKT system. Doubled afterwards
// so every depth floor is strictly interior.
inline Eigen::VectorXd linear_probe(const TdcProblem &p) {
    const int n = p.n;
    std::vector<Eigen::Triplet<double>> trips;
    auto add_block = [&](const conic::ConeConstraint &c, Eigen::MatrixXd &dense) {
        dense = Eigen::MatrixXd::Zero(c.a.rows(), n);
        for (size_t j = 0; j < c.cols.size(); ++j) dense.col(c.cols[j]) = c.a.col(j);
    };
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    for (size_t i = 0; i < p.measurements.size(); ++i) {
        Eigen::MatrixXd a;
        add_block(p.structure_cone(i), a);
        h.noalias() += a.transpose() * a;
    }
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    const conic::ConeConstraint sc = p.structure_cone(p.scale_measurement);
    for (size_t j = 0; j < sc.cols.size(); ++j) g[sc.cols[j]] = sc.b[j];

    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + 1, n + 1);
    kkt.topLeftCorner(n, n) = h + 1e-12 * Eigen::MatrixXd::Identity(n, n);
    kkt.block(0, n, n, 1) = g;
    kkt.block(n, 0, 1, n) = g.transpose();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
    rhs[n] = 1.0;
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    if (!sol.allFinite()) throw NumericalFailure("tdc probe solve failed");
    return 2.0 * sol.head(n);
}

inline std::string worst_direction_edges(const TdcProblem &p, const Eigen::VectorXd &v) {
    std::vector<std::pair<double, const DirectionConstraint *>> viol;
    for (const auto &d : p.directions) {
        const conic::ConeConstraint c = p.direction_cone(d);
        viol.emplace_back(c.lhs(v) - c.rhs(v), &d);
    }
    std::sort(viol.rbegin(), viol.rend());
    std::ostringstream os;
    os << "direction cones inconsistent; worst edges:";
    for (size_t i = 0; i < viol.size() && i < 3; ++i)
        os << " (" << viol[i].second->j << "," << viol[i].second->k << ")";
    return os.str();
}

}  // namespace detail

inline TdcSolution solve_tdc(const TdcProblem &p, double tol = 1e-6, const conic::SolverOptions &opts = {}) {
    if (p.measurements.empty()) throw BadParams("solve_tdc needs structure measurements");
    auto builder = [&](double gamma) { return p.at_gamma(gamma); };

    double hi = 10.0;
    std::optional<Eigen::VectorXd> start;
    try {
        const Eigen::VectorXd probe = detail::linear_probe(p);
        std::vector<conic::ConeConstraint> ratios;
        for (size_t i = 0; i < p.measurements.size(); ++i) ratios.push_back(p.structure_cone(i));
        if (p.directions_hold(probe)) {
            hi = std::max(conic::initial_upper_bound(ratios, p.linear_constraints(), probe), 8.0 * tol);
            start = probe;
        }
    } catch (const Error &) {
        // probe is advisory only; fall through to the default bracket
    }

    conic::GammaSolveResult res;
    try {
        res = conic::bisect_gamma(builder, p.n, 0.0, hi, tol, opts, start);
    } catch (const BadBracket &) {
        try {
            res = conic::bisect_gamma(builder, p.n, 0.0, std::max(1e3, 10.0 * hi), tol, opts, start);
        } catch (const BadBracket &) {
            Eigen::VectorXd at = start.value_or(Eigen::VectorXd::Zero(p.n));
            throw Infeasible(detail::worst_direction_edges(p, at));
        }
    }

    TdcSolution sol;
    sol.gamma_star = res.gamma_star;
    sol.certificate = res;
    const Eigen::VectorXd &v = res.x_star;
    for (const auto &[tid, off] : p.point_offset) sol.points[tid] = v.segment<3>(off);
    for (const auto &[fid, off] : p.centre_offset) sol.centres[fid] = v.segment<3>(off);
    sol.centres[p.gauge_frame] = Vec3::Zero();
    for (const auto &[fid, c] : sol.centres) sol.translations[fid] = -(p.rotations.at(fid).matrix() * c);
    return sol;
}

// Structure-free Sim-Hartley-style mode: camera centres from direction cones
// alone. Scale is pinned by requiring unit advance along the first edge. When
// the requested alpha is infeasible (noisy directions), the angular level is
// widened by bisection over tan(alpha) until a feasible cone system is found.
inline std::map<int64_t, Vec3> solve_directions_only(const std::map<int64_t, Rotation> &rotations,
                                                     const std::vector<DirectionEdge> &edges, double alpha,
                                                     const krot::GaugeConfig &gauge = {},
                                                     const conic::SolverOptions &opts = {}) {
    if (!(alpha > 0.0 && alpha < M_PI / 2)) throw AlphaOutOfRange();
    if (edges.empty()) throw BadParams("no direction edges");
    {
        CovisibilityGraph g;
        for (const auto &e : edges) {
            CovisEdge ce;
            ce.j = std::min(e.j, e.k);
            ce.k = std::max(e.j, e.k);
            if (!g.has_edge(ce.j, ce.k)) g.add_edge(ce);
        }
        if (!g.connected()) throw DisconnectedGraph();
    }

    TdcProblem p = build_tdc(rotations, {}, edges, alpha, gauge);

    auto system_at = [&](double tan_level) {
        std::vector<conic::ConeConstraint> cones;
        for (const auto &d : p.directions) {
            DirectionConstraint wide = d;
            wide.alpha = std::atan(tan_level);
            cones.push_back(p.direction_cone(wide));
        }
        std::vector<conic::LinearConstraint> lins;
        const conic::ConeConstraint first = p.direction_cone(p.directions.front());
        conic::LinearConstraint scale;  // t^T (C_k - C_j) >= 1 pins the gauge scale
        scale.g = first.b / std::tan(p.directions.front().alpha);
        scale.cols = first.cols;
        scale.h = 1.0;
        lins.push_back(std::move(scale));
        return std::pair{std::move(cones), std::move(lins)};
    };

    auto [cones0, lins0] = system_at(std::tan(alpha));
    if (auto fp = conic::check_feasibility(cones0, lins0, p.n, opts)) {
        std::map<int64_t, Vec3> centres;
        for (const auto &[fid, off] : p.centre_offset) centres[fid] = fp->x.segment<3>(off);
        centres[p.gauge_frame] = Vec3::Zero();
        return centres;
    }

    // widen the cone level until feasible, then bisect back down
    const double tan_tol = 1e-8;
    double lo = std::tan(alpha), hi_level = std::tan(alpha);
    Eigen::VectorXd best;
    bool found = false;
    for (int i = 0; i < 40 && !found; ++i) {
        hi_level = (hi_level < 1e-6) ? 1e-6 : 4.0 * hi_level;
        auto [cones, lins] = system_at(hi_level);
        if (auto fp = conic::check_feasibility(cones, lins, p.n, opts)) {
            best = fp->x;
            found = true;
        }
        if (hi_level > 1e3) break;
    }
    if (!found) throw Infeasible("direction cones stay infeasible at every angular level");
    while (hi_level - lo > tan_tol) {
        const double mid = 0.5 * (hi_level + lo);
        auto [cones, lins] = system_at(mid);
        if (auto fp = conic::check_feasibility(cones, lins, p.n, opts)) {
            best = fp->x;
            hi_level = mid;
        } else {
            lo = mid;
        }
    }
    std::map<int64_t, Vec3> centres;
    for (const auto &[fid, off] : p.centre_offset) centres[fid] = best.segment<3>(off);
    centres[p.gauge_frame] = Vec3::Zero();
    return centres;
}

}  // namespace linf::tdc
