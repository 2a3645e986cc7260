#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "linf/errors.hpp"

namespace linf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Runtime depth tolerance; "in front of the camera" means depth > kDepthTol.
inline constexpr double kDepthTol = 1e-12;

namespace so3 {

inline Mat3 hat(const Vec3 &w) {
    Mat3 m;
    m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return m;
}

inline Mat3 exp(const Vec3 &w) {
    const double th = w.norm();
    if (th < 1e-12) {
        return Mat3::Identity() + hat(w);
    }
    const Vec3 a = w / th;
    const Mat3 ax = hat(a);
    return Mat3::Identity() + std::sin(th) * ax + (1.0 - std::cos(th)) * ax * ax;
}

inline Vec3 log(const Mat3 &r) {
    const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
    const double th = std::acos(c);
    if (th < 1e-10) {
        return 0.5 * Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    }
    if (th > M_PI - 1e-6) {
        // near pi: use the symmetric part to recover the axis
        Mat3 s = 0.5 * (r + Mat3::Identity());
        Vec3 axis = s.diagonal().cwiseMax(0.0).cwiseSqrt();
        int k;
        s.diagonal().maxCoeff(&k);
        if (axis[k] > 0) {
            axis[(k + 1) % 3] = s(k, (k + 1) % 3) / axis[k];
            axis[(k + 2) % 3] = s(k, (k + 2) % 3) / axis[k];
        }
        axis.normalize();
        // fix sign with the skew part
        const Vec3 skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
        if (skew.dot(axis) < 0) axis = -axis;
        return th * axis;
    }
    const Vec3 skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    return (th / (2.0 * std::sin(th))) * skew;
}

// Nearest rotation in Frobenius norm (orthogonal polar factor with det +1).
inline Mat3 project_to_so3(const Mat3 &m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1.0;
    return svd.matrixU() * d * svd.matrixV().transpose();
}

inline double angle_between(const Mat3 &a, const Mat3 &b) {
    return log(a.transpose() * b).norm();
}

}  // namespace so3

class Rotation {
public:
    Rotation() : m_(Mat3::Identity()) {}

    explicit Rotation(const Mat3 &m) : m_(m) {
        if ((m.transpose() * m - Mat3::Identity()).norm() > 1e-9 || std::abs(m.determinant() - 1.0) > 1e-9) {
            throw Error("matrix is not a rotation within tolerance");
        }
    }

    // Re-projects onto SO(3) first; for results of noisy arithmetic.
    static Rotation from_matrix_nearest(const Mat3 &m) { return Rotation(so3::project_to_so3(m)); }

    static Rotation exp(const Vec3 &w) { return Rotation(so3::exp(w)); }

    static Rotation from_quaternion(double qw, double qx, double qy, double qz) {
        Eigen::Quaterniond q(qw, qx, qy, qz);
        q.normalize();
        return Rotation(q.toRotationMatrix());
    }

    const Mat3 &matrix() const { return m_; }
    Rotation inverse() const { Rotation r; r.m_ = m_.transpose(); return r; }
    Rotation operator*(const Rotation &o) const { return from_matrix_nearest(m_ * o.m_); }
    Vec3 operator*(const Vec3 &v) const { return m_ * v; }
    Vec3 log() const { return so3::log(m_); }
    double angle_to(const Rotation &o) const { return so3::angle_between(m_, o.m_); }

private:
    Mat3 m_;
};

struct CameraIntrinsics {
    Mat3 k = Mat3::Identity();
    bool identity = true;

    static CameraIntrinsics make(const Mat3 &k) {
        if (std::abs(k(2, 2) - 1.0) > 1e-12 || std::abs(k(1, 0)) > 0 || std::abs(k(2, 0)) > 0 ||
            std::abs(k(2, 1)) > 0 || std::abs(k.determinant()) < 1e-15) {
            throw Error("intrinsic matrix must be invertible upper-triangular with k22 = 1");
        }
        CameraIntrinsics c;
        c.k = k;
        c.identity = (k - Mat3::Identity()).norm() < 1e-15;
        return c;
    }
};

struct KeyframePose {
    Rotation r;
    Vec3 t = Vec3::Zero();

    KeyframePose() = default;
    KeyframePose(const Rotation &r_, const Vec3 &t_) : r(r_), t(t_) {}

    static KeyframePose from_centre(const Rotation &r_, const Vec3 &c) { return {r_, -(r_.matrix() * c)}; }

    Vec3 centre() const { return -(r.matrix().transpose() * t); }
    double depth_of(const Vec3 &x) const { return r.matrix().row(2).dot(x) + t.z(); }
};

struct Observation {
    int64_t track_id = -1;
    int64_t frame_id = -1;
    Vec2 u = Vec2::Zero();  // normalized image coordinates (K^-1 applied)
};

struct FeatureTrack {
    int64_t track_id = -1;
    std::vector<Observation> observations;  // strictly increasing frame_id

    void add(int64_t frame_id, const Vec2 &u) {
        if (!observations.empty() && frame_id <= observations.back().frame_id) {
            throw Error("observations must have strictly increasing frame_id");
        }
        observations.push_back({track_id, frame_id, u});
    }

    const Observation *find(int64_t frame_id) const {
        auto it = std::lower_bound(observations.begin(), observations.end(), frame_id,
                                   [](const Observation &o, int64_t f) { return o.frame_id < f; });
        if (it == observations.end() || it->frame_id != frame_id) return nullptr;
        return &*it;
    }
};

struct MapPoint {
    Vec3 x = Vec3::Zero();
    int64_t track_id = -1;
};

struct CovisEdge {
    int64_t j = -1, k = -1;  // j < k
    Rotation r_jk;           // R_k ~ R_jk * R_j
    std::optional<Vec3> t_e;  // unit relative translation direction, frame j
    int weight = 0;          // shared-track count
};

class CovisibilityGraph {
public:
    void add_node(int64_t id) { nodes_.insert(id); }

    void add_edge(CovisEdge e) {
        if (e.j >= e.k) std::swap(e.j, e.k);  // caller must orient measurements j < k
        if (edge_index_.count({e.j, e.k})) throw Error("duplicate covisibility edge");
        if (e.t_e && std::abs(e.t_e->norm() - 1.0) > 1e-9) throw Error("t_e must be unit");
        add_node(e.j);
        add_node(e.k);
        edge_index_[{e.j, e.k}] = edges_.size();
        edges_.push_back(std::move(e));
    }

    bool has_edge(int64_t j, int64_t k) const {
        if (j > k) std::swap(j, k);
        return edge_index_.count({j, k}) > 0;
    }

    const CovisEdge *edge(int64_t j, int64_t k) const {
        if (j > k) std::swap(j, k);
        auto it = edge_index_.find({j, k});
        return it == edge_index_.end() ? nullptr : &edges_[it->second];
    }

    const std::set<int64_t> &nodes() const { return nodes_; }
    const std::vector<CovisEdge> &edges() const { return edges_; }

    bool connected() const {
        if (nodes_.empty()) return true;
        std::map<int64_t, std::vector<int64_t>> adj;
        for (const auto &e : edges_) {
            adj[e.j].push_back(e.k);
            adj[e.k].push_back(e.j);
        }
        std::set<int64_t> seen;
        std::vector<int64_t> stack{*nodes_.begin()};
        while (!stack.empty()) {
            int64_t n = stack.back();
            stack.pop_back();
            if (!seen.insert(n).second) continue;
            for (int64_t m : adj[n]) stack.push_back(m);
        }
        return seen.size() == nodes_.size();
    }

private:
    std::set<int64_t> nodes_;
    std::vector<CovisEdge> edges_;
    std::map<std::pair<int64_t, int64_t>, size_t> edge_index_;
};

// Induced subgraph on frame ids in [lo, hi].
inline CovisibilityGraph graph_window(const CovisibilityGraph &g, int64_t lo, int64_t hi) {
    if (lo > hi) throw Error("empty frame range");
    CovisibilityGraph out;
    for (int64_t n : g.nodes())
        if (n >= lo && n <= hi) out.add_node(n);
    for (const auto &e : g.edges())
        if (e.j >= lo && e.j <= hi && e.k >= lo && e.k <= hi) out.add_edge(e);
    if (!out.connected()) throw DisconnectedGraph();
    return out;
}

// Union of two graphs (second one typically carries loop-closure edges).
inline CovisibilityGraph graph_union(const CovisibilityGraph &a, const CovisibilityGraph &b) {
    CovisibilityGraph out;
    for (int64_t n : a.nodes()) out.add_node(n);
    for (int64_t n : b.nodes()) out.add_node(n);
    for (const auto &e : a.edges()) out.add_edge(e);
    for (const auto &e : b.edges())
        if (!out.has_edge(e.j, e.k)) out.add_edge(e);
    return out;
}

inline Vec2 project(const Vec3 &x, const KeyframePose &pose) {
    const double depth = pose.depth_of(x);
    if (depth <= kDepthTol) throw NonPositiveDepth();
    const Vec3 p = pose.r.matrix() * x + pose.t;
    return Vec2(p.x() / depth, p.y() / depth);
}

inline double residual_ratio(const Vec3 &x, const KeyframePose &pose, const Vec2 &u) {
    return (u - project(x, pose)).norm();
}

// Measurement blocks for the stacked variable v = [X_i; t_j]:
//   A v = (R^{12} X + t^{12}) - u (R^{3} X + t3),  b^T v = depth.
struct MeasurementBlock {
    Eigen::Matrix<double, 2, 6> a;
    Eigen::Matrix<double, 6, 1> b;
};

inline MeasurementBlock build_A_b(const Rotation &rot, const Vec2 &u) {
    const Mat3 &r = rot.matrix();
    MeasurementBlock m;
    m.a.block<2, 3>(0, 0) = r.topRows<2>() - u * r.row(2);  // S_{i,j}
    m.a.block<2, 2>(0, 3).setIdentity();
    m.a.col(5) = -u;
    m.b.head<3>() = r.row(2).transpose();
    m.b.segment<2>(3).setZero();
    m.b(5) = 1.0;
    return m;
}

}  // namespace linf
