#pragma once

// Gauge alignment and trajectory error metrics: a closed-form least-squares
// similarity over camera centres, then per-frame position / rotation errors.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "core.hpp"
#include "errors.hpp"

namespace linf {

struct Similarity {
    double s = 1.0;
    Mat3 r = Mat3::Identity();
    Vec3 d = Vec3::Zero();

    Vec3 apply(const Vec3 &x) const { return s * (r * x) + d; }
    KeyframePose apply(const KeyframePose &p) const {
        return KeyframePose::from_centre(Rotation(so3::project_to_so3(p.r.matrix() * r.transpose())), apply(p.centre()));
    }
};

struct AlignResult {
    Similarity sim;
    bool collinear_fallback = false;  // scale fixed by trajectory length instead
    std::map<int64_t, KeyframePose> aligned;
};

inline AlignResult align_similarity(const std::map<int64_t, KeyframePose> &est,
                                    const std::map<int64_t, KeyframePose> &gt) {
    if (est.size() != gt.size()) throw FrameMismatch();
    const int n = static_cast<int>(est.size());
    if (n < 3) throw DegenerateConfiguration("need at least 3 camera centres to align");

    Eigen::Matrix3Xd e(3, n), g(3, n);
    int i = 0;
    for (const auto &[fid, pe] : est) {
        auto it = gt.find(fid);
        if (it == gt.end()) throw FrameMismatch();
        e.col(i) = pe.centre();
        g.col(i) = it->second.centre();
        ++i;
    }
    const Vec3 eb = e.rowwise().mean(), gb = g.rowwise().mean();
    e.colwise() -= eb;
    g.colwise() -= gb;

    const Mat3 sigma = (g * e.transpose()) / n;
    Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::JacobiSVD<Eigen::Matrix3Xd> shape(e);

    AlignResult out;
    const double spread = shape.singularValues()(0);
    if (spread < 1e-12 || shape.singularValues()(1) < 1e-9 * spread) {
        // Collinear (or coincident) centres: orientation about the line and the
        // Umeyama scale are unobservable. Fix scale by trajectory length and
        // rotate the principal est direction onto the gt one.
        out.collinear_fallback = true;
        double len_e = 0.0, len_g = 0.0;
        for (int c = 0; c + 1 < n; ++c) {
            len_e += (e.col(c + 1) - e.col(c)).norm();
            len_g += (g.col(c + 1) - g.col(c)).norm();
        }
        out.sim.s = len_e > 1e-15 ? len_g / len_e : 1.0;
        const Vec3 de = shape.matrixU().col(0);
        Eigen::JacobiSVD<Eigen::Matrix3Xd> shape_g(g);
        Vec3 dg = shape_g.matrixU().col(0);
        if ((e.transpose() * de).dot(g.transpose() * dg) < 0.0) dg = -dg;
        out.sim.r = Eigen::Quaterniond::FromTwoVectors(de, dg).toRotationMatrix();
    } else {
        Mat3 s_fix = Mat3::Identity();
        if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s_fix(2, 2) = -1.0;
        out.sim.r = svd.matrixU() * s_fix * svd.matrixV().transpose();
        const double var_e = e.squaredNorm() / n;
        out.sim.s = (svd.singularValues().asDiagonal() * s_fix).trace() / var_e;
    }
    out.sim.d = gb - out.sim.s * (out.sim.r * eb);
    for (const auto &[fid, pe] : est) out.aligned.emplace(fid, out.sim.apply(pe));
    return out;
}

struct Metrics {
    std::vector<int64_t> frame_ids;
    std::vector<double> pos_err;      // world units, after gauge alignment
    std::vector<double> rot_err_deg;  // arccos((trace(R_gt^T R_est) - 1) / 2)
    double max_pos = 0.0, rmse_pos = 0.0;
    double max_rot = 0.0, rmse_rot = 0.0;
};

inline Metrics compute_metrics(const std::map<int64_t, KeyframePose> &aligned,
                               const std::map<int64_t, KeyframePose> &gt) {
    if (aligned.size() != gt.size()) throw FrameMismatch();
    Metrics m;
    double ssq_p = 0.0, ssq_r = 0.0;
    for (const auto &[fid, pe] : aligned) {
        auto it = gt.find(fid);
        if (it == gt.end()) throw FrameMismatch();
        const double dp = (pe.centre() - it->second.centre()).norm();
        const double dr = so3::angle_between(pe.r.matrix(), it->second.r.matrix()) * 180.0 / M_PI;
        m.frame_ids.push_back(fid);
        m.pos_err.push_back(dp);
        m.rot_err_deg.push_back(dr);
        m.max_pos = std::max(m.max_pos, dp);
        m.max_rot = std::max(m.max_rot, dr);
        ssq_p += dp * dp;
        ssq_r += dr * dr;
    }
    const double n = static_cast<double>(m.frame_ids.size());
    if (n > 0) {
        m.rmse_pos = std::sqrt(ssq_p / n);
        m.rmse_rot = std::sqrt(ssq_r / n);
    }
    return m;
}

}  // namespace linf
