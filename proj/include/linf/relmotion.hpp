#pragma once

// Relative motion between keyframe pairs: normalized 8-point essential-matrix
// estimation inside RANSAC, cheirality-voted decomposition, and a rotation-only
// trimmed ray-alignment fallback for low-displacement pairs.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "linf/core.hpp"
#include "linf/errors.hpp"

namespace linf::relmotion {

struct Correspondence {
    Vec2 u_j;  // normalized coordinates in frame j
    Vec2 u_k;  // normalized coordinates in frame k
};

enum class Method { essential, ray_align };

struct RelativeMotion {
    Rotation r_jk;                // x_k ~ r_jk x_j (+ translation)
    std::optional<Vec3> t_e;      // unit epipolar translation: E = [t_e]x r_jk
    std::vector<bool> inlier_mask;
    Method method = Method::essential;
};

struct RansacConfig {
    double sampson_threshold = 1e-3;  // normalized units
    int max_iterations = 1000;
    double confidence = 0.999;
    uint64_t seed = 0;
};

struct RelMotionConfig {
    RansacConfig ransac;
    double parallax_threshold = 0.5 * M_PI / 180.0;  // low-displacement trigger
    double trim_ratio = 0.8;
    int align_max_iter = 50;
};

namespace detail {

inline Vec3 homog(const Vec2 &u) { return Vec3(u.x(), u.y(), 1.0); }

// Hartley-normalized linear solve for E from >= 8 correspondences.
inline Mat3 eight_point(const std::vector<Correspondence> &corrs, const std::vector<int> &idx) {
    auto normalizer = [&](bool second) {
        Vec2 c = Vec2::Zero();
        for (int i : idx) c += second ? corrs[i].u_k : corrs[i].u_j;
        c /= static_cast<double>(idx.size());
        double d = 0.0;
        for (int i : idx) d += ((second ? corrs[i].u_k : corrs[i].u_j) - c).norm();
        d /= static_cast<double>(idx.size());
        const double s = (d < 1e-12) ? 1.0 : std::sqrt(2.0) / d;
        Mat3 t;
        t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
        return t;
    };
    const Mat3 t1 = normalizer(false), t2 = normalizer(true);

    Eigen::MatrixXd a(idx.size(), 9);
    for (size_t r = 0; r < idx.size(); ++r) {
        const Vec3 x1 = t1 * homog(corrs[idx[r]].u_j);
        const Vec3 x2 = t2 * homog(corrs[idx[r]].u_k);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) a(r, 3 * i + j) = x2[i] * x1[j];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    if (svd.singularValues()[7] < 1e-12 * std::max(1.0, svd.singularValues()[0]))
        throw DegenerateConfiguration("essential design matrix is rank deficient");
    const Eigen::VectorXd e = svd.matrixV().col(8);
    Mat3 en;
    en << e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8];
    Mat3 raw = t2.transpose() * en * t1;

    // project onto the essential manifold: two equal singular values, third zero
    Eigen::JacobiSVD<Mat3> es(raw, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double s = 0.5 * (es.singularValues()[0] + es.singularValues()[1]);
    return es.matrixU() * Eigen::DiagonalMatrix<double, 3>(s, s, 0.0) * es.matrixV().transpose();
}

inline double sampson_error(const Mat3 &e, const Correspondence &c) {
    const Vec3 x1 = homog(c.u_j), x2 = homog(c.u_k);
    const Vec3 ex1 = e * x1;
    const Vec3 etx2 = e.transpose() * x2;
    const double num = x2.dot(ex1);
    const double den = ex1.head<2>().squaredNorm() + etx2.head<2>().squaredNorm();
    if (den < 1e-300) return std::abs(num) < 1e-300 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::abs(num) / std::sqrt(den);
}

// Two-view midpoint depths for candidate (r, t) with x_k ~ r x_j + t.
// Returns (depth_j, depth_k) of the least-squares ray intersection.
inline std::pair<double, double> midpoint_depths(const Rotation &r, const Vec3 &t, const Correspondence &c) {
    const Vec3 d1 = homog(c.u_j);
    const Vec3 d2 = r.matrix().transpose() * homog(c.u_k);
    const Vec3 rhs = -r.matrix().transpose() * t;
    Eigen::Matrix<double, 3, 2> m;
    m.col(0) = d1;
    m.col(1) = -d2;
    const Eigen::Vector2d z = m.colPivHouseholderQr().solve(rhs);
    return {z[0], z[1]};
}

}  // namespace detail

// Normalized 8-point essential estimation inside a RANSAC loop.
inline std::pair<Mat3, std::vector<bool>> estimate_essential(const std::vector<Correspondence> &corrs,
                                                             const RansacConfig &cfg = {}) {
    const int n = static_cast<int>(corrs.size());
    if (n < 8) throw TooFewInliers("need at least 8 correspondences");

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);

    int best_count = -1;
    std::vector<bool> best_mask;
    int needed = cfg.max_iterations;
    for (int it = 0; it < needed && it < cfg.max_iterations; ++it) {
        std::vector<int> sample;
        {
            std::vector<int> pool = all;
            std::shuffle(pool.begin(), pool.end(), rng);
            sample.assign(pool.begin(), pool.begin() + 8);
        }
        Mat3 e;
        try {
            e = detail::eight_point(corrs, sample);
        } catch (const DegenerateConfiguration &) {
            continue;  // degenerate minimal sample; draw another
        }
        std::vector<bool> mask(n, false);
        int count = 0;
        for (int i = 0; i < n; ++i)
            if (detail::sampson_error(e, corrs[i]) < cfg.sampson_threshold) {
                mask[i] = true;
                ++count;
            }
        if (count > best_count) {
            best_count = count;
            best_mask = std::move(mask);
            const double w = static_cast<double>(count) / n;
            if (w > 0.0) {
                const double denom = std::log(std::max(1e-12, 1.0 - std::pow(w, 8)));
                if (denom < 0.0) {
                    const double est = std::ceil(std::log(1.0 - cfg.confidence) / denom);
                    needed = static_cast<int>(std::min(static_cast<double>(cfg.max_iterations), est));
                }
            }
        }
    }
    if (best_count < 8) throw TooFewInliers("RANSAC consensus below the minimal-solver size");

    // refit on the full consensus set
    std::vector<int> inliers;
    for (int i = 0; i < n; ++i)
        if (best_mask[i]) inliers.push_back(i);
    const Mat3 e = detail::eight_point(corrs, inliers);
    std::vector<bool> mask(n, false);
    int count = 0;
    for (int i = 0; i < n; ++i)
        if (detail::sampson_error(e, corrs[i]) < cfg.sampson_threshold) {
            mask[i] = true;
            ++count;
        }
    if (count < 8) throw TooFewInliers("refit consensus below the minimal-solver size");
    return {e, mask};
}

// Choose among the four (R, +-t) candidates by cheirality voting.
inline RelativeMotion decompose_essential(const Mat3 &e, const std::vector<Correspondence> &corrs,
                                          const std::vector<bool> &inlier_mask = {}) {
    Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU(), v = svd.matrixV();
    if (u.determinant() < 0) u.col(2) *= -1.0;
    if (v.determinant() < 0) v.col(2) *= -1.0;
    Mat3 w;
    w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    const Rotation r1 = Rotation::from_matrix_nearest(u * w * v.transpose());
    const Rotation r2 = Rotation::from_matrix_nearest(u * w.transpose() * v.transpose());
    const Vec3 t = u.col(2);

    const std::array<std::pair<Rotation, Vec3>, 4> cands{
        std::pair{r1, t}, std::pair{r1, Vec3(-t)}, std::pair{r2, t}, std::pair{r2, Vec3(-t)}};

    int votes[4] = {0, 0, 0, 0};
    int considered = 0;
    for (size_t i = 0; i < corrs.size(); ++i) {
        if (!inlier_mask.empty() && !inlier_mask[i]) continue;
        ++considered;
        for (int ci = 0; ci < 4; ++ci) {
            auto [zj, zk] = detail::midpoint_depths(cands[ci].first, cands[ci].second, corrs[i]);
            if (zj > kDepthTol && zk > kDepthTol) ++votes[ci];
        }
    }
    const int best = static_cast<int>(std::max_element(votes, votes + 4) - votes);
    if (considered == 0 || 2 * votes[best] <= considered)
        throw AmbiguousCheirality("no pose candidate wins a strict cheirality majority");

    RelativeMotion out;
    out.r_jk = cands[best].first;
    out.t_e = cands[best].second.normalized();
    out.inlier_mask = inlier_mask;
    out.method = Method::essential;
    return out;
}

// Rotation-only trimmed alignment: R minimizing the kept fraction of
// || ray_k - R ray_j ||^2, inner step the polar factor of the cross-covariance.
inline Rotation rotation_align_trimmed(const std::vector<Vec3> &rays_j, const std::vector<Vec3> &rays_k,
                                       double trim_ratio = 0.8, int max_iter = 50) {
    if (rays_j.size() != rays_k.size()) throw BadParams("ray lists differ in length");
    if (trim_ratio <= 0.0 || trim_ratio > 1.0) throw BadParams("trim_ratio must be in (0, 1]");
    const int n = static_cast<int>(rays_j.size());
    const int keep = std::max(3, static_cast<int>(std::ceil(trim_ratio * n)));
    if (n < 3 || keep > n) throw InsufficientRays();

    std::vector<int> kept(n);
    std::iota(kept.begin(), kept.end(), 0);
    Rotation r;
    double prev_obj = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        Mat3 cov = Mat3::Zero();
        for (int i : kept) cov += rays_k[i] * rays_j[i].transpose();
        r = Rotation::from_matrix_nearest(cov);

        std::vector<double> res(n);
        for (int i = 0; i < n; ++i) res[i] = (rays_k[i] - r.matrix() * rays_j[i]).squaredNorm();
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) { return res[a] < res[b]; });
        std::vector<int> next(order.begin(), order.begin() + keep);
        std::sort(next.begin(), next.end());

        double obj = 0.0;
        for (int i : next) obj += res[i];
        if (obj > prev_obj + 1e-12 * (1.0 + prev_obj))
            throw NumericalFailure("trimmed alignment objective increased");
        const bool fixed_set = (next == kept);
        prev_obj = obj;
        kept = std::move(next);
        if (fixed_set && it > 0) break;
    }
    return r;
}

// Full relative-motion path: essential-matrix route with a ray-alignment
// fallback when the pair is (nearly) translation-free.
inline RelativeMotion estimate_relative(const std::vector<Correspondence> &corrs, const RelMotionConfig &cfg = {}) {
    if (corrs.size() < 3) throw InsufficientRays("too few shared tracks for any relative-motion path");

    auto ray_align_path = [&]() {
        std::vector<Vec3> rj, rk;
        rj.reserve(corrs.size());
        rk.reserve(corrs.size());
        for (const auto &c : corrs) {
            rj.push_back(detail::homog(c.u_j).normalized());
            rk.push_back(detail::homog(c.u_k).normalized());
        }
        RelativeMotion out;
        out.r_jk = rotation_align_trimmed(rj, rk, cfg.trim_ratio, cfg.align_max_iter);
        out.method = Method::ray_align;
        // mark the kept fraction as inliers by residual rank
        std::vector<double> res(corrs.size());
        for (size_t i = 0; i < corrs.size(); ++i) res[i] = (rk[i] - out.r_jk.matrix() * rj[i]).squaredNorm();
        std::vector<size_t> order(corrs.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return res[a] < res[b]; });
        const size_t keep = std::max<size_t>(3, static_cast<size_t>(std::ceil(cfg.trim_ratio * corrs.size())));
        out.inlier_mask.assign(corrs.size(), false);
        for (size_t i = 0; i < keep && i < order.size(); ++i) out.inlier_mask[order[i]] = true;
        return out;
    };

    if (corrs.size() < 8) return ray_align_path();

    std::vector<bool> mask;
    RelativeMotion rel;
    try {
        auto [e, m] = estimate_essential(corrs, cfg.ransac);
        mask = std::move(m);
        rel = decompose_essential(e, corrs, mask);
    } catch (const AmbiguousCheirality &) {
        return ray_align_path();
    } catch (const TooFewInliers &) {
        return ray_align_path();
    } catch (const DegenerateConfiguration &) {
        return ray_align_path();
    }

    // low-displacement test: median rotation-compensated ray parallax
    std::vector<double> par;
    for (size_t i = 0; i < corrs.size(); ++i) {
        if (!mask[i]) continue;
        const Vec3 a = rel.r_jk.matrix() * detail::homog(corrs[i].u_j).normalized();
        const Vec3 b = detail::homog(corrs[i].u_k).normalized();
        par.push_back(std::acos(std::clamp(a.dot(b), -1.0, 1.0)));
    }
    std::nth_element(par.begin(), par.begin() + par.size() / 2, par.end());
    if (par[par.size() / 2] < cfg.parallax_threshold) return ray_align_path();
    return rel;
}

}  // namespace linf::relmotion
