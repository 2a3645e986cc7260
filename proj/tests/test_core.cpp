#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "linf/core.hpp"

using namespace linf;

namespace {

std::mt19937_64 rng(42);

Rotation random_rotation() {
    std::normal_distribution<double> n(0.0, 1.0);
    return Rotation::exp(Vec3(n(rng), n(rng), n(rng)));
}

Vec3 random_vec(double s = 1.0) {
    std::uniform_real_distribution<double> u(-s, s);
    return Vec3(u(rng), u(rng), u(rng));
}

}  // namespace

TEST_CASE("rotation construction rejects non-orthonormal input") {
    Mat3 m = Mat3::Identity();
    m(0, 0) = 1.0 + 1e-6;
    CHECK_THROWS_AS(Rotation(m), Error);
    m = -Mat3::Identity();  // det -1
    CHECK_THROWS_AS(Rotation(m), Error);
    CHECK_NOTHROW(Rotation(Mat3::Identity()));
}

TEST_CASE("so3 exp/log round trip") {
    for (int i = 0; i < 50; ++i) {
        const Vec3 w = random_vec(2.0);
        CHECK((so3::log(so3::exp(w)) - w).norm() < 1e-9);
    }
    // near pi
    const Vec3 w = Vec3(1, 0.2, -0.1).normalized() * (M_PI - 1e-4);
    CHECK((so3::log(so3::exp(w)) - w).norm() < 1e-6);
}

TEST_CASE("keyframe centre identity") {
    for (int i = 0; i < 20; ++i) {
        const KeyframePose p(random_rotation(), random_vec(3.0));
        CHECK((p.centre() + p.r.matrix().transpose() * p.t).norm() < 1e-12);
        const KeyframePose q = KeyframePose::from_centre(p.r, p.centre());
        CHECK((q.t - p.t).norm() < 1e-12);
    }
}

TEST_CASE("project trivial cases") {
    const KeyframePose ident;
    CHECK((project(Vec3(0, 0, 1), ident) - Vec2(0, 0)).norm() == 0.0);
    CHECK((project(Vec3(1, 2, 4), ident) - Vec2(0.25, 0.5)).norm() < 1e-15);
    CHECK_THROWS_AS(project(Vec3(0, 0, -1), ident), NonPositiveDepth);
}

TEST_CASE("project matches explicit 3x4 matrix product") {
    const Rotation r = Rotation::exp(Vec3(0, M_PI / 2, 0));  // 90 deg about y
    const Vec3 x(0, 0, 1);
    // choose t so that depth = 1
    Vec3 t(0.3, -0.2, 1.0 - r.matrix().row(2).dot(x));
    const KeyframePose pose(r, t);
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = r.matrix();
    p.col(3) = t;
    const Eigen::Vector4d xh(x.x(), x.y(), x.z(), 1.0);
    const Vec3 ph = p * xh;
    CHECK((project(x, pose) - Vec2(ph.x() / ph.z(), ph.y() / ph.z())).norm() < 1e-14);
}

TEST_CASE("residual_ratio basics") {
    const KeyframePose ident;
    CHECK(residual_ratio(Vec3(0, 0, 1), ident, Vec2(0, 0)) == 0.0);
    CHECK(residual_ratio(Vec3(0, 0, 1), ident, Vec2(0.3, 0.4)) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("build_A_b trivial substitutions") {
    const MeasurementBlock m0 = build_A_b(Rotation(), Vec2(0, 0));
    CHECK((m0.a.block<2, 3>(0, 0) - Mat3::Identity().topRows<2>()).norm() == 0.0);
    Eigen::Matrix<double, 6, 1> b_expect;
    b_expect << 0, 0, 1, 0, 0, 1;
    CHECK((m0.b - b_expect).norm() == 0.0);

    const MeasurementBlock m1 = build_A_b(Rotation(), Vec2(1, 1));
    Eigen::Matrix<double, 2, 3> s_expect;
    s_expect << 1, 0, -1, 0, 1, -1;
    CHECK((m1.a.block<2, 3>(0, 0) - s_expect).norm() == 0.0);
}

TEST_CASE("residual_ratio equals cone ratio ||Av||/b^T v") {
    for (int i = 0; i < 100; ++i) {
        const Rotation r = random_rotation();
        Vec3 x = random_vec(2.0);
        Vec3 t = random_vec(2.0);
        KeyframePose pose(r, t);
        if (pose.depth_of(x) < 0.1) continue;
        const Vec2 u = project(x, pose) + 0.01 * Vec2(random_vec().x(), random_vec().y());
        const MeasurementBlock blk = build_A_b(r, u);
        Eigen::Matrix<double, 6, 1> v;
        v << x, t;
        const double ratio = (blk.a * v).norm() / blk.b.dot(v);
        CHECK(std::abs(residual_ratio(x, pose, u) - ratio) <= 1e-12 * std::max(1.0, ratio));
    }
}

TEST_CASE("project is invariant under the world similarity gauge") {
    std::uniform_real_distribution<double> us(0.2, 4.0);
    for (int i = 0; i < 50; ++i) {
        const Rotation r = random_rotation();
        Vec3 x = random_vec(2.0);
        Vec3 t = random_vec(2.0);
        KeyframePose pose(r, t);
        if (pose.depth_of(x) < 0.1) continue;
        const double s = us(rng);
        const Vec3 d = random_vec(2.0);
        const KeyframePose pose2(r, s * t - r.matrix() * d);
        const Vec3 x2 = s * x + d;
        CHECK((project(x, pose) - project(x2, pose2)).norm() < 1e-10);
    }
}

TEST_CASE("graph window and union") {
    CovisibilityGraph g;
    for (int64_t i = 0; i + 1 < 4; ++i) g.add_edge({i, i + 1, Rotation(), std::nullopt, 10});

    const CovisibilityGraph full = graph_window(g, 0, 3);
    CHECK(full.nodes().size() == 4);
    CHECK(full.edges().size() == 3);

    const CovisibilityGraph w = graph_window(g, 1, 3);
    CHECK(w.nodes().size() == 3);
    REQUIRE(w.edges().size() == 2);
    CHECK(w.has_edge(1, 2));
    CHECK(w.has_edge(2, 3));

    CovisibilityGraph loop;
    loop.add_edge({0, 3, Rotation(), std::nullopt, 5});
    const CovisibilityGraph u = graph_union(g, loop);
    CHECK(u.edges().size() == 4);
    CHECK(u.has_edge(0, 3));
}

TEST_CASE("disconnected window throws") {
    CovisibilityGraph g;
    g.add_edge({0, 1, Rotation(), std::nullopt, 10});
    g.add_edge({2, 3, Rotation(), std::nullopt, 10});
    CHECK_THROWS_AS(graph_window(g, 0, 3), DisconnectedGraph);
}

TEST_CASE("feature track rejects duplicate frames") {
    FeatureTrack tr;
    tr.track_id = 7;
    tr.add(0, Vec2(0, 0));
    tr.add(2, Vec2(0.1, 0));
    CHECK_THROWS_AS(tr.add(2, Vec2(0.2, 0)), Error);
    CHECK_THROWS_AS(tr.add(1, Vec2(0.2, 0)), Error);
    CHECK(tr.find(2) != nullptr);
    CHECK(tr.find(1) == nullptr);
}
