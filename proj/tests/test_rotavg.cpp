#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "linf/rotavg.hpp"

using namespace linf;

namespace {

std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

Rotation random_rotation(std::mt19937_64 &rng, double max_angle) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec3 axis(u(rng), u(rng), u(rng));
    if (axis.norm() < 1e-12) axis = Vec3(1, 0, 0);
    axis.normalize();
    std::uniform_real_distribution<double> a(0.0, max_angle);
    return Rotation::exp(a(rng) * axis);
}

// Best single right-alignment A minimizing sum ||R_est_i A - R_gt_i||_F^2,
// then the per-frame angular errors.
std::vector<double> aligned_errors(const std::map<int64_t, Rotation> &est, const std::map<int64_t, Rotation> &gt) {
    Mat3 acc = Mat3::Zero();
    for (const auto &[id, r] : est) acc += r.matrix().transpose() * gt.at(id).matrix();
    const Rotation a = Rotation::from_matrix_nearest(acc);
    std::vector<double> errs;
    for (const auto &[id, r] : est) errs.push_back((r * a).angle_to(gt.at(id)));
    return errs;
}

// Ring of n ground-truth rotations plus chord edges, with per-edge noise.
struct RingScene {
    std::map<int64_t, Rotation> gt;
    CovisibilityGraph graph;
};

RingScene make_ring_graph(int n, double edge_noise, uint64_t seed, bool chords) {
    RingScene s;
    auto rng = make_rng(seed);
    for (int i = 0; i < n; ++i) s.gt.emplace(i, random_rotation(rng, M_PI / 3));
    auto add = [&](int j, int k, int w) {
        CovisEdge e;
        e.j = j;
        e.k = k;
        e.weight = w;
        Rotation rel = s.gt.at(k) * s.gt.at(j).inverse();
        if (edge_noise > 0.0) rel = random_rotation(rng, edge_noise) * rel;
        e.r_jk = rel;
        s.graph.add_edge(e);
    };
    for (int i = 0; i + 1 < n; ++i) add(i, i + 1, 50);
    add(0, n - 1, 40);  // closes the ring
    if (chords)
        for (int i = 0; i + 2 < n; i += 2) add(i, i + 2, 20);
    return s;
}

}  // namespace

TEST_CASE("chordal cost") {
    SECTION("identity everywhere gives zero") {
        CovisibilityGraph g;
        CovisEdge e;
        e.j = 0;
        e.k = 1;
        g.add_edge(e);
        std::map<int64_t, Rotation> r;
        r.emplace(0, Rotation());
        r.emplace(1, Rotation());
        CHECK(rotavg::chordal_cost(g, r) == Catch::Approx(0.0).margin(1e-15));
    }

    SECTION("180 degree disagreement gives 8") {
        CovisibilityGraph g;
        CovisEdge e;
        e.j = 0;
        e.k = 1;
        g.add_edge(e);
        std::map<int64_t, Rotation> r;
        r.emplace(0, Rotation());
        r.emplace(1, Rotation::exp(Vec3(M_PI, 0, 0)));  // diag(1,-1,-1)
        CHECK(rotavg::chordal_cost(g, r) == Catch::Approx(8.0).margin(1e-12));
    }

    SECTION("random instance matches elementwise expansion") {
        auto rng = make_rng(11);
        CovisibilityGraph g;
        std::map<int64_t, Rotation> r;
        for (int i = 0; i < 4; ++i) r.emplace(i, random_rotation(rng, 2.0));
        for (int j = 0; j < 4; ++j)
            for (int k = j + 1; k < 4; ++k) {
                CovisEdge e;
                e.j = j;
                e.k = k;
                e.r_jk = random_rotation(rng, 2.0);
                g.add_edge(e);
            }
        double oracle = 0.0;
        for (const auto &e : g.edges()) {
            const Mat3 d = e.r_jk.matrix() - r.at(e.k).matrix() * r.at(e.j).matrix().transpose();
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) oracle += d(a, b) * d(a, b);
        }
        CHECK(rotavg::chordal_cost(g, r) == Catch::Approx(oracle).epsilon(1e-14));
    }

    SECTION("missing rotation throws") {
        CovisibilityGraph g;
        CovisEdge e;
        e.j = 0;
        e.k = 1;
        g.add_edge(e);
        std::map<int64_t, Rotation> r;
        r.emplace(0, Rotation());
        CHECK_THROWS_AS(rotavg::chordal_cost(g, r), MissingNode);
    }
}

TEST_CASE("spanning tree init") {
    SECTION("chain with exact relatives is exact up to gauge") {
        RingScene s = make_ring_graph(6, 0.0, 3, false);
        auto init = rotavg::spanning_tree_init(s.graph);
        for (double e : aligned_errors(init, s.gt)) CHECK(e < 1e-9);
    }

    SECTION("pure tree graph has zero cost after init") {
        auto rng = make_rng(5);
        std::map<int64_t, Rotation> gt;
        CovisibilityGraph g;
        for (int i = 0; i < 5; ++i) gt.emplace(i, random_rotation(rng, 1.0));
        for (int i = 0; i + 1 < 5; ++i) {
            CovisEdge e;
            e.j = i;
            e.k = i + 1;
            e.r_jk = gt.at(i + 1) * gt.at(i).inverse();
            g.add_edge(e);
        }
        auto init = rotavg::spanning_tree_init(g);
        CHECK(rotavg::chordal_cost(g, init) < 1e-20);
    }

    SECTION("noisy loop graph: init finite, IRLS strictly reduces") {
        RingScene s = make_ring_graph(10, 3.0 * M_PI / 180.0, 7, true);
        auto init = rotavg::spanning_tree_init(s.graph);
        const double c0 = rotavg::chordal_cost(s.graph, init);
        REQUIRE(std::isfinite(c0));
        REQUIRE(c0 > 0.0);
        auto est = rotavg::irls_rotation_average(s.graph, init);
        CHECK(est.cost < c0);
    }

    SECTION("disconnected graph throws") {
        CovisibilityGraph g;
        CovisEdge e1, e2;
        e1.j = 0;
        e1.k = 1;
        e2.j = 5;
        e2.k = 6;
        g.add_edge(e1);
        g.add_edge(e2);
        CHECK_THROWS_AS(rotavg::spanning_tree_init(g), DisconnectedGraph);
    }
}

TEST_CASE("irls rotation averaging") {
    SECTION("noiseless relatives recover ground truth") {
        RingScene s = make_ring_graph(12, 0.0, 13, true);
        auto est = rotavg::irls_rotation_average(s.graph, rotavg::spanning_tree_init(s.graph));
        CHECK(est.converged);
        for (double e : aligned_errors(est.rotations, s.gt)) CHECK(e < 1e-7);
    }

    SECTION("single anchored node matches the polar-factor chordal mean") {
        for (uint64_t seed = 1; seed <= 10; ++seed) {
            auto rng = make_rng(seed);
            const int m = 4;
            std::vector<Rotation> meas;
            for (int i = 0; i < m; ++i) meas.push_back(random_rotation(rng, 0.4));

            CovisibilityGraph g;
            rotavg::RotAvgConfig cfg;
            cfg.robust = false;
            cfg.tol = 1e-13;
            cfg.max_iter = 500;
            std::map<int64_t, Rotation> init;
            for (int i = 0; i < m; ++i) {
                CovisEdge e;
                e.j = i;
                e.k = 100;
                e.r_jk = meas[i];  // anchor at identity: R_100 = R_m
                e.weight = 1;
                g.add_edge(e);
                cfg.fixed_frames.insert(i);
                init.emplace(i, Rotation());
            }
            init.emplace(100, meas[0]);

            auto est = rotavg::irls_rotation_average(g, init, cfg);
            Mat3 acc = Mat3::Zero();
            for (const auto &r : meas) acc += r.matrix();
            const Rotation oracle = Rotation::from_matrix_nearest(acc);
            CHECK(est.rotations.at(100).angle_to(oracle) < 1e-8);
        }
    }

    SECTION("single edge is satisfied exactly") {
        auto rng = make_rng(21);
        CovisibilityGraph g;
        CovisEdge e;
        e.j = 0;
        e.k = 1;
        e.r_jk = random_rotation(rng, 1.5);
        g.add_edge(e);
        auto est = rotavg::irls_rotation_average(g, rotavg::spanning_tree_init(g));
        CHECK(est.cost < 1e-20);
    }

    SECTION("gauge equivariance") {
        RingScene s = make_ring_graph(8, 2.0 * M_PI / 180.0, 31, true);
        auto est = rotavg::irls_rotation_average(s.graph, rotavg::spanning_tree_init(s.graph));
        auto errs = aligned_errors(est.rotations, s.gt);

        auto rng = make_rng(99);
        const Rotation gauge = random_rotation(rng, 2.0);
        std::map<int64_t, Rotation> gt2;
        for (const auto &[id, r] : s.gt) gt2.emplace(id, r * gauge);  // same relative rotations
        auto errs2 = aligned_errors(est.rotations, gt2);
        REQUIRE(errs.size() == errs2.size());
        for (size_t i = 0; i < errs.size(); ++i) CHECK(std::abs(errs[i] - errs2[i]) < 1e-9);
    }
}

TEST_CASE("incremental update") {
    SECTION("appending a noiseless frame keeps window cost tiny") {
        RingScene s = make_ring_graph(8, 0.0, 41, true);
        CovisibilityGraph sub = graph_window(s.graph, 0, 6);
        auto prev = rotavg::irls_rotation_average(sub, rotavg::spanning_tree_init(sub));
        auto est = rotavg::incremental_update(prev, s.graph, 7);
        CHECK(rotavg::chordal_cost(s.graph, est.rotations) < 1e-12);
    }

    SECTION("appending under noise beats cold-start init cost") {
        RingScene s = make_ring_graph(9, 2.5 * M_PI / 180.0, 43, true);
        CovisibilityGraph sub = graph_window(s.graph, 0, 7);
        auto prev = rotavg::irls_rotation_average(sub, rotavg::spanning_tree_init(sub));
        auto est = rotavg::incremental_update(prev, s.graph, 8);
        const double cold = rotavg::chordal_cost(s.graph, rotavg::spanning_tree_init(s.graph));
        CHECK(rotavg::chordal_cost(s.graph, est.rotations) <= cold);
    }

    SECTION("frames outside window keep their previous values") {
        RingScene s = make_ring_graph(10, 1.0 * M_PI / 180.0, 47, true);
        CovisibilityGraph sub = graph_window(s.graph, 0, 8);
        auto prev = rotavg::irls_rotation_average(sub, rotavg::spanning_tree_init(sub));
        prev.rotations.emplace(501, Rotation::exp(Vec3(0.3, 0, 0)));  // unrelated bookkeeping frame
        auto est = rotavg::incremental_update(prev, s.graph, 9);
        CHECK(est.rotations.at(501).angle_to(prev.rotations.at(501)) < 1e-15);
    }

    SECTION("new frame without an edge throws") {
        RingScene s = make_ring_graph(6, 0.0, 53, false);
        auto prev = rotavg::irls_rotation_average(s.graph, rotavg::spanning_tree_init(s.graph));
        CHECK_THROWS_AS(rotavg::incremental_update(prev, s.graph, 999), NoEdgeToNewFrame);
    }
}
