#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "linf/core.hpp"
#include "linf/krot.hpp"
#include "linf/socp.hpp"

using namespace linf;
using conic::ConeConstraint;
using conic::LinearConstraint;

TEST_CASE("single cone with linear floor is feasible") {
    // ||(x1,x2)|| <= x0 together with x0 >= 1
    Eigen::MatrixXd a(2, 3);
    a << 0, 1, 0, 0, 0, 1;
    Eigen::VectorXd b(3);
    b << 1, 0, 0;
    auto cone = ConeConstraint::from_dense(a, Eigen::Vector2d::Zero(), b, 0.0);
    Eigen::VectorXd g(3);
    g << 1, 0, 0;
    auto lin = LinearConstraint::from_dense(g, 1.0);

    auto r = conic::check_feasibility({cone}, {lin}, 3);
    REQUIRE(r.has_value());
    CHECK(r->x[0] >= 1.0 - 1e-9);
    CHECK(std::hypot(r->x[1], r->x[2]) <= r->x[0] + 1e-9);
}

TEST_CASE("norm below negative constant is infeasible") {
    // ||x|| <= -1
    auto cone = ConeConstraint::from_dense(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3),
                                           Eigen::VectorXd::Zero(3), -1.0);
    auto r = conic::check_feasibility({cone}, {}, 3);
    CHECK(!r.has_value());
}

TEST_CASE("contradictory linear constraints are infeasible via phase-1") {
    Eigen::VectorXd g(1);
    g << 1;
    auto lo = LinearConstraint::from_dense(g, 1.0);   // x >= 1
    auto hi = LinearConstraint::from_dense(-g, 0.0);  // x <= 0
    auto cone = ConeConstraint::from_dense(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1), g, 2.0);
    CHECK_THROWS_AS(conic::check_feasibility({cone}, {lo, hi}, 1), Infeasible);
}

namespace {

// one-point / two-camera KRot instance with a known generating geometry
struct TinyInstance {
    krot::KRotProblem prob;
    Vec3 x_gt;
    Vec3 t2_gt;
};

TinyInstance make_tiny(std::mt19937_64 &rng, double noise) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    TinyInstance ti;
    const Rotation r1;  // identity at origin
    const Rotation r2 = Rotation::exp(Vec3(0.05 * n(rng), 0.3 + 0.05 * n(rng), 0.05 * n(rng)));
    ti.x_gt = Vec3(u(rng), u(rng), 4.0 + u(rng));
    const Vec3 c2(1.0 + 0.2 * n(rng), 0.2 * n(rng), 0.2 * n(rng));
    ti.t2_gt = -(r2.matrix() * c2);
    const KeyframePose p1(r1, Vec3::Zero()), p2(r2, ti.t2_gt);

    FeatureTrack tr;
    tr.track_id = 0;
    tr.add(0, project(ti.x_gt, p1) + noise * Vec2(n(rng), n(rng)));
    tr.add(1, project(ti.x_gt, p2) + noise * Vec2(n(rng), n(rng)));

    std::map<int64_t, Rotation> rots{{0, r1}, {1, r2}};
    ti.prob = krot::build_krot(rots, {tr});
    return ti;
}

// quasi-convex max-ratio objective: shrinking-step pattern search finds the
// global minimum since sublevel sets are convex
double brute_force_gamma(const krot::KRotProblem &p, Eigen::VectorXd v0) {
    auto value = [&](const Eigen::VectorXd &v) {
        for (size_t i = 0; i < p.measurements.size(); ++i) {
            const double den = p.ratio_cone(i).rhs(v);
            const double need = (static_cast<int>(i) == p.scale_measurement) ? 1.0 : 1e-6;
            if (den < need) return 1e9;
        }
        return p.max_ratio(v);
    };
    double best = value(v0);
    double step = 0.25;
    while (step > 1e-7) {
        bool improved = false;
        for (int d = 0; d < v0.size(); ++d) {
            for (double sgn : {1.0, -1.0}) {
                Eigen::VectorXd v = v0;
                v[d] += sgn * step;
                const double f = value(v);
                if (f < best - 1e-12) {
                    best = f;
                    v0 = v;
                    improved = true;
                }
            }
        }
        if (!improved) step *= 0.5;
    }
    return best;
}

}  // namespace

TEST_CASE("bisection matches brute-force minimax on 2-camera/1-point instances") {
    std::mt19937_64 rng(7);
    for (int inst = 0; inst < 8; ++inst) {
        const TinyInstance ti = make_tiny(rng, 2e-3);
        const krot::KRotSolution sol = krot::solve_krot(ti.prob, 1e-6);
        const double oracle = brute_force_gamma(ti.prob, sol.certificate.x_star);
        CHECK(std::abs(sol.gamma_star - oracle) < 1e-4);
    }
}

TEST_CASE("feasibility flips around gamma_star") {
    std::mt19937_64 rng(11);
    const TinyInstance ti = make_tiny(rng, 2e-3);
    const double tol = 1e-6;
    const krot::KRotSolution sol = krot::solve_krot(ti.prob, tol);
    auto above = ti.prob.at_gamma(sol.gamma_star + 2 * tol);
    auto below = ti.prob.at_gamma(sol.gamma_star - 2 * tol);
    CHECK(conic::check_feasibility(above.first, above.second, ti.prob.n).has_value());
    CHECK(!conic::check_feasibility(below.first, below.second, ti.prob.n).has_value());
}

TEST_CASE("quasi-convex monotonicity of feasibility in gamma") {
    std::mt19937_64 rng(13);
    const TinyInstance ti = make_tiny(rng, 1e-3);
    const krot::KRotSolution sol = krot::solve_krot(ti.prob, 1e-6);
    double prev_feasible = false;
    for (double g : {0.25 * sol.gamma_star, 0.9 * sol.gamma_star, 1.5 * sol.gamma_star, 4.0 * sol.gamma_star}) {
        auto sys = ti.prob.at_gamma(g);
        const bool f = conic::check_feasibility(sys.first, sys.second, ti.prob.n).has_value();
        if (prev_feasible) CHECK(f);  // once feasible, stays feasible
        prev_feasible = f;
    }
    CHECK(prev_feasible);
}

TEST_CASE("bisection iteration count and bracket accounting") {
    // cone: |x - 5| <= gamma, with x free: gamma* = 0; use builder over 1 var
    auto builder = [](double gamma) -> conic::ConstraintSystem {
        Eigen::MatrixXd a(1, 1);
        a << 1;
        Eigen::VectorXd a0(1);
        a0 << -5;
        auto cone = ConeConstraint::from_dense(a, a0, Eigen::VectorXd::Zero(1), gamma);
        return {{cone}, {}};
    };
    const double tol = 1e-6;
    auto res = conic::bisect_gamma(builder, 1, 0.0, 1.0, tol);
    CHECK(res.bisection_iters == static_cast<int>(std::ceil(std::log2(1.0 / tol))));
    CHECK(res.feasible_at - res.infeasible_at <= 2 * tol);
    CHECK(res.infeasible_at < res.gamma_star);
    CHECK(res.gamma_star <= res.feasible_at);
    CHECK(res.gamma_star < 2 * tol);
    CHECK(std::abs(res.x_star[0] - 5.0) <= res.feasible_at + 1e-9);
}

TEST_CASE("bad bracket throws") {
    // |x| <= gamma and x >= 1: infeasible for gamma < 1
    auto builder = [](double gamma) -> conic::ConstraintSystem {
        Eigen::MatrixXd a(1, 1);
        a << 1;
        auto cone = ConeConstraint::from_dense(a, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), gamma);
        Eigen::VectorXd g(1);
        g << 1;
        return {{cone}, {LinearConstraint::from_dense(g, 1.0)}};
    };
    CHECK_THROWS_AS(conic::bisect_gamma(builder, 1, 0.0, 0.5, 1e-6), BadBracket);
}

TEST_CASE("initial_upper_bound") {
    std::mt19937_64 rng(17);
    const TinyInstance ti = make_tiny(rng, 0.0);
    Eigen::VectorXd probe(ti.prob.n);
    const int po = ti.prob.point_offset.at(0);
    const int to = ti.prob.trans_offset.at(1);
    // normalize the gauge so the scale measurement depth is 1
    Eigen::VectorXd v(ti.prob.n);
    v.segment<3>(po) = ti.x_gt;
    v.segment<3>(to) = ti.t2_gt;
    const double depth0 = ti.prob.ratio_cone(ti.prob.scale_measurement).rhs(v);
    v *= 2.0 / depth0;

    std::vector<ConeConstraint> ratios;
    for (size_t i = 0; i < ti.prob.measurements.size(); ++i) ratios.push_back(ti.prob.ratio_cone(i));
    auto lins = ti.prob.linear_constraints();
    // ground truth probe on noiseless data: bound ~ 0
    CHECK(conic::initial_upper_bound(ratios, lins, v) <= 1e-10);

    Eigen::VectorXd bad = v;
    bad.segment<3>(po) = -ti.x_gt;  // point behind the first camera
    CHECK_THROWS_AS(conic::initial_upper_bound(ratios, lins, bad), ProbeViolatesLinear);
}

TEST_CASE("problem dump is parseable text") {
    std::mt19937_64 rng(19);
    const TinyInstance ti = make_tiny(rng, 1e-3);
    auto sys = ti.prob.at_gamma(0.01);
    std::ostringstream os;
    conic::dump_problem(os, ti.prob.n, sys.first, sys.second);
    const std::string s = os.str();
    CHECK(s.find("n 6") == 0);
    CHECK(s.find("cones 2") != std::string::npos);
    CHECK(s.find("linears 2") != std::string::npos);
}
