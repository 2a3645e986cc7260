#pragma once

// Chordal-metric rotation averaging over a covisibility graph via robust
// IRLS in the tangent space of SO(3), with warm-started incremental updates.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <vector>

#include "linf/core.hpp"
#include "linf/errors.hpp"

namespace linf::rotavg {

struct RotationEstimate {
    std::map<int64_t, Rotation> rotations;
    double cost = 0.0;  // chordal cost at the returned rotations
    int iterations = 0;
    bool converged = false;
};

struct RotAvgConfig {
    double tol = 1e-8;       // max tangent-update norm (radians) for convergence
    int max_iter = 100;
    bool robust = true;      // Geman-McClure reweighting on edge residual angle
    double sigma = 5.0 * M_PI / 180.0;        // robust scale, annealed
    double sigma_floor = 1.0 * M_PI / 180.0;  // annealing floor
    int anneal_every = 10;                    // halve sigma every this many iterations
    std::set<int64_t> fixed_frames;           // pinned to init; empty = lowest frame id
};

// Sum over edges of || R_jk - R_k R_j^{-1} ||_F^2.
inline double chordal_cost(const CovisibilityGraph &graph, const std::map<int64_t, Rotation> &rotations) {
    double cost = 0.0;
    for (const auto &e : graph.edges()) {
        auto jt = rotations.find(e.j);
        auto kt = rotations.find(e.k);
        if (jt == rotations.end() || kt == rotations.end()) throw MissingNode();
        cost += (e.r_jk.matrix() - kt->second.matrix() * jt->second.matrix().transpose()).squaredNorm();
    }
    return cost;
}

// Chain relative rotations along a maximum-weight spanning tree rooted at the
// lowest frame id (set to identity).
inline std::map<int64_t, Rotation> spanning_tree_init(const CovisibilityGraph &graph) {
    if (graph.nodes().empty()) return {};
    if (!graph.connected()) throw DisconnectedGraph();

    std::map<int64_t, std::vector<size_t>> adj;
    for (size_t i = 0; i < graph.edges().size(); ++i) {
        adj[graph.edges()[i].j].push_back(i);
        adj[graph.edges()[i].k].push_back(i);
    }

    std::map<int64_t, Rotation> out;
    const int64_t root = *graph.nodes().begin();
    out.emplace(root, Rotation());

    // Prim's algorithm on edge weight; ties broken by edge insertion order.
    using Item = std::tuple<int, size_t>;  // (-weight, edge index)
    auto cmp = [](const Item &a, const Item &b) { return a > b; };
    std::priority_queue<Item, std::vector<Item>, decltype(cmp)> heap(cmp);
    for (size_t ei : adj[root]) heap.emplace(-graph.edges()[ei].weight, ei);
    while (!heap.empty()) {
        auto [negw, ei] = heap.top();
        heap.pop();
        const CovisEdge &e = graph.edges()[ei];
        const bool have_j = out.count(e.j) > 0, have_k = out.count(e.k) > 0;
        if (have_j == have_k) continue;  // both solved (or unreachable end) -> skip
        int64_t fresh;
        if (have_j) {
            out.emplace(e.k, e.r_jk * out.at(e.j));  // R_k = R_jk R_j
            fresh = e.k;
        } else {
            out.emplace(e.j, e.r_jk.inverse() * out.at(e.k));
            fresh = e.j;
        }
        for (size_t nei : adj[fresh]) heap.emplace(-graph.edges()[nei].weight, nei);
    }
    return out;
}

namespace detail {

// Per-edge IRLS weight: covisibility weight x robust factor x the chordal
// factor sin(theta)/theta, which makes the weighted-least-squares fixed point
// a critical point of the chordal cost rather than the geodesic one.
inline double edge_weight(const CovisEdge &e, double theta, double sigma, bool robust) {
    double w = std::max(1, e.weight);
    if (robust) w *= sigma * sigma / (sigma * sigma + theta * theta);
    w *= (theta < 1e-9) ? 1.0 : std::sin(theta) / theta;
    return w;
}

}  // namespace detail

// Robust IRLS for Eq.-style chordal rotation averaging. Residual per edge is
// Log(R_k^{-1} R_jk R_j); the linearised model under right-updates
// R <- R Exp(delta) is r + delta_j - delta_k, giving a 3x3-block Laplacian
// system. The robust surrogate (frozen-weight quadratic) is kept non-increasing
// by halving the tangent step when needed.
inline RotationEstimate irls_rotation_average(const CovisibilityGraph &graph,
                                              const std::map<int64_t, Rotation> &init,
                                              const RotAvgConfig &cfg = {}) {
    if (!graph.connected()) throw DisconnectedGraph();
    for (int64_t id : graph.nodes())
        if (!init.count(id)) throw MissingNode("init lacks a rotation for a graph node");

    RotationEstimate est;
    for (int64_t id : graph.nodes()) est.rotations.emplace(id, init.at(id));

    std::set<int64_t> fixed = cfg.fixed_frames;
    if (fixed.empty() && !graph.nodes().empty()) fixed.insert(*graph.nodes().begin());

    std::map<int64_t, int> index;  // free node -> block index
    for (int64_t id : graph.nodes())
        if (!fixed.count(id)) index[id] = static_cast<int>(index.size());
    const int nfree = static_cast<int>(index.size());
    if (nfree == 0 || graph.edges().empty()) {
        est.cost = chordal_cost(graph, est.rotations);
        est.converged = true;
        return est;
    }

    double sigma = cfg.sigma;
    std::vector<Eigen::Triplet<double>> trips;
    for (est.iterations = 0; est.iterations < cfg.max_iter; ++est.iterations) {
        if (cfg.robust && est.iterations > 0 && est.iterations % cfg.anneal_every == 0)
            sigma = std::max(cfg.sigma_floor, 0.5 * sigma);

        // assemble the weighted normal equations over tangent updates
        trips.clear();
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(3 * nfree);
        std::vector<Vec3> res(graph.edges().size());
        std::vector<double> w(graph.edges().size());
        double surrogate0 = 0.0;
        for (size_t ei = 0; ei < graph.edges().size(); ++ei) {
            const CovisEdge &e = graph.edges()[ei];
            const Rotation rel = est.rotations.at(e.k).inverse() * (e.r_jk * est.rotations.at(e.j));
            res[ei] = rel.log();
            const double theta = res[ei].norm();
            w[ei] = detail::edge_weight(e, theta, sigma, cfg.robust);
            surrogate0 += w[ei] * theta * theta;

            const auto jt = index.find(e.j);
            const auto kt = index.find(e.k);
            for (int d = 0; d < 3; ++d) {
                if (jt != index.end()) {
                    trips.emplace_back(3 * jt->second + d, 3 * jt->second + d, w[ei]);
                    rhs[3 * jt->second + d] -= w[ei] * res[ei][d];
                }
                if (kt != index.end()) {
                    trips.emplace_back(3 * kt->second + d, 3 * kt->second + d, w[ei]);
                    rhs[3 * kt->second + d] += w[ei] * res[ei][d];
                }
                if (jt != index.end() && kt != index.end()) {
                    trips.emplace_back(3 * jt->second + d, 3 * kt->second + d, -w[ei]);
                    trips.emplace_back(3 * kt->second + d, 3 * jt->second + d, -w[ei]);
                }
            }
        }
        Eigen::SparseMatrix<double> lap(3 * nfree, 3 * nfree);
        lap.setFromTriplets(trips.begin(), trips.end());
        for (int i = 0; i < 3 * nfree; ++i) lap.coeffRef(i, i) += 1e-12;
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(lap);
        if (ldlt.info() != Eigen::Success) throw NumericalFailure("rotation averaging normal equations failed");
        Eigen::VectorXd delta = ldlt.solve(rhs);
        if (!delta.allFinite()) throw NumericalFailure("rotation averaging produced non-finite update");

        // step-halving to keep the frozen-weight surrogate non-increasing
        double step = 1.0;
        std::map<int64_t, Rotation> trial;
        double surrogate1 = 0.0;
        for (int attempt = 0;; ++attempt) {
            trial = est.rotations;
            for (const auto &[id, bi] : index)
                trial.at(id) = trial.at(id) * Rotation::exp(step * delta.segment<3>(3 * bi));
            surrogate1 = 0.0;
            for (size_t ei = 0; ei < graph.edges().size(); ++ei) {
                const CovisEdge &e = graph.edges()[ei];
                const Rotation rel = trial.at(e.k).inverse() * (e.r_jk * trial.at(e.j));
                surrogate1 += w[ei] * rel.log().squaredNorm();
            }
            if (surrogate1 <= surrogate0 + 1e-15 * (1.0 + surrogate0) || attempt >= 12) break;
            step *= 0.5;
        }
        if (surrogate1 > surrogate0 + 1e-12 * (1.0 + surrogate0)) break;  // no descent left
        est.rotations = std::move(trial);

        if (step * delta.lpNorm<Eigen::Infinity>() < cfg.tol) {
            double maxn = 0.0;
            for (const auto &[id, bi] : index) maxn = std::max(maxn, step * delta.segment<3>(3 * bi).norm());
            if (maxn < cfg.tol) {
                est.converged = true;
                ++est.iterations;
                break;
            }
        }
    }
    est.cost = chordal_cost(graph, est.rotations);
    return est;
}

// Warm-started update: initialise the new frame by chaining its strongest
// edge into the previous estimate, then re-run IRLS on the window graph.
// Frames absent from the window keep their previous values.
inline RotationEstimate incremental_update(const RotationEstimate &prev, const CovisibilityGraph &graph_window,
                                           int64_t new_frame, const RotAvgConfig &cfg = {}) {
    const CovisEdge *best = nullptr;
    for (const auto &e : graph_window.edges()) {
        const int64_t other = (e.j == new_frame) ? e.k : (e.k == new_frame) ? e.j : -1;
        if (other < 0 || !prev.rotations.count(other)) continue;
        if (!best || e.weight > best->weight) best = &e;
    }
    if (!best) throw NoEdgeToNewFrame();

    std::map<int64_t, Rotation> init;
    for (int64_t id : graph_window.nodes())
        if (prev.rotations.count(id)) init.emplace(id, prev.rotations.at(id));
    if (best->k == new_frame)
        init.emplace(new_frame, best->r_jk * init.at(best->j));
    else
        init.emplace(new_frame, best->r_jk.inverse() * init.at(best->k));

    RotationEstimate est = irls_rotation_average(graph_window, init, cfg);
    for (const auto &[id, r] : prev.rotations)
        if (!est.rotations.count(id)) est.rotations.emplace(id, r);
    return est;
}

}  // namespace linf::rotavg
