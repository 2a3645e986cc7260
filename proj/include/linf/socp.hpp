#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "linf/errors.hpp"

namespace linf::conic {

// ||a * x_cols + a0||_2 <= b^T x_cols + beta, stored on its support columns.
// Zero-row cones (a has 0 rows) encode plain affine lower bounds and are used
// internally for phase-1 starts.
struct ConeConstraint {
    Eigen::MatrixXd a;     // m x k
    Eigen::VectorXd a0;    // m
    Eigen::VectorXd b;     // k
    double beta = 0.0;
    std::vector<int> cols;  // k global column indices

    static ConeConstraint from_dense(const Eigen::MatrixXd &a_full, const Eigen::VectorXd &a0,
                                     const Eigen::VectorXd &b_full, double beta) {
        ConeConstraint c;
        c.a0 = a0;
        c.beta = beta;
        for (int j = 0; j < b_full.size(); ++j) {
            if (b_full[j] != 0.0 || (a_full.size() > 0 && a_full.col(j).any())) c.cols.push_back(j);
        }
        const int k = static_cast<int>(c.cols.size());
        c.a.resize(a_full.rows(), k);
        c.b.resize(k);
        for (int j = 0; j < k; ++j) {
            if (a_full.rows() > 0) c.a.col(j) = a_full.col(c.cols[j]);
            c.b[j] = b_full[c.cols[j]];
        }
        return c;
    }

    double lhs(const Eigen::VectorXd &x) const {
        if (a.rows() == 0) return 0.0;
        Eigen::VectorXd u = a0;
        for (int j = 0; j < a.cols(); ++j) u += a.col(j) * x[cols[j]];
        return u.norm();
    }

    double rhs(const Eigen::VectorXd &x) const {
        double t = beta;
        for (int j = 0; j < b.size(); ++j) t += b[j] * x[cols[j]];
        return t;
    }

    // residual ratio ||a x + a0|| / (b^T x + beta); caller guards the denominator
    double ratio(const Eigen::VectorXd &x) const { return lhs(x) / rhs(x); }
};

// g^T x >= h
struct LinearConstraint {
    Eigen::VectorXd g;      // k
    std::vector<int> cols;  // support
    double h = 0.0;

    static LinearConstraint from_dense(const Eigen::VectorXd &g_full, double h) {
        LinearConstraint l;
        l.h = h;
        for (int j = 0; j < g_full.size(); ++j)
            if (g_full[j] != 0.0) l.cols.push_back(j);
        l.g.resize(l.cols.size());
        for (size_t j = 0; j < l.cols.size(); ++j) l.g[j] = g_full[l.cols[j]];
        return l;
    }

    double margin(const Eigen::VectorXd &x) const {
        double m = -h;
        for (int j = 0; j < g.size(); ++j) m += g[j] * x[cols[j]];
        return m;
    }
};

struct FeasibilityResult {
    bool feasible = false;
    Eigen::VectorXd x;   // interior point when feasible
    double slack = 0.0;  // attained s (upper bound on s*)
    double slack_lb = -std::numeric_limits<double>::infinity();
    int newton_iters = 0;
};

struct SolverOptions {
    int max_newton = 2000;     // total Newton iterations per feasibility call
    int max_stage_newton = 60; // Newton iterations per centering stage
    double gap_tol = 1e-9;     // duality-gap target for the slack program
    double mu = 10.0;          // barrier multiplier per centering stage
    double cert_tol = 1e-12;   // slack sign band treated as boundary
    bool verbose = false;
};

namespace detail {

// One barrier Newton solve of min tau*s + Phi(x, s) around the current iterate.
// State shared across centering stages of a single slack program.
class SlackProgram {
public:
    SlackProgram(const std::vector<ConeConstraint> &cones, const std::vector<LinearConstraint> &linears, int n)
        : cones_(cones), linears_(linears), n_(n) {
        nu_ = 2.0 * static_cast<double>(cones.size()) + static_cast<double>(linears.size());
    }

    int dim() const { return n_ + 1; }
    double barrier_parameter() const { return nu_; }

    // max over cones of (lhs - rhs) at slack 0; s > this is strictly interior
    double min_interior_slack(const Eigen::VectorXd &x) const {
        double v = -std::numeric_limits<double>::infinity();
        for (const auto &c : cones_) v = std::max(v, c.lhs(x) - c.rhs(x));
        return v;
    }

    bool linears_strict(const Eigen::VectorXd &x, double margin = 0.0) const {
        for (const auto &l : linears_)
            if (l.margin(x) <= margin) return false;
        return true;
    }

    bool interior(const Eigen::VectorXd &z) const {
        const Eigen::VectorXd x = z.head(n_);
        const double s = z[n_];
        for (const auto &c : cones_)
            if (c.rhs(x) + s <= c.lhs(x)) return false;
        return linears_strict(x);
    }

    double merit(const Eigen::VectorXd &z, double tau) const {
        const Eigen::VectorXd x = z.head(n_);
        const double s = z[n_];
        double f = tau * s;
        for (const auto &c : cones_) {
            const double t = c.rhs(x) + s;
            const double un = c.lhs(x);
            const double d = t * t - un * un;
            if (d <= 0.0 || t <= 0.0) return std::numeric_limits<double>::infinity();
            f -= std::log(d);
        }
        for (const auto &l : linears_) {
            const double m = l.margin(x);
            if (m <= 0.0) return std::numeric_limits<double>::infinity();
            f -= std::log(m);
        }
        return f;
    }

    // Newton direction for min tau*s + Phi at z; returns false on factorization failure.
    bool newton_direction(const Eigen::VectorXd &z, double tau, Eigen::VectorXd &dz, double &decrement2) {
        const int N = dim();
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(N);
        grad[n_] = tau;
        triplets_.clear();
        const Eigen::VectorXd x = z.head(n_);
        const double s = z[n_];

        for (const auto &c : cones_) {
            const int k = static_cast<int>(c.cols.size());
            Eigen::VectorXd u;
            if (c.a.rows() > 0) {
                u = c.a0;
                for (int j = 0; j < k; ++j) u += c.a.col(j) * x[c.cols[j]];
            }
            const double t = c.rhs(x) + s;
            const double un2 = (c.a.rows() > 0) ? u.squaredNorm() : 0.0;
            const double d = t * t - un2;
            if (d <= 0.0) return false;

            // local variables: c.cols then s
            Eigen::VectorXd bt(k + 1);
            bt.head(k) = c.b;
            bt[k] = 1.0;
            Eigen::VectorXd atu = Eigen::VectorXd::Zero(k + 1);
            if (c.a.rows() > 0) atu.head(k) = c.a.transpose() * u;
            const Eigen::VectorXd w = t * bt - atu;

            Eigen::MatrixXd hloc = (4.0 / (d * d)) * (w * w.transpose());
            hloc.noalias() -= (2.0 / d) * (bt * bt.transpose());
            if (c.a.rows() > 0) hloc.topLeftCorner(k, k).noalias() += (2.0 / d) * (c.a.transpose() * c.a);
            const Eigen::VectorXd gloc = (-2.0 / d) * w;

            for (int r = 0; r <= k; ++r) {
                const int gr = (r < k) ? c.cols[r] : n_;
                grad[gr] += gloc[r];
                for (int cc = 0; cc <= k; ++cc) {
                    const int gc = (cc < k) ? c.cols[cc] : n_;
                    triplets_.emplace_back(gr, gc, hloc(r, cc));
                }
            }
        }
        for (const auto &l : linears_) {
            const double m = l.margin(x);
            if (m <= 0.0) return false;
            for (size_t r = 0; r < l.cols.size(); ++r) {
                grad[l.cols[r]] -= l.g[r] / m;
                for (size_t cc = 0; cc < l.cols.size(); ++cc)
                    triplets_.emplace_back(l.cols[r], l.cols[cc], l.g[r] * l.g[cc] / (m * m));
            }
        }
        Eigen::SparseMatrix<double> hess(N, N);
        hess.setFromTriplets(triplets_.begin(), triplets_.end());
        double diag_scale = 1.0;
        for (int i = 0; i < N; ++i) diag_scale = std::max(diag_scale, std::abs(hess.coeff(i, i)));

        // escalate the ridge until the factorization yields a descent direction
        for (double ridge = 1e-14; ridge <= 1e-5; ridge *= 100.0) {
            Eigen::SparseMatrix<double> h = hess;
            for (int i = 0; i < N; ++i) h.coeffRef(i, i) += ridge * diag_scale;
            Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(h);
            if (ldlt.info() != Eigen::Success) continue;
            dz = ldlt.solve(-grad);
            if (!dz.allFinite()) continue;
            decrement2 = -dz.dot(grad);
            if (decrement2 >= 0.0) return true;
        }
        return false;
    }

private:
    const std::vector<ConeConstraint> &cones_;
    const std::vector<LinearConstraint> &linears_;
    int n_;
    double nu_;
    std::vector<Eigen::Triplet<double>> triplets_;
};

// Strictly interior point for a set of linear inequalities (phase-1).
inline Eigen::VectorXd linear_interior_point(const std::vector<LinearConstraint> &linears, int n,
                                             const SolverOptions &opts);

inline FeasibilityResult minimize_slack(const std::vector<ConeConstraint> &cones,
                                        const std::vector<LinearConstraint> &linears, int n,
                                        const SolverOptions &opts,
                                        std::optional<Eigen::VectorXd> x0 = std::nullopt) {
    SlackProgram prog(cones, linears, n);
    FeasibilityResult res;

    Eigen::VectorXd x = x0.value_or(Eigen::VectorXd::Zero(n));
    if (!prog.linears_strict(x)) {
        x = linear_interior_point(linears, n, opts);
    }
    double scale = 1.0;
    for (const auto &c : cones) scale = std::max(scale, std::abs(c.beta));

    const double viol = prog.min_interior_slack(x);
    double s = (cones.empty() ? 0.0 : viol) + 0.1 * (1.0 + std::abs(viol)) + 1e-3 * scale;
    Eigen::VectorXd z(n + 1);
    z.head(n) = x;
    z[n] = s;

    const double nu = prog.barrier_parameter();
    double tau = nu / std::max(1.0, std::abs(s));
    const double cert = opts.cert_tol * scale;
    int iters = 0;

    if (s <= -cert) {  // start point is already strictly feasible for every cone
        res.feasible = true;
        res.x = x;
        res.slack = s;
        return res;
    }

    while (true) {
        // centering at the current tau; a stage that does not centre within its
        // budget is abandoned (tau still advances, only the gap certificate is
        // withheld for this stage)
        bool centered = false;
        for (int stage_iters = 0; stage_iters < opts.max_stage_newton; ++stage_iters) {
            if (iters++ >= opts.max_newton) throw NumericalFailure("slack program hit the Newton iteration cap");
            Eigen::VectorXd dz;
            double dec2 = 0.0;
            if (!prog.newton_direction(z, tau, dz, dec2)) throw NumericalFailure("barrier Hessian factorization failed");
            if (dec2 * 0.5 < 1e-8) {
                if (opts.verbose) std::fprintf(stderr, "  it=%d tau=%.3e s=%.6e dec2=%.3e centered\n", iters, tau, z[n], dec2);
                centered = true;
                break;
            }

            double alpha = 1.0;
            const double f0 = prog.merit(z, tau);
            const double slope = -dec2;
            Eigen::VectorXd zt;
            for (;;) {
                zt = z + alpha * dz;
                const double ft = prog.merit(zt, tau);
                if (std::isfinite(ft) && ft <= f0 + 0.25 * alpha * slope) break;
                alpha *= 0.5;
                if (alpha < 1e-14) break;
            }
            if (opts.verbose) {
                std::fprintf(stderr, "  it=%d tau=%.3e s=%.6e dec2=%.3e alpha=%.3e\n", iters, tau, z[n], dec2, alpha);
            }
            if (alpha < 1e-14) break;                              // stalled; stage is not certifiably centered
            if (alpha * dec2 <= 1e-13 * (1.0 + std::abs(f0))) break;  // step makes no measurable progress
            z = zt;

            if (z[n] <= -cert) {  // interior point already satisfies every cone strictly
                res.feasible = true;
                res.x = z.head(n);
                res.slack = z[n];
                res.newton_iters = iters;
                return res;
            }
        }

        const double gap = nu / tau;
        res.slack = z[n];
        if (centered) {
            res.slack_lb = z[n] - gap;
            if (res.slack_lb > cert) {
                res.feasible = false;
                res.x = z.head(n);
                res.newton_iters = iters;
                return res;
            }
        }
        if (gap < opts.gap_tol * scale) {
            res.feasible = (z[n] <= 0.0);
            res.x = z.head(n);
            res.newton_iters = iters;
            return res;
        }
        tau *= opts.mu;
    }
}

inline Eigen::VectorXd linear_interior_point(const std::vector<LinearConstraint> &linears, int n,
                                             const SolverOptions &opts) {
    // phase-1: every inequality becomes a zero-row cone slacked by s, plus s >= -1
    std::vector<ConeConstraint> cones;
    cones.reserve(linears.size() + 1);
    for (const auto &l : linears) {
        ConeConstraint c;
        c.a.resize(0, l.cols.size());
        c.a0.resize(0);
        c.b = l.g;
        c.cols = l.cols;
        c.beta = -l.h;
        cones.push_back(std::move(c));
    }
    ConeConstraint cap;
    cap.a.resize(0, 0);
    cap.a0.resize(0);
    cap.b.resize(0);
    cap.beta = 1.0;
    cones.push_back(std::move(cap));

    SolverOptions o = opts;
    o.cert_tol = 1e-9;
    FeasibilityResult r = minimize_slack(cones, {}, n, o);
    if (!r.feasible) throw Infeasible("linear constraint system has no strict interior");
    return r.x;
}

}  // namespace detail

struct FeasiblePoint {
    Eigen::VectorXd x;
    double slack = 0.0;
};

using FeasibilityOutcome = std::optional<FeasiblePoint>;  // nullopt == infeasible

// Slack-minimization feasibility test: min s subject to every cone relaxed by s
// and the linear constraints held exactly (the barrier keeps them strict).
inline FeasibilityOutcome check_feasibility(const std::vector<ConeConstraint> &cones,
                                            const std::vector<LinearConstraint> &linears, int n,
                                            const SolverOptions &opts = {},
                                            std::optional<Eigen::VectorXd> warm_start = std::nullopt) {
    const auto r = detail::minimize_slack(cones, linears, n, opts, std::move(warm_start));
    if (!r.feasible) return std::nullopt;
    return FeasiblePoint{r.x, r.slack};
}

using ConstraintSystem = std::pair<std::vector<ConeConstraint>, std::vector<LinearConstraint>>;
using GammaBuilder = std::function<ConstraintSystem(double)>;

struct GammaSolveResult {
    double gamma_star = 0.0;
    Eigen::VectorXd x_star;
    double feasible_at = 0.0;
    double infeasible_at = 0.0;
    int bisection_iters = 0;
};

inline GammaSolveResult bisect_gamma(const GammaBuilder &builder, int n, double gamma_lo, double gamma_hi,
                                     double tol, const SolverOptions &opts = {},
                                     std::optional<Eigen::VectorXd> warm_start = std::nullopt) {
    GammaSolveResult out;
    auto [cones_hi, lin_hi] = builder(gamma_hi);
    auto top = check_feasibility(cones_hi, lin_hi, n, opts, warm_start);
    if (!top) throw BadBracket();
    out.x_star = top->x;
    out.feasible_at = gamma_hi;
    out.infeasible_at = gamma_lo;

    const int iters =
        (gamma_hi - gamma_lo <= tol) ? 0 : static_cast<int>(std::ceil(std::log2((gamma_hi - gamma_lo) / tol)));
    Eigen::VectorXd last_x = top->x;
    for (int i = 0; i < iters; ++i) {
        const double mid = 0.5 * (out.feasible_at + out.infeasible_at);
        auto [cones, lins] = builder(mid);
        auto fr = check_feasibility(cones, lins, n, opts, last_x);
        if (fr) {
            out.feasible_at = mid;
            out.x_star = fr->x;
            last_x = fr->x;
        } else {
            out.infeasible_at = mid;
        }
    }
    out.bisection_iters = iters;
    out.gamma_star = 0.5 * (out.feasible_at + out.infeasible_at);
    return out;
}

// Upper bracket for bisection from a probe point: 1.1 x the worst residual
// ratio of the probe. Cones here are the gamma-independent ratio systems
// ||a x + a0|| / (b^T x + beta).
inline double initial_upper_bound(const std::vector<ConeConstraint> &ratio_cones,
                                  const std::vector<LinearConstraint> &linears, const Eigen::VectorXd &probe) {
    for (const auto &l : linears)
        if (l.margin(probe) <= 0.0) throw ProbeViolatesLinear();
    double worst = 0.0;
    for (const auto &c : ratio_cones) {
        const double den = c.rhs(probe);
        if (den <= 0.0) throw ProbeViolatesLinear("probe has non-positive cone denominator");
        worst = std::max(worst, c.lhs(probe) / den);
    }
    return 1.1 * worst;
}

// Text dump for offline cross-checking with an external conic solver.
inline void dump_problem(std::ostream &os, int n, const std::vector<ConeConstraint> &cones,
                         const std::vector<LinearConstraint> &linears) {
    os.precision(17);
    os << "n " << n << "\n";
    os << "cones " << cones.size() << "\n";
    for (const auto &c : cones) {
        os << "cone " << c.a.rows() << " " << c.cols.size() << "\n";
        os << "cols";
        for (int j : c.cols) os << " " << j;
        os << "\n";
        for (int r = 0; r < c.a.rows(); ++r) {
            os << "A";
            for (int j = 0; j < c.a.cols(); ++j) os << " " << c.a(r, j);
            os << "\n";
        }
        os << "a0";
        for (int r = 0; r < c.a0.size(); ++r) os << " " << c.a0[r];
        os << "\nb";
        for (int j = 0; j < c.b.size(); ++j) os << " " << c.b[j];
        os << "\nbeta " << c.beta << "\n";
    }
    os << "linears " << linears.size() << "\n";
    for (const auto &l : linears) {
        os << "cols";
        for (int j : l.cols) os << " " << j;
        os << "\ng";
        for (int j = 0; j < l.g.size(); ++j) os << " " << l.g[j];
        os << "\nh " << l.h << "\n";
    }
}

}  // namespace linf::conic
