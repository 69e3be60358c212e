// Dense strictly convex QP solver:
//
//   minimize    1/2 x' H x + f' x
//   subject to  lb <= A x <= ub        (infinite bounds allowed, lb = ub
//                                       rows are treated as equalities)
//
// Primal active-set method with dual multipliers computed at every
// candidate optimum. Horizon problems here are small (tens of variables)
// and re-solved every control period with slowly varying data, so the
// solver keeps its last active set and warm starts from it. A feasible
// start, when none is supplied, is recovered by Gauss-Newton on the
// constraint violations. A Bland-style lowest-index rule kicks in after a
// stretch of iterations without objective progress.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace agile_mpc {

struct QpProblem {
    Eigen::MatrixXd hessian;     // n x n, symmetric positive definite
    Eigen::VectorXd gradient;    // n
    Eigen::MatrixXd constraints; // m x n (m may be zero)
    Eigen::VectorXd lower;       // m
    Eigen::VectorXd upper;       // m

    int num_vars() const { return static_cast<int>(gradient.size()); }
    int num_rows() const { return static_cast<int>(lower.size()); }

    double objective(const Eigen::VectorXd& x) const {
        return 0.5 * x.dot(hessian * x) + gradient.dot(x);
    }

    void validate() const {
        const int n = num_vars();
        const int m = num_rows();
        if (hessian.rows() != n || hessian.cols() != n) {
            throw std::invalid_argument("QpProblem: Hessian dimension mismatch");
        }
        if ((hessian - hessian.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
            throw std::invalid_argument("QpProblem: Hessian not symmetric");
        }
        if (constraints.rows() != m || upper.size() != m ||
            (m > 0 && constraints.cols() != n)) {
            throw std::invalid_argument("QpProblem: constraint dimension mismatch");
        }
    }
};

enum class QpStatus { optimal, max_iterations, infeasible };

/// Active-side markers per constraint row: -1 lower bound, +1 upper bound,
/// 0 inactive. Equality rows use +1.
using ActiveSet = std::vector<std::int8_t>;

struct QpSolution {
    Eigen::VectorXd x;
    QpStatus status{QpStatus::infeasible};
    int iterations{0};
    double kkt_residual{std::numeric_limits<double>::infinity()};
    Eigen::VectorXd lambda;  // signed row multipliers: >= 0 upper, <= 0 lower
    ActiveSet active;
};

/// Max of stationarity, primal violation, wrong-side multipliers and
/// complementary slackness for the given primal-dual pair.
inline double kkt_residual(const QpProblem& p, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& lambda) {
    const int m = p.num_rows();
    Eigen::VectorXd stat = p.hessian * x + p.gradient;
    if (m > 0) stat += p.constraints.transpose() * lambda;
    double res = stat.lpNorm<Eigen::Infinity>();

    const double inf = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
        const double ax = m > 0 ? p.constraints.row(i).dot(x) : 0.0;
        if (p.lower[i] > -inf) res = std::max(res, p.lower[i] - ax);
        if (p.upper[i] < inf) res = std::max(res, ax - p.upper[i]);
        const double lam = lambda[i];
        if (lam > 0.0) {
            // claims the upper bound
            res = std::max(res, p.upper[i] < inf ? lam * std::abs(p.upper[i] - ax) : lam);
        } else if (lam < 0.0) {
            res = std::max(res, p.lower[i] > -inf ? -lam * std::abs(ax - p.lower[i]) : -lam);
        }
    }
    return res;
}

class QpSolver {
  public:
    struct Options {
        int max_iterations{0};       // 0 -> 10 (n + m)
        double feasibility_tol{1e-9};
        double optimality_tol{1e-9};
        int stall_window_factor{3};  // Bland rule after 3 m stalled iterations
        // observer invoked with the iterate after every active-set step
        std::function<void(const Eigen::VectorXd&)> on_iterate;
    };

    QpSolver() = default;
    explicit QpSolver(const Options& opts) : opts_(opts) {}

    const ActiveSet& last_active_set() const { return last_active_; }
    void reset_warm_start() { last_active_.clear(); }

    /// Solve using the instance's remembered active set as warm start.
    QpSolution solve(const QpProblem& p) { return solve(p, last_active_); }

    QpSolution solve(const QpProblem& p, const ActiveSet& warm_start) {
        p.validate();
        const int n = p.num_vars();
        const int m = p.num_rows();
        const double inf = std::numeric_limits<double>::infinity();
        const int max_iter = opts_.max_iterations > 0 ? opts_.max_iterations : 10 * (n + m);

        QpSolution sol;
        sol.lambda = Eigen::VectorXd::Zero(m);
        sol.active.assign(m, 0);

        for (int i = 0; i < m; ++i) {
            if (p.lower[i] > p.upper[i]) {
                sol.status = QpStatus::infeasible;
                return sol;
            }
        }

        Eigen::LLT<Eigen::MatrixXd> hchol(p.hessian);
        if (hchol.info() != Eigen::Success) {
            throw std::invalid_argument("QpSolver: Hessian not positive definite");
        }

        if (m == 0) {
            sol.x = hchol.solve(-p.gradient);
            sol.status = QpStatus::optimal;
            sol.iterations = 1;
            sol.kkt_residual = kkt_residual(p, sol.x, sol.lambda);
            last_active_.assign(0, 0);
            return sol;
        }

        // --- starting point ---------------------------------------------
        Eigen::VectorXd x;
        std::vector<int> work;        // active rows
        std::vector<std::int8_t> side;  // parallel to work

        const bool have_warm =
            static_cast<int>(warm_start.size()) == m &&
            std::any_of(warm_start.begin(), warm_start.end(), [](std::int8_t s) { return s != 0; });
        bool started = false;
        if (have_warm) {
            build_working_set(p, warm_start, work, side);
            Eigen::VectorXd lam;
            if (solve_eqp(p, work, side, x, lam) && max_violation(p, x) <= opts_.feasibility_tol) {
                started = true;
            }
        }
        if (!started) {
            x = Eigen::VectorXd::Zero(n);
            if (max_violation(p, x) > opts_.feasibility_tol) {
                Eigen::VectorXd xu = hchol.solve(-p.gradient);
                if (max_violation(p, xu) <= opts_.feasibility_tol) {
                    x = xu;
                } else if (!restore_feasibility(p, x)) {
                    sol.status = QpStatus::infeasible;
                    sol.x = x;
                    return sol;
                }
            }
            work.clear();
            side.clear();
            // crash: pick up rows the start already rests on
            for (int i = 0; i < m && static_cast<int>(work.size()) < n; ++i) {
                const double ax = p.constraints.row(i).dot(x);
                std::int8_t s = 0;
                if (p.lower[i] == p.upper[i]) s = 1;
                else if (p.upper[i] < inf && std::abs(ax - p.upper[i]) <= opts_.feasibility_tol) s = 1;
                else if (p.lower[i] > -inf && std::abs(ax - p.lower[i]) <= opts_.feasibility_tol) s = -1;
                if (s != 0 && row_independent(p, work, i)) {
                    work.push_back(i);
                    side.push_back(s);
                }
            }
        }

        // --- primal active-set iterations --------------------------------
        double prev_obj = p.objective(x);
        int stall = 0;
        bool bland = false;
        const double ptol = opts_.optimality_tol * std::max(1.0, x.lpNorm<Eigen::Infinity>());

        for (int iter = 1; iter <= max_iter; ++iter) {
            sol.iterations = iter;

            Eigen::VectorXd g = p.hessian * x + p.gradient;
            Eigen::VectorXd pdir, lam;
            solve_eqp_direction(p, work, g, pdir, lam);

            if (pdir.lpNorm<Eigen::Infinity>() <= ptol) {
                // candidate optimum for this working set; check duals
                int drop = -1;
                double worst = opts_.optimality_tol;
                for (size_t k = 0; k < work.size(); ++k) {
                    const int i = work[k];
                    if (p.lower[i] == p.upper[i]) continue;  // equality, multiplier free
                    const double viol = side[k] > 0 ? -lam[k] : lam[k];
                    if (viol <= opts_.optimality_tol) continue;
                    if (bland) {
                        if (drop < 0 || i < work[drop]) drop = static_cast<int>(k);
                    } else if (viol > worst) {
                        drop = static_cast<int>(k);
                        worst = viol;
                    }
                }
                if (drop < 0) {
                    sol.x = x;
                    sol.status = QpStatus::optimal;
                    for (size_t k = 0; k < work.size(); ++k) sol.lambda[work[k]] = lam[k];
                    for (size_t k = 0; k < work.size(); ++k) sol.active[work[k]] = side[k];
                    sol.kkt_residual = kkt_residual(p, sol.x, sol.lambda);
                    last_active_ = sol.active;
                    return sol;
                }
                work.erase(work.begin() + drop);
                side.erase(side.begin() + drop);
            } else {
                // step toward the EQP minimizer, stopping at the first
                // blocking row
                double alpha = 1.0;
                int block = -1;
                std::int8_t block_side = 0;
                for (int i = 0; i < m; ++i) {
                    if (std::find(work.begin(), work.end(), i) != work.end()) continue;
                    const double d = p.constraints.row(i).dot(pdir);
                    const double ax = p.constraints.row(i).dot(x);
                    if (d > 1e-14 && p.upper[i] < inf) {
                        const double a = (p.upper[i] - ax) / d;
                        if (a < alpha - 1e-14) {
                            alpha = std::max(a, 0.0);
                            block = i;
                            block_side = 1;
                        }
                    } else if (d < -1e-14 && p.lower[i] > -inf) {
                        const double a = (p.lower[i] - ax) / d;
                        if (a < alpha - 1e-14) {
                            alpha = std::max(a, 0.0);
                            block = i;
                            block_side = -1;
                        }
                    }
                }
                x += alpha * pdir;
                if (block >= 0) {
                    work.push_back(block);
                    side.push_back(block_side);
                }
            }

            const double obj = p.objective(x);
            if (obj < prev_obj - 1e-12) {
                stall = 0;
            } else if (++stall > opts_.stall_window_factor * m) {
                bland = true;
            }
            prev_obj = obj;
            if (opts_.on_iterate) opts_.on_iterate(x);
        }

        sol.x = x;
        sol.status = QpStatus::max_iterations;
        sol.kkt_residual = kkt_residual(p, x, sol.lambda);
        return sol;
    }

  private:
    double max_violation(const QpProblem& p, const Eigen::VectorXd& x) const {
        const double inf = std::numeric_limits<double>::infinity();
        double v = 0.0;
        for (int i = 0; i < p.num_rows(); ++i) {
            const double ax = p.constraints.row(i).dot(x);
            if (p.lower[i] > -inf) v = std::max(v, p.lower[i] - ax);
            if (p.upper[i] < inf) v = std::max(v, ax - p.upper[i]);
        }
        return v;
    }

    /// Gauss-Newton descent on the squared constraint violations. Returns
    /// true once the iterate is feasible to tolerance.
    bool restore_feasibility(const QpProblem& p, Eigen::VectorXd& x) const {
        const double inf = std::numeric_limits<double>::infinity();
        const int n = p.num_vars();
        for (int pass = 0; pass < 100; ++pass) {
            std::vector<int> rows;
            std::vector<double> resid;
            for (int i = 0; i < p.num_rows(); ++i) {
                const double ax = p.constraints.row(i).dot(x);
                if (p.upper[i] < inf && ax > p.upper[i]) {
                    rows.push_back(i);
                    resid.push_back(ax - p.upper[i]);
                } else if (p.lower[i] > -inf && ax < p.lower[i]) {
                    rows.push_back(i);
                    resid.push_back(ax - p.lower[i]);
                }
            }
            if (rows.empty()) return true;

            Eigen::MatrixXd jac(rows.size(), n);
            Eigen::VectorXd r(rows.size());
            for (size_t k = 0; k < rows.size(); ++k) {
                jac.row(k) = p.constraints.row(rows[k]);
                r[k] = resid[k];
            }
            Eigen::MatrixXd gram = jac.transpose() * jac;
            gram.diagonal().array() += 1e-12 * std::max(1.0, gram.diagonal().maxCoeff());
            Eigen::VectorXd step = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(-jac.transpose() * r);

            const double v0 = max_violation(p, x);
            double alpha = 1.0;
            bool improved = false;
            for (int h = 0; h < 40; ++h) {
                if (max_violation(p, x + alpha * step) < v0) {
                    x += alpha * step;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!improved) return false;
            if (max_violation(p, x) <= opts_.feasibility_tol) return true;
        }
        return max_violation(p, x) <= opts_.feasibility_tol;
    }

    bool row_independent(const QpProblem& p, const std::vector<int>& work, int row) const {
        if (work.empty()) return true;
        Eigen::MatrixXd a(work.size() + 1, p.num_vars());
        for (size_t k = 0; k < work.size(); ++k) a.row(k) = p.constraints.row(work[k]);
        a.row(work.size()) = p.constraints.row(row);
        return Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(a.transpose()).rank() ==
               static_cast<Eigen::Index>(work.size()) + 1;
    }

    void build_working_set(const QpProblem& p, const ActiveSet& warm, std::vector<int>& work,
                           std::vector<std::int8_t>& side) const {
        work.clear();
        side.clear();
        const int n = p.num_vars();
        for (int i = 0; i < p.num_rows() && static_cast<int>(work.size()) < n; ++i) {
            if (warm[i] != 0 && row_independent(p, work, i)) {
                work.push_back(i);
                side.push_back(warm[i]);
            }
        }
    }

    /// Equality-constrained minimizer of the full objective with the working
    /// set pinned to its recorded bound sides (used to seed a warm start).
    bool solve_eqp(const QpProblem& p, const std::vector<int>& work,
                   const std::vector<std::int8_t>& side, Eigen::VectorXd& x,
                   Eigen::VectorXd& lam) const {
        const double inf = std::numeric_limits<double>::infinity();
        const int n = p.num_vars();
        const int w = static_cast<int>(work.size());
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + w, n + w);
        kkt.topLeftCorner(n, n) = p.hessian;
        Eigen::VectorXd rhs(n + w);
        rhs.head(n) = -p.gradient;
        for (int k = 0; k < w; ++k) {
            kkt.block(n + k, 0, 1, n) = p.constraints.row(work[k]);
            kkt.block(0, n + k, n, 1) = p.constraints.row(work[k]).transpose();
            double b = side[k] > 0 ? p.upper[work[k]] : p.lower[work[k]];
            if (std::abs(b) == inf) b = side[k] > 0 ? p.lower[work[k]] : p.upper[work[k]];
            if (std::abs(b) == inf) return false;
            rhs[n + k] = b;
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);
        Eigen::VectorXd xl = lu.solve(rhs);
        if (!xl.allFinite()) return false;
        x = xl.head(n);
        lam = xl.tail(w);
        return true;
    }

    /// Direction subproblem: min 1/2 p'Hp + g'p  s.t.  A_W p = 0.
    void solve_eqp_direction(const QpProblem& p, const std::vector<int>& work,
                             const Eigen::VectorXd& g, Eigen::VectorXd& dir,
                             Eigen::VectorXd& lam) const {
        const int n = p.num_vars();
        const int w = static_cast<int>(work.size());
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + w, n + w);
        kkt.topLeftCorner(n, n) = p.hessian;
        for (int k = 0; k < w; ++k) {
            kkt.block(n + k, 0, 1, n) = p.constraints.row(work[k]);
            kkt.block(0, n + k, n, 1) = p.constraints.row(work[k]).transpose();
        }
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + w);
        rhs.head(n) = -g;
        Eigen::VectorXd xl = Eigen::PartialPivLU<Eigen::MatrixXd>(kkt).solve(rhs);
        dir = xl.head(n);
        lam = xl.tail(w);
    }

    Options opts_;
    ActiveSet last_active_;
};

}  // namespace agile_mpc
