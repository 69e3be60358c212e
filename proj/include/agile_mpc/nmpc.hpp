// Nonlinear MPC over the full quaternion error dynamics, solved by SQP:
// condensed multiple shooting, Gauss-Newton Hessian, central-difference
// dynamics Jacobians, full steps with an iteration cap (real-time-iteration
// flavor). The stage QPs go through the in-repo active-set solver.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "agile_mpc/controllers.hpp"
#include "agile_mpc/plant.hpp"
#include "agile_mpc/qp.hpp"
#include "agile_mpc/quaternion.hpp"

namespace agile_mpc {

struct NmpcConfig {
    int horizon{10};
    double weight{10.0};
    ActuatorLimits limits;
    double ts{2.0};
    int max_sqp_iters{5};
    double step_tolerance{1e-6};

    void validate() const {
        if (horizon < 1) throw std::invalid_argument("NmpcConfig: horizon must be >= 1");
        if (max_sqp_iters < 1) {
            throw std::invalid_argument("NmpcConfig: max_sqp_iters must be >= 1");
        }
        if (!(weight > 0.0)) throw std::invalid_argument("NmpcConfig: weight must be > 0");
        limits.validate();
    }
};

/// Shooting node state: error quaternion (4), body rate (3), wheel
/// momentum (3), flattened for linearization.
using NodeState = Eigen::Matrix<double, 10, 1>;

inline NodeState pack_node(const Quaternion& q_e, const Vec3& omega, const Vec3& h_rw) {
    NodeState s;
    s << q_e.q0, q_e.q1, q_e.q2, q_e.q3, omega, h_rw;
    return s;
}

inline Quaternion node_quat(const NodeState& s) { return {s[0], s[1], s[2], s[3]}; }
inline Vec3 node_omega(const NodeState& s) { return s.segment<3>(4); }
inline Vec3 node_h(const NodeState& s) { return s.segment<3>(7); }

/// Discrete error dynamics with the target held constant: the same RK4
/// scheme as the plant (four substeps of ts/4, renormalize once) expressed
/// in target-frame error coordinates q_e = qt^-1 q, whose kinematics keep
/// the plain body-rate form d/dt q_e = 1/2 q_e (0, omega).
class ErrorDynamics {
  public:
    explicit ErrorDynamics(const InertiaMatrix& j) : j_(j) {}

    NodeState step(const NodeState& s, const Vec3& torque, double ts) const {
        NodeState x = s;
        const int substeps = 4;
        const double h = ts / substeps;
        for (int k = 0; k < substeps; ++k) x = rk4(x, torque, h);
        const double n = x.head<4>().norm();
        x.head<4>() /= n;
        return x;
    }

  private:
    NodeState derivative(const NodeState& s, const Vec3& torque) const {
        const Quaternion q = node_quat(s);
        const Vec3 omega = node_omega(s);
        const Quaternion qd =
            quat_mul(q, Quaternion(0.0, omega.x(), omega.y(), omega.z()));
        NodeState d;
        d[0] = 0.5 * qd.q0;
        d[1] = 0.5 * qd.q1;
        d[2] = 0.5 * qd.q2;
        d[3] = 0.5 * qd.q3;
        d.segment<3>(4) = j_.inverse() * (torque - omega.cross(j_ * omega + node_h(s)));
        d.segment<3>(7) = -torque;
        return d;
    }

    NodeState rk4(const NodeState& s, const Vec3& t, double h) const {
        const NodeState k1 = derivative(s, t);
        const NodeState k2 = derivative(s + 0.5 * h * k1, t);
        const NodeState k3 = derivative(s + 0.5 * h * k2, t);
        const NodeState k4 = derivative(s + h * k3, t);
        return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    InertiaMatrix j_;
};

struct ShootingTrajectory {
    std::vector<NodeState> states;  // N + 1 nodes
    std::vector<Vec3> controls;     // N stages
};

/// Stage-cost sum of the trajectory: sum_k (xi_k' xi_k + W T_k' T_k) over
/// k = 0 .. N-1.
inline double rollout_cost(const ShootingTrajectory& traj, const NmpcConfig& cfg) {
    double cost = 0.0;
    for (size_t k = 0; k < traj.controls.size(); ++k) {
        const Eigen::Vector3d xi = traj.states[k].segment<3>(1);
        cost += xi.squaredNorm() + cfg.weight * traj.controls[k].squaredNorm();
    }
    return cost;
}

/// Central finite-difference Jacobians of one shooting step.
inline void fd_step_jacobians(const ErrorDynamics& dyn, const NodeState& s, const Vec3& u,
                              double ts, double eps, Eigen::Matrix<double, 10, 10>& a,
                              Eigen::Matrix<double, 10, 3>& b) {
    for (int i = 0; i < 10; ++i) {
        NodeState sp = s, sm = s;
        sp[i] += eps;
        sm[i] -= eps;
        a.col(i) = (dyn.step(sp, u, ts) - dyn.step(sm, u, ts)) / (2.0 * eps);
    }
    for (int i = 0; i < 3; ++i) {
        Vec3 up = u, um = u;
        up[i] += eps;
        um[i] -= eps;
        b.col(i) = (dyn.step(s, up, ts) - dyn.step(s, um, ts)) / (2.0 * eps);
    }
}

struct NmpcStats {
    int sqp_iterations{0};
    double step_norm{0.0};
    double defect_norm{0.0};
    int cost_increase_count{0};     // cumulative over the controller's life
    int momentum_relaxations{0};    // cumulative
};

class NmpcController {
  public:
    NmpcController(const InertiaMatrix& j, const NmpcConfig& cfg) : j_(j), cfg_(cfg) {
        cfg_.validate();
    }

    /// One receding-horizon step. `targets` holds the target quaternion at
    /// each shooting node (N+1 entries); passing the same quaternion at
    /// every node freezes the target over the horizon.
    ControlResult step(const Measurement& meas, const std::vector<Quaternion>& targets) {
        const int n = cfg_.horizon;
        if (static_cast<int>(targets.size()) != n + 1) {
            throw std::invalid_argument("NmpcController: need horizon+1 node targets");
        }

        // Dynamics of stage k propagate the error w.r.t. targets[k]; the
        // node hand-off re-expresses the error against targets[k+1].
        const ErrorDynamics dyn(j_);
        std::vector<Quaternion> handoff(n);  // q_t(k+1)^-1 * q_t(k)
        for (int k = 0; k < n; ++k) {
            handoff[k] = quat_mul(targets[k + 1].conjugate(), targets[k]);
        }

        const NodeState s0 = pack_node(tracking_error(meas.q_meas, targets[0]),
                                       meas.omega_meas, meas.h_rw_meas);

        if (warm_) {
            shift_trajectory(targets);
            traj_.states[0] = s0;
        } else {
            traj_.states.assign(n + 1, NodeState::Zero());
            traj_.controls.assign(n, Vec3::Zero());
            traj_.states[0] = s0;
            for (int k = 0; k < n; ++k) {
                traj_.states[k + 1] =
                    advance_node(dyn, traj_.states[k], traj_.controls[k], handoff[k]);
            }
        }

        double prev_cost = true_cost(dyn, handoff, s0);
        ControlResult res;

        std::vector<Eigen::Matrix<double, 10, 10>> a(n);
        std::vector<Eigen::Matrix<double, 10, 3>> b(n);
        std::vector<NodeState> defect(n);
        std::vector<Eigen::MatrixXd> sens(n + 1);   // d s_k / d U
        std::vector<NodeState> affine(n + 1);       // defect-driven offset

        int iter = 0;
        for (iter = 1; iter <= cfg_.max_sqp_iters; ++iter) {
            for (int k = 0; k < n; ++k) {
                const NodeState fk =
                    advance_node(dyn, traj_.states[k], traj_.controls[k], handoff[k]);
                defect[k] = fk - traj_.states[k + 1];
                fd_jacobians(dyn, handoff[k], traj_.states[k], traj_.controls[k], a[k], b[k]);
            }

            sens[0] = Eigen::MatrixXd::Zero(10, 3 * n);
            affine[0] = NodeState::Zero();
            for (int k = 0; k < n; ++k) {
                sens[k + 1] = a[k] * sens[k];
                sens[k + 1].middleCols(3 * k, 3) += b[k];
                affine[k + 1] = a[k] * affine[k] + defect[k];
            }

            const Eigen::VectorXd du = solve_stage_qp(sens, affine);
            stats_.step_norm = du.size() ? du.lpNorm<Eigen::Infinity>() : 0.0;

            for (int k = 0; k < n; ++k) traj_.controls[k] += du.segment<3>(3 * k);
            for (int k = 1; k <= n; ++k) {
                NodeState ds = sens[k] * du + affine[k];
                traj_.states[k] += ds;
                const double qn = traj_.states[k].head<4>().norm();
                traj_.states[k].head<4>() /= qn;
            }

            const double cost = true_cost(dyn, handoff, s0);
            if (cost > prev_cost + 1e-12) ++stats_.cost_increase_count;
            prev_cost = cost;

            if (stats_.step_norm < cfg_.step_tolerance) break;
        }
        stats_.sqp_iterations = std::min(iter, cfg_.max_sqp_iters);

        double dn = 0.0;
        for (int k = 0; k < n; ++k) {
            const NodeState fk =
                advance_node(dyn, traj_.states[k], traj_.controls[k], handoff[k]);
            dn = std::max(dn, (fk - traj_.states[k + 1]).lpNorm<Eigen::Infinity>());
        }
        stats_.defect_norm = dn;

        warm_ = true;
        last_targets_ = targets;
        res.torque = traj_.controls[0];
        res.iterations = stats_.sqp_iterations;
        return res;
    }

    const ShootingTrajectory& trajectory() const { return traj_; }
    const NmpcStats& stats() const { return stats_; }
    const NmpcConfig& config() const { return cfg_; }
    void reset() {
        warm_ = false;
        stats_ = {};
        qp_solver_.reset_warm_start();
    }

  private:
    NodeState advance_node(const ErrorDynamics& d, const NodeState& s, const Vec3& u,
                           const Quaternion& handoff) const {
        NodeState out = d.step(s, u, cfg_.ts);
        // re-express the propagated error against the next node's target
        const Quaternion q = quat_mul(handoff, node_quat(out));
        out[0] = q.q0;
        out[1] = q.q1;
        out[2] = q.q2;
        out[3] = q.q3;
        return out;
    }

    void fd_jacobians(const ErrorDynamics& d, const Quaternion& handoff, const NodeState& s,
                      const Vec3& u, Eigen::Matrix<double, 10, 10>& a,
                      Eigen::Matrix<double, 10, 3>& b) const {
        constexpr double eps = 1e-6;
        for (int i = 0; i < 10; ++i) {
            NodeState sp = s, sm = s;
            sp[i] += eps;
            sm[i] -= eps;
            a.col(i) =
                (advance_node(d, sp, u, handoff) - advance_node(d, sm, u, handoff)) / (2.0 * eps);
        }
        for (int i = 0; i < 3; ++i) {
            Vec3 up = u, um = u;
            up[i] += eps;
            um[i] -= eps;
            b.col(i) =
                (advance_node(d, s, up, handoff) - advance_node(d, s, um, handoff)) / (2.0 * eps);
        }
    }

    /// Gauss-Newton stage QP in the control increments, torque boxes plus
    /// linearized momentum corridors. Falls back to a slack-relaxed variant
    /// when the momentum corridor is infeasible.
    Eigen::VectorXd solve_stage_qp(const std::vector<Eigen::MatrixXd>& sens,
                                   const std::vector<NodeState>& affine) {
        const int n = cfg_.horizon;
        const int nu = 3 * n;

        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nu, nu);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(nu);
        for (int k = 0; k < n; ++k) {
            const Eigen::MatrixXd jac = sens[k].middleRows(1, 3);  // d xi_k / d U
            const Eigen::Vector3d xi =
                traj_.states[k].segment<3>(1) + affine[k].segment<3>(1);
            h += jac.transpose() * jac;
            g += jac.transpose() * xi;
        }
        h = 2.0 * (h + cfg_.weight * Eigen::MatrixXd::Identity(nu, nu));
        for (int k = 0; k < n; ++k) {
            g.segment<3>(3 * k) += cfg_.weight * traj_.controls[k];
        }
        g *= 2.0;

        QpProblem qp;
        qp.hessian = h;
        qp.gradient = g;
        qp.constraints = Eigen::MatrixXd::Zero(2 * nu, nu);
        qp.lower.resize(2 * nu);
        qp.upper.resize(2 * nu);
        qp.constraints.topRows(nu).setIdentity();
        for (int k = 0; k < n; ++k) {
            qp.lower.segment<3>(3 * k) = cfg_.limits.t_min - traj_.controls[k];
            qp.upper.segment<3>(3 * k) = cfg_.limits.t_max - traj_.controls[k];
        }
        for (int k = 1; k <= n; ++k) {
            const Vec3 hk = node_h(traj_.states[k]) + affine[k].segment<3>(7);
            qp.constraints.middleRows(nu + 3 * (k - 1), 3) = sens[k].middleRows(7, 3);
            qp.lower.segment<3>(nu + 3 * (k - 1)) = cfg_.limits.h_min - hk;
            qp.upper.segment<3>(nu + 3 * (k - 1)) = cfg_.limits.h_max - hk;
        }

        QpSolution sol = qp_solver_.solve(qp);
        if (sol.status != QpStatus::infeasible) return sol.x;

        // Momentum corridor infeasible: add one slack variable widening the
        // momentum rows, penalized quadratically.
        ++stats_.momentum_relaxations;
        const double inf = std::numeric_limits<double>::infinity();
        QpProblem rel;
        rel.hessian = Eigen::MatrixXd::Zero(nu + 1, nu + 1);
        rel.hessian.topLeftCorner(nu, nu) = qp.hessian;
        rel.hessian(nu, nu) = 2.0 * 1e6;
        rel.gradient = Eigen::VectorXd::Zero(nu + 1);
        rel.gradient.head(nu) = qp.gradient;
        rel.constraints = Eigen::MatrixXd::Zero(3 * nu + 1, nu + 1);
        rel.lower.resize(3 * nu + 1);
        rel.upper.resize(3 * nu + 1);
        rel.constraints.topLeftCorner(nu, nu).setIdentity();
        rel.lower.head(nu) = qp.lower.head(nu);
        rel.upper.head(nu) = qp.upper.head(nu);
        for (int r = 0; r < nu; ++r) {
            rel.constraints.block(nu + 2 * r, 0, 1, nu) = qp.constraints.row(nu + r);
            rel.constraints(nu + 2 * r, nu) = -1.0;  // a u - s <= ub
            rel.lower[nu + 2 * r] = -inf;
            rel.upper[nu + 2 * r] = qp.upper[nu + r];
            rel.constraints.block(nu + 2 * r + 1, 0, 1, nu) = qp.constraints.row(nu + r);
            rel.constraints(nu + 2 * r + 1, nu) = 1.0;  // a u + s >= lb
            rel.lower[nu + 2 * r + 1] = qp.lower[nu + r];
            rel.upper[nu + 2 * r + 1] = inf;
        }
        rel.constraints(3 * nu, nu) = 1.0;
        rel.lower[3 * nu] = 0.0;
        rel.upper[3 * nu] = inf;

        QpSolver fresh;  // different structure, do not reuse the warm start
        sol = fresh.solve(rel);
        if (sol.status == QpStatus::infeasible) return Eigen::VectorXd::Zero(nu);
        return sol.x.head(nu);
    }

    void shift_trajectory(const std::vector<Quaternion>& targets) {
        const int n = cfg_.horizon;
        // the stored nodes reference last step's targets, one stage ahead
        for (int k = 0; k < n; ++k) {
            NodeState s = traj_.states[k + 1];
            const Quaternion fix =
                quat_mul(targets[k].conjugate(), last_targets_[k + 1]);
            const Quaternion q = quat_mul(fix, node_quat(s));
            s[0] = q.q0;
            s[1] = q.q1;
            s[2] = q.q2;
            s[3] = q.q3;
            s.head<4>() /= s.head<4>().norm();
            traj_.states[k] = s;
        }
        for (int k = 0; k + 1 < n; ++k) traj_.controls[k] = traj_.controls[k + 1];
        // repeat the last control and grow a final node
        const ErrorDynamics d(j_);
        NodeState tail = d.step(traj_.states[n - 1], traj_.controls[n - 1], cfg_.ts);
        const Quaternion q =
            quat_mul(quat_mul(targets[n].conjugate(), targets[n - 1]), node_quat(tail));
        tail[0] = q.q0;
        tail[1] = q.q1;
        tail[2] = q.q2;
        tail[3] = q.q3;
        traj_.states[n] = tail;
    }

    /// Cost of simulating the current controls from the measured state.
    double true_cost(const ErrorDynamics& dyn, const std::vector<Quaternion>& handoff,
                     const NodeState& s0) const {
        const int n = cfg_.horizon;
        double cost = 0.0;
        NodeState s = s0;
        for (int k = 0; k < n; ++k) {
            cost += s.segment<3>(1).squaredNorm() +
                    cfg_.weight * traj_.controls[k].squaredNorm();
            s = advance_node(dyn, s, traj_.controls[k], handoff[k]);
        }
        return cost;
    }

    InertiaMatrix j_;
    NmpcConfig cfg_;
    ShootingTrajectory traj_;
    std::vector<Quaternion> last_targets_;
    QpSolver qp_solver_;
    NmpcStats stats_;
    bool warm_{false};
};

}  // namespace agile_mpc
