// The three linear MPC variants.
//
// ULMPC  - unconstrained, closed-form gain over the plain discrete model.
// CLMPC  - same cost with reaction-wheel torque and momentum constraints,
//          solved as a QP each step.
// ACLMPC - velocity-form cost on the augmented model; the decision variable
//          is the torque increment, which embeds integral action.
//
// All variants share the gyroscopic feedforward that maps the optimized
// virtual torque onto the physical wheel command.
#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "agile_mpc/linear_model.hpp"
#include "agile_mpc/plant.hpp"
#include "agile_mpc/qp.hpp"
#include "agile_mpc/quaternion.hpp"

namespace agile_mpc {

struct LmpcConfig {
    int np{10};
    int nc{10};
    double weight{10.0};
    ActuatorLimits limits;
    double ts{2.0};

    void validate() const {
        if (np < 1 || nc < 1 || nc > np) {
            throw std::invalid_argument("LmpcConfig: require 1 <= Nc <= Np");
        }
        if (!(weight > 0.0)) throw std::invalid_argument("LmpcConfig: weight must be > 0");
        if (!(ts > 0.0)) throw std::invalid_argument("LmpcConfig: ts must be > 0");
        limits.validate();
    }
};

/// Controller input sampled each period: canonical error quaternion plus
/// measured body rates and wheel momenta.
struct LmpcInput {
    Quaternion q_e;
    Vec3 omega_meas;
    Vec3 h_rw_meas;

    Eigen::Matrix<double, 6, 1> state() const {
        Eigen::Matrix<double, 6, 1> x;
        x << q_e.q1, q_e.q2, q_e.q3, omega_meas.x(), omega_meas.y(), omega_meas.z();
        return x;
    }
};

struct ControlResult {
    Vec3 torque{Vec3::Zero()};
    QpStatus status{QpStatus::optimal};
    int iterations{0};
    bool fallback{false};
};

/// Wheel torque command T = T_c + omega x (J omega + h_rw); the gyroscopic
/// term cancels the corresponding coupling in the body dynamics. Returned
/// uncapped, the plant saturates.
inline Vec3 feedforward_torque(const Vec3& t_c, const Vec3& omega_meas, const Vec3& h_rw_meas,
                               const InertiaMatrix& j) {
    return t_c + omega_meas.cross(j * omega_meas + h_rw_meas);
}

class UlmpcController {
  public:
    UlmpcController(const InertiaMatrix& j, const LmpcConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const DiscreteModel dm = discretize(build_continuous(j), cfg.ts);
        const PredictionMatrices pm =
            prediction_matrices(dm.a2, dm.b2, dm.c2, cfg.np, cfg.nc);
        r_ = pm.r;
        phi_ = pm.phi;
        const Eigen::MatrixXd nh =
            r_.transpose() * r_ +
            cfg.weight * Eigen::MatrixXd::Identity(r_.cols(), r_.cols());
        gain_ = nh.ldlt().solve(r_.transpose() * phi_);
    }

    ControlResult step(const LmpcInput& input) {
        last_plan_ = -gain_ * input.state();
        ControlResult res;
        res.torque = last_plan_.head<3>();
        res.iterations = 0;
        return res;
    }

    /// Full horizon decision vector from the last step (3 Nc entries).
    const Eigen::VectorXd& last_plan() const { return last_plan_; }
    const Eigen::MatrixXd& prediction_r() const { return r_; }
    const Eigen::MatrixXd& prediction_phi() const { return phi_; }

  private:
    LmpcConfig cfg_;
    Eigen::MatrixXd phi_;
    Eigen::MatrixXd r_;
    Eigen::MatrixXd gain_;  // (3 Nc) x 6, maps state to minus the plan
    Eigen::VectorXd last_plan_;
};

class ClmpcController {
  public:
    ClmpcController(const InertiaMatrix& j, const LmpcConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const DiscreteModel dm = discretize(build_continuous(j), cfg.ts);
        const PredictionMatrices pm =
            prediction_matrices(dm.a2, dm.b2, dm.c2, cfg.np, cfg.nc);
        const int nu = 3 * cfg.nc;

        qp_.hessian = 2.0 * (pm.r.transpose() * pm.r +
                             cfg.weight * Eigen::MatrixXd::Identity(nu, nu));
        grad_map_ = 2.0 * pm.r.transpose() * pm.phi;

        // rows 0..3Nc-1: torque bounds, rows 3Nc..6Nc-1: cumulative-sum
        // momentum bounds
        qp_.constraints = Eigen::MatrixXd::Zero(2 * nu, nu);
        qp_.constraints.topRows(nu).setIdentity();
        for (int i = 0; i < cfg.nc; ++i) {
            for (int l = 0; l <= i; ++l) {
                qp_.constraints.block(nu + 3 * i, 3 * l, 3, 3) = Mat3::Identity();
            }
        }
        qp_.lower.resize(2 * nu);
        qp_.upper.resize(2 * nu);
        for (int i = 0; i < cfg.nc; ++i) {
            qp_.lower.segment<3>(3 * i) = cfg.limits.t_min;
            qp_.upper.segment<3>(3 * i) = cfg.limits.t_max;
        }
    }

    ControlResult step(const LmpcInput& input) {
        const int nu = 3 * cfg_.nc;
        qp_.gradient = grad_map_ * input.state();
        for (int i = 0; i < cfg_.nc; ++i) {
            qp_.lower.segment<3>(nu + 3 * i) = (input.h_rw_meas - cfg_.limits.h_max) / cfg_.ts;
            qp_.upper.segment<3>(nu + 3 * i) = (input.h_rw_meas - cfg_.limits.h_min) / cfg_.ts;
        }
        last_h_meas_ = input.h_rw_meas;

        const QpSolution sol = solver_.solve(qp_);
        ControlResult res;
        res.status = sol.status;
        res.iterations = sol.iterations;
        if (sol.status == QpStatus::infeasible) {
            res.fallback = true;
            res.torque = prev_applied_.cwiseMin(cfg_.limits.t_max).cwiseMax(cfg_.limits.t_min);
            last_plan_ = Eigen::VectorXd::Zero(nu);
            last_plan_.head<3>() = res.torque;
        } else {
            last_plan_ = sol.x;
            last_active_ = sol.active;
            res.torque = sol.x.head<3>();
        }
        prev_applied_ = res.torque;
        return res;
    }

    const Eigen::VectorXd& last_plan() const { return last_plan_; }
    const ActiveSet& last_active_set() const { return last_active_; }
    const Vec3& last_h_meas() const { return last_h_meas_; }
    const LmpcConfig& config() const { return cfg_; }

  private:
    LmpcConfig cfg_;
    QpProblem qp_;
    Eigen::MatrixXd grad_map_;
    QpSolver solver_;
    Vec3 prev_applied_{Vec3::Zero()};
    Eigen::VectorXd last_plan_;
    ActiveSet last_active_;
    Vec3 last_h_meas_{Vec3::Zero()};
};

class AclmpcController {
  public:
    AclmpcController(const InertiaMatrix& j, const LmpcConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const DiscreteModel dm = discretize(build_continuous(j), cfg.ts);
        const AugmentedModel am = augment(dm);
        const PredictionMatrices pm =
            prediction_matrices(am.aa, am.ba, am.ca, cfg.np, cfg.nc);
        const int nu = 3 * cfg.nc;

        qp_.hessian = 2.0 * (pm.r.transpose() * pm.r +
                             cfg.weight * Eigen::MatrixXd::Identity(nu, nu));
        grad_map_ = 2.0 * pm.r.transpose() * pm.phi;

        // The OCP bounds the accumulated torque T_c(k+i) = prev + sum dT,
        // so constraints act through the block lower-triangular accumulator
        // S (torque rows) and its cumulative composition (momentum rows):
        //   sum_{j<=i} T_c(k+j) = (i+1) prev + sum_l (i+1-l) dT_l.
        qp_.constraints = Eigen::MatrixXd::Zero(2 * nu, nu);
        for (int i = 0; i < cfg.nc; ++i) {
            for (int l = 0; l <= i; ++l) {
                qp_.constraints.block(3 * i, 3 * l, 3, 3) = Mat3::Identity();
                qp_.constraints.block(nu + 3 * i, 3 * l, 3, 3) =
                    static_cast<double>(i + 1 - l) * Mat3::Identity();
            }
        }
        qp_.lower.resize(2 * nu);
        qp_.upper.resize(2 * nu);
    }

    ControlResult step(const LmpcInput& input) {
        const int nu = 3 * cfg_.nc;
        const Eigen::Matrix<double, 6, 1> x = input.state();
        if (first_) {
            prev_x_ = x;  // no fictitious initial increment
            first_ = false;
        }
        Eigen::Matrix<double, 9, 1> xa;
        xa.head<6>() = x - prev_x_;
        xa.tail<3>() = x.head<3>();  // y(k) = xi(k)

        qp_.gradient = grad_map_ * xa;
        for (int i = 0; i < cfg_.nc; ++i) {
            qp_.lower.segment<3>(3 * i) = cfg_.limits.t_min - prev_tc_;
            qp_.upper.segment<3>(3 * i) = cfg_.limits.t_max - prev_tc_;
            const Vec3 accum = static_cast<double>(i + 1) * prev_tc_;
            qp_.lower.segment<3>(nu + 3 * i) =
                (input.h_rw_meas - cfg_.limits.h_max) / cfg_.ts - accum;
            qp_.upper.segment<3>(nu + 3 * i) =
                (input.h_rw_meas - cfg_.limits.h_min) / cfg_.ts - accum;
        }
        last_h_meas_ = input.h_rw_meas;

        const QpSolution sol = solver_.solve(qp_);
        ControlResult res;
        res.status = sol.status;
        res.iterations = sol.iterations;
        if (sol.status == QpStatus::infeasible) {
            res.fallback = true;
            res.torque = prev_tc_.cwiseMin(cfg_.limits.t_max).cwiseMax(cfg_.limits.t_min);
            last_plan_torque_ = Eigen::VectorXd::Zero(nu);
            for (int i = 0; i < cfg_.nc; ++i) last_plan_torque_.segment<3>(3 * i) = res.torque;
        } else {
            last_active_ = sol.active;
            last_delta_plan_ = sol.x;
            // planned absolute torques: prev + running sum of increments
            last_plan_torque_.resize(nu);
            Vec3 run = prev_tc_;
            for (int i = 0; i < cfg_.nc; ++i) {
                run += sol.x.segment<3>(3 * i);
                last_plan_torque_.segment<3>(3 * i) = run;
            }
            res.torque = last_plan_torque_.head<3>();
        }
        prev_x_ = x;
        prev_tc_ = res.torque;
        return res;
    }

    /// Planned absolute torque sequence from the last step (3 Nc entries).
    const Eigen::VectorXd& last_plan() const { return last_plan_torque_; }
    const Eigen::VectorXd& last_delta_plan() const { return last_delta_plan_; }
    const ActiveSet& last_active_set() const { return last_active_; }
    const Vec3& last_h_meas() const { return last_h_meas_; }
    const Vec3& previous_torque() const { return prev_tc_; }
    const LmpcConfig& config() const { return cfg_; }

  private:
    LmpcConfig cfg_;
    QpProblem qp_;
    Eigen::MatrixXd grad_map_;
    QpSolver solver_;
    bool first_{true};
    Eigen::Matrix<double, 6, 1> prev_x_{Eigen::Matrix<double, 6, 1>::Zero()};
    Vec3 prev_tc_{Vec3::Zero()};
    Eigen::VectorXd last_plan_torque_;
    Eigen::VectorXd last_delta_plan_;
    ActiveSet last_active_;
    Vec3 last_h_meas_{Vec3::Zero()};
};

}  // namespace agile_mpc
