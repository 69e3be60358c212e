#include "agile_mpc/nmpc.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace agile_mpc;

namespace {

NodeState random_node(std::mt19937_64& rng) {
    const Quaternion q = amc_test::random_unit_quaternion(rng);
    return pack_node(q, amc_test::random_vec3(rng, 0.02), amc_test::random_vec3(rng, 3e-3));
}

ShootingTrajectory roll_out(const ErrorDynamics& dyn, const NodeState& s0,
                            const std::vector<Vec3>& controls, double ts) {
    ShootingTrajectory traj;
    traj.controls = controls;
    traj.states.push_back(s0);
    for (const auto& u : controls) {
        traj.states.push_back(dyn.step(traj.states.back(), u, ts));
    }
    return traj;
}

}  // namespace

TEST(ErrorDynamicsStep, FixedPointAtTarget) {
    const ErrorDynamics dyn(InertiaMatrix::nominal());
    const NodeState s = pack_node(Quaternion::identity(), Vec3::Zero(), Vec3::Zero());
    const NodeState out = dyn.step(s, Vec3::Zero(), 2.0);
    EXPECT_LT((out - s).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(ErrorDynamicsStep, MatchesPlantSimulation) {
    auto rng = amc_test::seeded_rng(51);
    const InertiaMatrix j = InertiaMatrix::nominal();
    for (int i = 0; i < 25; ++i) {
        const Quaternion q_t = amc_test::random_unit_quaternion(rng);
        const Quaternion q_e0 = amc_test::random_unit_quaternion(rng);
        const Vec3 omega = amc_test::random_vec3(rng, 0.02);
        const Vec3 h = amc_test::random_vec3(rng, 3e-3);
        const Vec3 torque = amc_test::random_vec3(rng, 1e-3)
                                .cwiseMin(Vec3::Constant(4e-3))
                                .cwiseMax(Vec3::Constant(-4e-3));

        Plant plant(j, ActuatorLimits{}, NoiseConfig{0.0, 0.0, 2.93e-5, 0});
        PlantState ps;
        ps.q = quat_mul(q_t, q_e0).normalized();  // q_e = qt^-1 q
        ps.omega = omega;
        ps.h_rw = h;
        plant.set_state(ps);
        plant.step(torque, 2.0);
        const Quaternion q_e_plant = tracking_error(plant.state().q, q_t);

        const ErrorDynamics dyn(j);
        const NodeState out = dyn.step(pack_node(q_e0, omega, h), torque, 2.0);
        const Quaternion q_e_model = canonicalize(node_quat(out));

        EXPECT_LT(std::abs(q_e_model.q0 - q_e_plant.q0), 1e-10);
        EXPECT_LT((q_e_model.vec() - q_e_plant.vec()).lpNorm<Eigen::Infinity>(), 1e-10);
        EXPECT_LT((node_omega(out) - plant.state().omega).lpNorm<Eigen::Infinity>(), 1e-10);
        EXPECT_LT((node_h(out) - plant.state().h_rw).lpNorm<Eigen::Infinity>(), 1e-10);
    }
}

TEST(ErrorDynamicsStep, FourthOrderConvergence) {
    auto rng = amc_test::seeded_rng(52);
    const InertiaMatrix j = InertiaMatrix::nominal();
    const ErrorDynamics dyn(j);
    const NodeState s0 = pack_node(amc_test::random_unit_quaternion(rng),
                                   Vec3(0.05, -0.03, 0.04), Vec3(1e-3, -2e-3, 0.5e-3));
    const Vec3 torque(2e-3, -1e-3, 1.5e-3);

    // reference: 64 sub-intervals of the same interval
    NodeState ref = s0;
    const double big_ts = 8.0;
    for (int k = 0; k < 16; ++k) ref = dyn.step(ref, torque, big_ts / 16.0);

    auto err_for = [&](int pieces) {
        NodeState x = s0;
        for (int k = 0; k < pieces; ++k) x = dyn.step(x, torque, big_ts / pieces);
        return (x - ref).lpNorm<Eigen::Infinity>();
    };
    const double e1 = err_for(1);
    const double e2 = err_for(2);
    const double e4 = err_for(4);
    EXPECT_GT(e1 / e2, 8.0);   // ~16x for a 4th order scheme
    EXPECT_LT(e1 / e2, 40.0);
    EXPECT_GT(e2 / e4, 8.0);
    EXPECT_LT(e2 / e4, 40.0);
}

TEST(RolloutCost, Arithmetic) {
    NmpcConfig cfg;
    cfg.horizon = 1;
    ShootingTrajectory traj;
    traj.states = {pack_node(Quaternion::identity(), Vec3::Zero(), Vec3::Zero()),
                   pack_node(Quaternion::identity(), Vec3::Zero(), Vec3::Zero())};
    traj.controls = {Vec3::Zero()};
    EXPECT_DOUBLE_EQ(rollout_cost(traj, cfg), 0.0);

    traj.states[0] = pack_node(Quaternion(std::sqrt(1.0 - 0.01), 0.1, 0.0, 0.0),
                               Vec3::Zero(), Vec3::Zero());
    EXPECT_NEAR(rollout_cost(traj, cfg), 0.01, 1e-15);

    traj.states[0] = pack_node(Quaternion::identity(), Vec3::Zero(), Vec3::Zero());
    traj.controls[0] = Vec3(1e-3, 0.0, 0.0);
    EXPECT_NEAR(rollout_cost(traj, cfg), 1e-5, 1e-18);
}

TEST(FdJacobians, ConsistentAcrossPerturbationScales) {
    auto rng = amc_test::seeded_rng(53);
    const InertiaMatrix j = InertiaMatrix::nominal();
    const ErrorDynamics dyn(j);
    const NodeState s = random_node(rng);
    const Vec3 u(1e-3, -2e-3, 0.5e-3);

    Eigen::Matrix<double, 10, 10> a1, a2;
    Eigen::Matrix<double, 10, 3> b1, b2;
    fd_step_jacobians(dyn, s, u, 2.0, 1e-6, a1, b1);
    fd_step_jacobians(dyn, s, u, 2.0, 1e-7, a2, b2);
    EXPECT_LT((a1 - a2).norm() / a2.norm(), 1e-4);
    EXPECT_LT((b1 - b2).norm() / b2.norm(), 1e-4);
}

TEST(NmpcStep, AtTargetProducesNoTorque) {
    NmpcController c(InertiaMatrix::nominal(), NmpcConfig{});
    Measurement m;
    m.q_meas = Quaternion::identity();
    m.omega_meas = Vec3::Zero();
    m.h_rw_meas = Vec3::Zero();
    const std::vector<Quaternion> targets(11, Quaternion::identity());
    const auto res = c.step(m, targets);
    EXPECT_LT(res.torque.norm(), 1e-6);
}

TEST(NmpcStep, RespectsTorqueAndMomentumBounds) {
    NmpcConfig cfg;
    NmpcController c(InertiaMatrix::nominal(), cfg);
    auto rng = amc_test::seeded_rng(54);
    for (int i = 0; i < 5; ++i) {
        Measurement m;
        m.q_meas = quat_mul(
            Quaternion::from_axis_angle(amc_test::random_vec3(rng), 0.4), Quaternion::identity());
        m.omega_meas = amc_test::random_vec3(rng, 0.01);
        m.h_rw_meas = Vec3(0.8 * cfg.limits.h_max.x(), -0.5 * cfg.limits.h_max.y(), 0.0);
        const std::vector<Quaternion> targets(cfg.horizon + 1, Quaternion::identity());
        c.step(m, targets);

        const auto& traj = c.trajectory();
        for (const auto& u : traj.controls) {
            for (int a = 0; a < 3; ++a) {
                EXPECT_LE(u[a], cfg.limits.t_max[a] + 1e-8);
                EXPECT_GE(u[a], cfg.limits.t_min[a] - 1e-8);
            }
        }
        for (size_t k = 1; k < traj.states.size(); ++k) {
            const Vec3 h = node_h(traj.states[k]);
            for (int a = 0; a < 3; ++a) {
                EXPECT_LE(h[a], cfg.limits.h_max[a] + 1e-6);
                EXPECT_GE(h[a], cfg.limits.h_min[a] - 1e-6);
            }
        }
        EXPECT_LT(c.stats().defect_norm, 1e-6);
    }
}

TEST(NmpcStep, TwoStepSingleAxisBeatsExhaustiveGrid) {
    Mat3 jd = Mat3::Zero();
    jd.diagonal() << 0.2912908, 0.2837495, 0.3940411;
    const InertiaMatrix j(jd);

    NmpcConfig cfg;
    cfg.horizon = 2;
    cfg.max_sqp_iters = 40;
    cfg.step_tolerance = 1e-12;
    NmpcController c(j, cfg);

    Measurement m;
    m.q_meas = Quaternion::from_axis_angle(Vec3::UnitX(), 0.15);
    m.omega_meas = Vec3(0.01, 0.0, 0.0);
    m.h_rw_meas = Vec3(1e-3, 0.0, 0.0);
    const std::vector<Quaternion> targets(cfg.horizon + 1, Quaternion::identity());
    c.step(m, targets);

    const ErrorDynamics dyn(j);
    const NodeState s0 = pack_node(tracking_error(m.q_meas, targets[0]), m.omega_meas,
                                   m.h_rw_meas);
    const double sqp_cost =
        rollout_cost(roll_out(dyn, s0, c.trajectory().controls, cfg.ts), cfg);

    double best = std::numeric_limits<double>::infinity();
    const double lo = cfg.limits.t_min.x();
    const double hi = cfg.limits.t_max.x();
    for (int i = 0; i <= 100; ++i) {
        for (int k = 0; k <= 100; ++k) {
            const double t0 = lo + (hi - lo) * i / 100.0;
            const double t1 = lo + (hi - lo) * k / 100.0;
            const double cost = rollout_cost(
                roll_out(dyn, s0, {Vec3(t0, 0, 0), Vec3(t1, 0, 0)}, cfg.ts), cfg);
            best = std::min(best, cost);
        }
    }
    EXPECT_LE(sqp_cost, best + 1e-8);
}

TEST(NmpcStep, ShiftWarmStartConvergesImmediately) {
    const InertiaMatrix j = InertiaMatrix::nominal();
    NmpcConfig cfg;
    NmpcController c(j, cfg);
    Plant plant(j, ActuatorLimits{}, NoiseConfig{0.0, 0.0, 2.93e-5, 0});
    const Quaternion q_t = Quaternion::from_axis_angle(Vec3(1, 1, 0), 0.3);
    PlantState s;
    s.q = Quaternion::from_axis_angle(Vec3::UnitZ(), 0.05);
    plant.set_state(s);
    const std::vector<Quaternion> targets(cfg.horizon + 1, q_t);

    int step_count = 0;
    int violations = 0;
    for (int k = 0; k < 12; ++k) {
        Measurement m = plant.measure_state();
        const auto res = c.step(m, targets);
        plant.step(res.torque, cfg.ts);
        ++step_count;
        if (step_count > 3) {
            EXPECT_LE(c.stats().sqp_iterations, 2) << "step " << step_count;
        }
        violations = c.stats().cost_increase_count;
    }
    EXPECT_EQ(violations, 0);
    EXPECT_LT(c.stats().defect_norm, 1e-6);
}

TEST(NmpcConfigChecks, RejectsBadParameters) {
    NmpcConfig bad;
    bad.horizon = 0;
    EXPECT_THROW(NmpcController(InertiaMatrix::nominal(), bad), std::invalid_argument);
    bad = NmpcConfig{};
    bad.max_sqp_iters = 0;
    EXPECT_THROW(NmpcController(InertiaMatrix::nominal(), bad), std::invalid_argument);

    NmpcController c(InertiaMatrix::nominal(), NmpcConfig{});
    Measurement m;
    m.q_meas = Quaternion::identity();
    EXPECT_THROW(c.step(m, std::vector<Quaternion>(3, Quaternion::identity())),
                 std::invalid_argument);
}
