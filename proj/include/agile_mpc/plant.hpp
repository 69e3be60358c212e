// Ground-truth nonlinear satellite simulator: quaternion kinematics, rigid
// body dynamics with reaction-wheel momentum exchange, actuator saturation
// and seeded sensor noise.
#pragma once

#include <cmath>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

#include "agile_mpc/quaternion.hpp"

namespace agile_mpc {

/// Symmetric positive-definite inertia matrix [kg m^2].
class InertiaMatrix {
  public:
    explicit InertiaMatrix(const Mat3& j) : j_(j) {
        if ((j - j.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
            throw std::invalid_argument("InertiaMatrix: not symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Mat3> es(j);
        if (es.eigenvalues().minCoeff() <= 0.0) {
            throw std::invalid_argument("InertiaMatrix: not positive definite");
        }
        j_inv_ = j.inverse();
    }

    /// Flight-model inertia of the satellite used throughout the default
    /// configuration.
    static InertiaMatrix nominal() {
        Mat3 j;
        j << 0.2912908, -0.0024154, 0.0011626,
             -0.0024154, 0.2837495, 0.0009412,
             0.0011626, 0.0009412, 0.3940411;
        return InertiaMatrix(j);
    }

    const Mat3& matrix() const { return j_; }
    const Mat3& inverse() const { return j_inv_; }
    Vec3 operator*(const Vec3& w) const { return j_ * w; }

  private:
    Mat3 j_;
    Mat3 j_inv_;
};

/// Componentwise reaction-wheel torque and momentum envelopes.
struct ActuatorLimits {
    Vec3 t_max{Vec3::Constant(4.18e-3)};    // [N m]
    Vec3 t_min{Vec3::Constant(-4.18e-3)};   // [N m]
    Vec3 h_max{Vec3::Constant(1.84e-2)};    // [N m s]
    Vec3 h_min{Vec3::Constant(-1.84e-2)};   // [N m s]

    void validate() const {
        for (int i = 0; i < 3; ++i) {
            if (!(t_min[i] < 0.0 && 0.0 < t_max[i]) || !(h_min[i] < 0.0 && 0.0 < h_max[i])) {
                throw std::invalid_argument("ActuatorLimits: bounds must straddle zero");
            }
        }
    }
};

/// Sensor noise levels. Wheel-speed noise (rpm) maps to momentum noise via
/// the wheel inertia; the 2.93e-5 kg m^2 default makes the 1.84e-2 N m s
/// momentum envelope correspond to a 6000 rpm wheel-speed limit.
struct NoiseConfig {
    double gyro_std_deg_s{0.27};
    double rw_std_rpm{5.0};
    double wheel_inertia{2.93e-5};
    std::uint64_t seed{0};

    void validate() const {
        if (gyro_std_deg_s < 0.0 || rw_std_rpm < 0.0 || wheel_inertia <= 0.0) {
            throw std::invalid_argument("NoiseConfig: invalid noise parameters");
        }
    }
};

struct PlantState {
    Quaternion q;                 // body attitude w.r.t. ECI
    Vec3 omega{Vec3::Zero()};     // body rates [rad/s]
    Vec3 h_rw{Vec3::Zero()};      // wheel momentum in body axes [N m s]
};

struct StateDerivative {
    Eigen::Vector4d q_dot;
    Vec3 omega_dot;
    Vec3 h_rw_dot;
};

struct Measurement {
    Quaternion q_meas;
    Vec3 omega_meas;
    Vec3 h_rw_meas;
};

/// Continuous-time derivative of the plant state:
///   q_dot     = 1/2 q (0, omega)
///   omega_dot = J^-1 (T - omega x (J omega + h_rw))
///   h_rw_dot  = -T
inline StateDerivative plant_derivative(const PlantState& state, const Vec3& torque,
                                        const InertiaMatrix& j) {
    const Quaternion qd =
        quat_mul(state.q, Quaternion(0.0, state.omega.x(), state.omega.y(), state.omega.z()));
    StateDerivative d;
    d.q_dot = 0.5 * Eigen::Vector4d(qd.q0, qd.q1, qd.q2, qd.q3);
    d.omega_dot = j.inverse() * (torque - state.omega.cross(j * state.omega + state.h_rw));
    d.h_rw_dot = -torque;
    return d;
}

/// Draw a noisy measurement of the state. Attitude is reported exactly;
/// gyro noise is N(0, gyro_std) per axis, wheel-speed noise N(0, rw_std_rpm)
/// enters the momentum channel through the wheel inertia.
template <typename Rng>
Measurement measure(const PlantState& state, const NoiseConfig& noise, Rng& rng) {
    Measurement m;
    m.q_meas = state.q;
    m.omega_meas = state.omega;
    m.h_rw_meas = state.h_rw;
    constexpr double kDeg = M_PI / 180.0;
    constexpr double kRpm = 2.0 * M_PI / 60.0;
    if (noise.gyro_std_deg_s > 0.0) {
        std::normal_distribution<double> gyro(0.0, noise.gyro_std_deg_s * kDeg);
        for (int i = 0; i < 3; ++i) m.omega_meas[i] += gyro(rng);
    }
    if (noise.rw_std_rpm > 0.0) {
        std::normal_distribution<double> wheel(0.0, noise.rw_std_rpm);
        for (int i = 0; i < 3; ++i) {
            m.h_rw_meas[i] += noise.wheel_inertia * kRpm * wheel(rng);
        }
    }
    return m;
}

/// Fixed-step simulator. One instance per closed-loop run; the instance
/// owns its RNG stream so seeded runs are bit-reproducible.
class Plant {
  public:
    Plant(const InertiaMatrix& j, const ActuatorLimits& limits, const NoiseConfig& noise)
        : j_(j), limits_(limits), noise_(noise), rng_(noise.seed) {
        limits_.validate();
        noise_.validate();
    }

    const PlantState& state() const { return state_; }
    void set_state(const PlantState& s) { state_ = s; }
    const InertiaMatrix& inertia() const { return j_; }
    const ActuatorLimits& limits() const { return limits_; }

    Measurement measure_state() { return measure(state_, noise_, rng_); }

    /// Advance the plant by dt under the commanded torque. The command is
    /// clamped to the torque envelope, axes whose wheel sits at a momentum
    /// bound and would be pushed further are zeroed, then the state is
    /// integrated with classical RK4 at substep dt/4. Returns the torque
    /// that was actually applied.
    Vec3 step(const Vec3& torque_cmd, double dt) {
        if (!(dt > 0.0)) throw std::invalid_argument("Plant::step: dt must be positive");
        if (!torque_cmd.allFinite() || !state_.omega.allFinite() ||
            !state_.h_rw.allFinite() || !std::isfinite(state_.q.norm())) {
            throw std::invalid_argument("Plant::step: non-finite state or command");
        }

        Vec3 t = torque_cmd.cwiseMin(limits_.t_max).cwiseMax(limits_.t_min);
        for (int i = 0; i < 3; ++i) {
            // h_rw integrates -T: positive torque drains the wheel, negative
            // torque charges it.
            const bool at_upper = state_.h_rw[i] >= limits_.h_max[i] - 1e-12;
            const bool at_lower = state_.h_rw[i] <= limits_.h_min[i] + 1e-12;
            if ((at_upper && t[i] < 0.0) || (at_lower && t[i] > 0.0)) t[i] = 0.0;
        }

        const int substeps = 4;
        const double h = dt / substeps;
        for (int s = 0; s < substeps; ++s) {
            state_ = rk4_substep(state_, t, h);
        }
        state_.q = state_.q.normalized();
        state_.h_rw = state_.h_rw.cwiseMin(limits_.h_max).cwiseMax(limits_.h_min);
        return t;
    }

  private:
    PlantState rk4_substep(const PlantState& s, const Vec3& t, double h) const {
        const auto k1 = plant_derivative(s, t, j_);
        const auto k2 = plant_derivative(advance(s, k1, 0.5 * h), t, j_);
        const auto k3 = plant_derivative(advance(s, k2, 0.5 * h), t, j_);
        const auto k4 = plant_derivative(advance(s, k3, h), t, j_);

        PlantState out;
        const Eigen::Vector4d q =
            Eigen::Vector4d(s.q.q0, s.q.q1, s.q.q2, s.q.q3) +
            (h / 6.0) * (k1.q_dot + 2.0 * k2.q_dot + 2.0 * k3.q_dot + k4.q_dot);
        out.q = Quaternion(q[0], q[1], q[2], q[3]);
        out.omega = s.omega + (h / 6.0) * (k1.omega_dot + 2.0 * k2.omega_dot +
                                           2.0 * k3.omega_dot + k4.omega_dot);
        out.h_rw = s.h_rw + (h / 6.0) * (k1.h_rw_dot + 2.0 * k2.h_rw_dot +
                                         2.0 * k3.h_rw_dot + k4.h_rw_dot);
        return out;
    }

    static PlantState advance(const PlantState& s, const StateDerivative& d, double h) {
        PlantState out;
        out.q = Quaternion(s.q.q0 + h * d.q_dot[0], s.q.q1 + h * d.q_dot[1],
                           s.q.q2 + h * d.q_dot[2], s.q.q3 + h * d.q_dot[3]);
        out.omega = s.omega + h * d.omega_dot;
        out.h_rw = s.h_rw + h * d.h_rw_dot;
        return out;
    }

    InertiaMatrix j_;
    ActuatorLimits limits_;
    NoiseConfig noise_;
    PlantState state_;
    std::mt19937_64 rng_;
};

}  // namespace agile_mpc
