// Quaternion algebra and attitude-error helpers shared by the simulator,
// the controllers, and the reference generator. Scalar-first component
// ordering (q0, q1, q2, q3) with the Hamilton product convention.
#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace agile_mpc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Unit quaternion representing an attitude, q0 is the scalar part.
/// The raw constructor stores components as given (intermediate values in
/// integrators are legitimately non-unit); the named factories and
/// normalized() produce unit quaternions to 1e-9 or better.
struct Quaternion {
    double q0{1.0};
    double q1{0.0};
    double q2{0.0};
    double q3{0.0};

    Quaternion() = default;
    Quaternion(double w, double x, double y, double z) : q0(w), q1(x), q2(y), q3(z) {}

    static Quaternion identity() { return {1.0, 0.0, 0.0, 0.0}; }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    static Quaternion from_axis_angle(const Vec3& axis, double angle) {
        const double n = axis.norm();
        if (n == 0.0) {
            throw std::invalid_argument("from_axis_angle: zero rotation axis");
        }
        const double half = 0.5 * angle;
        const double s = std::sin(half) / n;
        return {std::cos(half), s * axis.x(), s * axis.y(), s * axis.z()};
    }

    double norm() const { return std::sqrt(q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3); }

    Quaternion normalized() const {
        const double n = norm();
        if (n == 0.0) {
            throw std::domain_error("normalized: zero quaternion");
        }
        return {q0 / n, q1 / n, q2 / n, q3 / n};
    }

    Quaternion conjugate() const { return {q0, -q1, -q2, -q3}; }

    Vec3 vec() const { return {q1, q2, q3}; }
};

/// Hamilton product a*b. No normalization or sign handling happens here so
/// the algebra stays associative; unit inputs give a unit result anyway.
inline Quaternion quat_mul(const Quaternion& a, const Quaternion& b) {
    return {a.q0 * b.q0 - a.q1 * b.q1 - a.q2 * b.q2 - a.q3 * b.q3,
            a.q0 * b.q1 + a.q1 * b.q0 + a.q2 * b.q3 - a.q3 * b.q2,
            a.q0 * b.q2 - a.q1 * b.q3 + a.q2 * b.q0 + a.q3 * b.q1,
            a.q0 * b.q3 + a.q1 * b.q2 - a.q2 * b.q1 + a.q3 * b.q0};
}

inline Quaternion quat_conjugate(const Quaternion& q) { return q.conjugate(); }

/// Resolve the double cover: flip the sign so the scalar part is >= 0.
/// Exact zero scalar is disambiguated by making the first nonzero vector
/// component positive.
inline Quaternion canonicalize(const Quaternion& q) {
    if (q.q0 > 0.0) return q;
    if (q.q0 < 0.0) return {-q.q0, -q.q1, -q.q2, -q.q3};
    for (double c : {q.q1, q.q2, q.q3}) {
        if (c > 0.0) return q;
        if (c < 0.0) return {-q.q0, -q.q1, -q.q2, -q.q3};
    }
    return q;
}

/// Error quaternion q * q_t^-1 (conjugate equals inverse for unit
/// quaternions), canonicalized to scalar part >= 0.
inline Quaternion quat_error(const Quaternion& q, const Quaternion& q_t) {
    return canonicalize(quat_mul(q, q_t.conjugate()));
}

/// Attitude error resolved in the target frame, q_t^-1 * q, canonicalized.
/// For a constant target this error obeys d/dt q_e = 1/2 q_e (0, omega)
/// with plain body rates, the form the linearized controller models and
/// the shooting dynamics assume. Same rotation angle as quat_error.
inline Quaternion tracking_error(const Quaternion& q, const Quaternion& q_t) {
    return canonicalize(quat_mul(q_t.conjugate(), q));
}

/// Cross-product matrix: skew(v) * w == v x w.
inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
         -v.y(), v.x(), 0.0;
    return m;
}

/// Rotation angle of the error quaternion in degrees, range [0, 180].
/// The acos argument is clamped to [0, 1] so rounding near zero error
/// cannot produce NaN.
inline double error_angle_deg(const Quaternion& q_e) {
    const double c = std::min(std::abs(q_e.q0), 1.0);
    return 2.0 * std::acos(c) * 180.0 / M_PI;
}

/// Rotate a vector by a unit quaternion: Im(q * (0,v) * q^-1).
inline Vec3 rotate(const Quaternion& q, const Vec3& v) {
    const Vec3 u = q.vec();
    const Vec3 t = 2.0 * u.cross(v);
    return v + q.q0 * t + u.cross(t);
}

namespace detail {

/// Shepperd's method; m must be a proper rotation matrix.
inline Quaternion quat_from_rotation_matrix(const Mat3& m) {
    const double tr = m.trace();
    Quaternion q;
    if (tr > 0.0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        q = {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
             (m(1, 0) - m(0, 1)) / s};
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
        double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
        q = {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s,
             (m(0, 2) + m(2, 0)) / s};
    } else if (m(1, 1) > m(2, 2)) {
        double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
        q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s,
             (m(1, 2) + m(2, 1)) / s};
    } else {
        double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
        q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s,
             (m(1, 2) + m(2, 1)) / s, 0.25 * s};
    }
    return q.normalized();
}

}  // namespace detail

}  // namespace agile_mpc
