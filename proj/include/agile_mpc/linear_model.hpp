// Linearized attitude-error models and the condensed horizon prediction
// matrices used by the linear MPC variants.
//
// The error state is x = [xi; omega] with xi the vector part of the error
// quaternion. The continuous model has the block-nilpotent structure
//   A1 = [0  I/2; 0  0],  B1 = [0; J^-1],  C1 = [I  0]
// so the zero-order-hold discretization has an exact closed form.
#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "agile_mpc/plant.hpp"

namespace agile_mpc {

struct ContinuousModel {
    Eigen::Matrix<double, 6, 6> a1;
    Eigen::Matrix<double, 6, 3> b1;
    Eigen::Matrix<double, 3, 6> c1;
};

struct DiscreteModel {
    Eigen::Matrix<double, 6, 6> a2;
    Eigen::Matrix<double, 6, 3> b2;
    Eigen::Matrix<double, 3, 6> c2;
    double ts{0.0};
};

/// Velocity-form lift of the discrete model over state increments plus the
/// tracked output; the embedded integrator gives the augmented controller
/// its offset-free behavior.
struct AugmentedModel {
    Eigen::Matrix<double, 9, 9> aa;
    Eigen::Matrix<double, 9, 3> ba;
    Eigen::Matrix<double, 3, 9> ca;
};

struct PredictionMatrices {
    Eigen::MatrixXd phi;  // (3 Np) x n
    Eigen::MatrixXd r;    // (3 Np) x (3 Nc), block lower-triangular
    int np{0};
    int nc{0};
};

inline ContinuousModel build_continuous(const InertiaMatrix& j) {
    ContinuousModel m;
    m.a1.setZero();
    m.a1.block<3, 3>(0, 3) = 0.5 * Mat3::Identity();
    m.b1.setZero();
    m.b1.block<3, 3>(3, 0) = j.inverse();
    m.c1.setZero();
    m.c1.block<3, 3>(0, 0) = Mat3::Identity();
    return m;
}

/// Exact zero-order-hold discretization. A1 is nilpotent (A1^2 = 0), so
///   A2 = I + A1 ts,  B2 = (ts I + ts^2/2 A1) B1
/// terminate the exponential series exactly.
inline DiscreteModel discretize(const ContinuousModel& m, double ts) {
    if (!(ts > 0.0)) throw std::invalid_argument("discretize: ts must be positive");
    DiscreteModel d;
    d.a2 = Eigen::Matrix<double, 6, 6>::Identity() + m.a1 * ts;
    d.b2 = (ts * Eigen::Matrix<double, 6, 6>::Identity() + 0.5 * ts * ts * m.a1) * m.b1;
    d.c2 = m.c1;
    d.ts = ts;
    return d;
}

inline AugmentedModel augment(const DiscreteModel& m) {
    AugmentedModel a;
    a.aa.setZero();
    a.aa.block<6, 6>(0, 0) = m.a2;
    a.aa.block<3, 6>(6, 0) = m.c2 * m.a2;
    a.aa.block<3, 3>(6, 6) = Mat3::Identity();
    a.ba.block<6, 3>(0, 0) = m.b2;
    a.ba.block<3, 3>(6, 0) = m.c2 * m.b2;
    a.ca.setZero();
    a.ca.block<3, 3>(0, 6) = Mat3::Identity();
    return a;
}

/// Condensed horizon maps: block row i of phi is C A^(i+1); block (i, j) of
/// r is C A^(i-j) B for j <= i and j < Nc, zero above the diagonal.
inline PredictionMatrices prediction_matrices(const Eigen::MatrixXd& a,
                                              const Eigen::MatrixXd& b,
                                              const Eigen::MatrixXd& c, int np, int nc) {
    if (nc > np || np < 1 || nc < 1) {
        throw std::invalid_argument("prediction_matrices: require 1 <= Nc <= Np");
    }
    const auto n = a.rows();
    const auto nu = b.cols();
    const auto ny = c.rows();
    if (a.cols() != n || b.rows() != n || c.cols() != n) {
        throw std::invalid_argument("prediction_matrices: inconsistent dimensions");
    }

    PredictionMatrices p;
    p.np = np;
    p.nc = nc;
    p.phi.resize(ny * np, n);
    p.r.setZero(ny * np, nu * nc);

    // c_a_pow[i] = C A^i
    std::vector<Eigen::MatrixXd> c_a_pow(np + 1);
    c_a_pow[0] = c;
    for (int i = 1; i <= np; ++i) c_a_pow[i] = c_a_pow[i - 1] * a;

    for (int i = 0; i < np; ++i) {
        p.phi.block(ny * i, 0, ny, n) = c_a_pow[i + 1];
        for (int j = 0; j <= i && j < nc; ++j) {
            p.r.block(ny * i, nu * j, ny, nu) = c_a_pow[i - j] * b;
        }
    }
    return p;
}

}  // namespace agile_mpc
