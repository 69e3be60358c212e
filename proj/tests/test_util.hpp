// Shared helpers for the test suites: seeded random generators and
// reference oracles kept independent of the library implementation paths
// they check.
#pragma once

#include <random>

#include <Eigen/Dense>

#include "agile_mpc/quaternion.hpp"

namespace amc_test {

inline std::mt19937_64 seeded_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline agile_mpc::Vec3 random_vec3(std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    return {n(rng), n(rng), n(rng)};
}

inline agile_mpc::Quaternion random_unit_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return agile_mpc::Quaternion(n(rng), n(rng), n(rng), n(rng)).normalized();
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols,
                                     double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
    }
    return m;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, int n, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = d(rng);
    return v;
}

}  // namespace amc_test
