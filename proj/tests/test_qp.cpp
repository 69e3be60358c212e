#include "agile_mpc/qp.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace agile_mpc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

QpProblem box_problem(const Eigen::MatrixXd& h, const Eigen::VectorXd& f,
                      const Eigen::VectorXd& lb, const Eigen::VectorXd& ub) {
    QpProblem p;
    p.hessian = h;
    p.gradient = f;
    p.constraints = Eigen::MatrixXd::Identity(f.size(), f.size());
    p.lower = lb;
    p.upper = ub;
    return p;
}

// Projected-gradient oracle for box-constrained strictly convex QPs, run to
// a much tighter tolerance than the assertions it backs.
Eigen::VectorXd projected_gradient_oracle(const QpProblem& p, int max_iter = 200000) {
    const double lip = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(p.hessian)
                           .eigenvalues()
                           .maxCoeff();
    Eigen::VectorXd x = p.lower.cwiseMax(Eigen::VectorXd::Zero(p.num_vars()).cwiseMin(p.upper));
    for (int k = 0; k < max_iter; ++k) {
        const Eigen::VectorXd g = p.hessian * x + p.gradient;
        Eigen::VectorXd next = (x - g / lip).cwiseMax(p.lower).cwiseMin(p.upper);
        const double step = (next - x).lpNorm<Eigen::Infinity>();
        x = next;
        if (step < 1e-14) break;
    }
    return x;
}

QpProblem random_box_qp(std::mt19937_64& rng, int n) {
    const Eigen::MatrixXd m = amc_test::random_matrix(rng, n, n);
    std::uniform_real_distribution<double> shift(0.5, 1.5);
    QpProblem p;
    p.hessian = m.transpose() * m + shift(rng) * Eigen::MatrixXd::Identity(n, n);
    p.gradient = amc_test::random_vector(rng, n, 2.0);
    p.constraints = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd a = amc_test::random_vector(rng, n, 1.0);
    Eigen::VectorXd b = amc_test::random_vector(rng, n, 1.0);
    p.lower = a.cwiseMin(b);
    p.upper = a.cwiseMax(b).array() + 0.1;
    return p;
}

}  // namespace

TEST(QpSolve, UnconstrainedMinimizer) {
    QpProblem p;
    p.hessian = Eigen::Matrix2d::Identity();
    p.gradient = Eigen::Vector2d(-1.0, -2.0);
    p.constraints.resize(0, 2);
    p.lower.resize(0);
    p.upper.resize(0);
    QpSolver solver;
    const QpSolution sol = solver.solve(p);
    ASSERT_EQ(sol.status, QpStatus::optimal);
    EXPECT_NEAR(sol.x[0], 1.0, 1e-12);
    EXPECT_NEAR(sol.x[1], 2.0, 1e-12);
    EXPECT_LT(sol.kkt_residual, 1e-12);
}

TEST(QpSolve, ActiveUpperBound) {
    // min 1/2 x^2 - 2x s.t. x <= 1  ->  x = 1
    QpProblem p;
    p.hessian = Eigen::MatrixXd::Constant(1, 1, 1.0);
    p.gradient = Eigen::VectorXd::Constant(1, -2.0);
    p.constraints = Eigen::MatrixXd::Constant(1, 1, 1.0);
    p.lower = Eigen::VectorXd::Constant(1, -kInf);
    p.upper = Eigen::VectorXd::Constant(1, 1.0);
    QpSolver solver;
    const QpSolution sol = solver.solve(p);
    ASSERT_EQ(sol.status, QpStatus::optimal);
    EXPECT_NEAR(sol.x[0], 1.0, 1e-12);
    EXPECT_EQ(sol.active[0], 1);
    EXPECT_GT(sol.lambda[0], 0.0);  // pushes against the upper bound
}

TEST(QpSolve, RandomBoxProblemsMatchProjectedGradientOracle) {
    auto rng = amc_test::seeded_rng(31);
    std::uniform_int_distribution<int> dim(1, 8);
    for (int inst = 0; inst < 200; ++inst) {
        const QpProblem p = random_box_qp(rng, dim(rng));
        QpSolver solver;
        const QpSolution sol = solver.solve(p);
        ASSERT_EQ(sol.status, QpStatus::optimal) << "instance " << inst;
        EXPECT_LE(sol.kkt_residual, 1e-6) << "instance " << inst;

        const Eigen::VectorXd xo = projected_gradient_oracle(p);
        EXPECT_NEAR(p.objective(sol.x), p.objective(xo), 1e-6) << "instance " << inst;

        for (int i = 0; i < p.num_rows(); ++i) {
            const double ax = p.constraints.row(i).dot(sol.x);
            EXPECT_GE(ax, p.lower[i] - 1e-8);
            EXPECT_LE(ax, p.upper[i] + 1e-8);
        }
    }
}

TEST(QpSolve, GeneralRowsAgainstDenseEnumeration) {
    // 2-variable problem with a general two-sided row; enumerate candidate
    // active sets by hand: min 1/2|x|^2 - [3,0].x s.t. 0 <= x0 + x1 <= 1.
    QpProblem p;
    p.hessian = Eigen::Matrix2d::Identity();
    p.gradient = Eigen::Vector2d(-3.0, 0.0);
    p.constraints = Eigen::MatrixXd::Constant(1, 2, 1.0);
    p.lower = Eigen::VectorXd::Constant(1, 0.0);
    p.upper = Eigen::VectorXd::Constant(1, 1.0);
    QpSolver solver;
    const QpSolution sol = solver.solve(p);
    ASSERT_EQ(sol.status, QpStatus::optimal);
    // upper bound active: x = (3,0) - lambda (1,1), x0+x1 = 1 -> lambda = 1
    EXPECT_NEAR(sol.x[0], 2.0, 1e-10);
    EXPECT_NEAR(sol.x[1], -1.0, 1e-10);
    EXPECT_NEAR(sol.lambda[0], 1.0, 1e-10);
}

TEST(QpSolve, EqualityRow) {
    QpProblem p;
    p.hessian = Eigen::Matrix2d::Identity();
    p.gradient = Eigen::Vector2d::Zero();
    p.constraints = Eigen::MatrixXd::Constant(1, 2, 1.0);
    p.lower = Eigen::VectorXd::Constant(1, 2.0);
    p.upper = Eigen::VectorXd::Constant(1, 2.0);
    QpSolver solver;
    const QpSolution sol = solver.solve(p);
    ASSERT_EQ(sol.status, QpStatus::optimal);
    EXPECT_NEAR(sol.x[0], 1.0, 1e-10);
    EXPECT_NEAR(sol.x[1], 1.0, 1e-10);
}

TEST(QpSolve, InconsistentBoundsAreInfeasible) {
    QpProblem p = box_problem(Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero(),
                              Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(-1.0, 1.0));
    QpSolver solver;
    EXPECT_EQ(solver.solve(p).status, QpStatus::infeasible);
}

TEST(QpSolve, GeometricInfeasibilityDetected) {
    // x <= -1 and x >= 1 cannot hold together
    QpProblem p;
    p.hessian = Eigen::MatrixXd::Constant(1, 1, 1.0);
    p.gradient = Eigen::VectorXd::Constant(1, 0.0);
    p.constraints = Eigen::MatrixXd::Ones(2, 1);
    p.lower.resize(2);
    p.upper.resize(2);
    p.lower << -kInf, 1.0;
    p.upper << -1.0, kInf;
    QpSolver solver;
    EXPECT_EQ(solver.solve(p).status, QpStatus::infeasible);
}

TEST(QpSolve, DeterministicIterateSequence) {
    auto rng = amc_test::seeded_rng(32);
    const QpProblem p = random_box_qp(rng, 6);
    auto run = [&]() {
        std::vector<Eigen::VectorXd> iterates;
        QpSolver::Options opts;
        opts.on_iterate = [&](const Eigen::VectorXd& x) { iterates.push_back(x); };
        QpSolver solver(opts);
        const QpSolution sol = solver.solve(p);
        return std::make_pair(iterates, sol);
    };
    const auto [it1, sol1] = run();
    const auto [it2, sol2] = run();
    ASSERT_EQ(it1.size(), it2.size());
    for (size_t i = 0; i < it1.size(); ++i) {
        EXPECT_EQ(it1[i], it2[i]);
    }
    EXPECT_EQ(sol1.iterations, sol2.iterations);
    EXPECT_EQ(sol1.x, sol2.x);
}

TEST(QpSolve, MonotoneObjectiveDecrease) {
    auto rng = amc_test::seeded_rng(33);
    for (int inst = 0; inst < 50; ++inst) {
        const QpProblem p = random_box_qp(rng, 5);
        std::vector<double> objectives;
        QpSolver::Options opts;
        opts.on_iterate = [&](const Eigen::VectorXd& x) {
            objectives.push_back(p.objective(x));
        };
        QpSolver solver(opts);
        ASSERT_EQ(solver.solve(p).status, QpStatus::optimal);
        for (size_t i = 1; i < objectives.size(); ++i) {
            EXPECT_LE(objectives[i], objectives[i - 1] + 1e-12);
        }
    }
}

TEST(QpSolve, WarmStartedResolveIsImmediate) {
    auto rng = amc_test::seeded_rng(34);
    for (int inst = 0; inst < 20; ++inst) {
        const QpProblem p = random_box_qp(rng, 6);
        QpSolver solver;
        const QpSolution cold = solver.solve(p);
        ASSERT_EQ(cold.status, QpStatus::optimal);
        const QpSolution warm = solver.solve(p);  // reuses the stored active set
        ASSERT_EQ(warm.status, QpStatus::optimal);
        EXPECT_LE(warm.iterations, 2);
        EXPECT_LT((warm.x - cold.x).lpNorm<Eigen::Infinity>(), 1e-9);
    }
}

TEST(QpSolve, WarmStartNeverChangesOptimum) {
    auto rng = amc_test::seeded_rng(35);
    for (int inst = 0; inst < 20; ++inst) {
        const QpProblem p = random_box_qp(rng, 5);
        QpSolver cold_solver;
        const QpSolution cold = cold_solver.solve(p);

        // warm start from a random plausible active set
        ActiveSet guess(p.num_rows(), 0);
        std::uniform_int_distribution<int> s(-1, 1);
        for (auto& v : guess) v = static_cast<std::int8_t>(s(rng));
        QpSolver warm_solver;
        const QpSolution warm = warm_solver.solve(p, guess);
        ASSERT_EQ(warm.status, QpStatus::optimal);
        EXPECT_LT((warm.x - cold.x).lpNorm<Eigen::Infinity>(), 1e-7);
    }
}

TEST(KktResidual, UnconstrainedOptimumIsTiny) {
    QpProblem p;
    p.hessian = Eigen::Matrix2d::Identity() * 2.0;
    p.gradient = Eigen::Vector2d(1.0, -1.0);
    p.constraints.resize(0, 2);
    p.lower.resize(0);
    p.upper.resize(0);
    const Eigen::VectorXd x = p.hessian.ldlt().solve(-p.gradient);
    EXPECT_LT(kkt_residual(p, x, Eigen::VectorXd::Zero(0)), 1e-12);
}

TEST(KktResidual, FirstOrderPerturbation) {
    QpProblem p;
    p.hessian = Eigen::Matrix2d::Identity() * 3.0;
    p.gradient = Eigen::Vector2d(1.0, -2.0);
    p.constraints.resize(0, 2);
    p.lower.resize(0);
    p.upper.resize(0);
    Eigen::VectorXd x = p.hessian.ldlt().solve(-p.gradient);
    Eigen::Vector2d delta(1e-3, 0.0);
    x += delta;
    // residual is exactly ||H delta|| for the unconstrained case
    EXPECT_NEAR(kkt_residual(p, x, Eigen::VectorXd::Zero(0)),
                (p.hessian * delta).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(KktResidual, SuboptimalFeasiblePointEqualsGradientNorm) {
    auto rng = amc_test::seeded_rng(36);
    const QpProblem p = random_box_qp(rng, 4);
    const Eigen::VectorXd x = 0.5 * (p.lower + p.upper);
    const double r = kkt_residual(p, x, Eigen::VectorXd::Zero(p.num_rows()));
    EXPECT_DOUBLE_EQ(r, (p.hessian * x + p.gradient).lpNorm<Eigen::Infinity>());
}

TEST(QpSolve, InfeasibleStartIsRepaired) {
    // zero is outside the box; the solver must restore feasibility first
    QpProblem p = box_problem(Eigen::Matrix2d::Identity(), Eigen::Vector2d(1.0, 1.0),
                              Eigen::Vector2d(1.0, 2.0), Eigen::Vector2d(3.0, 4.0));
    QpSolver solver;
    const QpSolution sol = solver.solve(p);
    ASSERT_EQ(sol.status, QpStatus::optimal);
    EXPECT_NEAR(sol.x[0], 1.0, 1e-9);
    EXPECT_NEAR(sol.x[1], 2.0, 1e-9);
}
