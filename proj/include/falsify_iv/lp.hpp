#pragma once

#include <Eigen/Dense>

#include <string>

namespace fiv::lp {

// minimize cost'x  s.t.  a_ub x <= b_ub, a_eq x = b_eq, lower <= x <= upper.
struct Problem {
    Eigen::VectorXd cost;
    Eigen::MatrixXd a_ub;
    Eigen::VectorXd b_ub;
    Eigen::MatrixXd a_eq;
    Eigen::VectorXd b_eq;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

enum class Status { Optimal, Infeasible, Unbounded };

struct Solution {
    Status status = Status::Infeasible;
    double value = 0.0;
    Eigen::VectorXd x;
};

// Deterministic: HiGHS on one thread, feasibility tolerance 1e-9.
Solution solve(const Problem& problem);

// Name and version of the backend, e.g. "HiGHS 1.15.0".
std::string solver_version();

// minimize 0.5 z'Hz + g'z  s.t.  g_ub z <= h_ub, e z = f.
struct QuadraticProblem {
    Eigen::MatrixXd h;
    Eigen::VectorXd g;
    Eigen::MatrixXd g_ub;
    Eigen::VectorXd h_ub;
    Eigen::MatrixXd e;
    Eigen::VectorXd f;
};

struct QuadraticSolution {
    Eigen::VectorXd z;
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Primal-dual interior point with predictor-corrector steps.
QuadraticSolution solve_qp(const QuadraticProblem& problem, double tol = 1e-10, int max_iter = 200);

}  // namespace fiv::lp
