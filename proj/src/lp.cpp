#include "falsify_iv/lp.hpp"

#include "falsify_iv/error.hpp"

#include "Highs.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace fiv::lp {
namespace {

constexpr double kFeasTol = 1e-9;

HighsLp to_highs(const Problem& p) {
    const auto n = static_cast<HighsInt>(p.cost.size());
    const auto m_ub = static_cast<HighsInt>(p.a_ub.rows());
    const auto m_eq = static_cast<HighsInt>(p.a_eq.rows());

    HighsLp lp;
    lp.num_col_ = n;
    lp.num_row_ = m_ub + m_eq;
    lp.col_cost_.assign(p.cost.data(), p.cost.data() + n);
    lp.col_lower_.resize(static_cast<std::size_t>(n));
    lp.col_upper_.resize(static_cast<std::size_t>(n));
    for (HighsInt j = 0; j < n; ++j) {
        lp.col_lower_[static_cast<std::size_t>(j)] = std::isfinite(p.lower(j)) ? p.lower(j) : -kHighsInf;
        lp.col_upper_[static_cast<std::size_t>(j)] = std::isfinite(p.upper(j)) ? p.upper(j) : kHighsInf;
    }
    for (HighsInt i = 0; i < m_ub; ++i) {
        lp.row_lower_.push_back(-kHighsInf);
        lp.row_upper_.push_back(std::isfinite(p.b_ub(i)) ? p.b_ub(i) : kHighsInf);
    }
    for (HighsInt i = 0; i < m_eq; ++i) {
        lp.row_lower_.push_back(p.b_eq(i));
        lp.row_upper_.push_back(p.b_eq(i));
    }

    HighsSparseMatrix& a = lp.a_matrix_;
    a.format_ = MatrixFormat::kColwise;
    a.num_col_ = n;
    a.num_row_ = m_ub + m_eq;
    a.start_.assign(1, 0);
    for (HighsInt j = 0; j < n; ++j) {
        for (HighsInt i = 0; i < m_ub; ++i) {
            if (p.a_ub(i, j) == 0.0) continue;
            a.index_.push_back(i);
            a.value_.push_back(p.a_ub(i, j));
        }
        for (HighsInt i = 0; i < m_eq; ++i) {
            if (p.a_eq(i, j) == 0.0) continue;
            a.index_.push_back(m_ub + i);
            a.value_.push_back(p.a_eq(i, j));
        }
        a.start_.push_back(static_cast<HighsInt>(a.index_.size()));
    }
    return lp;
}

bool decided(HighsModelStatus s) {
    return s == HighsModelStatus::kOptimal || s == HighsModelStatus::kInfeasible || s == HighsModelStatus::kUnbounded ||
           s == HighsModelStatus::kUnboundedOrInfeasible;
}

HighsModelStatus run(Highs& highs, const HighsLp& lp, const std::string& solver, bool presolve, HighsInt iteration_cap) {
    highs.clearModel();
    highs.setOptionValue("solver", solver);
    highs.setOptionValue("presolve", presolve ? "on" : "off");
    highs.setOptionValue("simplex_iteration_limit", iteration_cap);
    if (highs.passModel(lp) == HighsStatus::kError) throw Error(ErrorCode::InvalidArgument, "malformed linear program");
    highs.run();
    return highs.getModelStatus();
}

// Dual simplex first; on the rare degenerate problem where it stalls, an
// interior point run with crossover, then a presolved simplex without a cap.
HighsModelStatus run_all(Highs& highs, const HighsLp& lp) {
    const HighsInt cap = 20 * (lp.num_col_ + lp.num_row_) + 1000;
    HighsModelStatus status = run(highs, lp, "simplex", false, cap);
    if (!decided(status)) status = run(highs, lp, "ipm", true, cap);
    if (!decided(status)) status = run(highs, lp, "simplex", true, kHighsIInf);
    return status;
}
}  // namespace

Solution solve(const Problem& p) {
    if (p.a_ub.cols() != p.cost.size() || p.a_eq.cols() != p.cost.size() || p.b_ub.size() != p.a_ub.rows() ||
        p.b_eq.size() != p.a_eq.rows() || p.lower.size() != p.cost.size() || p.upper.size() != p.cost.size())
        throw Error(ErrorCode::InvalidArgument, "linear program dimensions disagree");

    Solution out;
    out.x = Eigen::VectorXd::Zero(p.cost.size());
    for (Eigen::Index j = 0; j < p.cost.size(); ++j) {
        if (p.lower(j) > p.upper(j) + kFeasTol) return out;
    }
    for (Eigen::Index i = 0; i < p.b_ub.size(); ++i) {
        if (std::isinf(p.b_ub(i)) && p.b_ub(i) < 0) return out;
    }

    // One solver instance per thread; setup costs dominate on small problems.
    thread_local Highs highs;
    thread_local bool configured = false;
    if (!configured) {
        highs.setOptionValue("output_flag", false);
        highs.setOptionValue("threads", 1);
        highs.setOptionValue("primal_feasibility_tolerance", kFeasTol);
        highs.setOptionValue("dual_feasibility_tolerance", kFeasTol);
        configured = true;
    }

    const HighsLp lp = to_highs(p);
    HighsModelStatus status = run_all(highs, lp);
    if (status == HighsModelStatus::kUnboundedOrInfeasible) {
        HighsLp feasibility = lp;
        std::fill(feasibility.col_cost_.begin(), feasibility.col_cost_.end(), 0.0);
        status = run_all(highs, feasibility) == HighsModelStatus::kOptimal ? HighsModelStatus::kUnbounded
                                                                            : HighsModelStatus::kInfeasible;
    }

    switch (status) {
        case HighsModelStatus::kOptimal: {
            const std::vector<double>& col = highs.getSolution().col_value;
            for (Eigen::Index j = 0; j < p.cost.size(); ++j) out.x(j) = col[static_cast<std::size_t>(j)];
            out.value = p.cost.dot(out.x);
            out.status = Status::Optimal;
            return out;
        }
        case HighsModelStatus::kInfeasible:
            out.status = Status::Infeasible;
            return out;
        case HighsModelStatus::kUnbounded:
            out.status = Status::Unbounded;
            return out;
        default:
            throw Error(ErrorCode::InvalidArgument,
                        "linear program solver stopped with status: " + highs.modelStatusToString(status));
    }
}

std::string solver_version() { return std::string("HiGHS ") + highsVersion(); }

QuadraticSolution solve_qp(const QuadraticProblem& p, double tol, int max_iter) {
    const Eigen::Index n = p.g.size();
    const Eigen::Index m = p.g_ub.rows();
    const Eigen::Index q = p.e.rows();
    constexpr double reg = 1e-11;

    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd s = (p.h_ub - p.g_ub * z).cwiseMax(1.0);
    Eigen::VectorXd lam = Eigen::VectorXd::Ones(m);
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(q);

    const double scale = 1.0 + std::max({p.g.size() ? p.g.cwiseAbs().maxCoeff() : 0.0,
                                         p.h_ub.size() ? p.h_ub.cwiseAbs().maxCoeff() : 0.0,
                                         p.f.size() ? p.f.cwiseAbs().maxCoeff() : 0.0});

    auto max_step = [](const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
        double a = 1.0;
        for (Eigen::Index i = 0; i < v.size(); ++i)
            if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
        return a;
    };

    QuadraticSolution out;
    for (int iter = 0; iter < max_iter; ++iter) {
        out.iterations = iter;
        Eigen::VectorXd r_d = p.h * z + p.g + p.g_ub.transpose() * lam + p.e.transpose() * nu;
        Eigen::VectorXd r_e = p.e * z - p.f;
        Eigen::VectorXd r_i = p.g_ub * z + s - p.h_ub;
        double mu = m > 0 ? s.dot(lam) / static_cast<double>(m) : 0.0;
        auto inf_norm = [](const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; };
        if (inf_norm(r_d) <= tol * scale && inf_norm(r_e) <= tol * scale && inf_norm(r_i) <= tol * scale && mu <= tol * 1e-2) {
            out.converged = true;
            break;
        }

        Eigen::VectorXd d = lam.cwiseQuotient(s);
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + q, n + q);
        kkt.topLeftCorner(n, n) = p.h + p.g_ub.transpose() * d.asDiagonal() * p.g_ub;
        kkt.topLeftCorner(n, n).diagonal().array() += reg;
        if (q > 0) {
            kkt.topRightCorner(n, q) = p.e.transpose();
            kkt.bottomLeftCorner(q, n) = p.e;
            kkt.bottomRightCorner(q, q).diagonal().array() -= reg;
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);

        auto direction = [&](const Eigen::VectorXd& r_sl, Eigen::VectorXd& dz, Eigen::VectorXd& ds, Eigen::VectorXd& dl) {
            Eigen::VectorXd rhs(n + q);
            Eigen::VectorXd tmp = (-r_sl + lam.cwiseProduct(r_i)).cwiseQuotient(s);
            rhs.head(n) = -r_d - p.g_ub.transpose() * tmp;
            if (q > 0) rhs.tail(q) = -r_e;
            Eigen::VectorXd sol = lu.solve(rhs);
            dz = sol.head(n);
            Eigen::VectorXd dnu = sol.tail(q);
            ds = -r_i - p.g_ub * dz;
            dl = (-r_sl + lam.cwiseProduct(r_i) + lam.cwiseProduct(p.g_ub * dz)).cwiseQuotient(s);
            return dnu;
        };

        Eigen::VectorXd dz, ds, dl;
        Eigen::VectorXd r_sl = s.cwiseProduct(lam);
        direction(r_sl, dz, ds, dl);
        double a_aff = std::min(max_step(s, ds), max_step(lam, dl));
        double sigma = 0.0;
        if (m > 0 && mu > 0) {
            double mu_aff = (s + a_aff * ds).dot(lam + a_aff * dl) / static_cast<double>(m);
            sigma = std::pow(mu_aff / mu, 3);
        }
        r_sl = s.cwiseProduct(lam) + ds.cwiseProduct(dl) - Eigen::VectorXd::Constant(m, sigma * mu);
        Eigen::VectorXd dnu = direction(r_sl, dz, ds, dl);
        double alpha = std::min(1.0, 0.995 * std::min(max_step(s, ds), max_step(lam, dl)));
        z += alpha * dz;
        s += alpha * ds;
        lam += alpha * dl;
        nu += alpha * dnu;
        s = s.cwiseMax(1e-300);
        lam = lam.cwiseMax(1e-300);
    }
    out.z = z;
    out.value = 0.5 * z.dot(p.h * z) + p.g.dot(z);
    return out;
}

}  // namespace fiv::lp
