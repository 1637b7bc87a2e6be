#include "falsify_iv/moments.hpp"

#include "falsify_iv/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace fiv {
namespace {

constexpr double kConditionLimit = 1e12;
constexpr double kFStatCap = 1e12;

Eigen::MatrixXd select(const Eigen::MatrixXd& s, const std::vector<int>& rows, const std::vector<int>& cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s(rows[i], cols[j]);
    return out;
}

Eigen::MatrixXd columns(const Eigen::MatrixXd& rows, const std::vector<int>& idx) {
    Eigen::MatrixXd out(rows.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = rows.col(idx[j]);
    return out;
}

void check_rows(const Eigen::MatrixXd& rows, const RoleMap& roles) {
    if (rows.rows() == 0) throw Error(ErrorCode::PopulationModeUnsupported, "operation needs sample rows");
    if (static_cast<std::size_t>(rows.cols()) != roles.size())
        throw Error(ErrorCode::InvalidArgument, "role map does not cover every column");
}

// Heteroskedasticity-robust covariance of the just-identified IV fit of y on
// regressors using instruments, with an n/(n-k) correction. Returns the
// coefficient vector through `coef`.
Eigen::MatrixXd sandwich(const Eigen::MatrixXd& regressors, const Eigen::MatrixXd& instruments, const Eigen::VectorXd& y,
                         Eigen::VectorXd& coef) {
    const Eigen::Index n = regressors.rows();
    const Eigen::Index k = regressors.cols();
    if (n <= k) throw Error(ErrorCode::InsufficientObservations, "need more rows than regressors");
    Eigen::MatrixXd qr = instruments.transpose() * regressors;
    if (condition_number(qr) > kConditionLimit)
        throw Error(ErrorCode::RankDeficientSubmatrix, "cross-moment matrix is singular");
    Eigen::FullPivLU<Eigen::MatrixXd> lu(qr);
    coef = lu.solve(instruments.transpose() * y);
    Eigen::VectorXd resid = y - regressors * coef;
    Eigen::MatrixXd weighted = instruments.array().colwise() * resid.array();
    Eigen::MatrixXd meat = weighted.transpose() * weighted;
    Eigen::MatrixXd bread = lu.inverse();
    double dof = static_cast<double>(n) / static_cast<double>(n - k);
    return dof * bread * meat * bread.transpose();
}

}  // namespace

double condition_number(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 1.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& s = svd.singularValues();
    double hi = s(0);
    double lo = s(s.size() - 1);
    if (!(hi > 0) || !(lo > 0)) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

ColumnRoles split_roles(const RoleMap& roles) {
    ColumnRoles out;
    for (std::size_t j = 0; j < roles.size(); ++j) {
        int c = static_cast<int>(j);
        switch (roles[j]) {
            case Role::Outcome:
                if (out.outcome >= 0) throw Error(ErrorCode::InvalidArgument, "more than one outcome column");
                out.outcome = c;
                break;
            case Role::Treatment: out.treatments.push_back(c); break;
            case Role::Instrument: out.instruments.push_back(c); break;
            case Role::Control: out.controls.push_back(c); break;
        }
    }
    if (out.outcome < 0) throw Error(ErrorCode::InvalidArgument, "no outcome column");
    if (out.treatments.empty()) throw Error(ErrorCode::InvalidArgument, "no treatment column");
    if (out.instruments.empty()) throw Error(ErrorCode::InvalidArgument, "no instrument column");
    return out;
}

void MomentSet::validate() const {
    const Eigen::Index d = mean_vector.size();
    if (cov_matrix.rows() != d || cov_matrix.cols() != d || static_cast<std::size_t>(d) != role_map.size())
        throw Error(ErrorCode::InvalidArgument, "moment dimensions are inconsistent");
    split_roles(role_map);
    double scale = std::max(1.0, cov_matrix.cwiseAbs().maxCoeff());
    if ((cov_matrix - cov_matrix.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw Error(ErrorCode::InvalidArgument, "covariance matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_matrix, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10 * scale)
        throw Error(ErrorCode::InvalidArgument, "covariance matrix is not positive semidefinite");
    if (n_obs && *n_obs < 2) throw Error(ErrorCode::InvalidArgument, "n_obs must be at least 2");
}

void ReducedMoments::validate() const {
    const Eigen::Index l = psi.size();
    if (l == 0 || pi.rows() != l || pi.cols() == 0 || var_z.rows() != l || var_z.cols() != l)
        throw Error(ErrorCode::InvalidArgument, "reduced moment dimensions are inconsistent");
    if (condition_number(var_z) >= kConditionLimit)
        throw Error(ErrorCode::SingularInstrumentVariance, "instrument variance is not invertible");
}

MomentSet moment_set_from_sample(const Eigen::MatrixXd& rows, const RoleMap& roles) {
    if (rows.rows() < 2 || rows.cols() == 0) throw Error(ErrorCode::EmptyData, "need at least two rows");
    if (static_cast<std::size_t>(rows.cols()) != roles.size())
        throw Error(ErrorCode::InvalidArgument, "role map does not cover every column");
    if (!rows.allFinite()) throw Error(ErrorCode::DataError, "data contains missing or non-finite cells");

    MomentSet m;
    m.role_map = roles;
    m.n_obs = static_cast<long>(rows.rows());
    m.mean_vector = rows.colwise().mean().transpose();
    Eigen::MatrixXd centered = rows.rowwise() - m.mean_vector.transpose();
    m.cov_matrix = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
    m.cov_matrix = 0.5 * (m.cov_matrix + m.cov_matrix.transpose()).eval();

    for (std::size_t j = 0; j < roles.size(); ++j) {
        if (roles[j] != Role::Instrument && roles[j] != Role::Treatment) continue;
        auto c = static_cast<Eigen::Index>(j);
        double mu = m.mean_vector(c);
        if (m.cov_matrix(c, c) <= 1e-14 * (1.0 + mu * mu))
            throw Error(ErrorCode::ConstantColumn, "column " + std::to_string(j) + " has zero variance");
    }
    m.validate();
    return m;
}

ReducedMoments partial_out_controls(const MomentSet& m, bool standardize_instruments) {
    m.validate();
    ColumnRoles cr = split_roles(m.role_map);
    Eigen::MatrixXd s = m.cov_matrix;

    if (standardize_instruments) {
        for (int z : cr.instruments) {
            double sd = std::sqrt(s(z, z));
            if (!(sd > 0)) throw Error(ErrorCode::SingularInstrumentVariance, "instrument has zero variance");
            s.row(z) /= sd;
            s.col(z) /= sd;
        }
    }

    const std::vector<int> y = {cr.outcome};
    Eigen::MatrixXd vz = select(s, cr.instruments, cr.instruments);
    Eigen::VectorXd czy = select(s, cr.instruments, y);
    Eigen::MatrixXd czx = select(s, cr.instruments, cr.treatments);

    if (!cr.controls.empty()) {
        Eigen::MatrixXd sww = select(s, cr.controls, cr.controls);
        if (condition_number(sww) >= kConditionLimit)
            throw Error(ErrorCode::SingularControlVariance, "control variance is not invertible");
        Eigen::MatrixXd szw = select(s, cr.instruments, cr.controls);
        Eigen::LDLT<Eigen::MatrixXd> ww(sww);
        Eigen::MatrixXd proj = ww.solve(szw.transpose()).transpose();
        vz -= proj * szw.transpose();
        czy -= proj * select(s, cr.controls, y);
        czx -= proj * select(s, cr.controls, cr.treatments);
        vz = 0.5 * (vz + vz.transpose()).eval();
    }

    if (condition_number(vz) >= kConditionLimit)
        throw Error(ErrorCode::SingularInstrumentVariance, "instrument variance is not invertible");

    Eigen::FullPivLU<Eigen::MatrixXd> lu(vz);
    ReducedMoments r;
    r.var_z = vz;
    r.psi = lu.solve(czy);
    r.pi = lu.solve(czx);
    r.controls_absorbed = !cr.controls.empty();
    return r;
}

TwoSlsEstimate just_identified_2sls(const ReducedMoments& r, const std::vector<int>& excluded) {
    const Eigen::Index k = r.num_treatments();
    const Eigen::Index l = r.num_instruments();
    if (static_cast<Eigen::Index>(excluded.size()) != k)
        throw Error(ErrorCode::InvalidArgument, "excluded set must have exactly K instruments");
    std::set<int> uniq(excluded.begin(), excluded.end());
    if (static_cast<Eigen::Index>(uniq.size()) != k || *uniq.begin() < 0 || *uniq.rbegin() >= l)
        throw Error(ErrorCode::InvalidArgument, "excluded set must hold distinct valid instrument indices");

    Eigen::MatrixXd sub(k, k);
    Eigen::VectorXd rhs(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        sub.row(i) = r.pi.row(excluded[static_cast<std::size_t>(i)]);
        rhs(i) = r.psi(excluded[static_cast<std::size_t>(i)]);
    }
    if (condition_number(sub) > kConditionLimit)
        throw Error(ErrorCode::RankDeficientSubmatrix, "first-stage submatrix is singular");
    TwoSlsEstimate est;
    est.excluded_set = excluded;
    est.beta = sub.fullPivLu().solve(rhs);
    return est;
}

double full_2sls(const ReducedMoments& r) {
    if (r.num_treatments() != 1) throw Error(ErrorCode::KNotOne, "full 2SLS ratio needs one treatment");
    Eigen::VectorXd pi = r.pi.col(0);
    double den = pi.dot(r.var_z * pi);
    double scale = r.var_z.cwiseAbs().maxCoeff() * pi.squaredNorm();
    if (den == 0.0 || std::abs(den) <= 1e-14 * scale)
        throw Error(ErrorCode::ZeroDenominator, "first stage has no explained variance");
    return pi.dot(r.var_z * r.psi) / den;
}

double first_stage_f_stat(const Eigen::MatrixXd& rows, const RoleMap& roles, int instrument, int treatment) {
    check_rows(rows, roles);
    ColumnRoles cr = split_roles(roles);
    const int l = static_cast<int>(cr.instruments.size());
    if (instrument < 0 || instrument >= l) throw Error(ErrorCode::InvalidArgument, "instrument index out of range");
    if (treatment < 0 || treatment >= static_cast<int>(cr.treatments.size()))
        throw Error(ErrorCode::InvalidArgument, "treatment index out of range");

    const Eigen::Index n = rows.rows();
    const Eigen::Index p = 1 + l + static_cast<Eigen::Index>(cr.controls.size());
    if (n <= p) throw Error(ErrorCode::InsufficientObservations, "need more rows than regressors");

    Eigen::MatrixXd reg(n, p);
    reg.col(0).setOnes();
    reg.middleCols(1, l) = columns(rows, cr.instruments);
    if (!cr.controls.empty()) reg.rightCols(static_cast<Eigen::Index>(cr.controls.size())) = columns(rows, cr.controls);
    Eigen::VectorXd x = rows.col(cr.treatments[static_cast<std::size_t>(treatment)]);

    Eigen::VectorXd coef;
    Eigen::MatrixXd v = sandwich(reg, reg, x, coef);
    double b = coef(1 + instrument);
    double var = v(1 + instrument, 1 + instrument);
    if (b == 0.0) return 0.0;
    if (!(var > 0)) return std::numeric_limits<double>::infinity();
    double f = b * b / var;
    return f > kFStatCap ? std::numeric_limits<double>::infinity() : f;
}

Eigen::VectorXd robust_se_just_identified(const Eigen::MatrixXd& rows, const RoleMap& roles,
                                          const std::vector<int>& excluded) {
    check_rows(rows, roles);
    ColumnRoles cr = split_roles(roles);
    const int l = static_cast<int>(cr.instruments.size());
    const int k = static_cast<int>(cr.treatments.size());
    if (static_cast<int>(excluded.size()) != k)
        throw Error(ErrorCode::InvalidArgument, "excluded set must have exactly K instruments");
    std::set<int> ex(excluded.begin(), excluded.end());
    if (static_cast<int>(ex.size()) != k || *ex.begin() < 0 || *ex.rbegin() >= l)
        throw Error(ErrorCode::InvalidArgument, "excluded set must hold distinct valid instrument indices");

    std::vector<int> excl_cols, kept_cols;
    for (int j = 0; j < l; ++j) {
        if (ex.count(j)) excl_cols.push_back(cr.instruments[static_cast<std::size_t>(j)]);
        else kept_cols.push_back(cr.instruments[static_cast<std::size_t>(j)]);
    }
    std::vector<int> common = kept_cols;
    common.insert(common.end(), cr.controls.begin(), cr.controls.end());

    const Eigen::Index n = rows.rows();
    const Eigen::Index p = 1 + k + static_cast<Eigen::Index>(common.size());
    Eigen::MatrixXd reg(n, p), inst(n, p);
    reg.col(0).setOnes();
    inst.col(0).setOnes();
    reg.middleCols(1, k) = columns(rows, cr.treatments);
    inst.middleCols(1, k) = columns(rows, excl_cols);
    if (!common.empty()) {
        reg.rightCols(static_cast<Eigen::Index>(common.size())) = columns(rows, common);
        inst.rightCols(static_cast<Eigen::Index>(common.size())) = columns(rows, common);
    }
    Eigen::VectorXd coef;
    Eigen::MatrixXd v = sandwich(reg, inst, rows.col(cr.outcome), coef);
    return v.diagonal().segment(1, k).cwiseMax(0.0).cwiseSqrt();
}

}  // namespace fiv
