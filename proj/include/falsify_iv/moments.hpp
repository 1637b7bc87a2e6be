#pragma once

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace fiv {

enum class Role { Outcome, Treatment, Instrument, Control };

// One role per data column, in column order.
using RoleMap = std::vector<Role>;

struct ColumnRoles {
    int outcome = -1;
    std::vector<int> treatments;
    std::vector<int> instruments;
    std::vector<int> controls;
};

ColumnRoles split_roles(const RoleMap& roles);

struct MomentSet {
    Eigen::VectorXd mean_vector;
    Eigen::MatrixXd cov_matrix;
    std::optional<long> n_obs;
    RoleMap role_map;

    // Checks symmetry, positive semidefiniteness and role counts.
    void validate() const;
};

struct ReducedMoments {
    Eigen::VectorXd psi;  // L
    Eigen::MatrixXd pi;   // L x K
    Eigen::MatrixXd var_z;
    bool controls_absorbed = false;

    Eigen::Index num_instruments() const { return psi.size(); }
    Eigen::Index num_treatments() const { return pi.cols(); }
    void validate() const;
};

struct TwoSlsEstimate {
    Eigen::VectorXd beta;
    std::vector<int> excluded_set;  // zero-based instrument indices
    std::optional<Eigen::VectorXd> robust_se;
    std::optional<double> f_stat;
};

MomentSet moment_set_from_sample(const Eigen::MatrixXd& rows, const RoleMap& roles);

// Residualizes instruments on controls. With standardize_instruments each
// instrument is first divided by its raw standard deviation.
ReducedMoments partial_out_controls(const MomentSet& m, bool standardize_instruments = false);

TwoSlsEstimate just_identified_2sls(const ReducedMoments& r, const std::vector<int>& excluded);

double full_2sls(const ReducedMoments& r);

// Robust Wald statistic for instrument ell in the regression of treatment
// `treatment` on (1, Z, W). Values above 1e12 are reported as +inf.
double first_stage_f_stat(const Eigen::MatrixXd& rows, const RoleMap& roles, int instrument, int treatment = 0);

// Sandwich standard errors for the treatment coefficients of the just-identified
// fit that excludes `excluded` and controls for the remaining instruments.
Eigen::VectorXd robust_se_just_identified(const Eigen::MatrixXd& rows, const RoleMap& roles,
                                          const std::vector<int>& excluded);

// Ratio of extreme singular values; +inf for singular input.
double condition_number(const Eigen::MatrixXd& m);

}  // namespace fiv
