#pragma once

#include "falsify_iv/geometry.hpp"

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <utility>
#include <vector>

namespace fiv {

// Bisection width when refining a one-instrument frontier point.
inline constexpr double kFrontierRefineTol = 1e-6;

struct SieveSpec {
    int order_m = 30;
    int grid_n = 201;

    void validate() const;
};

// f(y | X = x, Z = z^m) on the unit interval.
using DensityFunction = std::function<double(double y, int x, int cell)>;
using WeightFunction = std::function<double(double y)>;

// Continuous outcome on [0,1], binary treatment and L binary instruments.
// Cells number the 2^L instrument values with the last instrument varying fastest.
struct ContinuousJoint {
    int num_instruments = 1;
    // P(X = x, Z = z^m), 2 x 2^L.
    Eigen::MatrixXd pxz;
    DensityFunction density;
    // Original outcome support; the density above is already on [0,1].
    double y_lo = 0.0;
    double y_hi = 1.0;

    int cells() const { return 1 << num_instruments; }
    int level(int cell, int instrument) const { return (cell >> (num_instruments - 1 - instrument)) & 1; }
    double p_instrument(int instrument, int z) const;
    double p_x_given(int x, int instrument, int z) const;
    void validate() const;
};

// Builds a joint from densities tabulated on an increasing outcome grid
// (rows indexed by x * cells + m), interpolated linearly and rescaled to [0,1].
ContinuousJoint joint_from_grid(int num_instruments, const Eigen::VectorXd& y_grid, const Eigen::MatrixXd& densities,
                                const Eigen::MatrixXd& pxz);

// Rows are indexed by 2 * instrument + z.
struct ConditionalDensityTable {
    int num_instruments = 1;
    int order_m = 1;
    std::array<Eigen::MatrixXd, 2> xi;
    std::array<Eigen::VectorXd, 2> treatment_probs;
    // P(X = 1 - x, Z = z^m) / P(Z_l = z) where cell m has Z_l = z, else 0.
    std::array<Eigen::MatrixXd, 2> other_arm;
    Eigen::VectorXd z_marginals;

    int rows() const { return 2 * num_instruments; }
    int cells() const { return static_cast<int>(other_arm[0].cols()); }
    int coef_dim() const { return rows() * (order_m + 1); }
    void validate() const;
};

Eigen::VectorXd bernstein_basis(int order_m, double y);

ConditionalDensityTable sieve_table_from_joint(const ContinuousJoint& joint, const SieveSpec& spec);

// Coefficient set for the instrument-conditional outcome densities of one
// potential outcome, flattened row-major over (2 * instrument + z, m).
Polytope diamond_sieve_constraints(const Eigen::VectorXd& z_marginals, const Eigen::VectorXd& c, const SieveSpec& spec);

// Coefficients consistent with the observed data for treatment arm x.
AffineImageSet sieve_data_set(const ConditionalDensityTable& table, int x);

bool is_falsified_cont(const ConditionalDensityTable& table, const Eigen::VectorXd& c, const SieveSpec& spec);

struct KitagawaResult {
    double integral = 0.0;
    bool refuted = false;
};

KitagawaResult kitagawa_refutation_check(const ContinuousJoint& joint, int x);

// (M+1) * integral of w(y) b_m(y) over [0,1]: the value of the functional on basis element m.
Eigen::VectorXd functional_moments(const WeightFunction& w, int order_m);

std::pair<double, double> functional_bounds_cont(const ConditionalDensityTable& table, const Eigen::VectorXd& c,
                                                 const SieveSpec& spec, const WeightFunction& weight1,
                                                 const WeightFunction& weight0);

struct ContinuousFrontier {
    std::vector<Eigen::VectorXd> points;
    std::pair<double, double> fas{0.0, 0.0};
};

// With one instrument the grid crossing is refined by bisection.
ContinuousFrontier approx_ff_fas_cont(const ConditionalDensityTable& table, const SieveSpec& spec, double resolution,
                                      const WeightFunction& weight1, const WeightFunction& weight0);

}  // namespace fiv
