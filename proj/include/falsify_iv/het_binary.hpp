#pragma once

#include "falsify_iv/geometry.hpp"

#include <Eigen/Dense>

#include <optional>
#include <utility>
#include <vector>

namespace fiv {

// Bisection width for the single-instrument falsification point.
inline constexpr double kFalsificationPointTol = 1e-8;

// Joint law of a binary outcome, a binary treatment and L discrete
// instruments. Cells of the instrument product support are numbered with the
// last instrument varying fastest; probs[(2y + x) * cells + m] = P(Y=y, X=x, Z=z^m).
struct DiscreteJoint {
    std::vector<std::vector<double>> z_supports;
    Eigen::VectorXd probs;

    int num_instruments() const { return static_cast<int>(z_supports.size()); }
    int support_size(int instrument) const { return static_cast<int>(z_supports[static_cast<std::size_t>(instrument)].size()); }
    int cells() const;
    // Length of the stacked vector of conditional probabilities, sum of support sizes.
    int block_dim() const;
    int block_offset(int instrument) const;
    std::vector<int> cell_levels(int cell) const;

    double prob(int y, int x, int cell) const { return probs((2 * y + x) * cells() + cell); }
    double p_cell(int cell) const;
    double p_x_cell(int x, int cell) const { return prob(0, x, cell) + prob(1, x, cell); }
    // P(Z_l = l-th support point j).
    double p_instrument(int instrument, int level) const;
    // P(Y=y, X=x | Z_l = j), y < 0 meaning either outcome.
    double conditional(int y, int x, int instrument, int level) const;

    // Throws InvalidJoint for malformed tables and DegenerateInstrument when
    // an instrument level has no mass or pins down the treatment.
    void validate() const;
};

// Weighted frequencies; instrument supports are the sorted distinct values.
DiscreteJoint joint_from_rows(const Eigen::VectorXd& y, const Eigen::VectorXd& x, const Eigen::MatrixXd& z,
                              const Eigen::VectorXd& weights);

using CDependence = Eigen::VectorXd;

struct HetIdentifiedSet {
    std::optional<AffineImageSet> theta0;
    std::optional<AffineImageSet> theta1;
    bool empty = true;
};

double kz_factor(double pz, double c, int z);

Polytope diamond_constraints(const DiscreteJoint& joint, const CDependence& c);
AffineImageSet box_affine(const DiscreteJoint& joint, int x);

bool is_falsified_at(const DiscreteJoint& joint, const CDependence& c);
HetIdentifiedSet identified_set_het(const DiscreteJoint& joint, const CDependence& c);

double falsification_point_single(const DiscreteJoint& joint);

// Minimal non-falsified points of the grid {0, r, 2r, ...} U {1} per axis.
std::vector<Eigen::VectorXd> falsification_frontier_grid(const DiscreteJoint& joint, double resolution = 0.01);

// Bounds on P(Y_x = 1), aggregating with the marginal of `instrument`.
std::pair<double, double> potential_outcome_bounds(const DiscreteJoint& joint, const CDependence& c, int x,
                                                   int instrument = 0);
std::pair<double, double> ate_bounds(const DiscreteJoint& joint, const CDependence& c);
std::pair<double, double> fas_ate(const DiscreteJoint& joint, double resolution = 0.01);

// Brute-force search over the unobserved P(Y_x=1 | X=1-x, Z=z); one binary instrument.
double oracle_cstar_latent(const DiscreteJoint& joint, int grid_steps = 401);

}  // namespace fiv
