#pragma once

#include <Eigen/Dense>

#include <variant>
#include <vector>

namespace fiv {

inline constexpr double kFeasibilityTol = 1e-9;
inline constexpr double kDistanceZeroTol = 1e-7;

// {x : a x <= b, a_eq x = b_eq, lower <= x <= upper}. Infinite bounds allowed.
struct Polytope {
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    Eigen::MatrixXd a_eq;
    Eigen::VectorXd b_eq;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    Polytope() = default;
    // Unconstrained space of dimension dim.
    explicit Polytope(Eigen::Index dim);

    static Polytope box(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);
    static Polytope unit_box(Eigen::Index dim);

    Eigen::Index dim() const { return lower.size(); }
    void add_row(const Eigen::VectorXd& row, double rhs);
    void add_equality(const Eigen::VectorXd& row, double rhs);
    bool contains(const Eigen::VectorXd& x, double tol = kFeasibilityTol) const;
    void validate() const;
};

// {offset + map q : q in source}.
struct AffineImageSet {
    Eigen::VectorXd offset;
    Eigen::MatrixXd map;
    Polytope source;

    Eigen::Index dim() const { return offset.size(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& q) const { return offset + map * q; }
    void validate() const;
};

using ConvexSet = std::variant<Polytope, AffineImageSet>;

Eigen::Index set_dim(const ConvexSet& s);

struct LpExtremes {
    double min = 0.0;
    double max = 0.0;
    Eigen::VectorXd argmin;
    Eigen::VectorXd argmax;
};

LpExtremes lp_minmax(const Eigen::VectorXd& objective, const ConvexSet& feasible);

// True when the set has a point within the feasibility tolerance.
bool is_nonempty(const ConvexSet& s);

// Polytope restricted to an affine image: pulls the polytope rows back onto
// the image's source variables.
AffineImageSet intersect(const Polytope& p, const AffineImageSet& image);
Polytope intersect(const Polytope& p, const Polytope& q);

// intersect(p, image) with the pulled-back inequality rows of p loosened by
// the smallest uniform slack that makes the result nonempty, plus the
// feasibility tolerance. Used once a distance test has declared the two sets
// touching.
AffineImageSet touching_intersection(const Polytope& p, const AffineImageSet& image);

// Smallest max-norm gap between the sets.
double linf_gap(const ConvexSet& p, const ConvexSet& q);

double polytope_distance(const ConvexSet& p, const ConvexSet& q);

// Same decision as polytope_distance(p, q) > threshold without solving the
// quadratic program when the max-norm gap already settles it.
bool distance_exceeds(const ConvexSet& p, const ConvexSet& q, double threshold = kDistanceZeroTol);

bool hull_membership(const Eigen::VectorXd& point, const std::vector<Eigen::VectorXd>& vertices);

std::vector<Eigen::Vector2d> hull_2d(const std::vector<Eigen::Vector2d>& points);

}  // namespace fiv
