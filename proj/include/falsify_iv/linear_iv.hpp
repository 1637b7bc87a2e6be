#pragma once

#include "falsify_iv/geometry.hpp"
#include "falsify_iv/moments.hpp"

#include <Eigen/Dense>

#include <optional>
#include <utility>
#include <vector>

namespace fiv {

inline constexpr double kRelevanceTol = 1e-10;

// Per-instrument bound on the direct effect; +inf drops the restriction.
using RelaxationVector = Eigen::VectorXd;

enum class SetKind { Empty, Interval, Polytope, AllSpace };

struct LinearIdentifiedSet {
    SetKind kind = SetKind::Empty;
    double lo = 0.0;
    double hi = 0.0;
    std::optional<fiv::Polytope> polytope;

    bool empty() const { return kind == SetKind::Empty; }
};

struct FrontierCurve {
    std::vector<Eigen::VectorXd> parameter_grid;
    std::vector<Eigen::VectorXd> delta_points;
    // Closed-form parameterization: delta(b) = |psi - pi b|.
    Eigen::VectorXd psi;
    Eigen::MatrixXd pi;

    Eigen::VectorXd delta_at(const Eigen::VectorXd& b) const;
};

enum class FasKind { Interval, VertexSet };

struct FasResult {
    FasKind kind = FasKind::Interval;
    double lo = 0.0;
    double hi = 0.0;
    int lo_instrument = -1;
    int hi_instrument = -1;
    std::optional<double> lo_se;
    std::optional<double> hi_se;
    std::vector<TwoSlsEstimate> vertices;
    // Each entry lists the vertex indices spanning one simplex P_L.
    std::vector<std::vector<int>> simplices;
    std::vector<int> screened_out;
    std::vector<double> f_stats;
};

struct TwoInstrumentFrontier {
    double intercept_1 = 0.0;
    double intercept_2 = 0.0;
    double slope = 0.0;
};

struct DirectionalPoint {
    double m_star = 0.0;
    std::pair<int, int> pair{0, 0};
    double b_star = 0.0;
};

struct BreakdownPoint {
    double delta1 = 0.0;
    std::optional<double> bf;
};

struct GammaLine {
    Eigen::VectorXd anchor;
    Eigen::VectorXd direction;

    Eigen::VectorXd at(double b) const { return anchor - b * direction; }
    bool passes_through_origin(double tol = 1e-9) const;
};

Eigen::MatrixXd sargan_residuals(const ReducedMoments& r);
bool sargan_falsified(const ReducedMoments& r, double tol = 1e-9);

LinearIdentifiedSet identified_set_linear(const ReducedMoments& r, const RelaxationVector& delta);

// Singleton test used by frontier checks.
bool is_singleton(const LinearIdentifiedSet& s, double tol = 1e-9);

FrontierCurve falsification_frontier_k1(const ReducedMoments& r, int n_points = 101);

TwoInstrumentFrontier ff_two_instruments(const ReducedMoments& r);

FasResult fas_k1(const ReducedMoments& r);

// Throws RelevanceAssumptionViolated when some K-subset is singular or some
// (K+1)-subset is affinely dependent.
void check_relevance_general(const ReducedMoments& r);
FasResult fas_general(const ReducedMoments& r);
std::pair<double, double> fas_projection(const ReducedMoments& r, const Eigen::VectorXd& alpha);

RelaxationVector ff_general(const ReducedMoments& r, const Eigen::VectorXd& b);

// Barycentric lattice over each simplex P_L with `density` steps per edge.
FrontierCurve sample_ff_general(const ReducedMoments& r, int density);

DirectionalPoint directional_falsification_point(const ReducedMoments& r, const Eigen::VectorXd& d);

std::vector<BreakdownPoint> breakdown_frontier_k1(const ReducedMoments& r, double conclusion_lo, double conclusion_hi,
                                                  const std::vector<double>& delta1_grid, double delta2_cap);

FasResult estimate_fas(const Eigen::MatrixXd& rows, const RoleMap& roles, double cutoff = 10.0,
                       bool standardize_instruments = false);

Eigen::VectorXd twosls_weights(const ReducedMoments& r);

GammaLine gamma_identified_line(const ReducedMoments& r);

// Moment-inequality objective with each restriction measured in units of b.
double qmt_objective(const ReducedMoments& r, double b, const RelaxationVector& delta);
double qmt_star(const ReducedMoments& r, const RelaxationVector& delta);

}  // namespace fiv
