#include "falsify_iv/het_binary.hpp"

#include "falsify_iv/error.hpp"
#include "falsify_iv/parallel.hpp"
#include "grid_frontier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fiv {
namespace {

void check_c(const DiscreteJoint& joint, const CDependence& c) {
    if (c.size() != joint.num_instruments())
        throw Error(ErrorCode::InvalidArgument, "c-dependence vector must have one entry per instrument");
    for (Eigen::Index l = 0; l < c.size(); ++l)
        if (!(c(l) >= 0.0 && c(l) <= 1.0)) throw Error(ErrorCode::InvalidArgument, "c-dependence entries must lie in [0,1]");
}

std::pair<double, double> bounds_on(const DiscreteJoint& joint, const Polytope& d, int x, int instrument) {
    AffineImageSet h = box_affine(joint, x);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(joint.block_dim());
    const int off = joint.block_offset(instrument);
    for (int j = 0; j < joint.support_size(instrument); ++j) w(off + j) = joint.p_instrument(instrument, j);
    // The caller has already found the sets within the distance tolerance.
    LpExtremes e = lp_minmax(w, touching_intersection(d, h));
    return {e.min, e.max};
}

}  // namespace

int DiscreteJoint::cells() const {
    int n = 1;
    for (const auto& s : z_supports) n *= static_cast<int>(s.size());
    return n;
}

int DiscreteJoint::block_dim() const {
    int n = 0;
    for (const auto& s : z_supports) n += static_cast<int>(s.size());
    return n;
}

int DiscreteJoint::block_offset(int instrument) const {
    int n = 0;
    for (int l = 0; l < instrument; ++l) n += support_size(l);
    return n;
}

std::vector<int> DiscreteJoint::cell_levels(int cell) const {
    std::vector<int> out(z_supports.size());
    for (int l = num_instruments() - 1; l >= 0; --l) {
        out[static_cast<std::size_t>(l)] = cell % support_size(l);
        cell /= support_size(l);
    }
    return out;
}

double DiscreteJoint::p_cell(int cell) const { return p_x_cell(0, cell) + p_x_cell(1, cell); }

double DiscreteJoint::p_instrument(int instrument, int level) const {
    double p = 0.0;
    for (int m = 0; m < cells(); ++m)
        if (cell_levels(m)[static_cast<std::size_t>(instrument)] == level) p += p_cell(m);
    return p;
}

double DiscreteJoint::conditional(int y, int x, int instrument, int level) const {
    double num = 0.0;
    for (int m = 0; m < cells(); ++m)
        if (cell_levels(m)[static_cast<std::size_t>(instrument)] == level) num += y < 0 ? p_x_cell(x, m) : prob(y, x, m);
    return num / p_instrument(instrument, level);
}

void DiscreteJoint::validate() const {
    if (z_supports.empty()) throw Error(ErrorCode::InvalidJoint, "at least one instrument is required");
    for (const auto& s : z_supports) {
        if (s.size() < 2) throw Error(ErrorCode::DegenerateInstrument, "each instrument needs at least two support points");
        std::vector<double> sorted = s;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw Error(ErrorCode::InvalidJoint, "instrument support points must be distinct");
    }
    if (probs.size() != 4 * cells()) throw Error(ErrorCode::InvalidJoint, "probability table has the wrong size");
    for (Eigen::Index i = 0; i < probs.size(); ++i)
        if (!std::isfinite(probs(i)) || probs(i) < 0.0) throw Error(ErrorCode::InvalidJoint, "probabilities must be nonnegative");
    if (std::abs(probs.sum() - 1.0) > 1e-12) throw Error(ErrorCode::InvalidJoint, "probabilities must sum to one");
    for (int l = 0; l < num_instruments(); ++l)
        for (int j = 0; j < support_size(l); ++j) {
            double p = p_instrument(l, j);
            if (!(p > 0.0 && p < 1.0))
                throw Error(ErrorCode::DegenerateInstrument, "instrument " + std::to_string(l + 1) + " has a level with no mass");
            double px = conditional(-1, 1, l, j);
            if (!(px > 0.0 && px < 1.0))
                throw Error(ErrorCode::InvalidJoint,
                            "treatment is deterministic given level " + std::to_string(j + 1) + " of instrument " + std::to_string(l + 1));
        }
}

DiscreteJoint joint_from_rows(const Eigen::VectorXd& y, const Eigen::VectorXd& x, const Eigen::MatrixXd& z,
                              const Eigen::VectorXd& weights) {
    const Eigen::Index n = y.size();
    if (n == 0) throw Error(ErrorCode::EmptyData, "no rows");
    if (x.size() != n || z.rows() != n || weights.size() != n) throw Error(ErrorCode::DataError, "column lengths differ");
    DiscreteJoint joint;
    for (Eigen::Index l = 0; l < z.cols(); ++l) {
        std::vector<double> s(z.col(l).data(), z.col(l).data() + n);
        for (double v : s)
            if (!std::isfinite(v)) throw Error(ErrorCode::DataError, "instrument values must be finite");
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
        joint.z_supports.push_back(std::move(s));
    }
    const int cells = joint.cells();
    joint.probs = Eigen::VectorXd::Zero(4 * cells);
    for (Eigen::Index i = 0; i < n; ++i) {
        if ((y(i) != 0.0 && y(i) != 1.0) || (x(i) != 0.0 && x(i) != 1.0))
            throw Error(ErrorCode::DataError, "outcome and treatment must be coded 0/1");
        if (!std::isfinite(weights(i)) || weights(i) < 0.0) throw Error(ErrorCode::DataError, "weights must be nonnegative");
        int cell = 0;
        for (Eigen::Index l = 0; l < z.cols(); ++l) {
            const auto& s = joint.z_supports[static_cast<std::size_t>(l)];
            cell = cell * static_cast<int>(s.size()) +
                   static_cast<int>(std::lower_bound(s.begin(), s.end(), z(i, l)) - s.begin());
        }
        joint.probs((2 * static_cast<int>(y(i)) + static_cast<int>(x(i))) * cells + cell) += weights(i);
    }
    double total = joint.probs.sum();
    if (!(total > 0.0)) throw Error(ErrorCode::DataError, "weights sum to zero");
    joint.probs /= total;
    return joint;
}

double kz_factor(double pz, double c, int z) {
    if (!(pz > 0.0 && pz < 1.0)) throw Error(ErrorCode::DegenerateInstrument, "P(Z=1) must lie strictly inside (0,1)");
    if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorCode::InvalidArgument, "c must lie in [0,1]");
    if (z != 0 && z != 1) throw Error(ErrorCode::InvalidArgument, "z must be 0 or 1");
    const double own = z == 1 ? pz : 1.0 - pz;
    const double other = 1.0 - own;
    return own * std::max(other - c, 0.0) / (other * std::min(own + c, 1.0));
}

Polytope diamond_constraints(const DiscreteJoint& joint, const CDependence& c) {
    check_c(joint, c);
    const int dim = joint.block_dim();
    Polytope d = Polytope::unit_box(dim);
    for (int l = 0; l < joint.num_instruments(); ++l) {
        const int off = joint.block_offset(l);
        const int levels = joint.support_size(l);
        Eigen::VectorXd p = Eigen::VectorXd::Zero(dim);
        for (int j = 0; j < levels; ++j) p(off + j) = joint.p_instrument(l, j);
        // P(Z_l = j | Y_x = y) within c of P(Z_l = j), multiplied through by P(Y_x = y).
        for (int j = 0; j < levels; ++j) {
            const double pj = p(off + j);
            const double up = std::min(pj + c(l), 1.0);
            const double down = std::max(pj - c(l), 0.0);
            Eigen::VectorXd own = Eigen::VectorXd::Zero(dim);
            own(off + j) = pj;
            d.add_row(own - up * p, 0.0);
            d.add_row(-own + down * p, 0.0);
            d.add_row(-own + up * p, up - pj);
            d.add_row(own - down * p, pj - down);
        }
    }
    return d;
}

AffineImageSet box_affine(const DiscreteJoint& joint, int x) {
    if (x != 0 && x != 1) throw Error(ErrorCode::InvalidArgument, "x must be 0 or 1");
    const int dim = joint.block_dim();
    const int cells = joint.cells();
    AffineImageSet h;
    h.offset = Eigen::VectorXd::Zero(dim);
    h.map = Eigen::MatrixXd::Zero(dim, cells);
    h.source = Polytope::unit_box(cells);
    for (int l = 0; l < joint.num_instruments(); ++l) {
        const int off = joint.block_offset(l);
        for (int j = 0; j < joint.support_size(l); ++j) {
            h.offset(off + j) = joint.conditional(1, x, l, j);
            const double pl = joint.p_instrument(l, j);
            for (int m = 0; m < cells; ++m)
                if (joint.cell_levels(m)[static_cast<std::size_t>(l)] == j) h.map(off + j, m) = joint.p_x_cell(1 - x, m) / pl;
        }
    }
    return h;
}

bool is_falsified_at(const DiscreteJoint& joint, const CDependence& c) {
    joint.validate();
    Polytope d = diamond_constraints(joint, c);
    for (int x = 0; x < 2; ++x)
        if (distance_exceeds(d, box_affine(joint, x))) return true;
    return false;
}

HetIdentifiedSet identified_set_het(const DiscreteJoint& joint, const CDependence& c) {
    HetIdentifiedSet out;
    out.empty = is_falsified_at(joint, c);
    if (out.empty) return out;
    Polytope d = diamond_constraints(joint, c);
    out.theta0 = intersect(d, box_affine(joint, 0));
    out.theta1 = intersect(d, box_affine(joint, 1));
    return out;
}

double falsification_point_single(const DiscreteJoint& joint) {
    if (joint.num_instruments() != 1) throw Error(ErrorCode::InvalidArgument, "falsification point needs one instrument");
    auto falsified = [&](double c) { return is_falsified_at(joint, CDependence::Constant(1, c)); };
    if (!falsified(0.0)) return 0.0;
    double lo = 0.0, hi = 1.0;
    while (hi - lo > kFalsificationPointTol) {
        double mid = 0.5 * (lo + hi);
        (falsified(mid) ? lo : hi) = mid;
    }
    return hi;
}

std::vector<Eigen::VectorXd> falsification_frontier_grid(const DiscreteJoint& joint, double resolution) {
    if (!(resolution > 0.0 && resolution <= 0.25)) throw Error(ErrorCode::InvalidArgument, "resolution must lie in (0, 0.25]");
    joint.validate();
    return detail::minimal_grid_points(joint.num_instruments(), resolution,
                                       [&](const Eigen::VectorXd& c) { return !is_falsified_at(joint, c); });
}

std::pair<double, double> potential_outcome_bounds(const DiscreteJoint& joint, const CDependence& c, int x, int instrument) {
    if (x != 0 && x != 1) throw Error(ErrorCode::InvalidArgument, "x must be 0 or 1");
    if (instrument < 0 || instrument >= joint.num_instruments()) throw Error(ErrorCode::InvalidArgument, "instrument out of range");
    if (is_falsified_at(joint, c)) throw Error(ErrorCode::ModelFalsifiedAtC, "identified set is empty at this c");
    return bounds_on(joint, diamond_constraints(joint, c), x, instrument);
}

std::pair<double, double> ate_bounds(const DiscreteJoint& joint, const CDependence& c) {
    if (is_falsified_at(joint, c)) throw Error(ErrorCode::ModelFalsifiedAtC, "identified set is empty at this c");
    Polytope d = diamond_constraints(joint, c);
    auto p1 = bounds_on(joint, d, 1, 0);
    auto p0 = bounds_on(joint, d, 0, 0);
    return {p1.first - p0.second, p1.second - p0.first};
}

std::pair<double, double> fas_ate(const DiscreteJoint& joint, double resolution) {
    if (joint.num_instruments() == 1)
        return ate_bounds(joint, CDependence::Constant(1, falsification_point_single(joint)));
    std::vector<Eigen::VectorXd> frontier = falsification_frontier_grid(joint, resolution);
    std::vector<std::pair<double, double>> pieces(frontier.size());
    parallel_for(frontier.size(), [&](std::size_t i) { pieces[i] = ate_bounds(joint, frontier[i]); });
    std::pair<double, double> out{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& p : pieces) {
        out.first = std::min(out.first, p.first);
        out.second = std::max(out.second, p.second);
    }
    return out;
}

double oracle_cstar_latent(const DiscreteJoint& joint, int grid_steps) {
    joint.validate();
    if (joint.num_instruments() != 1 || joint.support_size(0) != 2)
        throw Error(ErrorCode::InvalidArgument, "latent oracle needs one binary instrument");
    if (grid_steps < 2) throw Error(ErrorCode::InvalidArgument, "grid needs at least two points");
    const double pz = joint.p_cell(1);
    double out = 0.0;
    for (int x = 0; x < 2; ++x) {
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < grid_steps; ++i)
            for (int k = 0; k < grid_steps; ++k) {
                const double q[2] = {static_cast<double>(i) / (grid_steps - 1), static_cast<double>(k) / (grid_steps - 1)};
                // P(Y_x = 1, Z = z) by the law of total probability.
                double a[2];
                for (int z = 0; z < 2; ++z) a[z] = joint.prob(1, x, z) + q[z] * joint.p_x_cell(1 - x, z);
                const double s = a[0] + a[1];
                double c = 0.0;
                if (s > 0.0) c = std::max(c, std::abs(a[1] / s - pz));
                if (s < 1.0) c = std::max(c, std::abs((pz - a[1]) / (1.0 - s) - pz));
                best = std::min(best, c);
            }
        out = std::max(out, best);
    }
    return out;
}

}  // namespace fiv
