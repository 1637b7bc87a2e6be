#include "falsify_iv/het_continuous.hpp"

#include "falsify_iv/error.hpp"
#include "falsify_iv/het_binary.hpp"
#include "falsify_iv/parallel.hpp"
#include "grid_frontier.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/binomial.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace fiv {
namespace {

void check_order(const ConditionalDensityTable& table, const SieveSpec& spec) {
    spec.validate();
    table.validate();
    if (table.order_m != spec.order_m) throw Error(ErrorCode::InvalidArgument, "table and sieve spec use different orders");
}

void check_c(int instruments, const Eigen::VectorXd& c) {
    if (c.size() != instruments) throw Error(ErrorCode::InvalidArgument, "c-dependence vector must have one entry per instrument");
    for (Eigen::Index l = 0; l < c.size(); ++l)
        if (!(c(l) >= 0.0 && c(l) <= 1.0)) throw Error(ErrorCode::InvalidArgument, "c-dependence entries must lie in [0,1]");
}

std::pair<double, double> arm_bounds(const ConditionalDensityTable& table, const Polytope& d, int x, const WeightFunction& w) {
    if (!w) return {0.0, 0.0};
    const int width = table.order_m + 1;
    Eigen::VectorXd mu = functional_moments(w, table.order_m);
    // Aggregate over the first instrument: f_{Y_x} = sum_z P(Z_1 = z) f_{Y_x | Z_1 = z}.
    Eigen::VectorXd objective = Eigen::VectorXd::Zero(table.coef_dim());
    for (int z = 0; z < 2; ++z) objective.segment(z * width, width) = table.z_marginals(z) * mu;
    LpExtremes e = lp_minmax(objective, touching_intersection(d, sieve_data_set(table, x)));
    return {e.min, e.max};
}

}  // namespace

void SieveSpec::validate() const {
    if (order_m < 1) throw Error(ErrorCode::InvalidArgument, "sieve order must be at least 1");
    if (grid_n < 2) throw Error(ErrorCode::InvalidArgument, "inequality grid needs at least two points");
}

double ContinuousJoint::p_instrument(int instrument, int z) const {
    double p = 0.0;
    for (int m = 0; m < cells(); ++m)
        if (level(m, instrument) == z) p += pxz(0, m) + pxz(1, m);
    return p;
}

double ContinuousJoint::p_x_given(int x, int instrument, int z) const {
    double p = 0.0;
    for (int m = 0; m < cells(); ++m)
        if (level(m, instrument) == z) p += pxz(x, m);
    return p / p_instrument(instrument, z);
}

void ContinuousJoint::validate() const {
    if (num_instruments < 1 || num_instruments > 16) throw Error(ErrorCode::InvalidJoint, "unsupported number of instruments");
    if (pxz.rows() != 2 || pxz.cols() != cells()) throw Error(ErrorCode::InvalidJoint, "treatment-instrument table has the wrong shape");
    if (!density) throw Error(ErrorCode::InvalidJoint, "no outcome density supplied");
    if (!(y_hi > y_lo)) throw Error(ErrorCode::InvalidJoint, "outcome support is empty");
    for (Eigen::Index i = 0; i < pxz.size(); ++i)
        if (!std::isfinite(pxz.data()[i]) || pxz.data()[i] < 0.0)
            throw Error(ErrorCode::InvalidJoint, "treatment-instrument probabilities must be nonnegative");
    if (std::abs(pxz.sum() - 1.0) > 1e-9) throw Error(ErrorCode::InvalidJoint, "treatment-instrument probabilities must sum to one");
    for (int l = 0; l < num_instruments; ++l)
        for (int z = 0; z < 2; ++z) {
            double p = p_instrument(l, z);
            if (!(p > 0.0 && p < 1.0))
                throw Error(ErrorCode::DegenerateInstrument, "instrument " + std::to_string(l + 1) + " has a level with no mass");
            double px = p_x_given(1, l, z);
            if (!(px > 0.0 && px < 1.0))
                throw Error(ErrorCode::InvalidJoint, "treatment is deterministic given instrument " + std::to_string(l + 1));
        }
}

ContinuousJoint joint_from_grid(int num_instruments, const Eigen::VectorXd& y_grid, const Eigen::MatrixXd& densities,
                                const Eigen::MatrixXd& pxz) {
    const Eigen::Index n = y_grid.size();
    if (n < 2) throw Error(ErrorCode::DataError, "outcome grid needs at least two points");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(y_grid(i))) throw Error(ErrorCode::DataError, "outcome grid must be finite");
        if (i > 0 && !(y_grid(i) > y_grid(i - 1))) throw Error(ErrorCode::DataError, "outcome grid must be increasing");
    }
    ContinuousJoint joint;
    joint.num_instruments = num_instruments;
    if (densities.rows() != 2 * joint.cells() || densities.cols() != n)
        throw Error(ErrorCode::DataError, "density table has the wrong shape");
    for (Eigen::Index i = 0; i < densities.size(); ++i)
        if (!std::isfinite(densities.data()[i])) throw Error(ErrorCode::DataError, "density values must be finite");
    joint.pxz = pxz;
    joint.y_lo = y_grid(0);
    joint.y_hi = y_grid(n - 1);
    const double span = joint.y_hi - joint.y_lo;
    const Eigen::VectorXd unit = (y_grid.array() - joint.y_lo) / span;
    const int cells = joint.cells();
    joint.density = [unit, densities, span, cells](double y, int x, int cell) {
        const double* begin = unit.data();
        const double* end = begin + unit.size();
        Eigen::Index hi = std::clamp<Eigen::Index>(std::upper_bound(begin, end, y) - begin, 1, unit.size() - 1);
        Eigen::Index lo = hi - 1;
        double t = std::clamp((y - unit(lo)) / (unit(hi) - unit(lo)), 0.0, 1.0);
        const Eigen::Index row = x * cells + cell;
        return span * ((1.0 - t) * densities(row, lo) + t * densities(row, hi));
    };
    joint.validate();
    return joint;
}

void ConditionalDensityTable::validate() const {
    const int width = order_m + 1;
    for (int x = 0; x < 2; ++x) {
        if (xi[x].rows() != rows() || xi[x].cols() != width || treatment_probs[x].size() != rows() || other_arm[x].rows() != rows())
            throw Error(ErrorCode::InvalidArgument, "density table blocks have inconsistent shapes");
        for (int r = 0; r < rows(); ++r) {
            if ((xi[x].row(r).array() < 0.0).any()) throw Error(ErrorCode::NegativeDensity, "negative sieve coefficient");
            if (std::abs(xi[x].row(r).sum() - 1.0) > 1e-9) throw Error(ErrorCode::UnnormalizableRow, "coefficient row does not sum to one");
        }
    }
    if (z_marginals.size() != rows()) throw Error(ErrorCode::InvalidArgument, "instrument marginals have the wrong length");
}

Eigen::VectorXd bernstein_basis(int order_m, double y) {
    if (order_m < 0) throw Error(ErrorCode::InvalidArgument, "order must be nonnegative");
    if (!(y >= 0.0 && y <= 1.0)) throw Error(ErrorCode::OutOfRange, "Bernstein basis is defined on [0,1]");
    Eigen::VectorXd b(order_m + 1);
    for (int m = 0; m <= order_m; ++m)
        b(m) = boost::math::binomial_coefficient<double>(static_cast<unsigned>(order_m), static_cast<unsigned>(m)) *
               std::pow(y, m) * std::pow(1.0 - y, order_m - m);
    return b;
}

ConditionalDensityTable sieve_table_from_joint(const ContinuousJoint& joint, const SieveSpec& spec) {
    joint.validate();
    spec.validate();
    const int l = joint.num_instruments;
    const int cells = joint.cells();
    const int big_m = spec.order_m;
    ConditionalDensityTable t;
    t.num_instruments = l;
    t.order_m = big_m;
    t.z_marginals.resize(2 * l);
    for (int i = 0; i < l; ++i)
        for (int z = 0; z < 2; ++z) t.z_marginals(2 * i + z) = joint.p_instrument(i, z);

    for (int x = 0; x < 2; ++x) {
        t.xi[x] = Eigen::MatrixXd::Zero(2 * l, big_m + 1);
        t.treatment_probs[x].resize(2 * l);
        t.other_arm[x] = Eigen::MatrixXd::Zero(2 * l, cells);
        // Cell densities at the Bernstein nodes m / M.
        Eigen::MatrixXd f(cells, big_m + 1);
        for (int c = 0; c < cells; ++c)
            for (int m = 0; m <= big_m; ++m) {
                double v = joint.density(static_cast<double>(m) / big_m, x, c);
                if (!std::isfinite(v)) throw Error(ErrorCode::UnnormalizableRow, "density is not finite at a node");
                if (v < 0.0) throw Error(ErrorCode::NegativeDensity, "density is negative at y = " + std::to_string(double(m) / big_m));
                f(c, m) = v;
            }
        for (int i = 0; i < l; ++i)
            for (int z = 0; z < 2; ++z) {
                const int r = 2 * i + z;
                double arm = 0.0;
                for (int c = 0; c < cells; ++c)
                    if (joint.level(c, i) == z) {
                        arm += joint.pxz(x, c);
                        t.xi[x].row(r) += joint.pxz(x, c) * f.row(c);
                        t.other_arm[x](r, c) = joint.pxz(1 - x, c) / t.z_marginals(r);
                    }
                double total = t.xi[x].row(r).sum();
                if (!(total > 0.0) || !std::isfinite(total))
                    throw Error(ErrorCode::UnnormalizableRow, "density vanishes at every node for one instrument value");
                t.xi[x].row(r) /= total;
                t.treatment_probs[x](r) = arm / t.z_marginals(r);
            }
    }
    return t;
}

Polytope diamond_sieve_constraints(const Eigen::VectorXd& z_marginals, const Eigen::VectorXd& c, const SieveSpec& spec) {
    spec.validate();
    if (z_marginals.size() % 2 != 0 || z_marginals.size() == 0)
        throw Error(ErrorCode::InvalidArgument, "sieve constraints need binary instruments");
    const int l = static_cast<int>(z_marginals.size() / 2);
    check_c(l, c);
    const int width = spec.order_m + 1;
    const int dim = 2 * l * width;
    Polytope d = Polytope::unit_box(dim);
    for (int r = 0; r < 2 * l; ++r) {
        Eigen::VectorXd ones = Eigen::VectorXd::Zero(dim);
        ones.segment(r * width, width).setOnes();
        d.add_equality(ones, 1.0);
    }
    std::vector<Eigen::VectorXd> basis;
    for (int n = 0; n < spec.grid_n; ++n) basis.push_back(bernstein_basis(spec.order_m, static_cast<double>(n) / (spec.grid_n - 1)));
    for (int i = 0; i < l; ++i) {
        const double pz = z_marginals(2 * i + 1);
        const double k[2] = {kz_factor(pz, c(i), 0), kz_factor(pz, c(i), 1)};
        for (int z = 0; z < 2; ++z) {
            if (k[z] == 0.0) continue;
            const int own = (2 * i + z) * width;
            const int other = (2 * i + 1 - z) * width;
            // k_z f(y | z) <= f(y | 1 - z) at every grid point.
            for (const auto& b : basis) {
                Eigen::VectorXd row = Eigen::VectorXd::Zero(dim);
                row.segment(own, width) = k[z] * b;
                row.segment(other, width) -= b;
                d.add_row(row, 0.0);
            }
        }
    }
    return d;
}

AffineImageSet sieve_data_set(const ConditionalDensityTable& table, int x) {
    if (x != 0 && x != 1) throw Error(ErrorCode::InvalidArgument, "x must be 0 or 1");
    table.validate();
    const int width = table.order_m + 1;
    const int cells = table.cells();
    AffineImageSet h;
    h.offset.resize(table.coef_dim());
    h.map = Eigen::MatrixXd::Zero(table.coef_dim(), cells * width);
    for (int r = 0; r < table.rows(); ++r) {
        h.offset.segment(r * width, width) = table.treatment_probs[x](r) * table.xi[x].row(r).transpose();
        for (int c = 0; c < cells; ++c) {
            const double a = table.other_arm[x](r, c);
            if (a == 0.0) continue;
            for (int m = 0; m < width; ++m) h.map(r * width + m, c * width + m) = a;
        }
    }
    h.source = Polytope::unit_box(cells * width);
    for (int c = 0; c < cells; ++c) {
        Eigen::VectorXd ones = Eigen::VectorXd::Zero(cells * width);
        ones.segment(c * width, width).setOnes();
        h.source.add_equality(ones, 1.0);
    }
    return h;
}

bool is_falsified_cont(const ConditionalDensityTable& table, const Eigen::VectorXd& c, const SieveSpec& spec) {
    check_order(table, spec);
    Polytope d = diamond_sieve_constraints(table.z_marginals, c, spec);
    for (int x = 0; x < 2; ++x)
        if (distance_exceeds(d, sieve_data_set(table, x))) return true;
    return false;
}

KitagawaResult kitagawa_refutation_check(const ContinuousJoint& joint, int x) {
    joint.validate();
    if (joint.num_instruments != 1) throw Error(ErrorCode::InvalidArgument, "refutation check needs one binary instrument");
    if (x != 0 && x != 1) throw Error(ErrorCode::InvalidArgument, "x must be 0 or 1");
    const double p[2] = {joint.p_x_given(x, 0, 0), joint.p_x_given(x, 0, 1)};
    auto envelope = [&](double y) { return std::max(joint.density(y, x, 0) * p[0], joint.density(y, x, 1) * p[1]); };
    double err = 0.0;
    double value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(envelope, 0.0, 1.0, 20, 1e-12, &err);
    if (!std::isfinite(value) || err > 1e-8) throw Error(ErrorCode::NonIntegrable, "quadrature did not converge");
    return {value, value > 1.0 + 1e-8};
}

Eigen::VectorXd functional_moments(const WeightFunction& w, int order_m) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(order_m + 1);
    if (!w) return mu;
    for (int m = 0; m <= order_m; ++m) {
        auto f = [&](double y) { return w(y) * bernstein_basis(order_m, y)(m); };
        double err = 0.0;
        double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 15, 1e-12, &err);
        if (!std::isfinite(v)) throw Error(ErrorCode::NonIntegrable, "weight function is not integrable");
        mu(m) = (order_m + 1) * v;
    }
    return mu;
}

std::pair<double, double> functional_bounds_cont(const ConditionalDensityTable& table, const Eigen::VectorXd& c,
                                                 const SieveSpec& spec, const WeightFunction& weight1,
                                                 const WeightFunction& weight0) {
    if (is_falsified_cont(table, c, spec)) throw Error(ErrorCode::ModelFalsifiedAtC, "sieve identified set is empty at this c");
    Polytope d = diamond_sieve_constraints(table.z_marginals, c, spec);
    auto one = arm_bounds(table, d, 1, weight1);
    auto zero = arm_bounds(table, d, 0, weight0);
    return {one.first + zero.first, one.second + zero.second};
}

ContinuousFrontier approx_ff_fas_cont(const ConditionalDensityTable& table, const SieveSpec& spec, double resolution,
                                      const WeightFunction& weight1, const WeightFunction& weight0) {
    if (!(resolution > 0.0 && resolution <= 0.25)) throw Error(ErrorCode::InvalidArgument, "resolution must lie in (0, 0.25]");
    check_order(table, spec);
    auto ok = [&](const Eigen::VectorXd& c) { return !is_falsified_cont(table, c, spec); };
    ContinuousFrontier out;
    if (table.num_instruments == 1) {
        std::vector<double> grid = detail::unit_grid(resolution);
        auto at = [&](double c) { return ok(Eigen::VectorXd::Constant(1, c)); };
        double point = 0.0;
        if (!at(0.0)) {
            int lo = 0, hi = static_cast<int>(grid.size()) - 1;
            while (hi - lo > 1) {
                int mid = (lo + hi) / 2;
                (at(grid[static_cast<std::size_t>(mid)]) ? hi : lo) = mid;
            }
            double a = grid[static_cast<std::size_t>(lo)], b = grid[static_cast<std::size_t>(hi)];
            while (b - a > kFrontierRefineTol) {
                double mid = 0.5 * (a + b);
                (at(mid) ? b : a) = mid;
            }
            point = b;
        }
        out.points.push_back(Eigen::VectorXd::Constant(1, point));
    } else {
        out.points = detail::minimal_grid_points(table.num_instruments, resolution, ok);
    }
    std::vector<std::pair<double, double>> pieces(out.points.size());
    parallel_for(out.points.size(), [&](std::size_t i) {
        pieces[i] = functional_bounds_cont(table, out.points[i], spec, weight1, weight0);
    });
    out.fas = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& p : pieces) {
        out.fas.first = std::min(out.fas.first, p.first);
        out.fas.second = std::max(out.fas.second, p.second);
    }
    return out;
}

}  // namespace fiv
