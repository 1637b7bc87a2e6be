#include "falsify_iv/linear_iv.hpp"

#include "falsify_iv/error.hpp"
#include "falsify_iv/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

namespace fiv {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kA1Tol = 1e-10;

void require_k1(const ReducedMoments& r) {
    r.validate();
    if (r.num_treatments() != 1) throw Error(ErrorCode::KNotOne, "operation is defined for one treatment");
}

bool relevant(double pi) { return std::abs(pi) > kRelevanceTol; }

void require_all_relevant(const ReducedMoments& r) {
    for (Eigen::Index l = 0; l < r.num_instruments(); ++l)
        if (!relevant(r.pi(l, 0)))
            throw Error(ErrorCode::IrrelevantInstrument, "instrument " + std::to_string(l + 1) + " has a zero first stage");
}

void check_delta(const ReducedMoments& r, const RelaxationVector& delta) {
    if (delta.size() != r.num_instruments()) throw Error(ErrorCode::InvalidArgument, "relaxation vector has the wrong length");
    for (Eigen::Index l = 0; l < delta.size(); ++l)
        if (!(delta(l) >= 0)) throw Error(ErrorCode::InvalidArgument, "relaxation components must be nonnegative");
}

// Lexicographic k-subsets of {0..n-1}.
std::vector<std::vector<int>> subsets(int n, int k) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    std::function<void(int)> rec = [&](int start) {
        if (static_cast<int>(cur.size()) == k) {
            out.push_back(cur);
            return;
        }
        for (int i = start; i < n; ++i) {
            cur.push_back(i);
            rec(i + 1);
            cur.pop_back();
        }
    };
    rec(0);
    return out;
}

std::string subset_name(const std::vector<int>& s) {
    std::ostringstream os;
    os << "{";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i] + 1;
    os << "}";
    return os.str();
}

double rel_rank_gap(const Eigen::MatrixXd& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& s = svd.singularValues();
    if (!(s(0) > 0)) return 0.0;
    return s(s.size() - 1) / s(0);
}

struct Vertices {
    std::vector<TwoSlsEstimate> list;
    std::vector<std::vector<int>> simplices;
};

Vertices general_vertices(const ReducedMoments& r) {
    check_relevance_general(r);
    const int l = static_cast<int>(r.num_instruments());
    const int k = static_cast<int>(r.num_treatments());
    Vertices v;
    std::map<std::vector<int>, int> index;
    for (const auto& s : subsets(l, k)) {
        index[s] = static_cast<int>(v.list.size());
        v.list.push_back(just_identified_2sls(r, s));
    }
    for (const auto& big : subsets(l, k + 1)) {
        std::vector<int> simplex;
        for (std::size_t drop = 0; drop < big.size(); ++drop) {
            std::vector<int> s;
            for (std::size_t i = 0; i < big.size(); ++i)
                if (i != drop) s.push_back(big[i]);
            simplex.push_back(index.at(s));
        }
        std::sort(simplex.begin(), simplex.end());
        v.simplices.push_back(simplex);
    }
    return v;
}

bool contained(const LinearIdentifiedSet& s, double c_lo, double c_hi) {
    const double tol = kFeasibilityTol;
    switch (s.kind) {
        case SetKind::Empty: return false;
        case SetKind::AllSpace: return c_lo == -kInf && c_hi == kInf;
        default: return s.lo >= c_lo - tol * (1 + std::abs(c_lo)) && s.hi <= c_hi + tol * (1 + std::abs(c_hi));
    }
}

}  // namespace

Eigen::VectorXd FrontierCurve::delta_at(const Eigen::VectorXd& b) const {
    return (psi - pi * b).cwiseAbs();
}

bool GammaLine::passes_through_origin(double tol) const {
    double scale = std::max(1.0, anchor.cwiseAbs().maxCoeff());
    double dd = direction.squaredNorm();
    if (dd == 0.0) return anchor.cwiseAbs().maxCoeff() <= tol * scale;
    double b = direction.dot(anchor) / dd;
    return (anchor - b * direction).cwiseAbs().maxCoeff() <= tol * scale;
}

Eigen::MatrixXd sargan_residuals(const ReducedMoments& r) {
    require_k1(r);
    Eigen::VectorXd cy = r.var_z * r.psi;
    Eigen::VectorXd cx = r.var_z * r.pi.col(0);
    const Eigen::Index l = r.num_instruments();
    Eigen::MatrixXd out(l, l);
    for (Eigen::Index m = 0; m < l; ++m)
        for (Eigen::Index j = 0; j < l; ++j) out(m, j) = cy(m) * cx(j) - cy(j) * cx(m);
    return out;
}

bool sargan_falsified(const ReducedMoments& r, double tol) {
    Eigen::MatrixXd res = sargan_residuals(r);
    Eigen::VectorXd cy = r.var_z * r.psi;
    Eigen::VectorXd cx = r.var_z * r.pi.col(0);
    double scale = std::max(1.0, cy.cwiseAbs().maxCoeff() * cx.cwiseAbs().maxCoeff());
    return res.cwiseAbs().maxCoeff() > tol * scale;
}

LinearIdentifiedSet identified_set_linear(const ReducedMoments& r, const RelaxationVector& delta) {
    r.validate();
    check_delta(r, delta);
    const Eigen::Index l = r.num_instruments();
    const Eigen::Index k = r.num_treatments();
    LinearIdentifiedSet out;

    if (k == 1) {
        double lo = -kInf, hi = kInf;
        for (Eigen::Index j = 0; j < l; ++j) {
            if (std::isinf(delta(j))) continue;
            double p = r.pi(j, 0);
            double s = r.psi(j);
            if (!relevant(p)) {
                if (std::abs(s) > delta(j) + kFeasibilityTol) return out;
                continue;
            }
            double ratio = s / p;
            double w = delta(j) / std::abs(p);
            lo = std::max(lo, ratio - w);
            hi = std::min(hi, ratio + w);
        }
        if (lo == -kInf && hi == kInf) {
            out.kind = SetKind::AllSpace;
            out.lo = lo;
            out.hi = hi;
            return out;
        }
        if (lo > hi + kFeasibilityTol * (1.0 + std::max(std::abs(lo), std::abs(hi)))) return out;
        if (lo > hi) lo = hi = 0.5 * (lo + hi);
        out.kind = SetKind::Interval;
        out.lo = lo;
        out.hi = hi;
        return out;
    }

    fiv::Polytope poly(k);
    for (Eigen::Index j = 0; j < l; ++j) {
        if (std::isinf(delta(j))) continue;
        Eigen::VectorXd row = r.pi.row(j).transpose();
        poly.add_row(row, r.psi(j) + delta(j));
        poly.add_row(-row, delta(j) - r.psi(j));
    }
    if (poly.a.rows() == 0) {
        out.kind = SetKind::AllSpace;
        out.polytope = poly;
        return out;
    }
    if (!is_nonempty(poly)) return out;
    out.kind = SetKind::Polytope;
    out.polytope = poly;
    return out;
}

bool is_singleton(const LinearIdentifiedSet& s, double tol) {
    switch (s.kind) {
        case SetKind::Empty:
        case SetKind::AllSpace: return false;
        case SetKind::Interval: return s.hi - s.lo <= tol;
        case SetKind::Polytope: break;
    }
    const auto& p = *s.polytope;
    for (Eigen::Index j = 0; j < p.dim(); ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(p.dim());
        e(j) = 1.0;
        try {
            LpExtremes ext = lp_minmax(e, p);
            if (ext.max - ext.min > tol) return false;
        } catch (const Error&) {
            return false;
        }
    }
    return true;
}

FrontierCurve falsification_frontier_k1(const ReducedMoments& r, int n_points) {
    require_k1(r);
    if (n_points < 1) throw Error(ErrorCode::InvalidArgument, "frontier needs at least one point");
    FasResult fas = fas_k1(r);
    FrontierCurve curve;
    curve.psi = r.psi;
    curve.pi = r.pi;
    double lo = fas.lo, hi = fas.hi;
    bool degenerate = hi - lo <= 1e-12 * (1.0 + std::abs(hi)) || n_points == 1;
    int n = degenerate ? 1 : n_points;
    for (int i = 0; i < n; ++i) {
        double b = n == 1 ? lo : (i == n - 1 ? hi : lo + (hi - lo) * i / (n - 1));
        Eigen::VectorXd bv = Eigen::VectorXd::Constant(1, b);
        curve.parameter_grid.push_back(bv);
        curve.delta_points.push_back(curve.delta_at(bv));
    }
    return curve;
}

TwoInstrumentFrontier ff_two_instruments(const ReducedMoments& r) {
    require_k1(r);
    if (r.num_instruments() != 2) throw Error(ErrorCode::InvalidArgument, "needs exactly two instruments");
    require_all_relevant(r);
    double p1 = r.pi(0, 0), p2 = r.pi(1, 0);
    double gap = std::abs(r.psi(0) / p1 - r.psi(1) / p2);
    return {gap * std::abs(p1), gap * std::abs(p2), -std::abs(p2 / p1)};
}

FasResult fas_k1(const ReducedMoments& r) {
    require_k1(r);
    FasResult out;
    out.kind = FasKind::Interval;
    bool any = false;
    for (Eigen::Index j = 0; j < r.num_instruments(); ++j) {
        if (!relevant(r.pi(j, 0))) continue;
        double ratio = r.psi(j) / r.pi(j, 0);
        TwoSlsEstimate est;
        est.beta = Eigen::VectorXd::Constant(1, ratio);
        est.excluded_set = {static_cast<int>(j)};
        out.vertices.push_back(est);
        if (!any || ratio < out.lo) {
            out.lo = ratio;
            out.lo_instrument = static_cast<int>(j);
        }
        if (!any || ratio > out.hi) {
            out.hi = ratio;
            out.hi_instrument = static_cast<int>(j);
        }
        any = true;
    }
    if (!any) throw Error(ErrorCode::AllInstrumentsIrrelevant, "every instrument has a zero first stage");
    return out;
}

void check_relevance_general(const ReducedMoments& r) {
    r.validate();
    const int l = static_cast<int>(r.num_instruments());
    const int k = static_cast<int>(r.num_treatments());
    if (l < k) throw Error(ErrorCode::RelevanceAssumptionViolated, "fewer instruments than treatments");
    for (const auto& s : subsets(l, k)) {
        Eigen::MatrixXd sub(k, k);
        for (int i = 0; i < k; ++i) sub.row(i) = r.pi.row(s[static_cast<std::size_t>(i)]);
        if (rel_rank_gap(sub) <= kA1Tol)
            throw Error(ErrorCode::RelevanceAssumptionViolated, "first-stage submatrix for instruments " + subset_name(s) + " is singular");
    }
    for (const auto& s : subsets(l, k + 1)) {
        Eigen::MatrixXd aff(k + 1, k + 1);
        for (int i = 0; i <= k; ++i) {
            aff(0, i) = 1.0;
            aff.block(1, i, k, 1) = r.pi.row(s[static_cast<std::size_t>(i)]).transpose();
        }
        if (rel_rank_gap(aff) <= kA1Tol)
            throw Error(ErrorCode::RelevanceAssumptionViolated, "first stages of instruments " + subset_name(s) + " are affinely dependent");
    }
}

FasResult fas_general(const ReducedMoments& r) {
    Vertices v = general_vertices(r);
    FasResult out;
    out.kind = FasKind::VertexSet;
    out.vertices = std::move(v.list);
    out.simplices = std::move(v.simplices);
    return out;
}

std::pair<double, double> fas_projection(const ReducedMoments& r, const Eigen::VectorXd& alpha) {
    if (alpha.size() != r.num_treatments()) throw Error(ErrorCode::InvalidArgument, "alpha has the wrong length");
    Vertices v = general_vertices(r);
    double lo = kInf, hi = -kInf;
    for (const auto& e : v.list) {
        double val = alpha.dot(e.beta);
        lo = std::min(lo, val);
        hi = std::max(hi, val);
    }
    return {lo, hi};
}

RelaxationVector ff_general(const ReducedMoments& r, const Eigen::VectorXd& b) {
    if (b.size() != r.num_treatments()) throw Error(ErrorCode::InvalidArgument, "b has the wrong length");
    Vertices v = general_vertices(r);
    for (const auto& simplex : v.simplices) {
        std::vector<Eigen::VectorXd> pts;
        for (int i : simplex) pts.push_back(v.list[static_cast<std::size_t>(i)].beta);
        if (hull_membership(b, pts)) return (r.psi - r.pi * b).cwiseAbs();
    }
    throw Error(ErrorCode::PointNotOnFrontierParameterization, "b lies outside every simplex of just-identified estimands");
}

FrontierCurve sample_ff_general(const ReducedMoments& r, int density) {
    if (density < 1) throw Error(ErrorCode::InvalidArgument, "density must be positive");
    Vertices v = general_vertices(r);
    FrontierCurve curve;
    curve.psi = r.psi;
    curve.pi = r.pi;
    const int k1 = static_cast<int>(r.num_treatments()) + 1;
    std::vector<int> w(static_cast<std::size_t>(k1), 0);
    for (const auto& simplex : v.simplices) {
        std::function<void(int, int)> rec = [&](int pos, int left) {
            if (pos == k1 - 1) {
                w[static_cast<std::size_t>(pos)] = left;
                Eigen::VectorXd b = Eigen::VectorXd::Zero(r.num_treatments());
                for (int i = 0; i < k1; ++i)
                    b += (static_cast<double>(w[static_cast<std::size_t>(i)]) / density) *
                         v.list[static_cast<std::size_t>(simplex[static_cast<std::size_t>(i)])].beta;
                curve.parameter_grid.push_back(b);
                curve.delta_points.push_back(curve.delta_at(b));
                return;
            }
            for (int a = left; a >= 0; --a) {
                w[static_cast<std::size_t>(pos)] = a;
                rec(pos + 1, left - a);
            }
        };
        rec(0, density);
    }
    return curve;
}

DirectionalPoint directional_falsification_point(const ReducedMoments& r, const Eigen::VectorXd& d) {
    require_k1(r);
    require_all_relevant(r);
    const Eigen::Index l = r.num_instruments();
    if (d.size() != l) throw Error(ErrorCode::InvalidArgument, "direction has the wrong length");
    for (Eigen::Index j = 0; j < l; ++j)
        if (!(d(j) > 0)) throw Error(ErrorCode::InvalidArgument, "direction components must be positive");

    Eigen::VectorXd ratio(l), scale(l);
    for (Eigen::Index j = 0; j < l; ++j) {
        ratio(j) = r.psi(j) / r.pi(j, 0);
        scale(j) = d(j) / std::abs(r.pi(j, 0));
    }
    DirectionalPoint out;
    bool first = true;
    for (Eigen::Index a = 0; a < l; ++a)
        for (Eigen::Index b = 0; b < l; ++b) {
            double m = (ratio(a) - ratio(b)) / (scale(a) + scale(b));
            if (first || m > out.m_star) {
                out.m_star = m;
                out.pair = {static_cast<int>(a), static_cast<int>(b)};
                first = false;
            }
        }
    out.b_star = ratio(out.pair.first) - out.m_star * scale(out.pair.first);
    return out;
}

std::vector<BreakdownPoint> breakdown_frontier_k1(const ReducedMoments& r, double conclusion_lo, double conclusion_hi,
                                                  const std::vector<double>& delta1_grid, double delta2_cap) {
    require_k1(r);
    if (r.num_instruments() != 2) throw Error(ErrorCode::InvalidArgument, "breakdown frontier needs two instruments");
    if (!std::isfinite(delta2_cap) || delta2_cap < 0) throw Error(ErrorCode::InvalidArgument, "delta2 cap must be finite");
    if (conclusion_lo > conclusion_hi) throw Error(ErrorCode::InvalidArgument, "conclusion interval is reversed");
    constexpr double tol = 1e-9;

    std::vector<BreakdownPoint> out(delta1_grid.size());
    parallel_for(delta1_grid.size(), [&](std::size_t i) {
        const double d1 = delta1_grid[i];
        auto set_at = [&](double d2) { return identified_set_linear(r, Eigen::Vector2d(d1, d2)); };
        auto good = [&](double d2) { return contained(set_at(d2), conclusion_lo, conclusion_hi); };
        out[i].delta1 = d1;
        if (good(delta2_cap)) {
            out[i].bf = delta2_cap;
            return;
        }
        if (set_at(delta2_cap).empty()) return;
        // Smallest delta2 with a nonempty set.
        double lo = 0.0, hi = delta2_cap;
        if (set_at(0.0).empty()) {
            while (hi - lo > tol) {
                double mid = 0.5 * (lo + hi);
                (set_at(mid).empty() ? lo : hi) = mid;
            }
        } else {
            hi = 0.0;
        }
        if (!good(hi)) return;
        lo = hi;
        hi = delta2_cap;
        while (hi - lo > tol) {
            double mid = 0.5 * (lo + hi);
            (good(mid) ? lo : hi) = mid;
        }
        out[i].bf = lo;
    });
    return out;
}

FasResult estimate_fas(const Eigen::MatrixXd& rows, const RoleMap& roles, double cutoff, bool standardize_instruments) {
    if (rows.rows() == 0) throw Error(ErrorCode::PopulationModeUnsupported, "estimation needs sample rows");
    ColumnRoles cr = split_roles(roles);
    if (cr.treatments.size() != 1) throw Error(ErrorCode::KNotOne, "estimator is defined for one treatment");
    const int l = static_cast<int>(cr.instruments.size());

    std::vector<double> f(static_cast<std::size_t>(l));
    for (int j = 0; j < l; ++j) f[static_cast<std::size_t>(j)] = first_stage_f_stat(rows, roles, j);

    ReducedMoments r = partial_out_controls(moment_set_from_sample(rows, roles), standardize_instruments);
    FasResult out;
    out.kind = FasKind::Interval;
    out.f_stats = f;
    bool any = false;
    for (int j = 0; j < l; ++j) {
        if (f[static_cast<std::size_t>(j)] < cutoff) {
            out.screened_out.push_back(j);
            continue;
        }
        if (!relevant(r.pi(j, 0))) continue;
        double ratio = r.psi(j) / r.pi(j, 0);
        TwoSlsEstimate est;
        est.beta = Eigen::VectorXd::Constant(1, ratio);
        est.excluded_set = {j};
        est.f_stat = f[static_cast<std::size_t>(j)];
        out.vertices.push_back(est);
        if (!any || ratio < out.lo) {
            out.lo = ratio;
            out.lo_instrument = j;
        }
        if (!any || ratio > out.hi) {
            out.hi = ratio;
            out.hi_instrument = j;
        }
        any = true;
    }
    if (static_cast<int>(out.screened_out.size()) == l)
        throw Error(ErrorCode::AllInstrumentsScreenedOut, "no instrument passes the first-stage cutoff");
    if (!any) throw Error(ErrorCode::AllInstrumentsIrrelevant, "every surviving instrument has a zero first stage");

    for (auto& v : out.vertices) v.robust_se = robust_se_just_identified(rows, roles, v.excluded_set);
    for (const auto& v : out.vertices) {
        if (v.excluded_set[0] == out.lo_instrument) out.lo_se = (*v.robust_se)(0);
        if (v.excluded_set[0] == out.hi_instrument) out.hi_se = (*v.robust_se)(0);
    }
    return out;
}

Eigen::VectorXd twosls_weights(const ReducedMoments& r) {
    require_k1(r);
    require_all_relevant(r);
    Eigen::VectorXd pi = r.pi.col(0);
    Eigen::VectorXd vp = r.var_z * pi;
    double den = pi.dot(vp);
    if (den == 0.0) throw Error(ErrorCode::ZeroDenominator, "first stage has no explained variance");
    return pi.cwiseProduct(vp) / den;
}

GammaLine gamma_identified_line(const ReducedMoments& r) {
    require_k1(r);
    return {r.psi, r.pi.col(0)};
}

double qmt_objective(const ReducedMoments& r, double b, const RelaxationVector& delta) {
    require_k1(r);
    check_delta(r, delta);
    require_all_relevant(r);
    double q = 0.0;
    for (Eigen::Index j = 0; j < r.num_instruments(); ++j) {
        if (std::isinf(delta(j))) continue;
        double ratio = r.psi(j) / r.pi(j, 0);
        double w = delta(j) / std::abs(r.pi(j, 0));
        double below = std::max(ratio - w - b, 0.0);
        double above = std::max(b - ratio - w, 0.0);
        q += below * below + above * above;
    }
    return q;
}

double qmt_star(const ReducedMoments& r, const RelaxationVector& delta) {
    require_k1(r);
    if (r.num_instruments() != 2) throw Error(ErrorCode::InvalidArgument, "needs exactly two instruments");
    check_delta(r, delta);
    require_all_relevant(r);
    double lo[2], hi[2];
    for (int j = 0; j < 2; ++j) {
        double ratio = r.psi(j) / r.pi(j, 0);
        double w = delta(j) / std::abs(r.pi(j, 0));
        lo[j] = ratio - w;
        hi[j] = ratio + w;
    }
    if (hi[0] < lo[1]) return 0.5 * (lo[1] - hi[0]) * (lo[1] - hi[0]);
    if (hi[1] < lo[0]) return 0.5 * (lo[0] - hi[1]) * (lo[0] - hi[1]);
    return 0.0;
}

}  // namespace fiv
