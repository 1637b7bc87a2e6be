#include "falsify_iv/geometry.hpp"

#include "falsify_iv/error.hpp"
#include "falsify_iv/lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fiv {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Any convex set written as offset + map * q with q in source.
struct Lifted {
    Eigen::VectorXd offset;
    Eigen::MatrixXd map;
    const Polytope* source;
};

Lifted lift(const ConvexSet& s) {
    if (const auto* p = std::get_if<Polytope>(&s)) {
        return {Eigen::VectorXd::Zero(p->dim()), Eigen::MatrixXd::Identity(p->dim(), p->dim()), p};
    }
    const auto& img = std::get<AffineImageSet>(s);
    return {img.offset, img.map, &img.source};
}

lp::Problem source_problem(const Polytope& src, const Eigen::VectorXd& cost) {
    lp::Problem prob;
    prob.cost = cost;
    prob.a_ub = src.a;
    prob.b_ub = src.b;
    prob.a_eq = src.a_eq;
    prob.b_eq = src.b_eq;
    prob.lower = src.lower;
    prob.upper = src.upper;
    return prob;
}

// Box bounds of a source as inequality rows (used by the quadratic program).
void append_bound_rows(const Polytope& src, Eigen::Index col0, Eigen::Index width, std::vector<Eigen::VectorXd>& rows,
                       std::vector<double>& rhs) {
    for (Eigen::Index j = 0; j < src.dim(); ++j) {
        if (std::isfinite(src.upper(j))) {
            Eigen::VectorXd r = Eigen::VectorXd::Zero(width);
            r(col0 + j) = 1.0;
            rows.push_back(r);
            rhs.push_back(src.upper(j));
        }
        if (std::isfinite(src.lower(j))) {
            Eigen::VectorXd r = Eigen::VectorXd::Zero(width);
            r(col0 + j) = -1.0;
            rows.push_back(r);
            rhs.push_back(-src.lower(j));
        }
    }
}

Eigen::MatrixXd stack_rows(const std::vector<Eigen::VectorXd>& rows, Eigen::Index width) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), width);
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return out;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Joint problem over (u, v, extra) with both sources stacked block-diagonally.
lp::Problem joint_problem(const Polytope& sp, const Polytope& sq, Eigen::Index extra) {
    const Eigen::Index np = sp.dim();
    const Eigen::Index nq = sq.dim();
    const Eigen::Index n = np + nq + extra;
    lp::Problem prob;
    prob.cost = Eigen::VectorXd::Zero(n);
    prob.a_ub = Eigen::MatrixXd::Zero(sp.a.rows() + sq.a.rows(), n);
    prob.a_ub.block(0, 0, sp.a.rows(), np) = sp.a;
    prob.a_ub.block(sp.a.rows(), np, sq.a.rows(), nq) = sq.a;
    prob.b_ub.resize(sp.b.size() + sq.b.size());
    prob.b_ub << sp.b, sq.b;
    prob.a_eq = Eigen::MatrixXd::Zero(sp.a_eq.rows() + sq.a_eq.rows(), n);
    prob.a_eq.block(0, 0, sp.a_eq.rows(), np) = sp.a_eq;
    prob.a_eq.block(sp.a_eq.rows(), np, sq.a_eq.rows(), nq) = sq.a_eq;
    prob.b_eq.resize(sp.b_eq.size() + sq.b_eq.size());
    prob.b_eq << sp.b_eq, sq.b_eq;
    prob.lower = Eigen::VectorXd::Constant(n, -kInf);
    prob.upper = Eigen::VectorXd::Constant(n, kInf);
    prob.lower.head(np) = sp.lower;
    prob.upper.head(np) = sp.upper;
    prob.lower.segment(np, nq) = sq.lower;
    prob.upper.segment(np, nq) = sq.upper;
    return prob;
}

void check_same_dim(const Lifted& a, const Lifted& b) {
    if (a.offset.size() != b.offset.size())
        throw Error(ErrorCode::InvalidArgument, "sets live in spaces of different dimension");
}

double euclidean_distance(const Lifted& lp_, const Lifted& lq, double linf) {
    const Polytope& sp = *lp_.source;
    const Polytope& sq = *lq.source;
    const Eigen::Index np = sp.dim();
    const Eigen::Index nq = sq.dim();
    const Eigen::Index n = np + nq;
    const Eigen::Index d = lp_.offset.size();

    Eigen::MatrixXd diff(d, n);
    diff << lp_.map, -lq.map;
    Eigen::VectorXd shift = lp_.offset - lq.offset;

    lp::QuadraticProblem qp;
    qp.h = diff.transpose() * diff;
    qp.g = diff.transpose() * shift;

    std::vector<Eigen::VectorXd> rows;
    std::vector<double> rhs;
    for (Eigen::Index i = 0; i < sp.a.rows(); ++i) {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
        r.head(np) = sp.a.row(i).transpose();
        rows.push_back(r);
        rhs.push_back(sp.b(i));
    }
    for (Eigen::Index i = 0; i < sq.a.rows(); ++i) {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
        r.tail(nq) = sq.a.row(i).transpose();
        rows.push_back(r);
        rhs.push_back(sq.b(i));
    }
    append_bound_rows(sp, 0, n, rows, rhs);
    append_bound_rows(sq, np, n, rows, rhs);
    qp.g_ub = stack_rows(rows, n);
    qp.h_ub = to_vector(rhs);

    qp.e = Eigen::MatrixXd::Zero(sp.a_eq.rows() + sq.a_eq.rows(), n);
    qp.e.block(0, 0, sp.a_eq.rows(), np) = sp.a_eq;
    qp.e.block(sp.a_eq.rows(), np, sq.a_eq.rows(), nq) = sq.a_eq;
    qp.f.resize(sp.b_eq.size() + sq.b_eq.size());
    qp.f << sp.b_eq, sq.b_eq;

    lp::QuadraticSolution sol = lp::solve_qp(qp);
    double dist = (diff * sol.z + shift).norm();
    double upper = std::sqrt(static_cast<double>(d)) * linf;
    return std::clamp(dist, linf, upper);
}

}  // namespace

Polytope::Polytope(Eigen::Index dim)
    : a(0, dim),
      b(0),
      a_eq(0, dim),
      b_eq(0),
      lower(Eigen::VectorXd::Constant(dim, -kInf)),
      upper(Eigen::VectorXd::Constant(dim, kInf)) {}

Polytope Polytope::box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    Polytope p(lo.size());
    p.lower = lo;
    p.upper = hi;
    p.validate();
    return p;
}

Polytope Polytope::unit_box(Eigen::Index dim) {
    return box(Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim));
}

void Polytope::add_row(const Eigen::VectorXd& row, double rhs) {
    a.conservativeResize(a.rows() + 1, dim());
    a.row(a.rows() - 1) = row.transpose();
    b.conservativeResize(b.size() + 1);
    b(b.size() - 1) = rhs;
}

void Polytope::add_equality(const Eigen::VectorXd& row, double rhs) {
    a_eq.conservativeResize(a_eq.rows() + 1, dim());
    a_eq.row(a_eq.rows() - 1) = row.transpose();
    b_eq.conservativeResize(b_eq.size() + 1);
    b_eq(b_eq.size() - 1) = rhs;
}

bool Polytope::contains(const Eigen::VectorXd& x, double tol) const {
    if (x.size() != dim()) return false;
    for (Eigen::Index j = 0; j < dim(); ++j)
        if (x(j) < lower(j) - tol || x(j) > upper(j) + tol) return false;
    if (a.rows() > 0 && ((a * x - b).array() > tol).any()) return false;
    if (a_eq.rows() > 0 && ((a_eq * x - b_eq).cwiseAbs().array() > tol).any()) return false;
    return true;
}

void Polytope::validate() const {
    const Eigen::Index d = dim();
    if (upper.size() != d || a.cols() != d || a.rows() != b.size() || a_eq.cols() != d || a_eq.rows() != b_eq.size())
        throw Error(ErrorCode::InvalidArgument, "polytope dimensions are inconsistent");
    for (Eigen::Index j = 0; j < d; ++j)
        if (lower(j) > upper(j)) throw Error(ErrorCode::InvalidArgument, "polytope lower bound exceeds upper bound");
}

void AffineImageSet::validate() const {
    source.validate();
    if (map.rows() != offset.size() || map.cols() != source.dim())
        throw Error(ErrorCode::InvalidArgument, "affine image dimensions are inconsistent");
}

Eigen::Index set_dim(const ConvexSet& s) {
    return std::visit([](const auto& v) { return v.dim(); }, s);
}

LpExtremes lp_minmax(const Eigen::VectorXd& objective, const ConvexSet& feasible) {
    std::visit([](const auto& v) { v.validate(); }, feasible);
    Lifted l = lift(feasible);
    if (objective.size() != l.offset.size()) throw Error(ErrorCode::InvalidArgument, "objective has the wrong length");
    Eigen::VectorXd cost = l.map.transpose() * objective;
    double base = objective.dot(l.offset);

    LpExtremes out;
    for (int sense : {1, -1}) {
        lp::Solution sol = lp::solve(source_problem(*l.source, sense * cost));
        if (sol.status == lp::Status::Infeasible) throw Error(ErrorCode::Infeasible, "feasible set is empty");
        if (sol.status == lp::Status::Unbounded) throw Error(ErrorCode::Unbounded, "objective is unbounded on the set");
        Eigen::VectorXd point = l.offset + l.map * sol.x;
        double value = base + cost.dot(sol.x);
        if (sense == 1) {
            out.min = value;
            out.argmin = point;
        } else {
            out.max = value;
            out.argmax = point;
        }
    }
    if (out.max < out.min) out.max = out.min;
    return out;
}

bool is_nonempty(const ConvexSet& s) {
    Lifted l = lift(s);
    lp::Solution sol = lp::solve(source_problem(*l.source, Eigen::VectorXd::Zero(l.source->dim())));
    return sol.status != lp::Status::Infeasible;
}

AffineImageSet intersect(const Polytope& p, const AffineImageSet& image) {
    p.validate();
    image.validate();
    if (p.dim() != image.dim()) throw Error(ErrorCode::InvalidArgument, "intersection operands differ in dimension");
    AffineImageSet out = image;
    Polytope& src = out.source;
    const Eigen::MatrixXd& m = image.map;
    const Eigen::VectorXd& off = image.offset;
    for (Eigen::Index i = 0; i < p.a.rows(); ++i) {
        Eigen::VectorXd row = (p.a.row(i) * m).transpose();
        src.add_row(row, p.b(i) - p.a.row(i).dot(off));
    }
    for (Eigen::Index i = 0; i < p.a_eq.rows(); ++i) {
        Eigen::VectorXd row = (p.a_eq.row(i) * m).transpose();
        src.add_equality(row, p.b_eq(i) - p.a_eq.row(i).dot(off));
    }
    for (Eigen::Index j = 0; j < p.dim(); ++j) {
        if (std::isfinite(p.upper(j))) src.add_row(m.row(j).transpose(), p.upper(j) - off(j));
        if (std::isfinite(p.lower(j))) src.add_row(-m.row(j).transpose(), off(j) - p.lower(j));
    }
    return out;
}

AffineImageSet touching_intersection(const Polytope& p, const AffineImageSet& image) {
    AffineImageSet out = intersect(p, image);
    Polytope& src = out.source;
    const Eigen::Index n = src.dim();
    const Eigen::Index pulled = src.a.rows() - image.source.a.rows();
    lp::Problem lp_;
    lp_.cost = Eigen::VectorXd::Zero(n + 1);
    lp_.cost(n) = 1.0;
    lp_.a_ub = Eigen::MatrixXd::Zero(src.a.rows(), n + 1);
    lp_.a_ub.leftCols(n) = src.a;
    lp_.a_ub.col(n).tail(pulled).setConstant(-1.0);
    lp_.b_ub = src.b;
    lp_.a_eq = Eigen::MatrixXd::Zero(src.a_eq.rows(), n + 1);
    lp_.a_eq.leftCols(n) = src.a_eq;
    lp_.b_eq = src.b_eq;
    lp_.lower.resize(n + 1);
    lp_.lower << src.lower, 0.0;
    lp_.upper.resize(n + 1);
    lp_.upper << src.upper, kInf;
    lp::Solution sol = lp::solve(lp_);
    if (sol.status != lp::Status::Optimal) throw Error(ErrorCode::Infeasible, "sets cannot be made to touch");
    // Always loosen a little so solvers with different internal scaling agree
    // that the result is nonempty.
    src.b.tail(pulled).array() += std::max(0.0, sol.value) * (1.0 + 1e-6) + kFeasibilityTol;
    return out;
}

Polytope intersect(const Polytope& p, const Polytope& q) {
    p.validate();
    q.validate();
    if (p.dim() != q.dim()) throw Error(ErrorCode::InvalidArgument, "intersection operands differ in dimension");
    Polytope out(p.dim());
    out.a.resize(p.a.rows() + q.a.rows(), p.dim());
    out.a << p.a, q.a;
    out.b.resize(p.b.size() + q.b.size());
    out.b << p.b, q.b;
    out.a_eq.resize(p.a_eq.rows() + q.a_eq.rows(), p.dim());
    out.a_eq << p.a_eq, q.a_eq;
    out.b_eq.resize(p.b_eq.size() + q.b_eq.size());
    out.b_eq << p.b_eq, q.b_eq;
    out.lower = p.lower.cwiseMax(q.lower);
    out.upper = p.upper.cwiseMin(q.upper);
    return out;
}

double linf_gap(const ConvexSet& p, const ConvexSet& q) {
    std::visit([](const auto& v) { v.validate(); }, p);
    std::visit([](const auto& v) { v.validate(); }, q);
    Lifted a = lift(p);
    Lifted b = lift(q);
    check_same_dim(a, b);
    const Eigen::Index np = a.source->dim();
    const Eigen::Index nq = b.source->dim();
    const Eigen::Index d = a.offset.size();

    lp::Problem prob = joint_problem(*a.source, *b.source, 1);
    const Eigen::Index n = np + nq + 1;
    Eigen::MatrixXd gap_rows(2 * d, n);
    gap_rows.block(0, 0, d, np) = a.map;
    gap_rows.block(0, np, d, nq) = -b.map;
    gap_rows.block(0, n - 1, d, 1).setConstant(-1.0);
    gap_rows.block(d, 0, d, np) = -a.map;
    gap_rows.block(d, np, d, nq) = b.map;
    gap_rows.block(d, n - 1, d, 1).setConstant(-1.0);
    Eigen::VectorXd shift = a.offset - b.offset;
    Eigen::VectorXd gap_rhs(2 * d);
    gap_rhs << -shift, shift;

    Eigen::MatrixXd a_ub(prob.a_ub.rows() + 2 * d, n);
    a_ub << prob.a_ub, gap_rows;
    Eigen::VectorXd b_ub(prob.b_ub.size() + 2 * d);
    b_ub << prob.b_ub, gap_rhs;
    prob.a_ub = std::move(a_ub);
    prob.b_ub = std::move(b_ub);
    prob.lower(n - 1) = 0.0;
    prob.cost(n - 1) = 1.0;

    lp::Solution sol = lp::solve(prob);
    if (sol.status != lp::Status::Optimal) throw Error(ErrorCode::EmptyOperand, "a distance operand is empty");
    return std::max(0.0, sol.x(n - 1));
}

double polytope_distance(const ConvexSet& p, const ConvexSet& q) {
    double t = linf_gap(p, q);
    if (t <= kFeasibilityTol) return 0.0;
    return euclidean_distance(lift(p), lift(q), t);
}

bool distance_exceeds(const ConvexSet& p, const ConvexSet& q, double threshold) {
    double t = linf_gap(p, q);
    if (t > threshold) return true;
    double d = static_cast<double>(set_dim(p));
    if (t <= kFeasibilityTol || std::sqrt(d) * t <= threshold) return false;
    return euclidean_distance(lift(p), lift(q), t) > threshold;
}

bool hull_membership(const Eigen::VectorXd& point, const std::vector<Eigen::VectorXd>& vertices) {
    if (vertices.empty()) throw Error(ErrorCode::InvalidArgument, "hull needs at least one vertex");
    const Eigen::Index k = point.size();
    const Eigen::Index nv = static_cast<Eigen::Index>(vertices.size());
    Polytope weights = Polytope::box(Eigen::VectorXd::Zero(nv), Eigen::VectorXd::Constant(nv, kInf));
    for (Eigen::Index r = 0; r < k; ++r) {
        Eigen::VectorXd row(nv);
        for (Eigen::Index j = 0; j < nv; ++j) {
            if (vertices[static_cast<std::size_t>(j)].size() != k)
                throw Error(ErrorCode::InvalidArgument, "vertex dimension mismatch");
            row(j) = vertices[static_cast<std::size_t>(j)](r);
        }
        weights.add_equality(row, point(r));
    }
    weights.add_equality(Eigen::VectorXd::Ones(nv), 1.0);
    return is_nonempty(weights);
}

std::vector<Eigen::Vector2d> hull_2d(const std::vector<Eigen::Vector2d>& points) {
    std::vector<Eigen::Vector2d> pts = points;
    std::sort(pts.begin(), pts.end(), [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
        return u.x() < v.x() || (u.x() == v.x() && u.y() < v.y());
    });
    pts.erase(std::unique(pts.begin(), pts.end(), [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) { return u == v; }),
              pts.end());
    if (pts.size() < 3) return pts;

    auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& u, const Eigen::Vector2d& v) {
        return (u.x() - o.x()) * (v.y() - o.y()) - (u.y() - o.y()) * (v.x() - o.x());
    };
    std::vector<Eigen::Vector2d> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

}  // namespace fiv
