#include "doctest.h"

#include "falsify_iv/error.hpp"
#include "falsify_iv/geometry.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>

using namespace fiv;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

Polytope triangle() {
    Polytope p(2);
    p.add_row(Eigen::Vector2d(-1, 0), 0);
    p.add_row(Eigen::Vector2d(0, -1), 0);
    p.add_row(Eigen::Vector2d(1, 1), 1);
    return p;
}

// Brute-force extreme values by enumerating every basic solution of the
// active-constraint systems, including box faces.
std::pair<double, double> vertex_oracle(const Polytope& p, const Eigen::VectorXd& c) {
    const int d = static_cast<int>(p.dim());
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> rhs;
    for (Eigen::Index i = 0; i < p.a.rows(); ++i) {
        rows.push_back(p.a.row(i).transpose());
        rhs.push_back(p.b(i));
    }
    for (int j = 0; j < d; ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
        e(j) = 1;
        rows.push_back(e);
        rhs.push_back(p.upper(j));
        rows.push_back(-e);
        rhs.push_back(-p.lower(j));
    }
    const int m = static_cast<int>(rows.size());
    double lo = kInf, hi = -kInf;
    std::vector<int> pick(static_cast<std::size_t>(d));
    std::function<void(int, int)> rec = [&](int start, int depth) {
        if (depth == d) {
            Eigen::MatrixXd a(d, d);
            Eigen::VectorXd b(d);
            for (int r = 0; r < d; ++r) {
                a.row(r) = rows[static_cast<std::size_t>(pick[static_cast<std::size_t>(r)])].transpose();
                b(r) = rhs[static_cast<std::size_t>(pick[static_cast<std::size_t>(r)])];
            }
            Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
            if (lu.rank() < d) return;
            Eigen::VectorXd x = lu.solve(b);
            if (!p.contains(x, 1e-9)) return;
            lo = std::min(lo, c.dot(x));
            hi = std::max(hi, c.dot(x));
            return;
        }
        for (int i = start; i < m; ++i) {
            pick[static_cast<std::size_t>(depth)] = i;
            rec(i + 1, depth + 1);
        }
    };
    rec(0, 0);
    return {lo, hi};
}

double box_distance_oracle(const Eigen::VectorXd& lo1, const Eigen::VectorXd& hi1, const Eigen::VectorXd& lo2,
                           const Eigen::VectorXd& hi2) {
    double s = 0;
    for (Eigen::Index i = 0; i < lo1.size(); ++i) {
        double gap = std::max({0.0, lo2(i) - hi1(i), lo1(i) - hi2(i)});
        s += gap * gap;
    }
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("lp_minmax on the unit square and a triangle") {
    auto sq = lp_minmax(Eigen::Vector2d(1, 1), Polytope::unit_box(2));
    CHECK(sq.min == doctest::Approx(0.0));
    CHECK(sq.max == doctest::Approx(2.0));
    auto tri = lp_minmax(Eigen::Vector2d(1, 0), triangle());
    CHECK(tri.min == doctest::Approx(0.0));
    CHECK(tri.max == doctest::Approx(1.0));
    CHECK(triangle().contains(tri.argmin));
    CHECK(triangle().contains(tri.argmax));
}

TEST_CASE("lp_minmax errors") {
    Polytope empty = Polytope::unit_box(2);
    empty.add_row(Eigen::Vector2d(1, 1), -1);
    CHECK_THROWS_AS(lp_minmax(Eigen::Vector2d(1, 0), empty), Error);
    try {
        lp_minmax(Eigen::Vector2d(1, 0), empty);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Infeasible);
    }
    Polytope half(2);
    half.lower = Eigen::Vector2d(0, 0);
    try {
        lp_minmax(Eigen::Vector2d(1, 0), half);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Unbounded);
    }
}

TEST_CASE("lp_minmax agrees with vertex enumeration on random 5-d polytopes") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n01;
    for (int rep = 0; rep < 25; ++rep) {
        Polytope p = Polytope::box(Eigen::VectorXd::Constant(5, -1), Eigen::VectorXd::Constant(5, 1));
        for (int r = 0; r < 4; ++r) {
            Eigen::VectorXd row(5);
            for (auto& v : row) v = n01(rng);
            p.add_row(row, 0.3 + std::abs(n01(rng)));
        }
        Eigen::VectorXd c(5);
        for (auto& v : c) v = n01(rng);
        auto ext = lp_minmax(c, p);
        auto [lo, hi] = vertex_oracle(p, c);
        CHECK(ext.min == doctest::Approx(lo).epsilon(1e-7));
        CHECK(ext.max == doctest::Approx(hi).epsilon(1e-7));
        CHECK(ext.min <= ext.max);
        CHECK(p.contains(ext.argmin, 1e-9));
        CHECK(p.contains(ext.argmax, 1e-9));
    }
}

TEST_CASE("lp_minmax over an affine image with equality-constrained source") {
    // Image of the 3-simplex under a 2x3 map is the triangle spanned by its columns.
    AffineImageSet img;
    img.offset = Eigen::Vector2d(1, 1);
    img.map.resize(2, 3);
    img.map << 0, 1, 0, 0, 0, 1;
    img.source = Polytope::box(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Constant(3, kInf));
    img.source.add_equality(Eigen::VectorXd::Ones(3), 1);
    auto ext = lp_minmax(Eigen::Vector2d(1, 1), img);
    CHECK(ext.min == doctest::Approx(2.0));
    CHECK(ext.max == doctest::Approx(3.0));
}

TEST_CASE("polytope_distance basics") {
    Polytope a = Polytope::unit_box(2);
    CHECK(polytope_distance(a, a) == 0.0);
    Polytope b = Polytope::box(Eigen::Vector2d(2, 0), Eigen::Vector2d(3, 1));
    CHECK(polytope_distance(a, b) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(polytope_distance(b, a) == doctest::Approx(1.0).epsilon(1e-8));

    Polytope empty = Polytope::unit_box(2);
    empty.add_row(Eigen::Vector2d(1, 0), -1);
    try {
        polytope_distance(a, empty);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyOperand);
    }
}

TEST_CASE("polytope_distance matches the box-gap oracle, is symmetric and monotone") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int rep = 0; rep < 40; ++rep) {
        Eigen::VectorXd lo1(3), hi1(3), lo2(3), hi2(3);
        for (int i = 0; i < 3; ++i) {
            double x = u(rng), y = u(rng), z = u(rng), w = u(rng);
            lo1(i) = std::min(x, y);
            hi1(i) = std::max(x, y);
            lo2(i) = std::min(z, w);
            hi2(i) = std::max(z, w);
        }
        Polytope p = Polytope::box(lo1, hi1);
        Polytope q = Polytope::box(lo2, hi2);
        double d = polytope_distance(p, q);
        CHECK(d == doctest::Approx(box_distance_oracle(lo1, hi1, lo2, hi2)).epsilon(1e-6));
        CHECK(polytope_distance(q, p) == doctest::Approx(d).epsilon(1e-8));
        Polytope bigger = Polytope::box(lo1.array() - 0.1, hi1.array() + 0.1);
        CHECK(polytope_distance(bigger, q) <= d + 1e-9);
        bool joint = is_nonempty(intersect(p, q));
        CHECK(joint == (d <= kDistanceZeroTol));
    }
}

TEST_CASE("polytope_distance from a point to a tilted triangle") {
    // Point (1,1): nearest point of the triangle is (0.5,0.5), distance sqrt(0.5).
    Polytope pt = Polytope::box(Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 1));
    CHECK(polytope_distance(pt, triangle()) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-7));
    CHECK(distance_exceeds(pt, triangle()));
}

TEST_CASE("hull_membership") {
    std::vector<Eigen::VectorXd> tri = {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)};
    CHECK(hull_membership(Eigen::Vector2d(1, 0), tri));
    CHECK(hull_membership(Eigen::Vector2d(0.5, 0.25), tri));
    CHECK_FALSE(hull_membership(Eigen::Vector2d(0.8, 0.8), tri));
    CHECK(hull_membership(Eigen::Vector2d(0.5, 0.5), tri));
    CHECK_FALSE(hull_membership(Eigen::Vector2d(0.5, 0.5 + 1e-6), tri));
}

TEST_CASE("hull_2d") {
    std::vector<Eigen::Vector2d> three = {Eigen::Vector2d(0, 0), Eigen::Vector2d(0, 1), Eigen::Vector2d(1, 0)};
    auto h = hull_2d(three);
    REQUIRE(h.size() == 3);
    double area2 = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto& p = h[i];
        const auto& q = h[(i + 1) % h.size()];
        area2 += p.x() * q.y() - q.x() * p.y();
    }
    CHECK(area2 > 0);

    std::vector<Eigen::Vector2d> sq = {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 1),
                                       Eigen::Vector2d(0, 1), Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(0.5, 0)};
    CHECK(hull_2d(sq).size() == 4);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Eigen::Vector2d> disk;
    while (disk.size() < 100) {
        Eigen::Vector2d p(u(rng), u(rng));
        if (p.norm() <= 1) disk.push_back(p);
    }
    auto hull = hull_2d(disk);
    // Orientation oracle: every point is left of (or on) every CCW edge.
    for (const auto& p : disk) {
        for (std::size_t i = 0; i < hull.size(); ++i) {
            const auto& a = hull[i];
            const auto& b = hull[(i + 1) % hull.size()];
            double cr = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
            CHECK(cr >= -1e-12);
        }
    }
    std::vector<Eigen::VectorXd> verts;
    for (const auto& v : hull) verts.push_back(v);
    for (int i = 0; i < 10; ++i) CHECK(hull_membership(disk[static_cast<std::size_t>(i)], verts));
}

TEST_CASE("touching intersection closes a tiny gap") {
    fiv::Polytope p = fiv::Polytope::unit_box(2);
    fiv::AffineImageSet img;
    img.offset = Eigen::Vector2d(1.0 + 1e-9, 0.25);
    img.map = Eigen::Matrix2d::Identity();
    img.source = fiv::Polytope::unit_box(2);
    CHECK_FALSE(fiv::distance_exceeds(p, img));
    auto t = fiv::touching_intersection(p, img);
    auto e = fiv::lp_minmax(Eigen::Vector2d(1, 0), t);
    CHECK(e.min == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(e.max == doctest::Approx(1.0).epsilon(1e-8));
    auto f = fiv::lp_minmax(Eigen::Vector2d(0, 1), t);
    CHECK(f.min == doctest::Approx(0.25));
    CHECK(f.max == doctest::Approx(1.0));

    img.offset = Eigen::Vector2d(0.5, 0.5);
    auto overlap = fiv::lp_minmax(Eigen::Vector2d(1, 1), fiv::touching_intersection(p, img));
    CHECK(overlap.min == doctest::Approx(1.0));
    CHECK(overlap.max == doctest::Approx(2.0));
}
