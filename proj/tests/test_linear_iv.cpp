#include "doctest.h"

#include "falsify_iv/error.hpp"
#include "falsify_iv/linear_iv.hpp"
#include "fixtures.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>

using namespace fiv;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

// Brute-force scan over b; returns [min, max] of feasible grid points, or nothing.
std::optional<std::pair<double, double>> scan_k1(const ReducedMoments& r, const Eigen::VectorXd& delta, double lo, double hi,
                                                 int n) {
    std::optional<std::pair<double, double>> out;
    for (int i = 0; i <= n; ++i) {
        double b = lo + (hi - lo) * i / n;
        bool ok = true;
        for (Eigen::Index l = 0; l < r.psi.size(); ++l)
            if (std::abs(r.psi(l) - b * r.pi(l, 0)) > delta(l) + 1e-12) ok = false;
        if (!ok) continue;
        if (!out) out = std::make_pair(b, b);
        out->second = b;
    }
    return out;
}

// Nonemptiness of {b in R^2 : |psi - Pi b| <= delta} by testing every
// intersection of two constraint lines; valid when the set is bounded.
bool vertex_oracle_2d(const ReducedMoments& r, const Eigen::VectorXd& delta) {
    std::vector<Eigen::Vector2d> rows;
    std::vector<double> rhs;
    for (Eigen::Index l = 0; l < r.psi.size(); ++l) {
        Eigen::Vector2d p = r.pi.row(l).transpose();
        rows.push_back(p);
        rhs.push_back(r.psi(l) + delta(l));
        rows.push_back(-p);
        rhs.push_back(delta(l) - r.psi(l));
    }
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            Eigen::Matrix2d m;
            m.row(0) = rows[i].transpose();
            m.row(1) = rows[j].transpose();
            if (std::abs(m.determinant()) < 1e-12) continue;
            Eigen::Vector2d x = m.inverse() * (Eigen::Vector2d(rhs[i], rhs[j]));
            bool ok = true;
            for (std::size_t k = 0; k < rows.size(); ++k)
                if (rows[k].dot(x) > rhs[k] + 1e-9) ok = false;
            if (ok) return true;
        }
    return false;
}

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("sargan residuals detect disagreement") {
    auto r = fixtures::l2();
    Eigen::MatrixXd s = sargan_residuals(r);
    CHECK(s(0, 1) == doctest::Approx(-4.0));
    CHECK(s(1, 0) == doctest::Approx(4.0));
    CHECK(s(0, 0) == 0.0);
    CHECK(sargan_falsified(r));

    auto ok = fixtures::reduced(Eigen::Vector3d(2, -4, 6), Eigen::Vector3d(1, -2, 3));
    CHECK_FALSE(sargan_falsified(ok));
    CHECK(gamma_identified_line(ok).passes_through_origin());
    CHECK_FALSE(gamma_identified_line(r).passes_through_origin());
}

TEST_CASE("identified set for the two-instrument example") {
    auto r = fixtures::l2();
    CHECK(identified_set_linear(r, Eigen::Vector2d(0, 0)).empty());
    auto s = identified_set_linear(r, Eigen::Vector2d(2, 2));
    REQUIRE(s.kind == SetKind::Interval);
    CHECK(s.lo == doctest::Approx(3.0));
    CHECK(s.hi == doctest::Approx(3.0));
    CHECK(is_singleton(s));
    CHECK(identified_set_linear(r, Eigen::Vector2d(1.98, 1.98)).empty());

    auto wide = identified_set_linear(r, Eigen::Vector2d(3, 3));
    CHECK(wide.lo == doctest::Approx(2.0));
    CHECK(wide.hi == doctest::Approx(4.0));

    auto dropped = identified_set_linear(r, Eigen::Vector2d(kInf, 0.5));
    CHECK(dropped.lo == doctest::Approx(4.5));
    CHECK(dropped.hi == doctest::Approx(5.5));
    CHECK(identified_set_linear(r, Eigen::Vector2d(kInf, kInf)).kind == SetKind::AllSpace);

    CHECK(code_of([&] { identified_set_linear(r, Eigen::Vector2d(-1, 0)); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { identified_set_linear(r, Eigen::Vector3d(1, 1, 1)); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("irrelevant instrument contributes all or nothing") {
    auto r = fixtures::reduced(Eigen::Vector2d(1, 0.5), Eigen::Vector2d(1, 0));
    auto s = identified_set_linear(r, Eigen::Vector2d(0.25, 0.5));
    REQUIRE(s.kind == SetKind::Interval);
    CHECK(s.lo == doctest::Approx(0.75));
    CHECK(s.hi == doctest::Approx(1.25));
    CHECK(identified_set_linear(r, Eigen::Vector2d(0.25, 0.4)).empty());
    CHECK(code_of([&] { fas_k1(fixtures::reduced(Eigen::Vector2d(1, 1), Eigen::Vector2d(0, 0))); }) ==
          ErrorCode::AllInstrumentsIrrelevant);
}

TEST_CASE("identified set agrees with a brute-force scan") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2, 2), d(0, 1.5);
    for (int rep = 0; rep < 200; ++rep) {
        const int l = 2 + rep % 3;
        Eigen::VectorXd psi(l), pi(l), delta(l);
        for (int j = 0; j < l; ++j) {
            psi(j) = u(rng);
            pi(j) = u(rng);
            if (std::abs(pi(j)) < 0.2) pi(j) = 0.2;
            delta(j) = d(rng);
        }
        auto r = fixtures::reduced(psi, pi);
        auto s = identified_set_linear(r, delta);
        auto scan = scan_k1(r, delta, -30, 30, 60000);
        if (!scan) {
            // The grid can miss a set narrower than its spacing.
            if (!s.empty()) CHECK(s.hi - s.lo < 2e-3);
            continue;
        }
        REQUIRE_FALSE(s.empty());
        CHECK(std::abs(s.lo - scan->first) <= 1e-3);
        CHECK(std::abs(s.hi - scan->second) <= 1e-3);
    }
}

TEST_CASE("identified set is monotone in the relaxation") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-2, 2), d(0, 2), grow(0, 0.5);
    for (int rep = 0; rep < 200; ++rep) {
        Eigen::Vector3d psi, pi, delta;
        for (int j = 0; j < 3; ++j) {
            psi(j) = u(rng);
            pi(j) = u(rng) + (u(rng) > 0 ? 0.3 : -0.3);
            delta(j) = d(rng);
        }
        Eigen::Vector3d bigger = delta + Eigen::Vector3d(grow(rng), grow(rng), grow(rng));
        auto r = fixtures::reduced(psi, pi);
        auto a = identified_set_linear(r, delta);
        auto b = identified_set_linear(r, bigger);
        if (a.empty()) continue;
        REQUIRE_FALSE(b.empty());
        CHECK(b.lo <= a.lo + 1e-12);
        CHECK(b.hi >= a.hi - 1e-12);
    }
}

TEST_CASE("frontier points are sharp") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int rep = 0; rep < 50; ++rep) {
        const int l = 2 + rep % 4;
        Eigen::VectorXd psi(l), pi(l);
        for (int j = 0; j < l; ++j) {
            psi(j) = u(rng);
            pi(j) = u(rng);
            if (std::abs(pi(j)) < 0.1) pi(j) = 0.5;
        }
        auto r = fixtures::reduced(psi, pi);
        auto curve = falsification_frontier_k1(r, 41);
        for (std::size_t i = 0; i < curve.delta_points.size(); ++i) {
            const auto& delta = curve.delta_points[i];
            auto s = identified_set_linear(r, delta);
            REQUIRE_FALSE(s.empty());
            CHECK(is_singleton(s));
            CHECK(s.lo == doctest::Approx(curve.parameter_grid[i](0)));
            if (delta.maxCoeff() > 1e-6) CHECK(identified_set_linear(r, 0.99 * delta).empty());
        }
    }
}

TEST_CASE("frontier endpoints and degenerate grid") {
    auto curve = falsification_frontier_k1(fixtures::l2(), 5);
    REQUIRE(curve.parameter_grid.size() == 5);
    CHECK(curve.parameter_grid.front()(0) == 1.0);
    CHECK(curve.parameter_grid.back()(0) == 5.0);
    CHECK(curve.delta_points[2](0) == doctest::Approx(2.0));
    CHECK(curve.delta_points[2](1) == doctest::Approx(2.0));

    auto single = falsification_frontier_k1(fixtures::reduced(Eigen::Vector2d(2, 4), Eigen::Vector2d(1, 2)));
    REQUIRE(single.parameter_grid.size() == 1);
    CHECK(single.parameter_grid[0](0) == doctest::Approx(2.0));
    CHECK(single.delta_points[0].norm() == doctest::Approx(0.0));
}

TEST_CASE("two-instrument frontier line") {
    auto f = ff_two_instruments(fixtures::l2());
    CHECK(f.intercept_1 == doctest::Approx(4.0));
    CHECK(f.intercept_2 == doctest::Approx(4.0));
    CHECK(f.slope == doctest::Approx(-1.0));

    auto r = fixtures::reduced(Eigen::Vector2d(2, -3), Eigen::Vector2d(0.5, -1.5));
    auto g = ff_two_instruments(r);
    // Each frontier point lies on the line through the two intercepts.
    for (const auto& delta : falsification_frontier_k1(r, 11).delta_points)
        CHECK(delta(1) == doctest::Approx(g.intercept_2 + g.slope * delta(0)));
    CHECK(code_of([] { ff_two_instruments(fixtures::reduced(Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 0))); }) ==
          ErrorCode::IrrelevantInstrument);
}

TEST_CASE("falsification adaptive set in one dimension") {
    auto fas = fas_k1(fixtures::l2());
    CHECK(fas.lo == 1.0);
    CHECK(fas.hi == 5.0);
    CHECK(fas.lo_instrument == 0);
    CHECK(fas.hi_instrument == 1);

    auto same = fas_k1(fixtures::reduced(Eigen::Vector2d(2, 4), Eigen::Vector2d(1, 2)));
    CHECK(same.lo == same.hi);
    CHECK(same.lo_instrument == 0);
    CHECK(same.hi_instrument == 0);
}

TEST_CASE("general K vertices and projections") {
    auto r = fixtures::k2l3();
    auto fas = fas_general(r);
    REQUIRE(fas.vertices.size() == 3);
    CHECK(fas.vertices[0].beta.isApprox(Eigen::Vector2d(0, 0)));
    CHECK(fas.vertices[1].beta.isApprox(Eigen::Vector2d(0, 1)));
    CHECK(fas.vertices[2].beta.isApprox(Eigen::Vector2d(1, 0)));
    REQUIRE(fas.simplices.size() == 1);
    CHECK(fas.simplices[0] == std::vector<int>{0, 1, 2});

    auto [lo, hi] = fas_projection(r, Eigen::Vector2d(1, 1));
    CHECK(lo == doctest::Approx(0.0));
    CHECK(hi == doctest::Approx(1.0));
    auto [lo2, hi2] = fas_projection(r, Eigen::Vector2d(1, -2));
    CHECK(lo2 == doctest::Approx(-2.0));
    CHECK(hi2 == doctest::Approx(1.0));

    Eigen::VectorXd delta = ff_general(r, Eigen::Vector2d(0.5, 0.25));
    CHECK(delta.isApprox(Eigen::Vector3d(0.5, 0.25, 0.25)));
    CHECK(code_of([&] { ff_general(r, Eigen::Vector2d(2, 2)); }) == ErrorCode::PointNotOnFrontierParameterization);
}

TEST_CASE("relevance assumption checks") {
    Eigen::MatrixXd sing(3, 2);
    sing << 1, 0, 2, 0, 0, 1;
    auto a = fixtures::reduced(Eigen::Vector3d(0, 0, 1), sing, Eigen::Matrix3d::Identity());
    CHECK(code_of([&] { check_relevance_general(a); }) == ErrorCode::RelevanceAssumptionViolated);

    Eigen::MatrixXd collinear(3, 2);
    collinear << 1, 0, 0, 1, 0.5, 0.5;
    auto b = fixtures::reduced(Eigen::Vector3d(0, 0, 1), collinear, Eigen::Matrix3d::Identity());
    CHECK(code_of([&] { fas_general(b); }) == ErrorCode::RelevanceAssumptionViolated);
    CHECK_NOTHROW(check_relevance_general(fixtures::k2l3()));
}

TEST_CASE("two-treatment identified set agrees with vertex enumeration") {
    auto r = fixtures::k2l3();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(0, 0.8);
    int nonempty = 0;
    for (int rep = 0; rep < 300; ++rep) {
        Eigen::Vector3d delta(d(rng), d(rng), d(rng));
        auto s = identified_set_linear(r, delta);
        bool oracle = vertex_oracle_2d(r, delta);
        CHECK(!s.empty() == oracle);
        nonempty += oracle;
    }
    CHECK(nonempty > 20);
    CHECK(nonempty < 280);
}

TEST_CASE("sampled general frontier is sharp") {
    auto r = fixtures::k2l3();
    auto curve = sample_ff_general(r, 8);
    CHECK(curve.parameter_grid.size() == 45);
    for (std::size_t i = 0; i < curve.delta_points.size(); ++i) {
        const auto& delta = curve.delta_points[i];
        auto s = identified_set_linear(r, delta);
        REQUIRE_FALSE(s.empty());
        CHECK(is_singleton(s, 1e-7));
        CHECK(s.polytope->contains(curve.parameter_grid[i]));
        CHECK(identified_set_linear(r, 0.99 * delta).empty());
    }
}

TEST_CASE("directional falsification point") {
    auto r = fixtures::l2();
    auto p = directional_falsification_point(r, Eigen::Vector2d(1, 1));
    CHECK(p.m_star == doctest::Approx(2.0));
    CHECK(p.b_star == doctest::Approx(3.0));
    CHECK(p.pair == std::make_pair(1, 0));
    auto q = directional_falsification_point(r, Eigen::Vector2d(2, 1));
    CHECK(q.m_star == doctest::Approx(4.0 / 3.0));
    CHECK(q.b_star == doctest::Approx(11.0 / 3.0));

    auto flat = directional_falsification_point(fixtures::reduced(Eigen::Vector2d(2, 4), Eigen::Vector2d(1, 2)),
                                                Eigen::Vector2d(1, 1));
    CHECK(flat.m_star == 0.0);
    CHECK(flat.pair == std::make_pair(0, 0));
    CHECK(flat.b_star == doctest::Approx(2.0));

    CHECK(code_of([&] { directional_falsification_point(r, Eigen::Vector2d(1, 0)); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("directional point matches a minimax scan") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-2, 2), pos(0.2, 2);
    for (int rep = 0; rep < 40; ++rep) {
        const int l = 2 + rep % 3;
        Eigen::VectorXd psi(l), pi(l), d(l);
        for (int j = 0; j < l; ++j) {
            psi(j) = u(rng);
            pi(j) = pos(rng) * (u(rng) > 0 ? 1 : -1);
            d(j) = pos(rng);
        }
        auto r = fixtures::reduced(psi, pi);
        // m* = min over b of max_l |psi_l - b pi_l| / d_l.
        double best = kInf, best_b = 0;
        for (int i = 0; i <= 400000; ++i) {
            double b = -20 + 40.0 * i / 400000;
            double worst = 0;
            for (int j = 0; j < l; ++j) worst = std::max(worst, std::abs(psi(j) - b * pi(j)) / d(j));
            if (worst < best) {
                best = worst;
                best_b = b;
            }
        }
        auto p = directional_falsification_point(r, d);
        CHECK(std::abs(p.m_star - best) < 1e-3);
        CHECK(std::abs(p.b_star - best_b) < 1e-3);
        auto s = identified_set_linear(r, p.m_star * d);
        REQUIRE_FALSE(s.empty());
        CHECK(is_singleton(s));
    }
}

TEST_CASE("breakdown frontier") {
    auto r = fixtures::l2();
    auto bf = breakdown_frontier_k1(r, 0.0, kInf, {0.5, 2.0, 6.0}, 10.0);
    REQUIRE(bf.size() == 3);
    REQUIRE(bf[0].bf);
    CHECK(*bf[0].bf == doctest::Approx(10.0));
    REQUIRE(bf[1].bf);
    CHECK(*bf[1].bf == doctest::Approx(5.0).epsilon(1e-8));
    // delta1 = 6: the set stays inside [0, inf) until delta2 passes 5.
    REQUIRE(bf[2].bf);
    CHECK(*bf[2].bf == doctest::Approx(5.0).epsilon(1e-8));
    auto none = breakdown_frontier_k1(r, 4.0, 6.0, {2.5}, 10.0);
    CHECK_FALSE(none[0].bf);

    auto everything = breakdown_frontier_k1(r, -kInf, kInf, {0.0, 1.0}, 7.0);
    CHECK(*everything[0].bf == 7.0);
    CHECK(*everything[1].bf == 7.0);

    CHECK(code_of([&] { breakdown_frontier_k1(r, 0, 1, {1.0}, kInf); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("breakdown frontier against a grid oracle") {
    auto r = fixtures::reduced(Eigen::Vector2d(1, -1.5), Eigen::Vector2d(0.5, 1));
    const double clo = -1.0, chi = 2.5, cap = 6.0;
    std::vector<double> grid = {0.0, 0.2, 0.5, 1.0, 1.5};
    auto bf = breakdown_frontier_k1(r, clo, chi, grid, cap);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        // Largest good delta2 on a fine grid, among contiguous good values.
        std::optional<double> oracle;
        for (int k = 0; k <= 60000; ++k) {
            double d2 = cap * k / 60000;
            auto s = scan_k1(r, Eigen::Vector2d(grid[i], d2), -20, 20, 4000);
            if (!s) continue;
            double lo = std::max(r.psi(0) / r.pi(0) - grid[i] / 0.5, r.psi(1) - d2);
            double hi = std::min(r.psi(0) / r.pi(0) + grid[i] / 0.5, r.psi(1) + d2);
            if (lo >= clo && hi <= chi) oracle = d2;
            else if (oracle) break;
        }
        CHECK(bf[i].bf.has_value() == oracle.has_value());
        if (oracle && bf[i].bf) CHECK(std::abs(*bf[i].bf - *oracle) <= cap / 60000 + 1e-6);
    }
}

TEST_CASE("two-stage weights") {
    Eigen::Matrix2d v;
    v << 1, 0.9, 0.9, 1;
    auto r = fixtures::reduced(Eigen::Vector2d(1, -2.5), Eigen::MatrixXd(Eigen::Vector2d(1, -0.5)), v);
    Eigen::VectorXd w = twosls_weights(r);
    CHECK(w.sum() == doctest::Approx(1.0));
    CHECK(w(0) == doctest::Approx(0.55 / 0.35));
    CHECK(w(1) < 0);
    double combo = w(0) * 1.0 + w(1) * 5.0;
    CHECK(combo == doctest::Approx(full_2sls(r)));
    CHECK(combo == doctest::Approx(-1.2857142857).epsilon(1e-8));

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int rep = 0; rep < 50; ++rep) {
        Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(3, 3, [&] { return u(rng); });
        Eigen::MatrixXd vz = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(3, 3);
        Eigen::Vector3d pi(u(rng) + 2, u(rng) - 2, u(rng) + 3), psi(u(rng), u(rng), u(rng));
        auto rr = fixtures::reduced(psi, Eigen::MatrixXd(pi), vz);
        Eigen::VectorXd ww = twosls_weights(rr);
        double sum = 0;
        for (int j = 0; j < 3; ++j) sum += ww(j) * psi(j) / pi(j);
        CHECK(ww.sum() == doctest::Approx(1.0));
        CHECK(sum == doctest::Approx(full_2sls(rr)));
    }
}

TEST_CASE("moment inequality objective") {
    auto r = fixtures::l2();
    CHECK(qmt_star(r, Eigen::Vector2d(1, 1)) == doctest::Approx(2.0));
    CHECK(qmt_star(r, Eigen::Vector2d(2, 2)) == 0.0);
    CHECK(qmt_objective(r, 3.0, Eigen::Vector2d(1, 1)) == doctest::Approx(2.0));

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-2, 2), d(0, 1);
    for (int rep = 0; rep < 60; ++rep) {
        Eigen::Vector2d psi(u(rng), u(rng)), pi(u(rng) + 2.5, u(rng) - 2.5), delta(d(rng), d(rng));
        auto rr = fixtures::reduced(psi, pi);
        double best = kInf;
        for (int i = 0; i <= 200000; ++i) best = std::min(best, qmt_objective(rr, -5 + 10.0 * i / 200000, delta));
        CHECK(qmt_star(rr, delta) <= best + 1e-15);
        CHECK(best - qmt_star(rr, delta) <= 1e-8);
        CHECK((qmt_star(rr, delta) == 0.0) == !identified_set_linear(rr, delta).empty());
    }
}

TEST_CASE("estimated adaptive set with screening") {
    std::mt19937_64 rng(41);
    Eigen::Vector3d pi(1, 1, 0), gamma(0, 4, 0);
    Eigen::MatrixXd rows = fixtures::simulate_linear(rng, 20000, pi, gamma, 1.0);
    auto fas = estimate_fas(rows, fixtures::linear_roles(3));
    CHECK(fas.screened_out == std::vector<int>{2});
    REQUIRE(fas.lo_se);
    REQUIRE(fas.hi_se);
    CHECK(std::abs(fas.lo - 1.0) < 4 * *fas.lo_se);
    CHECK(std::abs(fas.hi - 5.0) < 4 * *fas.hi_se);
    CHECK(fas.lo_instrument == 0);
    CHECK(fas.hi_instrument == 1);
    CHECK(fas.f_stats.size() == 3);

    Eigen::MatrixXd weak = fixtures::simulate_linear(rng, 500, Eigen::Vector2d(0, 0), Eigen::Vector2d(0, 0), 1.0);
    CHECK(code_of([&] { estimate_fas(weak, fixtures::linear_roles(2), 1e6); }) == ErrorCode::AllInstrumentsScreenedOut);
    CHECK(code_of([&] { estimate_fas(Eigen::MatrixXd(0, 4), fixtures::linear_roles(2)); }) ==
          ErrorCode::PopulationModeUnsupported);
}

TEST_CASE("one-treatment operations reject K > 1") {
    auto r = fixtures::k2l3();
    CHECK(code_of([&] { fas_k1(r); }) == ErrorCode::KNotOne);
    CHECK(code_of([&] { sargan_residuals(r); }) == ErrorCode::KNotOne);
    CHECK(code_of([&] { directional_falsification_point(r, Eigen::Vector3d(1, 1, 1)); }) == ErrorCode::KNotOne);
    CHECK(code_of([&] { gamma_identified_line(r); }) == ErrorCode::KNotOne);
}
