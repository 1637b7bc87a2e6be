#include "doctest.h"

#include "falsify_iv/error.hpp"
#include "falsify_iv/het_binary.hpp"
#include "fixtures.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>

using namespace fiv;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::InvalidArgument;
}

CDependence cv(double c) { return CDependence::Constant(1, c); }

// Two-dimensional brute force for one binary instrument: the diamond written
// through the k factors, the box through observed conditionals, and the
// extremes of P(Y_x = 1) found by enumerating pairwise line intersections.
struct Line {
    Eigen::Vector2d n;
    double rhs;  // n'a <= rhs
};

std::optional<std::pair<double, double>> oracle_bounds(const DiscreteJoint& j, double c, int x) {
    const double pz = j.p_cell(1);
    const double k0 = kz_factor(pz, c, 0), k1 = kz_factor(pz, c, 1);
    std::vector<Line> lines = {
        {{k0, -1}, 0},          // a1 >= k0 a0
        {{-1, k1}, 0},          // a0 >= k1 a1
        {{-k0, 1}, 1 - k0},     // 1 - a1 >= k0 (1 - a0)
        {{1, -k1}, 1 - k1},     // 1 - a0 >= k1 (1 - a1)
    };
    for (int z = 0; z < 2; ++z) {
        double lo = j.prob(1, x, z) / j.p_cell(z);
        double hi = lo + j.p_x_cell(1 - x, z) / j.p_cell(z);
        Eigen::Vector2d e = Eigen::Vector2d::Zero();
        e(z) = 1;
        lines.push_back({e, hi});
        lines.push_back({-e, -lo});
    }
    std::optional<std::pair<double, double>> out;
    for (std::size_t a = 0; a < lines.size(); ++a)
        for (std::size_t b = a + 1; b < lines.size(); ++b) {
            Eigen::Matrix2d m;
            m.row(0) = lines[a].n.transpose();
            m.row(1) = lines[b].n.transpose();
            if (std::abs(m.determinant()) < 1e-12) continue;
            Eigen::Vector2d p = m.inverse() * Eigen::Vector2d(lines[a].rhs, lines[b].rhs);
            bool ok = true;
            for (const auto& l : lines)
                if (l.n.dot(p) > l.rhs + 1e-10) ok = false;
            if (!ok) continue;
            double v = (1 - pz) * p(0) + pz * p(1);
            if (!out) out = std::make_pair(v, v);
            out->first = std::min(out->first, v);
            out->second = std::max(out->second, v);
        }
    return out;
}

DiscreteJoint random_binary(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> p(0.2, 0.8);
    return fixtures::binary_joint(p(rng), fixtures::random_cond(rng), fixtures::random_cond(rng));
}

// Random joint with two instruments of sizes 2 and 3.
DiscreteJoint random_two_instruments(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    DiscreteJoint j;
    j.z_supports = {{0, 1}, {0, 1, 2}};
    j.probs.resize(24);
    for (auto& v : j.probs) v = u(rng);
    j.probs /= j.probs.sum();
    return j;
}

}  // namespace

TEST_CASE("k factor") {
    CHECK(kz_factor(0.3, 0.0, 1) == doctest::Approx(1.0));
    CHECK(kz_factor(0.3, 1.0, 0) == 0.0);
    CHECK(kz_factor(0.5, 1.0 / 14, 1) == doctest::Approx(0.75));
    double prev = 1.0;
    for (int i = 0; i <= 100; ++i) {
        double k = kz_factor(0.35, i / 100.0, 0);
        CHECK(k <= prev + 1e-15);
        prev = k;
    }
    CHECK(code_of([] { kz_factor(1.0, 0.1, 0); }) == ErrorCode::DegenerateInstrument);
}

TEST_CASE("diamond shapes") {
    auto j = fixtures::b1();
    auto d0 = diamond_constraints(j, cv(0.0));
    CHECK(d0.contains(Eigen::Vector2d(0.3, 0.3)));
    CHECK_FALSE(d0.contains(Eigen::Vector2d(0.3, 0.32)));

    auto dv = diamond_constraints(j, cv(0.5));
    for (double a : {0.0, 1.0})
        for (double b : {0.0, 1.0}) CHECK(dv.contains(Eigen::Vector2d(a, b)));

    auto d = diamond_constraints(j, cv(1.0 / 14));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 2000; ++i) {
        double a0 = u(rng), a1 = u(rng);
        bool para = a1 >= 0.75 * a0 && a0 >= 0.75 * a1 && 1 - a1 >= 0.75 * (1 - a0) && 1 - a0 >= 0.75 * (1 - a1);
        CHECK(d.contains(Eigen::Vector2d(a0, a1), 0.0) == para);
    }
}

TEST_CASE("diamond contains the diagonal for any c and support") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int rep = 0; rep < 20; ++rep) {
        auto j = random_two_instruments(rng);
        auto d = diamond_constraints(j, Eigen::Vector2d(u(rng) * 0.2, u(rng) * 0.2));
        for (double a : {0.0, 0.25, 0.5, 0.9, 1.0}) CHECK(d.contains(Eigen::VectorXd::Constant(5, a)));
        auto zero = diamond_constraints(j, Eigen::Vector2d(0, 0));
        Eigen::VectorXd bent = Eigen::VectorXd::Constant(5, 0.4);
        bent(3) = 0.45;
        CHECK_FALSE(zero.contains(bent));
    }
}

TEST_CASE("box map for the example") {
    auto j = fixtures::b1();
    auto h1 = box_affine(j, 1);
    auto e0 = lp_minmax(Eigen::Vector2d(1, 0), h1);
    auto e1 = lp_minmax(Eigen::Vector2d(0, 1), h1);
    CHECK(e0.min == doctest::Approx(0.1));
    CHECK(e0.max == doctest::Approx(0.6));
    CHECK(e1.min == doctest::Approx(0.7));
    CHECK(e1.max == doctest::Approx(0.9));
    auto h0 = box_affine(j, 0);
    CHECK(lp_minmax(Eigen::Vector2d(1, 0), h0).min == doctest::Approx(0.2));
    CHECK(lp_minmax(Eigen::Vector2d(1, 0), h0).max == doctest::Approx(0.7));
    CHECK(lp_minmax(Eigen::Vector2d(0, 1), h0).min == doctest::Approx(0.1));
    CHECK(lp_minmax(Eigen::Vector2d(0, 1), h0).max == doctest::Approx(0.9));
}

TEST_CASE("joint validation") {
    auto bad = fixtures::binary_joint(0.5, Eigen::Vector4d(0.5, 0.0, 0.5, 0.0), Eigen::Vector4d(0.25, 0.25, 0.25, 0.25));
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidJoint);
    auto unnormalized = fixtures::b1();
    unnormalized.probs(0) += 0.01;
    CHECK(code_of([&] { unnormalized.validate(); }) == ErrorCode::InvalidJoint);
    auto massless = fixtures::binary_joint(1.0, Eigen::Vector4d(0.25, 0.25, 0.25, 0.25), Eigen::Vector4d(0.25, 0.25, 0.25, 0.25));
    CHECK(code_of([&] { massless.validate(); }) == ErrorCode::DegenerateInstrument);
    CHECK_NOTHROW(fixtures::b1().validate());
}

TEST_CASE("weighted rows reproduce the joint") {
    auto j = fixtures::b1();
    Eigen::VectorXd y(8), x(8), w(8);
    Eigen::MatrixXd z(8, 1);
    int r = 0;
    for (int yy = 0; yy < 2; ++yy)
        for (int xx = 0; xx < 2; ++xx)
            for (int zz = 0; zz < 2; ++zz, ++r) {
                y(r) = yy;
                x(r) = xx;
                z(r, 0) = zz == 0 ? -3.0 : 7.0;
                w(r) = 3.0 * j.prob(yy, xx, zz);
            }
    auto back = joint_from_rows(y, x, z, w);
    CHECK(back.z_supports[0] == std::vector<double>{-3.0, 7.0});
    CHECK((back.probs - j.probs).cwiseAbs().maxCoeff() < 1e-15);
    y(0) = 2;
    CHECK(code_of([&] { joint_from_rows(y, x, z, w); }) == ErrorCode::DataError);
}

TEST_CASE("falsification of the example") {
    auto j = fixtures::b1();
    CHECK(is_falsified_at(j, cv(0.0)));
    CHECK_FALSE(is_falsified_at(j, cv(1.0 / 14)));
    CHECK(is_falsified_at(j, cv(0.03)));
    CHECK(identified_set_het(j, cv(0.0)).empty);
    auto set = identified_set_het(j, cv(0.2));
    CHECK_FALSE(set.empty);
    CHECK(is_nonempty(*set.theta0));
    CHECK(is_nonempty(*set.theta1));

    double cstar = falsification_point_single(j);
    CHECK(std::abs(cstar - 1.0 / 14) < 1e-6);
    double latent = oracle_cstar_latent(j, 401);
    CHECK(std::abs(latent - 1.0 / 14) < 5e-3);
    CHECK(latent >= cstar - 1e-6);
}

TEST_CASE("falsification agrees with the two-dimensional oracle") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 0.4);
    for (int rep = 0; rep < 150; ++rep) {
        auto j = random_binary(rng);
        double c = u(rng);
        bool empty = !oracle_bounds(j, c, 0) || !oracle_bounds(j, c, 1);
        CHECK(is_falsified_at(j, cv(c)) == empty);
    }
}

TEST_CASE("falsification point against the latent oracle") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 25; ++rep) {
        auto j = random_binary(rng);
        double cstar = falsification_point_single(j);
        double latent = oracle_cstar_latent(j, 201);
        CHECK(latent >= cstar - 1e-6);
        CHECK(latent - cstar < 1e-2);
        CHECK(cstar <= std::max(j.p_cell(1), j.p_cell(0)));
        if (cstar > 0) CHECK(is_falsified_at(j, cv(std::max(cstar - 1e-6, 0.0))));
        CHECK_FALSE(is_falsified_at(j, cv(cstar)));
    }
    // Y independent of Z with the same treatment margin in each arm.
    auto indep = fixtures::binary_joint(0.4, Eigen::Vector4d(0.2, 0.3, 0.2, 0.3), Eigen::Vector4d(0.2, 0.3, 0.2, 0.3));
    CHECK(falsification_point_single(indep) == 0.0);
    CHECK(oracle_cstar_latent(indep, 101) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("potential outcome bounds for the example") {
    auto j = fixtures::b1();
    auto wide = potential_outcome_bounds(j, cv(0.5), 1);
    CHECK(wide.first == doctest::Approx(0.4));
    CHECK(wide.second == doctest::Approx(0.75));
    auto p1 = potential_outcome_bounds(j, cv(1.0 / 14), 1);
    CHECK(p1.first == doctest::Approx(0.65).epsilon(1e-7));
    CHECK(p1.second == doctest::Approx(0.65).epsilon(1e-7));
    auto p0 = potential_outcome_bounds(j, cv(1.0 / 14), 0);
    CHECK(p0.first == doctest::Approx(0.175).epsilon(1e-7));
    CHECK(p0.second == doctest::Approx(0.7375).epsilon(1e-7));
    auto o = oracle_bounds(j, 1.0 / 14, 0);
    REQUIRE(o);
    CHECK(o->first == doctest::Approx(0.175));
    CHECK(o->second == doctest::Approx(0.7375));

    auto ate = ate_bounds(j, cv(1.0 / 14));
    CHECK(ate.first == doctest::Approx(-0.0875).epsilon(1e-7));
    CHECK(ate.second == doctest::Approx(0.475).epsilon(1e-7));
    auto none = ate_bounds(j, cv(0.6));
    CHECK(none.first == doctest::Approx(-0.4));
    CHECK(none.second == doctest::Approx(0.6));
    CHECK(code_of([&] { ate_bounds(j, cv(0.0)); }) == ErrorCode::ModelFalsifiedAtC);
}

TEST_CASE("bounds agree with the two-dimensional oracle") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 0.6);
    int checked = 0;
    for (int rep = 0; rep < 120; ++rep) {
        auto j = random_binary(rng);
        double c = u(rng);
        if (is_falsified_at(j, cv(c))) continue;
        for (int x = 0; x < 2; ++x) {
            auto o = oracle_bounds(j, c, x);
            REQUIRE(o);
            auto b = potential_outcome_bounds(j, cv(c), x);
            CHECK(std::abs(b.first - o->first) < 1e-8);
            CHECK(std::abs(b.second - o->second) < 1e-8);
        }
        ++checked;
    }
    CHECK(checked > 30);
}

TEST_CASE("closed-form limits of the bounds") {
    std::mt19937_64 rng(33);
    for (int rep = 0; rep < 40; ++rep) {
        auto j = random_binary(rng);
        const double pz = j.p_cell(1);
        const double c_all = std::max(pz, 1 - pz);
        for (int x = 0; x < 2; ++x) {
            // No restriction: P(Y=1, X=x) plus anything from the other arm.
            double lo = j.prob(1, x, 0) + j.prob(1, x, 1);
            double hi = lo + j.p_x_cell(1 - x, 0) + j.p_x_cell(1 - x, 1);
            auto b = potential_outcome_bounds(j, cv(c_all), x);
            CHECK(b.first == doctest::Approx(lo));
            CHECK(b.second == doctest::Approx(hi));
        }
        if (is_falsified_at(j, cv(0.0))) continue;
        for (int x = 0; x < 2; ++x) {
            // Full independence: intersect the per-arm intervals.
            double lo = -1, hi = 2;
            for (int z = 0; z < 2; ++z) {
                double l = j.prob(1, x, z) / j.p_cell(z);
                lo = std::max(lo, l);
                hi = std::min(hi, l + j.p_x_cell(1 - x, z) / j.p_cell(z));
            }
            auto b = potential_outcome_bounds(j, cv(0.0), x);
            CHECK(b.first == doctest::Approx(lo));
            CHECK(b.second == doctest::Approx(hi));
        }
    }
}

TEST_CASE("bounds widen with c and the non-falsified region is upward closed") {
    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> u(0, 1);
    for (int rep = 0; rep < 10; ++rep) {
        auto j = random_two_instruments(rng);
        std::optional<std::pair<double, double>> prev;
        Eigen::Vector2d base(u(rng) * 0.1, u(rng) * 0.1);
        for (int step = 0; step < 8; ++step) {
            Eigen::Vector2d c = base + Eigen::Vector2d(0.04, 0.02) * step;
            if (is_falsified_at(j, c)) {
                CHECK_FALSE(prev.has_value());
                continue;
            }
            auto b = ate_bounds(j, c);
            if (prev) {
                CHECK(b.first <= prev->first + 1e-8);
                CHECK(b.second >= prev->second - 1e-8);
            }
            prev = b;
        }
    }
}

TEST_CASE("bounds do not depend on the aggregating instrument") {
    std::mt19937_64 rng(55);
    int checked = 0;
    for (int rep = 0; rep < 15; ++rep) {
        auto j = random_two_instruments(rng);
        Eigen::Vector2d c(0.3, 0.3);
        if (is_falsified_at(j, c)) continue;
        for (int x = 0; x < 2; ++x) {
            auto a = potential_outcome_bounds(j, c, x, 0);
            auto b = potential_outcome_bounds(j, c, x, 1);
            CHECK(std::abs(a.first - b.first) < 1e-8);
            CHECK(std::abs(a.second - b.second) < 1e-8);
        }
        ++checked;
    }
    CHECK(checked > 0);
}

TEST_CASE("frontier grids") {
    auto j = fixtures::b1();
    auto one = falsification_frontier_grid(j, 0.01);
    REQUIRE(one.size() == 1);
    CHECK(one[0](0) >= 1.0 / 14);
    CHECK(one[0](0) - 1.0 / 14 <= 0.01);

    auto dup = fixtures::duplicated(j);
    auto two = falsification_frontier_grid(dup, 0.02);
    REQUIRE(two.size() == 1);
    CHECK(two[0](0) == doctest::Approx(0.08));
    CHECK(two[0](1) == doctest::Approx(0.08));

    auto indep = fixtures::binary_joint(0.4, Eigen::Vector4d(0.2, 0.3, 0.2, 0.3), Eigen::Vector4d(0.2, 0.3, 0.2, 0.3));
    auto origin = falsification_frontier_grid(fixtures::duplicated(indep), 0.05);
    REQUIRE(origin.size() == 1);
    CHECK(origin[0].isZero());
    CHECK(code_of([&] { falsification_frontier_grid(j, 0.5); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("frontier grid matches an exhaustive scan") {
    std::mt19937_64 rng(66);
    const double res = 0.05;
    for (int rep = 0; rep < 3; ++rep) {
        auto j = random_two_instruments(rng);
        std::vector<double> g;
        for (int i = 0; i * res < 1 - 1e-12; ++i) g.push_back(i * res);
        g.push_back(1.0);
        const int n = static_cast<int>(g.size());
        std::vector<std::vector<bool>> ok(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n)));
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) ok[a][b] = !is_falsified_at(j, Eigen::Vector2d(g[a], g[b]));
        std::vector<Eigen::VectorXd> expected;
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                if (!ok[a][b]) continue;
                // Upward closure.
                if (a + 1 < n) CHECK(ok[a + 1][b]);
                if (b + 1 < n) CHECK(ok[a][b + 1]);
                if ((a > 0 && ok[a - 1][b]) || (b > 0 && ok[a][b - 1])) continue;
                expected.push_back(Eigen::Vector2d(g[a], g[b]));
            }
        auto got = falsification_frontier_grid(j, res);
        REQUIRE(got.size() == expected.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].isApprox(expected[i]));
    }
}

TEST_CASE("adaptive set for the ATE") {
    auto j = fixtures::b1();
    auto fas = fas_ate(j);
    CHECK(fas.first == doctest::Approx(-0.0875).epsilon(1e-6));
    CHECK(fas.second == doctest::Approx(0.475).epsilon(1e-6));

    auto indep = fixtures::binary_joint(0.4, Eigen::Vector4d(0.2, 0.3, 0.2, 0.3), Eigen::Vector4d(0.2, 0.3, 0.2, 0.3));
    auto a = fas_ate(indep);
    auto b = ate_bounds(indep, cv(0.0));
    CHECK(a.first == doctest::Approx(b.first));
    CHECK(a.second == doctest::Approx(b.second));

    // Duplicated instrument: the frontier corner sits one grid step above c*.
    auto dup = fas_ate(fixtures::duplicated(j), 0.02);
    auto at_grid = ate_bounds(j, cv(0.08));
    CHECK(dup.first == doctest::Approx(at_grid.first));
    CHECK(dup.second == doctest::Approx(at_grid.second));
    CHECK(dup.first <= fas.first + 1e-9);
    CHECK(dup.second >= fas.second - 1e-9);
    auto fine = fas_ate(fixtures::duplicated(j), 0.001);
    CHECK(std::abs(fine.first - fas.first) < 5e-3);
    CHECK(std::abs(fine.second - fas.second) < 5e-3);
}
