#include "doctest.h"

#include "falsify_iv/error.hpp"
#include "falsify_iv/het_binary.hpp"
#include "falsify_iv/het_continuous.hpp"
#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
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

SieveSpec sieve(int m, int n = 201) {
    SieveSpec s;
    s.order_m = m;
    s.grid_n = n;
    return s;
}

Eigen::VectorXd cv(double c, int l = 1) { return Eigen::VectorXd::Constant(l, c); }

ContinuousJoint same_density(const std::function<double(double)>& f) {
    ContinuousJoint j;
    j.pxz = fixtures::pxz_table(0.5, 0.4, 0.6);
    j.density = [f](double y, int, int) { return f(y); };
    return j;
}

const WeightFunction kMean1 = [](double y) { return y; };
const WeightFunction kMean0 = [](double y) { return -y; };

// With M = 1 a density is 2((1 - t)(1 - y) + t y) and E[3Y - 1] = t, so these
// weights turn sieve bounds into bounds on P(Y_1 = 1) - P(Y_0 = 1).
const WeightFunction kProb1 = [](double y) { return 3 * y - 1; };
const WeightFunction kProb0 = [](double y) { return 1 - 3 * y; };

double sup_reconstruction_error(const std::function<double(double)>& f, int m) {
    auto t = sieve_table_from_joint(same_density(f), sieve(m));
    double worst = 0.0;
    for (int i = 0; i <= 1000; ++i) {
        double y = i / 1000.0;
        double approx = (m + 1) * t.xi[1].row(0).dot(bernstein_basis(m, y));
        worst = std::max(worst, std::abs(approx - f(y)));
    }
    return worst;
}

}  // namespace

TEST_CASE("Bernstein basis") {
    Eigen::VectorXd at0 = bernstein_basis(7, 0.0);
    CHECK(at0(0) == 1.0);
    CHECK(at0.tail(7).cwiseAbs().maxCoeff() == 0.0);
    Eigen::VectorXd mid = bernstein_basis(2, 0.5);
    CHECK(mid(0) == doctest::Approx(0.25));
    CHECK(mid(1) == doctest::Approx(0.5));
    CHECK(mid(2) == doctest::Approx(0.25));

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) CHECK(std::abs(bernstein_basis(30, u(rng)).sum() - 1.0) < 1e-12);

    CHECK(code_of([] { bernstein_basis(3, 1.5); }) == ErrorCode::OutOfRange);
    CHECK(code_of([] { bernstein_basis(3, -0.1); }) == ErrorCode::OutOfRange);
}

TEST_CASE("sieve coefficients from densities") {
    auto uniform = sieve_table_from_joint(same_density([](double) { return 1.0; }), sieve(12));
    for (int x = 0; x < 2; ++x)
        for (int r = 0; r < 2; ++r)
            for (int m = 0; m <= 12; ++m) CHECK(uniform.xi[x](r, m) == doctest::Approx(1.0 / 13).epsilon(1e-12));

    auto step = sieve_table_from_joint(same_density([](double y) { return y >= 0.5 ? 2.0 : 0.0; }), sieve(3));
    Eigen::Vector4d expect(0, 0, 0.5, 0.5);
    CHECK((step.xi[0].row(1).transpose() - expect).cwiseAbs().maxCoeff() < 1e-12);

    // Observed arm weights: P(X = x | Z = z) and P(X = 1 - x, Z = z) / P(Z = z).
    CHECK(step.treatment_probs[1](0) == doctest::Approx(0.4));
    CHECK(step.treatment_probs[1](1) == doctest::Approx(0.6));
    CHECK(step.other_arm[1](0, 0) == doctest::Approx(0.6));
    CHECK(step.other_arm[1](0, 1) == 0.0);
    CHECK(step.other_arm[0](1, 1) == doctest::Approx(0.6));

    // Not a polynomial: the normalized Bernstein operator is exact on quadratics.
    auto bump = [](double y) { return 0.5 * M_PI * std::sin(M_PI * y); };
    double e10 = sup_reconstruction_error(bump, 10);
    double e20 = sup_reconstruction_error(bump, 20);
    double e40 = sup_reconstruction_error(bump, 40);
    CHECK(e20 < e10);
    CHECK(e40 < e20);
    CHECK(e40 < 0.1);

    CHECK(code_of([&] { sieve_table_from_joint(same_density([](double y) { return y - 0.5; }), sieve(4)); }) ==
          ErrorCode::NegativeDensity);
    CHECK(code_of([&] { sieve_table_from_joint(same_density([](double) { return 0.0; }), sieve(4)); }) ==
          ErrorCode::UnnormalizableRow);
}

TEST_CASE("densities tabulated on a grid are rescaled to the unit interval") {
    Eigen::VectorXd y_grid = Eigen::VectorXd::LinSpaced(5, 2.0, 4.0);
    Eigen::MatrixXd dens(4, 5);
    dens.setConstant(0.5);
    dens.row(3) << 0.25, 0.375, 0.5, 0.625, 0.75;
    auto j = joint_from_grid(1, y_grid, dens, fixtures::pxz_table(0.5, 0.4, 0.6));
    CHECK(j.y_lo == 2.0);
    CHECK(j.y_hi == 4.0);
    CHECK(j.density(0.3, 0, 0) == doctest::Approx(1.0));
    // Row 3 is x = 1, cell 1: 0.25 + 0.25 u on [2, 4], i.e. 0.5 + t on [0, 1].
    CHECK(j.density(0.5, 1, 1) == doctest::Approx(1.0));
    CHECK(j.density(0.1, 1, 1) == doctest::Approx(0.6));

    Eigen::VectorXd bad = y_grid;
    bad(2) = bad(1);
    CHECK(code_of([&] { joint_from_grid(1, bad, dens, fixtures::pxz_table(0.5, 0.4, 0.6)); }) == ErrorCode::DataError);
    dens(0, 0) = std::nan("");
    CHECK(code_of([&] { joint_from_grid(1, y_grid, dens, fixtures::pxz_table(0.5, 0.4, 0.6)); }) == ErrorCode::DataError);
}

TEST_CASE("diamond constraints on coefficients") {
    const Eigen::Vector2d marg(0.6, 0.4);
    const int m = 5;
    const int w = m + 1;

    SUBCASE("c = 0 forces equal coefficient vectors") {
        Polytope d = diamond_sieve_constraints(marg, cv(0.0), sieve(m, 11));
        for (int k = 0; k < w; ++k) {
            Eigen::VectorXd obj = Eigen::VectorXd::Zero(2 * w);
            obj(k) = 1;
            obj(w + k) = -1;
            LpExtremes e = lp_minmax(obj, d);
            CHECK(std::abs(e.min) < 1e-8);
            CHECK(std::abs(e.max) < 1e-8);
        }
    }

    SUBCASE("c = 1 leaves only the simplices") {
        Polytope d = diamond_sieve_constraints(marg, cv(1.0), sieve(m, 11));
        CHECK(d.a.rows() == 0);
        CHECK(d.a_eq.rows() == 2);
    }

    SUBCASE("the diagonal is always feasible and sets are nested") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (double c : {0.0, 0.05, 0.2, 0.5}) {
            Polytope d = diamond_sieve_constraints(marg, cv(c), sieve(m, 21));
            for (int t = 0; t < 20; ++t) {
                Eigen::VectorXd v(w);
                for (auto& e : v) e = -std::log(u(rng));
                v /= v.sum();
                Eigen::VectorXd both(2 * w);
                both << v, v;
                CHECK(d.contains(both));
            }
        }
        Polytope tight = diamond_sieve_constraints(marg, cv(0.1), sieve(m, 21));
        Polytope loose = diamond_sieve_constraints(marg, cv(0.25), sieve(m, 21));
        std::normal_distribution<double> n01;
        for (int t = 0; t < 20; ++t) {
            Eigen::VectorXd obj(2 * w);
            for (auto& e : obj) e = n01(rng);
            LpExtremes e = lp_minmax(obj, tight);
            CHECK(loose.contains(e.argmin, 1e-8));
            CHECK(loose.contains(e.argmax, 1e-8));
            CHECK(lp_minmax(obj, loose).max >= e.max - 1e-9);
        }
    }

    // At M = 1 and grid {0, 1} the coefficient on y = 1 plays the role of
    // P(Y_x = 1 | Z = z) and the rows are the binary diamond.
    SUBCASE("order one reproduces the binary diamond") {
        for (double c : {0.0, 0.1, 0.3}) {
            Polytope d = diamond_sieve_constraints(marg, cv(c), sieve(1, 2));
            const double k0 = kz_factor(0.4, c, 0), k1 = kz_factor(0.4, c, 1);
            for (int i = 0; i <= 20; ++i)
                for (int j = 0; j <= 20; ++j) {
                    double t0 = i / 20.0, t1 = j / 20.0;
                    bool inside = t1 >= k0 * t0 - 1e-12 && 1 - t1 >= k0 * (1 - t0) - 1e-12 && t0 >= k1 * t1 - 1e-12 &&
                                  1 - t0 >= k1 * (1 - t1) - 1e-12;
                    Eigen::Vector4d pt(1 - t0, t0, 1 - t1, t1);
                    CHECK(d.contains(pt, 1e-10) == inside);
                }
        }
    }
}

TEST_CASE("falsification of continuous models") {
    auto indep = sieve_table_from_joint(fixtures::independent_beta(0.5, 0.3, 0.7, 2, 5), sieve(20));
    CHECK_FALSE(is_falsified_cont(indep, cv(0.0), sieve(20)));

    auto b1 = sieve_table_from_joint(fixtures::embedded(fixtures::b1()), sieve(20));
    CHECK(is_falsified_cont(b1, cv(0.0), sieve(20)));
    CHECK_FALSE(is_falsified_cont(b1, cv(0.1), sieve(20)));
    bool seen_ok = false;
    for (int i = 0; i <= 10; ++i) {
        bool f = is_falsified_cont(b1, cv(0.01 * i), sieve(20));
        if (seen_ok) CHECK_FALSE(f);
        seen_ok = seen_ok || !f;
    }

    CHECK(code_of([&] { is_falsified_cont(b1, cv(0.0), sieve(21)); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([&] { is_falsified_cont(b1, cv(0.0, 2), sieve(20)); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("order one sieve agrees with the binary model") {
    const auto b = fixtures::b1();
    const SieveSpec s = sieve(1, 2);
    auto t = sieve_table_from_joint(fixtures::embedded(b), s);
    for (int i = 0; i <= 40; ++i) {
        double c = 0.005 * i;
        CHECK(is_falsified_cont(t, cv(c), s) == is_falsified_at(b, cv(c)));
    }
    for (double c : {0.08, 0.15, 0.3, 0.5}) {
        auto cont = functional_bounds_cont(t, cv(c), s, kProb1, kProb0);
        auto bin = ate_bounds(b, cv(c));
        CHECK(cont.first == doctest::Approx(bin.first).epsilon(1e-7));
        CHECK(cont.second == doctest::Approx(bin.second).epsilon(1e-7));
    }
    auto fr = approx_ff_fas_cont(t, s, 0.01, kProb1, kProb0);
    REQUIRE(fr.points.size() == 1);
    CHECK(std::abs(fr.points[0](0) - falsification_point_single(b)) < 2e-6);
    auto at_star = ate_bounds(b, fr.points[0]);
    CHECK(fr.fas.first == doctest::Approx(at_star.first).epsilon(1e-5));
    CHECK(fr.fas.second == doctest::Approx(at_star.second).epsilon(1e-5));
}

TEST_CASE("two instruments at order one match the binary frontier") {
    const auto b = fixtures::duplicated(fixtures::b1());
    const SieveSpec s = sieve(1, 2);
    auto t = sieve_table_from_joint(fixtures::embedded(b), s);
    auto cont = approx_ff_fas_cont(t, s, 0.02, kProb1, kProb0);
    auto bin = falsification_frontier_grid(b, 0.02);
    REQUIRE(cont.points.size() == bin.size());
    for (std::size_t i = 0; i < bin.size(); ++i) CHECK((cont.points[i] - bin[i]).cwiseAbs().maxCoeff() < 1e-12);
    auto fas = fas_ate(b, 0.02);
    CHECK(cont.fas.first == doctest::Approx(fas.first).epsilon(1e-6));
    CHECK(cont.fas.second == doctest::Approx(fas.second).epsilon(1e-6));
}

TEST_CASE("refutation check") {
    ContinuousJoint equal;
    equal.pxz = fixtures::pxz_table(0.5, 0.6, 0.6);
    equal.density = [](double y, int, int) { return fixtures::beta_pdf(y, 2, 3); };
    auto r = kitagawa_refutation_check(equal, 1);
    CHECK(r.integral == doctest::Approx(0.6).epsilon(1e-8));
    CHECK_FALSE(r.refuted);

    ContinuousJoint disjoint;
    disjoint.pxz = fixtures::pxz_table(0.5, 0.6, 0.6);
    disjoint.density = [](double y, int, int z) { return (z == 0) == (y < 0.5) ? 2.0 : 0.0; };
    r = kitagawa_refutation_check(disjoint, 1);
    CHECK(r.integral == doctest::Approx(1.2).epsilon(1e-8));
    CHECK(r.refuted);

    ContinuousJoint wild = equal;
    wild.density = [](double y, int, int) { return 1.0 / y; };
    CHECK(code_of([&] { kitagawa_refutation_check(wild, 1); }) == ErrorCode::NonIntegrable);
    CHECK(code_of([&] { kitagawa_refutation_check(equal, 2); }) == ErrorCode::InvalidArgument);

    // Away from the boundary the sieve reaches the same verdict at c = 0.
    const SieveSpec s = sieve(20);
    std::vector<ContinuousJoint> dgps = {fixtures::independent_beta(0.5, 0.2, 0.8, 2, 5),
                                         fixtures::independent_beta(0.3, 0.5, 0.6, 3, 3),
                                         fixtures::separated_beta(0.5, 0.6, 0.6, 2, 8),
                                         fixtures::separated_beta(0.4, 0.7, 0.8, 3, 9)};
    for (const auto& j : dgps) {
        bool refuted = kitagawa_refutation_check(j, 0).refuted || kitagawa_refutation_check(j, 1).refuted;
        CHECK(is_falsified_cont(sieve_table_from_joint(j, s), cv(0.0), s) == refuted);
    }
}

TEST_CASE("functional bounds") {
    const SieveSpec s = sieve(20);
    auto t = sieve_table_from_joint(fixtures::independent_beta(0.5, 0.3, 0.7, 2, 5), s);
    auto zero = functional_bounds_cont(t, cv(0.0), s, nullptr, nullptr);
    CHECK(zero.first == 0.0);
    CHECK(zero.second == 0.0);
    auto zero_w = functional_bounds_cont(t, cv(0.2), s, [](double) { return 0.0; }, [](double) { return 0.0; });
    CHECK(std::abs(zero_w.first) < 1e-12);
    CHECK(std::abs(zero_w.second) < 1e-12);

    SUBCASE("point identification") {
        for (int m : {20, 40}) {
            auto pt = sieve_table_from_joint(fixtures::point_identified(), sieve(m));
            auto ate = functional_bounds_cont(pt, cv(0.0), sieve(m), kMean1, kMean0);
            CHECK(std::abs(ate.first - 0.2) < 2.0 / m);
            CHECK(std::abs(ate.second - 0.2) < 2.0 / m);
        }
    }

    SUBCASE("bounds widen with c") {
        std::pair<double, double> prev{0.0, 0.0};
        for (int i = 0; i <= 5; ++i) {
            auto cur = functional_bounds_cont(t, cv(0.1 * i), s, kMean1, kMean0);
            CHECK(cur.first <= cur.second + 1e-12);
            if (i > 0) {
                CHECK(cur.first <= prev.first + 1e-8);
                CHECK(cur.second >= prev.second - 1e-8);
            }
            prev = cur;
        }
    }

    // With c = 1 the unobserved arm is any coefficient vector, so each arm's
    // mean ranges over the observed part plus the missing mass placed on the
    // first or last basis element, whose means are 1/(M+2) and (M+1)/(M+2).
    SUBCASE("no-assumption limit") {
        auto j = fixtures::independent_beta(0.4, 0.3, 0.6, 2, 5);
        const int m = s.order_m;
        auto tt = sieve_table_from_joint(j, s);
        Eigen::VectorXd node_means(m + 1);
        for (int k = 0; k <= m; ++k) node_means(k) = (k + 1.0) / (m + 2.0);
        double lo = 0.0, hi = 0.0;
        double exact_lo = 0.0, exact_hi = 0.0, node_error = 0.0;
        for (int x = 0; x < 2; ++x) {
            const double sign = x == 1 ? 1.0 : -1.0;
            double observed = 0.0, missing = 0.0, true_observed = 0.0;
            for (int z = 0; z < 2; ++z) {
                const double pz = tt.z_marginals(z);
                observed += pz * tt.treatment_probs[x](z) * tt.xi[x].row(z).dot(node_means);
                missing += pz * (1 - tt.treatment_probs[x](z));
                const double a = x == 1 ? 2.0 : 5.0, b = x == 1 ? 5.0 : 2.0;
                true_observed += pz * tt.treatment_probs[x](z) * a / (a + b);
            }
            node_error += std::abs(observed - true_observed);
            const double m_lo = observed + missing / (m + 2.0), m_hi = observed + missing * (m + 1.0) / (m + 2.0);
            lo += sign > 0 ? m_lo : -m_hi;
            hi += sign > 0 ? m_hi : -m_lo;
            exact_lo += sign > 0 ? true_observed : -(true_observed + missing);
            exact_hi += sign > 0 ? true_observed + missing : -true_observed;
        }
        auto b = functional_bounds_cont(tt, cv(1.0), s, kMean1, kMean0);
        CHECK(b.first == doctest::Approx(lo).epsilon(1e-8));
        CHECK(b.second == doctest::Approx(hi).epsilon(1e-8));
        // Containment of the exact limits up to the two approximation errors.
        CHECK(b.first <= exact_lo + 1.0 / (m + 2) + node_error + 1e-9);
        CHECK(b.second >= exact_hi - 1.0 / (m + 2) - node_error - 1e-9);
    }

    auto b1 = sieve_table_from_joint(fixtures::embedded(fixtures::b1()), s);
    CHECK(code_of([&] { functional_bounds_cont(b1, cv(0.0), s, kMean1, kMean0); }) == ErrorCode::ModelFalsifiedAtC);
}

TEST_CASE("approximate frontier and adaptive set") {
    SUBCASE("not falsified") {
        const SieveSpec s = sieve(15);
        auto t = sieve_table_from_joint(fixtures::independent_beta(0.5, 0.3, 0.7, 2, 5), s);
        auto fr = approx_ff_fas_cont(t, s, 0.05, kMean1, kMean0);
        REQUIRE(fr.points.size() == 1);
        CHECK(fr.points[0](0) == 0.0);
        auto at0 = functional_bounds_cont(t, cv(0.0), s, kMean1, kMean0);
        CHECK(fr.fas.first == doctest::Approx(at0.first).epsilon(1e-9));
        CHECK(fr.fas.second == doctest::Approx(at0.second).epsilon(1e-9));
    }

    SUBCASE("embedded binary fixture") {
        const double target = 1.0 / 14;
        double prev_err = 1.0;
        std::pair<double, double> prev_fas;
        for (int m : {10, 20, 30, 40}) {
            const SieveSpec s = sieve(m);
            auto t = sieve_table_from_joint(fixtures::embedded(fixtures::b1()), s);
            auto fr = approx_ff_fas_cont(t, s, 0.01, kMean1, kMean0);
            REQUIRE(fr.points.size() == 1);
            const double point = fr.points[0](0);
            CHECK(is_falsified_cont(t, cv(point - 1e-5), s));
            CHECK_FALSE(is_falsified_cont(t, cv(point), s));
            const double err = std::abs(point - target);
            CHECK(err < prev_err);
            prev_err = err;
            if (m == 40) {
                CHECK(std::abs(fr.fas.first - prev_fas.first) < 0.01);
                CHECK(std::abs(fr.fas.second - prev_fas.second) < 0.01);
            }
            prev_fas = fr.fas;
        }
    }

    SUBCASE("two instruments, not falsified") {
        ContinuousJoint j;
        j.num_instruments = 2;
        j.pxz.resize(2, 4);
        j.pxz << 0.15, 0.1, 0.1, 0.05, 0.1, 0.15, 0.15, 0.2;
        j.density = [](double y, int x, int) { return fixtures::beta_pdf(y, x == 1 ? 2 : 4, 3); };
        const SieveSpec s = sieve(8, 41);
        auto t = sieve_table_from_joint(j, s);
        auto fr = approx_ff_fas_cont(t, s, 0.1, kMean1, kMean0);
        REQUIRE(fr.points.size() == 1);
        CHECK(fr.points[0].cwiseAbs().maxCoeff() == 0.0);
    }

    auto t = sieve_table_from_joint(fixtures::embedded(fixtures::b1()), sieve(5));
    CHECK(code_of([&] { approx_ff_fas_cont(t, sieve(5), 0.0, kMean1, kMean0); }) == ErrorCode::InvalidArgument);
}
