#include "doctest.h"
#include "fixtures.hpp"

#include "falsify_iv/error.hpp"
#include "falsify_iv/moments.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <random>

using namespace fiv;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidArgument;
}

MomentSet population(const Eigen::MatrixXd& cov, const RoleMap& roles) {
    MomentSet m;
    m.mean_vector = Eigen::VectorXd::Zero(cov.rows());
    m.cov_matrix = cov;
    m.role_map = roles;
    return m;
}

}  // namespace

TEST_CASE("moment_set_from_sample on collinear rows") {
    Eigen::MatrixXd rows(3, 3);
    rows << 0, 0, 0, 1, 1, 1, 2, 2, 2;
    MomentSet m = moment_set_from_sample(rows, fixtures::linear_roles(1));
    CHECK(m.cov_matrix.isApprox(Eigen::MatrixXd::Ones(3, 3), 1e-14));
    CHECK(m.n_obs.value() == 3);
}

TEST_CASE("moment_set_from_sample errors") {
    Eigen::MatrixXd rows(3, 3);
    rows << 0, 0, 1, 1, 1, 1, 2, 2, 1;
    CHECK(code_of([&] { moment_set_from_sample(rows, fixtures::linear_roles(1)); }) == ErrorCode::ConstantColumn);
    CHECK(code_of([&] { moment_set_from_sample(rows.topRows(1), fixtures::linear_roles(1)); }) == ErrorCode::EmptyData);
}

TEST_CASE("sample covariances are within five standard errors of the generating covariance") {
    Eigen::Matrix3d sigma;
    sigma << 2.0, 0.6, 0.3, 0.6, 1.0, -0.2, 0.3, -0.2, 1.5;
    Eigen::Matrix3d chol = sigma.llt().matrixL();
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> n01;
    const long n = 1000;
    Eigen::MatrixXd rows(n, 3);
    for (long i = 0; i < n; ++i) {
        Eigen::Vector3d e(n01(rng), n01(rng), n01(rng));
        rows.row(i) = (chol * e).transpose();
    }
    MomentSet m = moment_set_from_sample(rows, fixtures::linear_roles(1));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double sd = std::sqrt(sigma(i, i) * sigma(j, j) + sigma(i, j) * sigma(i, j));
            CHECK(std::abs(m.cov_matrix(i, j) - sigma(i, j)) < 5 * sd / std::sqrt(double(n)));
        }
}

TEST_CASE("partial_out_controls without controls returns plain moments") {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(4, 4);
    cov(0, 2) = cov(2, 0) = 1;  // cov(Y, Z1)
    cov(0, 3) = cov(3, 0) = 5;  // cov(Y, Z2)
    cov(1, 2) = cov(2, 1) = 1;
    cov(1, 3) = cov(3, 1) = 1;
    cov(0, 0) = 30;
    cov(1, 1) = 3;
    cov(0, 1) = cov(1, 0) = 6;
    ReducedMoments r = partial_out_controls(population(cov, fixtures::linear_roles(2)));
    CHECK(r.psi.isApprox(Eigen::Vector2d(1, 5), 1e-14));
    CHECK(r.pi.col(0).isApprox(Eigen::Vector2d(1, 1), 1e-14));
    CHECK(r.var_z.isApprox(Eigen::Matrix2d::Identity(), 1e-14));
    CHECK_FALSE(r.controls_absorbed);
}

TEST_CASE("partial_out_controls with an uncorrelated control is unchanged") {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(5, 5);
    cov(0, 2) = cov(2, 0) = 1;
    cov(0, 3) = cov(3, 0) = 5;
    cov(1, 2) = cov(2, 1) = 1;
    cov(1, 3) = cov(3, 1) = 1;
    cov(0, 0) = 30;
    cov(1, 1) = 3;
    cov(0, 1) = cov(1, 0) = 6;
    cov(4, 4) = 2.5;
    ReducedMoments with = partial_out_controls(population(cov, fixtures::linear_roles(2, 1)));
    ReducedMoments without = partial_out_controls(population(cov.topLeftCorner(4, 4), fixtures::linear_roles(2)));
    CHECK(with.psi == without.psi);
    CHECK(with.pi == without.pi);
    CHECK(with.var_z == without.var_z);
    CHECK(with.controls_absorbed);
}

TEST_CASE("partialled-out reduced form matches long regressions by normal equations") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> n01;
    const long n = 2000;
    Eigen::MatrixXd rows(n, 5);  // Y, X, Z1, Z2, W
    for (long i = 0; i < n; ++i) {
        double z1 = n01(rng), z2 = n01(rng);
        double w = z1 + 0.5 * n01(rng);
        double x = 0.8 * z1 - 0.4 * z2 + 0.7 * w + n01(rng);
        double y = 1.5 * x + 0.3 * w + 0.2 * z2 + n01(rng);
        rows.row(i) << y, x, z1, z2, w;
    }
    ReducedMoments r = partial_out_controls(moment_set_from_sample(rows, fixtures::linear_roles(2, 1)));

    Eigen::MatrixXd design(n, 4);
    design.col(0).setOnes();
    design.col(1) = rows.col(2);
    design.col(2) = rows.col(3);
    design.col(3) = rows.col(4);
    Eigen::MatrixXd xtx = design.transpose() * design;
    Eigen::VectorXd by = xtx.inverse() * (design.transpose() * rows.col(0));
    Eigen::VectorXd bx = xtx.inverse() * (design.transpose() * rows.col(1));
    CHECK(r.psi(0) == doctest::Approx(by(1)).epsilon(1e-9));
    CHECK(r.psi(1) == doctest::Approx(by(2)).epsilon(1e-9));
    CHECK(r.pi(0, 0) == doctest::Approx(bx(1)).epsilon(1e-9));
    CHECK(r.pi(1, 0) == doctest::Approx(bx(2)).epsilon(1e-9));
}

TEST_CASE("standardized instruments rescale reduced forms by the raw standard deviation") {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(4, 4);
    cov(2, 2) = 4;   // sd(Z1) = 2
    cov(3, 3) = 9;   // sd(Z2) = 3
    cov(0, 2) = cov(2, 0) = 4;
    cov(0, 3) = cov(3, 0) = 9;
    cov(1, 2) = cov(2, 1) = 2;
    cov(1, 3) = cov(3, 1) = 6;
    cov(0, 0) = 40;
    cov(1, 1) = 10;
    cov(0, 1) = cov(1, 0) = 8;
    ReducedMoments raw = partial_out_controls(population(cov, fixtures::linear_roles(2)));
    ReducedMoments std_ = partial_out_controls(population(cov, fixtures::linear_roles(2)), true);
    CHECK(std_.psi(0) == doctest::Approx(raw.psi(0) * 2));
    CHECK(std_.psi(1) == doctest::Approx(raw.psi(1) * 3));
    CHECK(std_.var_z.diagonal().isApprox(Eigen::Vector2d(1, 1)));
    for (int j = 0; j < 2; ++j)
        CHECK(std_.psi(j) / std_.pi(j, 0) == doctest::Approx(raw.psi(j) / raw.pi(j, 0)));
}

TEST_CASE("partial_out_controls singular variances") {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(5, 5);
    cov(4, 4) = 0;
    CHECK(code_of([&] { partial_out_controls(population(cov, fixtures::linear_roles(2, 1))); }) ==
          ErrorCode::SingularControlVariance);
    Eigen::MatrixXd cov2 = Eigen::MatrixXd::Identity(4, 4);
    cov2(2, 3) = cov2(3, 2) = 1;
    CHECK(code_of([&] { partial_out_controls(population(cov2, fixtures::linear_roles(2))); }) ==
          ErrorCode::SingularInstrumentVariance);
}

TEST_CASE("just_identified_2sls") {
    ReducedMoments l2 = fixtures::l2();
    CHECK(just_identified_2sls(l2, {0}).beta(0) == doctest::Approx(1));
    CHECK(just_identified_2sls(l2, {1}).beta(0) == doctest::Approx(5));
    auto k = just_identified_2sls(fixtures::k2l3(), {1, 2});
    CHECK(k.beta.isApprox(Eigen::Vector2d(1, 0)));
    ReducedMoments bad = fixtures::k2l3();
    bad.pi.row(2).setZero();
    CHECK(code_of([&] { just_identified_2sls(bad, {0, 2}); }) == ErrorCode::RankDeficientSubmatrix);
}

TEST_CASE("just-identified estimands are invariant to diagonal instrument rescaling") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int rep = 0; rep < 20; ++rep) {
        ReducedMoments r = fixtures::reduced(Eigen::Vector3d(u(rng), u(rng), u(rng)), Eigen::Vector3d(u(rng), u(rng), u(rng)));
        Eigen::Vector3d a(u(rng), u(rng), u(rng));
        // Z -> A Z scales psi and pi by 1/a and Var(Z) by a a'.
        ReducedMoments t = fixtures::reduced(r.psi.cwiseQuotient(a), Eigen::VectorXd(r.pi.col(0).cwiseQuotient(a)));
        for (int j = 0; j < 3; ++j)
            CHECK(just_identified_2sls(t, {j}).beta(0) == doctest::Approx(just_identified_2sls(r, {j}).beta(0)).epsilon(1e-12));
    }
}

TEST_CASE("full_2sls") {
    CHECK(full_2sls(fixtures::reduced(Eigen::Vector2d(2, 4), Eigen::Vector2d(1, 2))) == doctest::Approx(2));
    CHECK(full_2sls(fixtures::l2()) == doctest::Approx(3));
    CHECK(code_of([&] { full_2sls(fixtures::reduced(Eigen::Vector2d(2, 4), Eigen::Vector2d(0, 0))); }) ==
          ErrorCode::ZeroDenominator);
    CHECK(code_of([&] { full_2sls(fixtures::k2l3()); }) == ErrorCode::KNotOne);
}

TEST_CASE("first_stage_f_stat edge cases") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd rows(50, 4);
    for (int i = 0; i < 50; ++i) {
        double z1 = n01(rng), z2 = n01(rng);
        rows.row(i) << n01(rng), z1, z1, z2;
    }
    CHECK(std::isinf(first_stage_f_stat(rows, fixtures::linear_roles(2), 0)));
    CHECK(code_of([&] { first_stage_f_stat(rows.topRows(3), fixtures::linear_roles(2), 0); }) ==
          ErrorCode::InsufficientObservations);
    CHECK(code_of([&] { first_stage_f_stat(Eigen::MatrixXd(0, 4), fixtures::linear_roles(2), 0); }) ==
          ErrorCode::PopulationModeUnsupported);
}

TEST_CASE("first-stage F for a pure-noise instrument has median below 3") {
    std::mt19937_64 rng(77);
    std::vector<double> stats;
    for (int rep = 0; rep < 200; ++rep) {
        Eigen::MatrixXd rows = fixtures::simulate_linear(rng, 10000, Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0, 0), 1.0);
        stats.push_back(first_stage_f_stat(rows, fixtures::linear_roles(2), 1));
    }
    std::nth_element(stats.begin(), stats.begin() + 100, stats.end());
    CHECK(stats[100] < 3.0);
}

TEST_CASE("robust standard errors: homoskedastic agreement, duplication and zero residuals") {
    std::mt19937_64 rng(31);
    Eigen::MatrixXd rows = fixtures::simulate_linear(rng, 50000, Eigen::Vector2d(1.0, 0.5), Eigen::Vector2d(0, 0), 2.0);
    RoleMap roles = fixtures::linear_roles(2);
    double robust = robust_se_just_identified(rows, roles, {0})(0);

    // Classical IV variance: sigma^2 (Q'R)^-1 Q'Q (R'Q)^-1 with R = (1, X, Z2), Q = (1, Z1, Z2).
    const long n = rows.rows();
    Eigen::MatrixXd r(n, 3), q(n, 3);
    r << Eigen::VectorXd::Ones(n), rows.col(1), rows.col(3);
    q << Eigen::VectorXd::Ones(n), rows.col(2), rows.col(3);
    Eigen::MatrixXd qr_inv = (q.transpose() * r).inverse();
    Eigen::VectorXd b = qr_inv * (q.transpose() * rows.col(0));
    Eigen::VectorXd e = rows.col(0) - r * b;
    double s2 = e.squaredNorm() / double(n - 3);
    Eigen::MatrixXd classical = s2 * qr_inv * (q.transpose() * q) * qr_inv.transpose();
    CHECK(std::abs(robust / std::sqrt(classical(1, 1)) - 1.0) < 0.10);

    // Duplicating rows: recompute the sandwich directly on the doubled data.
    Eigen::MatrixXd small = rows.topRows(400);
    Eigen::MatrixXd doubled(800, small.cols());
    doubled << small, small;
    double se1 = robust_se_just_identified(small, roles, {0})(0);
    double se2 = robust_se_just_identified(doubled, roles, {0})(0);
    auto oracle = [&](const Eigen::MatrixXd& d) {
        const long m = d.rows();
        Eigen::MatrixXd rr(m, 3), qq(m, 3);
        rr << Eigen::VectorXd::Ones(m), d.col(1), d.col(3);
        qq << Eigen::VectorXd::Ones(m), d.col(2), d.col(3);
        Eigen::MatrixXd inv = (qq.transpose() * rr).inverse();
        Eigen::VectorXd bb = inv * (qq.transpose() * d.col(0));
        Eigen::VectorXd ee = d.col(0) - rr * bb;
        Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(3, 3);
        for (long i = 0; i < m; ++i) meat += ee(i) * ee(i) * qq.row(i).transpose() * qq.row(i);
        Eigen::MatrixXd v = double(m) / double(m - 3) * inv * meat * inv.transpose();
        return std::sqrt(v(1, 1));
    };
    CHECK(se2 == doctest::Approx(oracle(doubled)).epsilon(1e-6));
    CHECK(se2 / se1 == doctest::Approx(std::sqrt(0.5 * (800.0 / 797.0) / (400.0 / 397.0))).epsilon(1e-6));

    Eigen::MatrixXd exact = small;
    exact.col(0) = 2.0 * exact.col(1);
    CHECK(robust_se_just_identified(exact, roles, {0})(0) < 1e-10);
}
