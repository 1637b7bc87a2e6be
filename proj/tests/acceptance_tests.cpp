// Acceptance suite: one line per criterion, nonzero exit if any fails.
//
//   acceptance_tests <falsify-iv binary> <work dir>
#include "falsify_iv/error.hpp"
#include "falsify_iv/geometry.hpp"
#include "falsify_iv/het_binary.hpp"
#include "falsify_iv/het_continuous.hpp"
#include "falsify_iv/linear_iv.hpp"
#include "falsify_iv/moments.hpp"
#include "fixtures.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace fiv;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    // Records a failed requirement without stopping the criterion.
    void require(bool ok, const std::string& what) {
        if (ok) return;
        if (pass) detail += "; failed: ";
        else detail += ", ";
        detail += what;
        pass = false;
    }
};

struct Criterion {
    int id;
    const char* title;
    double seconds_allowed;  // <= 0 means no limit
    std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 3) {
    std::ostringstream s;
    s << std::setprecision(digits) << v;
    return s.str();
}

ReducedMoments moments(const Eigen::VectorXd& psi, const Eigen::MatrixXd& pi, const Eigen::MatrixXd& var_z) {
    return fixtures::reduced(psi, pi, var_z);
}

// ---------------------------------------------------------------------------

Outcome two_instrument_reproduction() {
    Outcome out;
    double worst = 0.0;
    for (double ratio : {0.5, 1.0, 2.0}) {
        // psi/pi gives 1 for the first instrument and 5 for the second.
        const double p1 = ratio, p2 = 1.0;
        ReducedMoments r = fixtures::reduced(Eigen::Vector2d(p1 * 1.0, p2 * 5.0), Eigen::Vector2d(p1, p2));
        FasResult fas = fas_k1(r);
        worst = std::max({worst, std::abs(fas.lo - 1.0), std::abs(fas.hi - 5.0)});
        out.require(std::abs(fas.lo - 1.0) <= 1e-12 && std::abs(fas.hi - 5.0) <= 1e-12, "fas at ratio " + fmt(ratio));

        // Frontier meets the delta_2 axis where instrument 1 is exactly valid,
        // and the delta_1 axis where instrument 2 is.
        const double int2 = std::abs(r.psi(1) - r.pi(1, 0) * (r.psi(0) / r.pi(0, 0)));
        const double int1 = std::abs(r.psi(0) - r.pi(0, 0) * (r.psi(1) / r.pi(1, 0)));
        TwoInstrumentFrontier ff = ff_two_instruments(r);
        const double expected_slope = ratio == 0.5 ? -2.0 : ratio == 1.0 ? -1.0 : -0.5;
        worst = std::max({worst, std::abs(ff.intercept_1 - int1), std::abs(ff.intercept_2 - int2),
                          std::abs(ff.slope - expected_slope), std::abs(ff.slope + int2 / int1)});
        out.require(std::abs(ff.intercept_1 - int1) <= 1e-12 && std::abs(ff.intercept_2 - int2) <= 1e-12,
                    "intercepts at ratio " + fmt(ratio));
        out.require(std::abs(ff.slope - expected_slope) <= 1e-12, "slope at ratio " + fmt(ratio));
    }
    out.detail = "max abs error " + fmt(worst) + out.detail;
    return out;
}

Outcome frontier_singletons() {
    Outcome out;
    std::mt19937_64 rng(101);
    int checked = 0;
    double widest = 0.0;
    auto width = [](const LinearIdentifiedSet& s) {
        if (s.kind == SetKind::Interval) return s.hi - s.lo;
        double w = 0.0;
        for (Eigen::Index j = 0; j < s.polytope->dim(); ++j) {
            LpExtremes e = lp_minmax(Eigen::VectorXd::Unit(s.polytope->dim(), j), ConvexSet(*s.polytope));
            w = std::max(w, e.max - e.min);
        }
        return w;
    };
    auto check = [&](const ReducedMoments& r, const Eigen::VectorXd& delta, const std::string& tag) {
        LinearIdentifiedSet s = identified_set_linear(r, delta);
        if (!s.empty()) widest = std::max(widest, width(s));
        out.require(!s.empty() && is_singleton(s, 1e-9), tag + " singleton");
        out.require(identified_set_linear(r, 0.99 * delta).empty(), tag + " shrunk set empty");
        ++checked;
    };

    const ReducedMoments l2 = fixtures::l2();
    std::uniform_real_distribution<double> b(1.0, 5.0);
    FrontierCurve curve = falsification_frontier_k1(l2, 3);
    for (int i = 0; i < 50; ++i) check(l2, curve.delta_at(Eigen::VectorXd::Constant(1, b(rng))), "L2");

    const ReducedMoments k2l3 = fixtures::k2l3();
    FrontierCurve general = sample_ff_general(k2l3, 12);
    std::vector<std::size_t> order(general.delta_points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < 50 && i < order.size(); ++i) check(k2l3, general.delta_points[order[i]], "K2L3");
    out.require(checked == 100, "expected 100 points");
    out.detail = std::to_string(checked) + " frontier points, widest set " + fmt(widest) + out.detail;
    return out;
}

// Random first stage satisfying the relevance conditions.
ReducedMoments random_a1_prime(std::mt19937_64& rng, int k, int l) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (;;) {
        Eigen::VectorXd psi(l);
        Eigen::MatrixXd pi(l, k);
        for (auto& v : psi) v = u(rng);
        for (Eigen::Index i = 0; i < pi.size(); ++i) pi.data()[i] = u(rng);
        ReducedMoments r = moments(psi, pi, Eigen::MatrixXd::Identity(l, l));
        try {
            check_relevance_general(r);
            return r;
        } catch (const Error&) {
        }
    }
}

Outcome projection_vs_vertices() {
    Outcome out;
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<ReducedMoments> cases{fixtures::k2l3()};
    for (int i = 0; i < 20; ++i) cases.push_back(random_a1_prime(rng, 2, 4));
    double worst = 0.0;
    int hull_checks = 0;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        const ReducedMoments& r = cases[c];
        FasResult fas = fas_general(r);
        std::vector<Eigen::VectorXd> verts;
        for (const auto& v : fas.vertices) verts.push_back(v.beta);
        for (int a = 0; a < 5; ++a) {
            Eigen::Vector2d alpha(u(rng), u(rng));
            auto [lo, hi] = fas_projection(r, alpha);
            double vlo = INFINITY, vhi = -INFINITY;
            for (const auto& v : verts) {
                vlo = std::min(vlo, alpha.dot(v));
                vhi = std::max(vhi, alpha.dot(v));
            }
            worst = std::max({worst, std::abs(lo - vlo), std::abs(hi - vhi)});
            out.require(std::abs(lo - vlo) <= 1e-8 && std::abs(hi - vhi) <= 1e-8, "projection case " + std::to_string(c));
        }
        // Every simplex vertex, and each simplex centroid, lies in the hull.
        for (const auto& simplex : fas.simplices) {
            Eigen::VectorXd centroid = Eigen::VectorXd::Zero(2);
            for (int idx : simplex) {
                const Eigen::VectorXd& v = verts[static_cast<std::size_t>(idx)];
                centroid += v / static_cast<double>(simplex.size());
                out.require(hull_membership(v, verts), "hull vertex case " + std::to_string(c));
                ++hull_checks;
            }
            out.require(hull_membership(centroid, verts), "hull centroid case " + std::to_string(c));
        }
    }
    out.detail = std::to_string(cases.size()) + " moment sets, " + std::to_string(hull_checks) +
                 " hull checks, max projection error " + fmt(worst) + out.detail;
    return out;
}

Outcome weights_identity() {
    Outcome out;
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> u(-2.0, 2.0), mag(0.3, 2.0);
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const int l = 2 + rep % 4;
        Eigen::VectorXd psi(l), pi(l);
        for (int j = 0; j < l; ++j) {
            psi(j) = u(rng);
            pi(j) = (u(rng) < 0 ? -1 : 1) * mag(rng);
        }
        Eigen::MatrixXd a(l, l);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
        Eigen::MatrixXd v = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(l, l);
        ReducedMoments r = moments(psi, pi, v);

        // Textbook 2SLS from population moments.
        const Eigen::VectorXd vp = v * pi;
        const double beta = vp.dot(psi) / vp.dot(pi);
        Eigen::VectorXd w = twosls_weights(r);
        double mix = 0.0;
        for (int j = 0; j < l; ++j) mix += w(j) * psi(j) / pi(j);
        const double err = std::max({std::abs(full_2sls(r) - beta), std::abs(full_2sls(r) - mix), std::abs(w.sum() - 1.0)});
        worst = std::max(worst, err);
        out.require(err <= 1e-9, "dgp " + std::to_string(rep));
    }
    // Strong positive correlation between instruments with opposite first
    // stages puts a negative weight on one of them.
    Eigen::Matrix2d v;
    v << 1.0, 0.9, 0.9, 1.0;
    ReducedMoments r = moments(Eigen::Vector2d(1.0, -2.5), Eigen::Vector2d(1.0, -0.5), v);
    FasResult fas = fas_k1(r);
    const double full = full_2sls(r);
    const Eigen::VectorXd w = twosls_weights(r);
    out.require(w.minCoeff() < 0.0, "negative weight");
    out.require(full < fas.lo - 1e-6 || full > fas.hi + 1e-6, "2SLS outside the adaptive set");
    out.detail = "100 dgps, max error " + fmt(worst) + "; constructed case 2SLS " + fmt(full, 4) + " vs set [" +
                 fmt(fas.lo, 4) + ", " + fmt(fas.hi, 4) + "]" + out.detail;
    return out;
}

// Rows of (Y, X_1..X_K, Z_1..Z_L) with Z ~ N(0, I).
Eigen::MatrixXd simulate(std::mt19937_64& rng, long n, const Eigen::MatrixXd& pi, const Eigen::VectorXd& beta,
                         const Eigen::VectorXd& gamma) {
    std::normal_distribution<double> n01;
    const Eigen::Index l = pi.rows(), k = pi.cols();
    Eigen::MatrixXd rows(n, 1 + k + l);
    for (long i = 0; i < n; ++i) {
        Eigen::VectorXd z(l), e(k);
        for (auto& x : z) x = n01(rng);
        for (auto& x : e) x = n01(rng);
        Eigen::VectorXd x = pi.transpose() * z + e;
        rows(i, 0) = x.dot(beta) + z.dot(gamma) + 0.5 * e.sum() + n01(rng);
        rows.row(i).segment(1, k) = x.transpose();
        rows.row(i).tail(l) = z.transpose();
    }
    return rows;
}

RoleMap roles_for(Eigen::Index k, Eigen::Index l) {
    RoleMap roles{Role::Outcome};
    for (Eigen::Index i = 0; i < k; ++i) roles.push_back(Role::Treatment);
    for (Eigen::Index i = 0; i < l; ++i) roles.push_back(Role::Instrument);
    return roles;
}

Outcome affine_invariance() {
    Outcome out;
    std::mt19937_64 rng(404);
    Eigen::MatrixXd pi1(3, 1);
    pi1 << 1.0, 0.6, -0.8;
    Eigen::MatrixXd pi2(3, 2);
    pi2 << 1.0, 0.2, 0.3, 1.0, 0.8, -0.7;
    const Eigen::MatrixXd d1 = simulate(rng, 2000, pi1, Eigen::VectorXd::Constant(1, 1.0), Eigen::Vector3d(0.0, 0.5, -0.4));
    const Eigen::MatrixXd d2 = simulate(rng, 2000, pi2, Eigen::Vector2d(1.0, -1.0), Eigen::Vector3d(0.0, 0.5, -0.4));
    auto reduce = [](const Eigen::MatrixXd& rows, Eigen::Index k) {
        return partial_out_controls(moment_set_from_sample(rows, roles_for(k, 3)));
    };
    const ReducedMoments base1 = reduce(d1, 1), base2 = reduce(d2, 2);
    const FasResult k1_base = fas_k1(base1);
    const FasResult g1_base = fas_general(base1), g2_base = fas_general(base2);

    auto vertex_gap = [](const FasResult& a, const FasResult& b) {
        double gap = a.vertices.size() == b.vertices.size() ? 0.0 : INFINITY;
        for (std::size_t i = 0; i < a.vertices.size() && i < b.vertices.size(); ++i) {
            if (a.vertices[i].excluded_set != b.vertices[i].excluded_set) return double(INFINITY);
            gap = std::max(gap, (a.vertices[i].beta - b.vertices[i].beta).cwiseAbs().maxCoeff());
        }
        return gap;
    };

    std::uniform_real_distribution<double> scale(0.2, 5.0), shift(-10.0, 10.0);
    std::bernoulli_distribution flip(0.5);
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        auto transform = [&](Eigen::MatrixXd rows, Eigen::Index first) {
            for (Eigen::Index j = 0; j < 3; ++j) {
                const double d = (flip(rng) ? -1.0 : 1.0) * scale(rng);
                const double a = shift(rng);
                rows.col(first + j) = (rows.col(first + j).array() * d + a).matrix();
            }
            return rows;
        };
        const ReducedMoments r1 = reduce(transform(d1, 2), 1);
        const ReducedMoments r2 = reduce(transform(d2, 3), 2);
        const FasResult k1 = fas_k1(r1);
        const double gap = std::max({std::abs(k1.lo - k1_base.lo), std::abs(k1.hi - k1_base.hi),
                                     vertex_gap(fas_general(r1), g1_base), vertex_gap(fas_general(r2), g2_base)});
        worst = std::max(worst, gap);
        out.require(gap <= 1e-10, "transform " + std::to_string(rep));
    }
    out.detail = "50 transforms, max change " + fmt(worst) + out.detail;
    return out;
}

Outcome binary_model() {
    Outcome out;
    const DiscreteJoint b1 = fixtures::b1();
    const double cstar = falsification_point_single(b1);
    const double latent = oracle_cstar_latent(b1);
    auto [lo, hi] = ate_bounds(b1, CDependence::Constant(1, cstar));
    auto [nlo, nhi] = ate_bounds(b1, CDependence::Ones(1));
    out.require(std::abs(cstar - 1.0 / 14) <= 1e-6, "c*");
    out.require(std::abs(latent - cstar) <= 5e-3, "latent oracle");
    out.require(std::abs(lo + 0.0875) <= 1e-6 && std::abs(hi - 0.475) <= 1e-6, "bounds at c*");
    out.require(std::abs(nlo + 0.4) <= 1e-9 && std::abs(nhi - 0.6) <= 1e-9, "no-assumption bounds");
    out.detail = "c* " + fmt(cstar, 10) + ", latent " + fmt(latent, 6) + ", bounds [" + fmt(lo, 8) + ", " + fmt(hi, 8) +
                 "], no-assumption [" + fmt(nlo, 10) + ", " + fmt(nhi, 10) + "]" + out.detail;
    return out;
}

DiscreteJoint random_joint(std::mt19937_64& rng, int l) {
    if (l == 1) return fixtures::binary_joint(0.3 + 0.4 * std::uniform_real_distribution<double>(0, 1)(rng),
                                              fixtures::random_cond(rng), fixtures::random_cond(rng));
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (;;) {
        DiscreteJoint j;
        j.z_supports = {{0.0, 1.0}, {0.0, 1.0}};
        j.probs.resize(16);
        for (auto& p : j.probs) p = u(rng);
        j.probs /= j.probs.sum();
        try {
            j.validate();
            return j;
        } catch (const Error&) {
        }
    }
}

Outcome monotone_sweeps() {
    Outcome out;
    std::mt19937_64 rng(505);
    constexpr double slack = 1e-8;
    constexpr int steps = 20;  // grid step 0.05
    int violations = 0, intervals = 0;
    for (int rep = 0; rep < 20; ++rep) {
        const int l = 1 + rep % 2;
        const DiscreteJoint j = random_joint(rng, l);

        // Falsification on the whole grid, then upward closure.
        const int side = steps + 1;
        const int total = l == 1 ? side : side * side;
        std::vector<char> refuted(static_cast<std::size_t>(total));
        auto point = [&](int idx) {
            Eigen::VectorXd c(l);
            if (l == 1) c(0) = idx / double(steps);
            else c << (idx / side) / double(steps), (idx % side) / double(steps);
            return c;
        };
        for (int i = 0; i < total; ++i) refuted[static_cast<std::size_t>(i)] = is_falsified_at(j, point(i));
        for (int i = 0; i < total; ++i) {
            if (refuted[static_cast<std::size_t>(i)]) continue;
            if (l == 1) {
                if (i + 1 < side && refuted[static_cast<std::size_t>(i + 1)]) ++violations;
            } else {
                const int a = i / side, b = i % side;
                if (a + 1 < side && refuted[static_cast<std::size_t>(i + side)]) ++violations;
                if (b + 1 < side && refuted[static_cast<std::size_t>(i + 1)]) ++violations;
            }
        }

        // Bounds along a random increasing lattice path from 0 to 1.
        Eigen::VectorXd c = Eigen::VectorXd::Zero(l);
        std::vector<int> moves;
        for (int a = 0; a < l; ++a)
            for (int s = 0; s < steps; ++s) moves.push_back(a);
        std::shuffle(moves.begin(), moves.end(), rng);
        std::optional<std::pair<double, double>> prev;
        for (std::size_t m = 0; m <= moves.size(); ++m) {
            if (m > 0) c(moves[m - 1]) = std::min(1.0, c(moves[m - 1]) + 1.0 / steps);
            try {
                auto cur = ate_bounds(j, c);
                ++intervals;
                if (prev && (cur.first > prev->first + slack || cur.second < prev->second - slack)) ++violations;
                prev = cur;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::ModelFalsifiedAtC) throw;
                // Refuted after a non-refuted point breaks upward closure.
                if (prev) ++violations;
            }
        }
    }
    out.require(violations == 0, std::to_string(violations) + " violations");
    out.detail = "20 joints, " + std::to_string(intervals) + " intervals along paths, " + std::to_string(violations) +
                 " violations" + out.detail;
    return out;
}

Outcome qmt_grid() {
    Outcome out;
    std::mt19937_64 rng(606);
    std::uniform_real_distribution<double> u(-3.0, 3.0), mag(0.3, 2.0), d(0.0, 1.5);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::Vector2d psi(u(rng), u(rng));
        Eigen::Vector2d pi((u(rng) < 0 ? -1 : 1) * mag(rng), (u(rng) < 0 ? -1 : 1) * mag(rng));
        Eigen::Vector2d delta(d(rng), d(rng));
        ReducedMoments r = fixtures::reduced(psi, pi);

        // Squared violations of the two-sided inequalities, in units of b.
        double lo_edge = INFINITY, hi_edge = -INFINITY;
        Eigen::Vector2d ratio, width;
        for (int j = 0; j < 2; ++j) {
            ratio(j) = psi(j) / pi(j);
            width(j) = delta(j) / std::abs(pi(j));
            lo_edge = std::min(lo_edge, ratio(j) - width(j) - 1.0);
            hi_edge = std::max(hi_edge, ratio(j) + width(j) + 1.0);
        }
        auto objective = [&](double b) {
            double q = 0.0;
            for (int j = 0; j < 2; ++j) {
                const double below = std::max(ratio(j) - width(j) - b, 0.0);
                const double above = std::max(b - ratio(j) - width(j), 0.0);
                q += below * below + above * above;
            }
            return q;
        };
        constexpr int points = 100000;
        double best = INFINITY;
        for (int i = 0; i < points; ++i) best = std::min(best, objective(lo_edge + (hi_edge - lo_edge) * i / (points - 1)));
        const double err = std::abs(qmt_star(r, delta) - best);
        worst = std::max(worst, err);
        out.require(err <= 1e-6, "triple " + std::to_string(rep));
    }
    out.detail = "20 triples, max gap to grid minimum " + fmt(worst) + out.detail;
    return out;
}

Outcome continuous_convergence() {
    Outcome out;
    const ContinuousJoint embedded = fixtures::embedded(fixtures::b1());
    const WeightFunction w1 = [](double y) { return y; };
    const WeightFunction w0 = [](double y) { return -y; };
    auto point_at = [&](int m) {
        const SieveSpec spec{m, 201};
        return approx_ff_fas_cont(sieve_table_from_joint(embedded, spec), spec, 0.01, w1, w0).points.front()(0);
    };
    const double p30 = point_at(30), p40 = point_at(40);
    const double e30 = std::abs(p30 - 1.0 / 14), e40 = std::abs(p40 - 1.0 / 14);
    out.require(e30 <= 0.02, "order 30 point off by " + fmt(e30));
    out.require(e40 <= e30, "error grows from order 30 to 40");

    std::vector<ContinuousJoint> refuted_dgps = {
        embedded,
        fixtures::separated_beta(0.5, 0.6, 0.6, 2, 8),
        fixtures::separated_beta(0.4, 0.7, 0.8, 3, 9),
        fixtures::separated_beta(0.5, 0.5, 0.9, 2, 10),
        fixtures::separated_beta(0.6, 0.8, 0.8, 4, 12),
    };
    std::vector<ContinuousJoint> valid_dgps = {
        fixtures::independent_beta(0.5, 0.2, 0.8, 2, 5), fixtures::independent_beta(0.3, 0.5, 0.6, 3, 3),
        fixtures::independent_beta(0.5, 0.3, 0.7, 2, 5), fixtures::independent_beta(0.4, 0.3, 0.6, 2.5, 4),
        fixtures::separated_beta(0.5, 0.3, 0.3, 2, 3),
    };
    const SieveSpec spec{40, 201};
    int agree = 0, refuted = 0;
    for (const auto* group : {&refuted_dgps, &valid_dgps})
        for (const auto& j : *group) {
            const bool envelope = kitagawa_refutation_check(j, 0).refuted || kitagawa_refutation_check(j, 1).refuted;
            const bool sieve = is_falsified_cont(sieve_table_from_joint(j, spec), Eigen::VectorXd::Zero(1), spec);
            refuted += envelope;
            agree += envelope == sieve;
        }
    out.require(refuted == 5, "expected 5 refuted dgps, got " + std::to_string(refuted));
    out.require(agree == 10, "verdicts agree on " + std::to_string(agree) + " of 10");
    out.detail = "frontier point " + fmt(p30, 5) + " at order 30 (error " + fmt(e30, 3) + "), " + fmt(p40, 5) +
                 " at order 40 (error " + fmt(e40, 3) + "); envelope check agrees on " + std::to_string(agree) +
                 "/10" + out.detail;
    return out;
}

Outcome estimator_monte_carlo() {
    Outcome out;
    std::mt19937_64 rng(707);
    constexpr int reps = 200;
    int screened = 0, covered = 0;
    const RoleMap roles = fixtures::linear_roles(3);
    for (int rep = 0; rep < reps; ++rep) {
        // Fixture L2 population plus an instrument unrelated to everything.
        Eigen::MatrixXd rows = fixtures::simulate_linear(rng, 50000, Eigen::Vector3d(1, 1, 0), Eigen::Vector3d(0, 4, 0), 1.0);
        FasResult fas = estimate_fas(rows, roles, 10.0);
        const bool noise_out = std::find(fas.screened_out.begin(), fas.screened_out.end(), 2) != fas.screened_out.end();
        screened += noise_out;
        if (fas.lo_se && fas.hi_se && std::abs(fas.lo - 1.0) <= 3 * *fas.lo_se && std::abs(fas.hi - 5.0) <= 3 * *fas.hi_se)
            ++covered;
    }
    out.require(screened >= 190, "noise screened in " + std::to_string(screened) + "/200");
    out.require(covered >= 180, "endpoints covered in " + std::to_string(covered) + "/200");
    out.detail = "noise screened out " + std::to_string(screened) + "/200, endpoints within 3 SE " +
                 std::to_string(covered) + "/200" + out.detail;
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

Outcome cli_determinism(const std::string& cli, const fs::path& work) {
    Outcome out;
    fs::remove_all(work);
    fs::create_directories(work);

    std::mt19937_64 rng(808);
    Eigen::MatrixXd rows = fixtures::simulate_linear(rng, 5000, Eigen::Vector2d(1, 1), Eigen::Vector2d(0, 4), 1.0);
    {
        std::ofstream csv(work / "linear.csv", std::ios::binary);
        csv << std::setprecision(17) << "y,x,z1,z2\n";
        for (Eigen::Index i = 0; i < rows.rows(); ++i) csv << rows(i, 0) << ',' << rows(i, 1) << ',' << rows(i, 2) << ',' << rows(i, 3) << '\n';
    }
    const std::string outputs = R"("output":{"frontier_csv":"frontier.csv","fas_csv":"fas.csv"})";
    write_text(work / "linear.json", R"({"model":"linear","data":"linear.csv",
        "columns":{"outcome":"y","treatments":["x"],"instruments":["z1","z2"]},
        "options":{"delta_grid":[0,0.5,[1,3]]},)" + outputs + "}");
    write_text(work / "binary.json", R"({"model":"het_binary",
        "probability_table":{"z_supports":[[0,1]],"probs":[0.15,0.05,0.2,0.05,0.1,0.05,0.05,0.35]},
        "options":{"c_grid":[0,0.1,1]},)" + outputs + "}");
    write_text(work / "continuous.json", R"({"model":"het_continuous",
        "density_table":{"y_grid":[0,0.5,1],"densities":[[1,1,1],[0.5,1,1.5],[1.2,1,0.8],[1.5,1,0.5]],
                         "pxz":[[0.35,0.15],[0.15,0.35]]},
        "options":{"sieve":{"order_m":12,"grid_n":61},"c_grid":[0.2]},)" + outputs + "}");

    int identical = 0, files = 0;
    for (const char* name : {"linear", "binary", "continuous"}) {
        for (const char* run : {"a", "b"}) {
            const std::string cmd = "\"" + cli + "\" run --config \"" + (work / (std::string(name) + ".json")).string() +
                                    "\" --out-dir \"" + (work / name / run).string() + "\" > /dev/null";
            const int status = std::system(cmd.c_str());
            out.require(status == 0, std::string(name) + " run exited with " + std::to_string(status));
        }
        for (const char* file : {"report.json", "frontier.csv", "fas.csv"}) {
            const std::string a = slurp(work / name / "a" / file), b = slurp(work / name / "b" / file);
            ++files;
            const bool same = !a.empty() && a == b;
            identical += same;
            out.require(same, std::string(name) + "/" + file);
        }
    }
    out.detail = std::to_string(identical) + "/" + std::to_string(files) + " output files byte-identical" + out.detail;
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::cerr << "usage: acceptance_tests <falsify-iv binary> <work dir>\n";
        return 2;
    }
    const std::string cli = argv[1];
    const fs::path work = argv[2];

    const std::vector<Criterion> criteria = {
        {1, "two-instrument adaptive set and frontier reproduction", 1.0, two_instrument_reproduction},
        {2, "frontier points give singleton sets, shrunk points empty sets", 5.0, frontier_singletons},
        {3, "adaptive set projection against vertex extremes and hull membership", 10.0, projection_vs_vertices},
        {4, "2SLS as a weighted average of just-identified estimands", 0.0, weights_identity},
        {5, "invariance to diagonal affine instrument transforms", 0.0, affine_invariance},
        {6, "binary outcome model on the reference joint", 5.0, binary_model},
        {7, "monotone bounds and upward-closed falsification sweeps", 0.0, monotone_sweeps},
        {8, "moment inequality diagnostic against grid minimization", 0.0, qmt_grid},
        {9, "continuous outcome sieve convergence and envelope agreement", 60.0, continuous_convergence},
        {10, "estimator screening and coverage Monte Carlo", 120.0, estimator_monte_carlo},
        {11, "command line outputs are byte-identical across runs", 0.0, [&] { return cli_determinism(cli, work); }},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.seconds_allowed > 0 && secs > c.seconds_allowed) {
            o.pass = false;
            o.detail += "; exceeded " + fmt(c.seconds_allowed) + " s";
        }
        failed += !o.pass;
        std::printf("criterion %2d %s  %s: %s (%.2f s)\n", c.id, o.pass ? "PASS" : "FAIL", c.title, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
