#pragma once

#include "falsify_iv/het_binary.hpp"
#include "falsify_iv/het_continuous.hpp"
#include "falsify_iv/moments.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace fixtures {

inline fiv::ReducedMoments reduced(const Eigen::VectorXd& psi, const Eigen::MatrixXd& pi, const Eigen::MatrixXd& var_z) {
    fiv::ReducedMoments r;
    r.psi = psi;
    r.pi = pi;
    r.var_z = var_z;
    return r;
}

inline fiv::ReducedMoments reduced(const Eigen::VectorXd& psi, const Eigen::VectorXd& pi) {
    return reduced(psi, Eigen::MatrixXd(pi), Eigen::MatrixXd::Identity(psi.size(), psi.size()));
}

// Var(Z) = I, psi = (1,5), pi = (1,1).
inline fiv::ReducedMoments l2() { return reduced(Eigen::Vector2d(1, 5), Eigen::Vector2d(1, 1)); }

// Pi rows (1,0),(0,1),(1,1); psi = (0,0,1).
inline fiv::ReducedMoments k2l3() {
    Eigen::MatrixXd pi(3, 2);
    pi << 1, 0, 0, 1, 1, 1;
    return reduced(Eigen::Vector3d(0, 0, 1), pi, Eigen::Matrix3d::Identity());
}

// Draws n rows of (Y, X, Z_1..Z_L) from Z ~ N(0, I), X = Z'pi + v,
// Y = X*beta + Z'gamma + u with corr(u, v) = rho.
inline Eigen::MatrixXd simulate_linear(std::mt19937_64& rng, long n, const Eigen::VectorXd& pi, const Eigen::VectorXd& gamma,
                                       double beta, double rho = 0.5) {
    std::normal_distribution<double> n01;
    const Eigen::Index l = pi.size();
    Eigen::MatrixXd rows(n, 2 + l);
    for (long i = 0; i < n; ++i) {
        Eigen::VectorXd z(l);
        for (auto& v : z) v = n01(rng);
        double e1 = n01(rng), e2 = n01(rng);
        double v = e1;
        double u = rho * e1 + std::sqrt(1 - rho * rho) * e2;
        double x = z.dot(pi) + v;
        double y = beta * x + z.dot(gamma) + u;
        rows(i, 0) = y;
        rows(i, 1) = x;
        rows.row(i).tail(l) = z.transpose();
    }
    return rows;
}

inline fiv::RoleMap linear_roles(int l, int controls = 0) {
    fiv::RoleMap roles = {fiv::Role::Outcome, fiv::Role::Treatment};
    for (int j = 0; j < l; ++j) roles.push_back(fiv::Role::Instrument);
    for (int j = 0; j < controls; ++j) roles.push_back(fiv::Role::Control);
    return roles;
}

// One binary instrument; cond_z lists P(Y=y, X=x | Z=z) indexed by 2y + x.
inline fiv::DiscreteJoint binary_joint(double pz, const Eigen::Vector4d& cond0, const Eigen::Vector4d& cond1) {
    fiv::DiscreteJoint j;
    j.z_supports = {{0.0, 1.0}};
    j.probs.resize(8);
    for (int k = 0; k < 4; ++k) {
        j.probs(k * 2 + 0) = (1 - pz) * cond0(k);
        j.probs(k * 2 + 1) = pz * cond1(k);
    }
    return j;
}

// P(Z=1) = 0.5; given Z=0 (Y,X) = (1,1),(0,1),(1,0),(0,0) w.p. 0.1,0.4,0.2,0.3,
// given Z=1 w.p. 0.7,0.1,0.1,0.1.
inline fiv::DiscreteJoint b1() {
    return binary_joint(0.5, Eigen::Vector4d(0.3, 0.4, 0.2, 0.1), Eigen::Vector4d(0.1, 0.1, 0.1, 0.7));
}

// Second instrument that always equals the first.
inline fiv::DiscreteJoint duplicated(const fiv::DiscreteJoint& single) {
    fiv::DiscreteJoint j;
    j.z_supports = {single.z_supports[0], single.z_supports[0]};
    const int n = single.support_size(0);
    j.probs = Eigen::VectorXd::Zero(4 * n * n);
    for (int k = 0; k < 4; ++k)
        for (int z = 0; z < n; ++z) j.probs(k * n * n + z * n + z) = single.probs(k * n + z);
    return j;
}

inline Eigen::Vector4d random_cond(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Eigen::Vector4d v(u(rng), u(rng), u(rng), u(rng));
    return v / v.sum();
}

inline double beta_pdf(double y, double a, double b) {
    if (y < 0.0 || y > 1.0) return 0.0;
    return std::pow(y, a - 1) * std::pow(1 - y, b - 1) / std::beta(a, b);
}

// One binary instrument with P(Z=1) = pz and P(X=1 | Z=z) = px1[z].
inline Eigen::MatrixXd pxz_table(double pz, double px1_z0, double px1_z1) {
    Eigen::MatrixXd pxz(2, 2);
    pxz << (1 - pz) * (1 - px1_z0), pz * (1 - px1_z1), (1 - pz) * px1_z0, pz * px1_z1;
    return pxz;
}

// Continuous version of a binary joint: given (x, z) the outcome density is
// 2 P(Y=1 | x, z) on [0.5, 1] and 2 P(Y=0 | x, z) on [0, 0.5).
inline fiv::ContinuousJoint embedded(const fiv::DiscreteJoint& b) {
    fiv::ContinuousJoint j;
    j.num_instruments = static_cast<int>(b.z_supports.size());
    j.pxz.resize(2, b.cells());
    for (int x = 0; x < 2; ++x)
        for (int m = 0; m < b.cells(); ++m) j.pxz(x, m) = b.p_x_cell(x, m);
    j.density = [b](double y, int x, int m) {
        double px = b.p_x_cell(x, m);
        double p1 = px > 0 ? b.prob(1, x, m) / px : 0.5;
        return y >= 0.5 ? 2 * p1 : 2 * (1 - p1);
    };
    return j;
}

// Outcome density depends on x only, so Y_x is independent of Z.
inline fiv::ContinuousJoint independent_beta(double pz, double px1_z0, double px1_z1, double a, double b) {
    fiv::ContinuousJoint j;
    j.pxz = pxz_table(pz, px1_z0, px1_z1);
    j.density = [a, b](double y, int x, int) { return x == 1 ? beta_pdf(y, a, b) : beta_pdf(y, b, a); };
    return j;
}

// Treated outcomes given Z=0 and Z=1 follow Beta(a,b) and Beta(b,a): far apart
// when a and b differ a lot. Untreated outcomes are uniform.
inline fiv::ContinuousJoint separated_beta(double pz, double px1_z0, double px1_z1, double a, double b) {
    fiv::ContinuousJoint j;
    j.pxz = pxz_table(pz, px1_z0, px1_z1);
    j.density = [a, b](double y, int x, int z) {
        if (x == 0) return 1.0;
        return z == 0 ? beta_pdf(y, a, b) : beta_pdf(y, b, a);
    };
    return j;
}

// Smooth bump on [0, 0.5] with unit mass and mean 0.25.
inline double low_bump(double y) { return y >= 0.0 && y <= 0.5 ? 960.0 * y * y * (0.5 - y) * (0.5 - y) : 0.0; }

// Z=1 puts outcomes in the upper half and Z=0 in the lower half, for both
// treatment arms, with P(X=1 | Z=1) = 0.7 and P(X=1 | Z=0) = 0.3. Independence
// then pins down both potential outcome densities and the ATE is 0.2.
inline fiv::ContinuousJoint point_identified() {
    fiv::ContinuousJoint j;
    j.pxz = pxz_table(0.5, 0.3, 0.7);
    j.density = [](double y, int, int z) { return z == 1 ? low_bump(y - 0.5) : low_bump(y); };
    return j;
}

}  // namespace fixtures
