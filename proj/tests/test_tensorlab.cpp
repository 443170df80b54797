#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "twoscale/tensorlab.hpp"

using namespace twoscale;

TEST(Tensorlab, PublishedPlaneParameters) {
    const IsoParams p = iso_from_nu_e(0.25, 10.0, 2);
    EXPECT_NEAR(p.mu, 4.0, 1e-12);
    EXPECT_NEAR(p.kappa, 6.667, 0.01);
    EXPECT_NEAR(p.lambda, p.kappa - p.mu, 1e-12);
}

TEST(Tensorlab, ZeroPoissonGivesEqualModuli) {
    const IsoParams p = iso_from_nu_e(0.0, 7.0, 2);
    EXPECT_NEAR(p.kappa, 3.5, 1e-14);
    EXPECT_NEAR(p.mu, 3.5, 1e-14);
}

TEST(Tensorlab, RoundTripBothDims) {
    std::mt19937 rng(11);
    for (int dim : {2, 3}) {
        std::uniform_real_distribution<double> nu(-0.99, dim == 2 ? 0.99 : 0.49), E(0.01, 100.0);
        for (int i = 0; i < 100; ++i) {
            const double n0 = nu(rng), e0 = E(rng);
            const IsoParams p = iso_from_nu_e(n0, e0, dim);
            const auto [n1, e1] = nu_e_from_moduli(p.kappa, p.mu, dim);
            EXPECT_NEAR(n1, n0, 1e-12 * std::max(1.0, std::fabs(n0)));
            EXPECT_NEAR(e1, e0, 1e-12 * e0);
        }
    }
}

TEST(Tensorlab, ForwardFormulasFromModuli) {
    auto [nu2, E2] = nu_e_from_moduli(20.0 / 3.0, 4.0, 2);
    EXPECT_NEAR(nu2, 0.25, 1e-3);
    EXPECT_NEAR(E2, 10.0, 1e-3);
    auto [nu0, E0] = nu_e_from_moduli(3.0, 3.0, 2);
    EXPECT_DOUBLE_EQ(nu0, 0.0);
    (void)E0;
    // 3D oracle: mu = E / (2(1+nu)) = 4, kappa = E / (3(1-2nu)) = 6.667
    auto [nu3, E3] = nu_e_from_moduli(20.0 / 3.0, 4.0, 3);
    EXPECT_NEAR(nu3, 0.25, 1e-3);
    EXPECT_NEAR(E3, 10.0, 1e-3);
}

TEST(Tensorlab, RejectsInvalidParameters) {
    EXPECT_THROW(iso_from_nu_e(1.0, 1.0, 2), DomainError);
    EXPECT_THROW(iso_from_nu_e(0.5, 1.0, 3), DomainError);
    EXPECT_THROW(iso_from_nu_e(-1.0, 1.0, 2), DomainError);
    EXPECT_THROW(iso_from_nu_e(0.2, 0.0, 2), DomainError);
    EXPECT_THROW(nu_e_from_moduli(-1.0, 1.0, 2), DomainError);
    EXPECT_THROW(iso_from_nu_e(0.2, 1.0, 4), DomainError);
}

TEST(Tensorlab, VoigtEntriesMatchLameOracle) {
    for (int dim : {2, 3}) {
        const IsoParams p = iso_from_nu_e(0.25, 10.0, dim);
        const ElasticityTensor C = tensor_from_iso(p);
        const double lambda = dim == 2 ? oracle::lame_2d(0.25, 10.0).first : 10.0 * 0.25 / (1.25 * 0.5);
        const double mu = 4.0;
        EXPECT_NEAR((C.voigt - oracle::iso_voigt(lambda, mu, dim)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
    }
    const ElasticityTensor C2 = tensor_from_iso(iso_from_nu_e(0.25, 10.0, 2));
    EXPECT_NEAR(C2(0, 0), 32.0 / 3.0, 1e-12);
}

TEST(Tensorlab, DegenerateShearAndScaling) {
    const ElasticityTensor C = tensor_from_moduli(5.0, 0.0, 2);
    Eigen::Matrix3d expect = Eigen::Matrix3d::Zero();
    expect.topLeftCorner(2, 2).setConstant(5.0);
    EXPECT_NEAR((C.voigt - expect).cwiseAbs().maxCoeff(), 0.0, 1e-14);
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(expect.topLeftCorner(2, 2));
    EXPECT_EQ(svd.rank(), 1);
    for (int dim : {2, 3}) {
        const auto a = tensor_from_iso(iso_from_nu_e(0.1, 3.0, dim)).voigt;
        const auto b = tensor_from_iso(iso_from_nu_e(0.1, 6.0, dim)).voigt;
        EXPECT_NEAR((b - 2.0 * a).cwiseAbs().maxCoeff(), 0.0, 1e-13);
    }
}

TEST(Tensorlab, PositiveDefiniteInsideAdmissibleRange) {
    std::mt19937 rng(5);
    for (int dim : {2, 3}) {
        std::uniform_real_distribution<double> nu(-0.99, dim == 2 ? 0.99 : 0.49);
        for (int i = 0; i < 50; ++i) {
            const auto C = tensor_from_iso(iso_from_nu_e(nu(rng), 1.0, dim)).voigt;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
            EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
        }
    }
}

TEST(Tensorlab, UpperTriangleRoundTrip) {
    const auto C = tensor_from_iso(iso_from_nu_e(0.3, 2.0, 3));
    EXPECT_EQ(C.upper().size(), 21);
    EXPECT_EQ(ElasticityTensor::from_upper(3, C.upper()).voigt, C.voigt);
    EXPECT_EQ(voigt_upper_count(2), 6);
}

TEST(Tensorlab, NuEDerivativesAgreeWithDifferences) {
    for (int dim : {2, 3}) {
        const double nu = 0.2, E = 3.0, h = 1e-6;
        const auto [dnu, dE] = tensor_derivatives_nu_e(nu, E, dim);
        const Eigen::MatrixXd fd_nu = (tensor_from_iso(iso_from_nu_e(nu + h, E, dim)).voigt -
                                       tensor_from_iso(iso_from_nu_e(nu - h, E, dim)).voigt) / (2 * h);
        const Eigen::MatrixXd fd_E = (tensor_from_iso(iso_from_nu_e(nu, E + h, dim)).voigt -
                                      tensor_from_iso(iso_from_nu_e(nu, E - h, dim)).voigt) / (2 * h);
        EXPECT_LT((fd_nu - dnu).norm() / dnu.norm(), 1e-7);
        EXPECT_LT((fd_E - dE).norm() / dE.norm(), 1e-7);
    }
}

TEST(Tensorlab, HashinShtrikmanTrivialLimits) {
    const double delta = 1e-4;
    for (int dim : {2, 3}) {
        const IsoParams p = iso_from_nu_e(0.25, 10.0, dim);
        const HSBounds one = hs_upper(1.0, p, delta);
        EXPECT_EQ(one.kappa_u, p.kappa);
        EXPECT_EQ(one.mu_u, p.mu);
        const HSBounds zero = hs_upper(0.0, p, delta);
        EXPECT_EQ(zero.kappa_u, delta * p.kappa);
        EXPECT_EQ(zero.mu_u, delta * p.mu);
        EXPECT_EQ(one.triangle[0][0], -1.0);
        EXPECT_EQ(one.triangle[1][0], dim == 2 ? 1.0 : 0.5);
    }
}

TEST(Tensorlab, HashinShtrikmanThreeQuarters) {
    const IsoParams p = iso_from_nu_e(0.25, 10.0, 2);
    const double delta = 1e-4, theta = 0.75;
    const HSBounds b = hs_upper(theta, p, delta);
    // independent evaluation of the printed bounds with lambda = kappa - mu (d = 2)
    const double k = p.kappa, m = p.mu, l2m = (k - m) + 2 * m;
    const double ku = k + (1 - theta) / (1 / ((delta - 1) * k) + theta / l2m);
    const double mu_u = m + (1 - theta) / (1 / ((delta - 1) * m) + 2 * theta * (k + 2 * m) / (4 * m * l2m));
    EXPECT_NEAR(b.kappa_u, ku, 1e-12 * ku);
    EXPECT_NEAR(b.mu_u, mu_u, 1e-12 * mu_u);
    const double E_top = b.triangle[2][1];
    EXPECT_LT(E_top, 0.75 * 10.0);
    EXPECT_GT(E_top, hs_upper(0.0, p, delta).triangle[2][1]);
    EXPECT_LT(E_top, hs_upper(1.0, p, delta).triangle[2][1]);
}

TEST(Tensorlab, HashinShtrikmanMonotoneInTheta) {
    for (int dim : {2, 3}) {
        const IsoParams p = iso_from_nu_e(0.25, 10.0, dim);
        HSBounds prev = hs_upper(0.0, p, 1e-4);
        for (int i = 1; i <= 100; ++i) {
            const HSBounds b = hs_upper(i / 100.0, p, 1e-4);
            EXPECT_GE(b.kappa_u, prev.kappa_u);
            EXPECT_GE(b.mu_u, prev.mu_u);
            EXPECT_GE(b.kappa_u, 1e-4 * p.kappa * (1 - 1e-12));
            EXPECT_LE(b.kappa_u, p.kappa * (1 + 1e-12));
            prev = b;
        }
    }
    EXPECT_THROW(hs_upper(1.5, iso_from_nu_e(0.25, 10.0, 2), 1e-4), DomainError);
}

TEST(Tensorlab, TriangleMembership) {
    const HSBounds b = hs_upper(1.0, iso_from_nu_e(0.25, 10.0, 2), 1e-4);
    for (const auto& v : b.triangle) EXPECT_TRUE(hs_contains(v[0], v[1], b, 0.0));
    EXPECT_FALSE(hs_contains(b.triangle[1][0] + 0.1, 0.0, b, 0.0));
    const double cx = (b.triangle[0][0] + b.triangle[1][0] + b.triangle[2][0]) / 3;
    const double cy = (b.triangle[0][1] + b.triangle[1][1] + b.triangle[2][1]) / 3;
    EXPECT_TRUE(hs_contains(cx, cy, b, 0.0));
}
