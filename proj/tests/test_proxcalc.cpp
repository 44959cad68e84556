#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pdnet/proxcalc.hpp"

using namespace pdnet;
using pdnet::testing::random_vector;

namespace {

/// argmin_y 1/2 (y - v)^2 + t |y| by scanning a grid of step 1e-4.
double grid_prox(double v, double t) {
    double best = 0.0, best_val = std::numeric_limits<double>::infinity();
    for (double y = -5.0; y <= 5.0; y += 1e-4) {
        const double f = 0.5 * (y - v) * (y - v) + t * std::abs(y);
        if (f < best_val) {
            best_val = f;
            best = y;
        }
    }
    return best;
}

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double e : v) out[i++] = e;
    return out;
}

}  // namespace

TEST(ProxL1, ClosedForm) {
    EXPECT_EQ(prox_l1(vec({2.0, -0.5, 0.0}), 1.0), vec({1.0, 0.0, 0.0}));
    EXPECT_EQ(prox_l1(Vector::Zero(5), 3.0), Vector::Zero(5));
    EXPECT_EQ(prox_l1(vec({-3.0}), 1.0), vec({-2.0}));
}

TEST(ProxL1, MatchesGridSearch) {
    std::mt19937_64 rng(1);
    const Vector v = random_vector(40, rng, -3.0, 3.0);
    const Vector p = prox_l1(v, 0.3);
    for (Eigen::Index i = 0; i < v.size(); ++i) EXPECT_NEAR(p[i], grid_prox(v[i], 0.3), 1e-3);
}

TEST(ProxL1, Nonexpansive) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> t(0.01, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        const Vector u = random_vector(20, rng, -4, 4), v = random_vector(20, rng, -4, 4);
        const double th = t(rng);
        EXPECT_LE((prox_l1(u, th) - prox_l1(v, th)).norm(), (u - v).norm() + 1e-15);
    }
}

TEST(ProxL1, RejectsNonpositiveThreshold) {
    EXPECT_THROW(prox_l1(Vector::Zero(2), 0.0), ParameterError);
    EXPECT_THROW(prox_l1(Vector::Zero(2), -1.0), ParameterError);
}

TEST(ProxConjugate, ClipsToUnitBall) {
    for (double s : {0.1, 1.0, 7.0}) EXPECT_EQ(prox_l1_conjugate(vec({0.5, -2.0, 1.0}), s), vec({0.5, -1.0, 1.0}));
    const Vector inside = vec({0.9, -1.0, 0.0, 0.25});
    EXPECT_EQ(prox_l1_conjugate(inside, 2.0), inside);
    EXPECT_THROW(prox_l1_conjugate(inside, 0.0), ParameterError);
}

TEST(ProxConjugate, MoreauIdentity) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> s(0.05, 20.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double sigma = trial == 0 ? 1.7 : s(rng);
        const Vector v = random_vector(12, rng, -5.0, 5.0);
        const Vector rhs = v - sigma * prox_l1(v / sigma, 1.0 / sigma);
        EXPECT_LE((prox_l1_conjugate(v, sigma) - rhs).cwiseAbs().maxCoeff(), 1e-12) << "sigma " << sigma;
    }
}

TEST(Subgradients, CasesAndTies) {
    auto r = subgrad_r(vec({2.0, 0.5}), vec({2.0, 0.5}), 1.0);
    EXPECT_EQ(r.r2, vec({1.0, 0.0}));
    EXPECT_EQ(r.r3, vec({0.0, 1.0}));
    r = subgrad_r(Vector::Zero(3), Vector::Zero(3), 2.0);
    EXPECT_EQ(r.r2, Vector::Zero(3));
    EXPECT_EQ(r.r3, Vector::Ones(3));
    r = subgrad_r(vec({0.5, -0.5}), vec({1.0, -1.0}), 2.0);
    EXPECT_EQ(r.r2, Vector::Zero(2));
    EXPECT_EQ(r.r3, Vector::Zero(2));
    EXPECT_THROW(subgrad_r(Vector::Zero(1), Vector::Zero(1), 0.0), ParameterError);
}

TEST(Subgradients, ComplementaryOffTheKink) {
    for (double v = -3.0; v <= 3.0; v += 0.01) {
        if (std::abs(std::abs(v) - 1.0) < 1e-9) continue;
        const Vector x = vec({v});
        const auto r = subgrad_r(x, x, 1.0);
        EXPECT_EQ(r.r2[0], 1.0 - r.r3[0]) << v;
    }
}

TEST(Subgradients, MatchArgumentDifferences) {
    std::mt19937_64 rng(4);
    const double sigma = 0.8, t = 1.0 / sigma, h = 1e-7;
    const Vector v = random_vector(200, rng, -3.0, 3.0);
    const auto r = subgrad_r(v, v, sigma);
    for (Eigen::Index p = 0; p < v.size(); ++p) {
        if (std::abs(std::abs(v[p]) - t) < 1e-4) continue;
        const double fd =
            (prox_l1(vec({v[p] + h}), t)[0] - prox_l1(vec({v[p] - h}), t)[0]) / (2 * h);
        EXPECT_NEAR(r.r2[p], fd, 1e-6);
        const double fd3 = (prox_l1_conjugate(vec({v[p] + h}), sigma)[0] -
                            prox_l1_conjugate(vec({v[p] - h}), sigma)[0]) / (2 * h);
        if (std::abs(std::abs(v[p]) - 1.0) > 1e-4) {
            EXPECT_NEAR(r.r3[p], fd3, 1e-6);
        }
    }
}

TEST(DproxDsigma, PiecewiseValues) {
    EXPECT_EQ(dprox_dsigma(vec({1.0, -1.0, 0.1}), 2.0), vec({0.25, -0.25, 0.0}));
    EXPECT_EQ(dprox_dsigma(vec({0.3, -0.4}), 2.0), Vector::Zero(2));
    EXPECT_EQ(dprox_dsigma(vec({0.5, -0.5}), 2.0), Vector::Zero(2));
}

TEST(DproxDsigma, MatchesFiniteDifference) {
    const double sigma = 1.3, h = 1e-6;
    for (double v : {0.9, -0.9, 2.0, 0.1}) {
        const Vector x = vec({v});
        const double fd = (prox_l1(x, 1.0 / (sigma + h))[0] - prox_l1(x, 1.0 / (sigma - h))[0]) / (2 * h);
        EXPECT_NEAR(dprox_dsigma(x, sigma)[0], fd, 1e-5) << v;
    }
}

TEST(Penalty, L1Norm) { EXPECT_DOUBLE_EQ(penalty(ProxFamily::L1, vec({1.0, -2.0, 0.5})), 3.5); }
