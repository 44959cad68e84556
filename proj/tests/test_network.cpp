#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "pdnet/cpsolver.hpp"
#include "pdnet/network.hpp"

using namespace pdnet;
using pdnet::testing::enumerate_footprints;
using pdnet::testing::random_vector;

namespace {

const char* kDefaultDesign = "f5s2n30+f7s3n30+f10s10n30";

CirculantOp blur_op(std::size_t side = 10) { return CirculantOp(uniform_kernel(3), {side, side}); }

LayerParams random_layer(const FeatureDesign& d, std::uint64_t seed, double c = 0.9) {
    auto feat = build_feature_operator(d, seed, 1e-2);
    LayerParams l;
    const double n = operator_norm(feat.L);
    l.tau = c / n * 1.3;
    l.sigma = c / n / 1.3;
    l.L = std::move(feat.L);
    l.support = std::move(feat.support);
    return l;
}

Vector pixel_data(std::mt19937_64& rng, Eigen::Index n = 100) { return random_vector(n, rng, 0.0, 255.0); }

}  // namespace

TEST(FeatureDesign, SingleGlobalBlockIsDenseRow) {
    const auto d = FeatureDesign::parse("f10s10n1", 10);
    const auto f = build_feature_operator(d, 1, 1e-2);
    EXPECT_EQ(f.L.rows(), 1);
    EXPECT_EQ(f.L.cols(), 100);
    EXPECT_TRUE(f.support.all());
    EXPECT_TRUE((f.L.array() != 0.0).all());
}

TEST(FeatureDesign, DefaultDesignShape) {
    const auto d = FeatureDesign::parse(kDefaultDesign, 10);
    EXPECT_EQ(d.rows(), 420u);
    EXPECT_EQ(d.cols(), 100u);
    const auto f = build_feature_operator(d, 2, 1e-2);
    EXPECT_EQ(f.L.rows(), 420);
    EXPECT_EQ(f.L.cols(), 100);
    EXPECT_EQ(d.to_string(), kDefaultDesign);
}

TEST(FeatureDesign, FootprintsMatchEnumeration) {
    const auto d = FeatureDesign::parse(kDefaultDesign, 10);
    const auto f = build_feature_operator(d, 3, 1e-2);
    const auto expected = enumerate_footprints(d);
    ASSERT_EQ(expected.size(), 420u);
    for (Eigen::Index r = 0; r < f.L.rows(); ++r) {
        std::set<Eigen::Index> support, nonzero;
        for (Eigen::Index c = 0; c < f.L.cols(); ++c) {
            if (f.support(r, c)) support.insert(c);
            if (f.L(r, c) != 0.0) nonzero.insert(c);
        }
        EXPECT_EQ(support, expected[static_cast<std::size_t>(r)]) << "row " << r;
        EXPECT_EQ(nonzero, expected[static_cast<std::size_t>(r)]) << "row " << r;
    }
    // f5s2 has 3 x 3 positions; the first filter at position (3, 3) covers rows and cols 4..8.
    std::set<Eigen::Index> corner;
    for (Eigen::Index r = 4; r < 9; ++r)
        for (Eigen::Index c = 4; c < 9; ++c) corner.insert(r * 10 + c);
    EXPECT_EQ(expected[2 * 3 + 2], corner);
    EXPECT_EQ(f.support.row(8).count(), 25);
    EXPECT_EQ(f.support.row(12).count(), 25);
}

TEST(FeatureDesign, RowCountFormula) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t side = 6 + rng() % 10;
        FeatureDesign d;
        d.patch_side = side;
        std::size_t expected = 0;
        for (std::size_t b = 0, nb = 1 + rng() % 3; b < nb; ++b) {
            const std::size_t f = 1 + rng() % side, s = 1 + rng() % 4, n = 1 + rng() % 5;
            d.blocks.push_back({f, s, n});
            const std::size_t m = (side - f) / s + 1;
            expected += n * m * m;
        }
        EXPECT_EQ(d.rows(), expected);
        EXPECT_EQ(static_cast<std::size_t>(build_feature_operator(d, rng(), 1e-2).L.rows()), expected);
        EXPECT_EQ(FeatureDesign::parse(d.to_string(), side), d);
    }
}

TEST(FeatureDesign, EntriesFollowRequestedSpread) {
    const auto f = build_feature_operator(FeatureDesign::parse(kDefaultDesign, 10), 5, 1e-2);
    std::vector<double> v;
    for (Eigen::Index i = 0; i < f.L.size(); ++i)
        if (f.support.data()[i]) v.push_back(f.L.data()[i]);
    double mean = 0.0, sq = 0.0;
    for (double e : v) mean += e / static_cast<double>(v.size());
    for (double e : v) sq += (e - mean) * (e - mean) / static_cast<double>(v.size());
    EXPECT_NEAR(mean, 0.0, 5e-4);
    EXPECT_NEAR(std::sqrt(sq), 1e-2, 5e-4);
}

TEST(FeatureDesign, Errors) {
    EXPECT_THROW(FeatureDesign::parse("f11s1n1", 10), DimensionError);
    EXPECT_THROW(FeatureDesign::parse("f5s0n1", 10), ParameterError);
    EXPECT_THROW(FeatureDesign::parse("g5s2n3", 10), ParameterError);
    EXPECT_THROW(FeatureDesign::parse("f5s2n3x", 10), ParameterError);
    EXPECT_THROW(FeatureDesign::parse("", 10), ParameterError);
}

TEST(LayerForward, ZeroAnalysisHandValue) {
    std::mt19937_64 rng(6);
    const CirculantOp op(identity_kernel(), {4, 4});
    LayerParams l;
    l.tau = 1.0;
    l.sigma = 1.0;
    l.L = Matrix::Zero(3, 16);
    const Vector z = random_vector(16, rng);
    const auto c = layer_forward(l, op, op.apply_adjoint(z), Vector::Zero(16), Vector::Zero(3), LayerPosition::Middle);
    EXPECT_LT((c.x_out - z / 2).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(c.y_out, Vector::Zero(3));
}

TEST(LayerForward, SingleLayerZeroAnalysisReturnsObservation) {
    std::mt19937_64 rng(7);
    NetworkParams net;
    net.op = CirculantOp(identity_kernel(), {10, 10});
    net.design = FeatureDesign::parse("f10s10n1", 10);
    net.layers.push_back({1.0, 1.0, Matrix::Zero(1, 100), {}});
    const Vector z = random_vector(100, rng);
    EXPECT_LT((network_forward(net, z).x_hat - z).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LayerForward, EqualsChambollePockStepWithoutRelaxation) {
    std::mt19937_64 rng(8);
    const auto d = FeatureDesign::parse(kDefaultDesign, 10);
    for (int trial = 0; trial < 50; ++trial) {
        const auto layer = random_layer(d, rng());
        CPProblem<> p{blur_op(), pixel_data(rng), layer.L, ProxFamily::L1};
        CPSettings s{layer.tau, layer.sigma, 0.0, 1, 0.0};
        const Vector x = pixel_data(rng);
        const Vector y = random_vector(420, rng, -1.5, 1.5);
        const auto cp = cp_iterate(p, s, CPState{x, y, x});
        const auto c = layer_forward(layer, p.op, p.op.apply_adjoint(p.z), x, y, LayerPosition::Middle);
        EXPECT_LE((c.x_out - cp.x).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, cp.x.cwiseAbs().maxCoeff()));
        EXPECT_LE((c.y_out - cp.y).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(LayerForward, CacheIsReproducible) {
    std::mt19937_64 rng(9);
    const auto layer = random_layer(FeatureDesign::parse(kDefaultDesign, 10), 9);
    const auto op = blur_op();
    const Vector Atz = op.apply_adjoint(pixel_data(rng));
    const auto a = layer_forward(layer, op, Atz, pixel_data(rng), random_vector(420, rng), LayerPosition::Middle);
    const auto b = layer_forward(layer, op, Atz, a.x_in, a.y_in, LayerPosition::Middle);
    EXPECT_EQ(a.v1, b.v1);
    EXPECT_EQ(a.v2, b.v2);
    EXPECT_EQ(a.v3, b.v3);
    EXPECT_EQ(a.w2, b.w2);
    EXPECT_EQ(a.w3, b.w3);
    EXPECT_EQ(a.x_out, b.x_out);
}

TEST(LayerForward, PositionFlags) {
    std::mt19937_64 rng(10);
    const auto layer = random_layer(FeatureDesign::parse("f10s10n3", 10), 10);
    const auto op = blur_op();
    const Vector Atz = op.apply_adjoint(pixel_data(rng)), x = pixel_data(rng);
    const Vector y = random_vector(3, rng);
    const auto first = layer_forward(layer, op, Atz, x, y, LayerPosition::First);
    const auto zero_y = layer_forward(layer, op, Atz, x, Vector::Zero(3), LayerPosition::Middle);
    EXPECT_EQ(first.y_in, Vector::Zero(3));
    EXPECT_EQ(first.x_out, zero_y.x_out);
    EXPECT_EQ(layer_forward(layer, op, Atz, x, y, LayerPosition::Last).y_out.size(), 0);
    EXPECT_EQ(layer_forward(layer, op, Atz, x, Vector(), LayerPosition::Only).y_out.size(), 0);
}

TEST(LayerForward, Errors) {
    std::mt19937_64 rng(11);
    auto layer = random_layer(FeatureDesign::parse("f10s10n2", 10), 11);
    const auto op = blur_op();
    const Vector x = pixel_data(rng);
    EXPECT_THROW(layer_forward(layer, op, x, Vector::Zero(99), Vector(), LayerPosition::First), DimensionError);
    EXPECT_THROW(layer_forward(layer, op, x, x, Vector::Zero(3), LayerPosition::Middle), DimensionError);
    layer.tau = 0.0;
    EXPECT_THROW(layer_forward(layer, op, x, x, Vector(), LayerPosition::First), ParameterError);
    layer.tau = 1.0;
    layer.sigma = -1.0;
    EXPECT_THROW(layer_forward(layer, op, x, x, Vector(), LayerPosition::First), ParameterError);
    layer.sigma = 1e-9;
    EXPECT_THROW(layer_forward(layer, op, x, x, Vector(), LayerPosition::First), ParameterError);
}

TEST(NetworkForward, TiedLayersEqualUnrolledIterations) {
    std::mt19937_64 rng(12);
    const auto d = FeatureDesign::parse(kDefaultDesign, 10);
    for (std::size_t K : {1u, 3u, 10u}) {
        NetworkParams net;
        net.op = blur_op();
        net.design = d;
        net.layers.assign(K, random_layer(d, rng()));
        const Vector z = pixel_data(rng);
        const auto out = network_forward(net, z);

        CPProblem<> p{net.op, z, net.layers[0].L, ProxFamily::L1};
        CPSettings s{net.layers[0].tau, net.layers[0].sigma, 0.0, K, 0.0};
        const Vector Atz = net.op.apply_adjoint(z);
        CPState st{Atz, Vector::Zero(420), Atz};
        for (std::size_t k = 0; k < K; ++k) st = cp_iterate(p, s, st);
        EXPECT_LE((out.x_hat - st.x).cwiseAbs().maxCoeff(), 1e-10) << "K=" << K;
        EXPECT_EQ(out.caches.size(), K);
    }
}

TEST(NetworkForward, FiniteUnderInitConstraint) {
    std::mt19937_64 rng(13);
    const auto d = FeatureDesign::parse(kDefaultDesign, 10);
    for (int trial = 0; trial < 1000; ++trial) {
        NetworkParams net;
        net.op = blur_op();
        net.design = d;
        for (int k = 0; k < 3; ++k) net.layers.push_back(random_layer(d, rng(), 0.99));
        const Vector z = random_vector(100, rng, -100.0, 355.0);
        ASSERT_TRUE(network_forward(net, z).x_hat.allFinite()) << "trial " << trial;
    }
}

TEST(NetworkForward, LeavesMaskedEntriesZero) {
    std::mt19937_64 rng(14);
    const auto d = FeatureDesign::parse(kDefaultDesign, 10);
    NetworkParams net;
    net.op = blur_op();
    net.design = d;
    net.layers.assign(4, random_layer(d, 14));
    const auto before = net.layers[0].L;
    for (int i = 0; i < 10; ++i) network_forward(net, pixel_data(rng));
    EXPECT_EQ(net.layers[0].L, before);
    EXPECT_TRUE(((!net.layers[0].support.array()).select(net.layers[0].L.array().abs(), 0.0) == 0.0).all());
}

TEST(NetworkParams, Validation) {
    const auto d = FeatureDesign::parse("f10s10n2", 10);
    NetworkParams net;
    net.op = blur_op();
    net.design = d;
    EXPECT_THROW(net.validate(), ParameterError);
    EXPECT_THROW(network_forward(net, Vector::Zero(100)), ParameterError);
    net.layers.push_back(random_layer(d, 1));
    net.layers.push_back(random_layer(FeatureDesign::parse("f10s10n3", 10), 2));
    EXPECT_THROW(net.validate(), DimensionError);
    net.layers.pop_back();
    EXPECT_NO_THROW(net.validate());
    EXPECT_THROW(network_forward(net, Vector::Zero(64)), DimensionError);
}

TEST(LayerPosition, Classification) {
    EXPECT_EQ(position_of(0, 1), LayerPosition::Only);
    EXPECT_EQ(position_of(0, 3), LayerPosition::First);
    EXPECT_EQ(position_of(1, 3), LayerPosition::Middle);
    EXPECT_EQ(position_of(2, 3), LayerPosition::Last);
}
