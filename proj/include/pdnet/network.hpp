#pragma once

// The unfolded network. Each layer is one Chambolle-Pock iteration with theta = 0,
// written as a linear map G, an activation eta = (Id, prox_{h/sigma}, prox_{sigma h*})
// and an output map H that applies the data-term resolvent:
//
//   v1 = x - tau L^T (y + sigma L x) + tau A^T z      w1 = v1
//   v2 = L x + y / sigma                              w2 = prox_l1(v2, 1/sigma)
//   v3 = sigma L x + y                                w3 = clip(v3, -1, 1)
//   x+ = (tau A^T A + I)^{-1} (w1 + sigma tau L^T w2)
//   y+ = w3
//
// The first layer takes y = 0 and the last one only emits x+.

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pdnet/linops.hpp"
#include "pdnet/proxcalc.hpp"
#include "pdnet/types.hpp"

namespace pdnet {

inline constexpr double kMinSigma = 1e-8;

struct FeatureBlock {
    std::size_t filter = 0;
    std::size_t stride = 0;
    std::size_t count = 0;

    friend bool operator==(const FeatureBlock&, const FeatureBlock&) = default;
};

/// Mixture of local (f < side) and global (f == side) feature rows, e.g. "f5s2n30+f7s3n30+f10s10n30".
struct FeatureDesign {
    std::vector<FeatureBlock> blocks;
    std::size_t patch_side = 0;

    /// Positions per axis for one block.
    static std::size_t positions(const FeatureBlock& b, std::size_t side) { return (side - b.filter) / b.stride + 1; }

    void validate() const {
        if (patch_side == 0) throw ParameterError("feature design: patch side must be positive");
        if (blocks.empty()) throw ParameterError("feature design: no blocks");
        for (const auto& b : blocks) {
            if (b.filter == 0 || b.stride == 0 || b.count == 0)
                throw ParameterError("feature design: filter, stride and count must be positive");
            if (b.filter > patch_side)
                throw DimensionError("feature design: filter " + std::to_string(b.filter) + " larger than patch " +
                                     std::to_string(patch_side));
        }
    }

    std::size_t rows() const {
        std::size_t p = 0;
        for (const auto& b : blocks) {
            const auto m = positions(b, patch_side);
            p += b.count * m * m;
        }
        return p;
    }

    std::size_t cols() const { return patch_side * patch_side; }

    std::string to_string() const {
        std::ostringstream os;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (i) os << '+';
            os << 'f' << blocks[i].filter << 's' << blocks[i].stride << 'n' << blocks[i].count;
        }
        return os.str();
    }

    static FeatureDesign parse(const std::string& text, std::size_t patch_side) {
        FeatureDesign design;
        design.patch_side = patch_side;
        std::istringstream in(text);
        std::string token;
        while (std::getline(in, token, '+')) {
            FeatureBlock b;
            char f = 0, s = 0, n = 0;
            std::istringstream t(token);
            if (!(t >> f >> b.filter >> s >> b.stride >> n >> b.count) || f != 'f' || s != 's' || n != 'n' ||
                t.peek() != std::char_traits<char>::eof())
                throw ParameterError("feature design: cannot parse block '" + token + "' (expected fXsYnZ)");
            design.blocks.push_back(b);
        }
        design.validate();
        return design;
    }

    friend bool operator==(const FeatureDesign&, const FeatureDesign&) = default;
};

struct FeatureOperator {
    Matrix L;
    Mask support;
};

/// Rows are ordered block by block, then filter by filter, then by footprint position
/// (row-major over the position grid). Nonzeros are i.i.d. N(0, std^2).
inline FeatureOperator build_feature_operator(const FeatureDesign& design, std::uint64_t seed, double std_dev) {
    design.validate();
    require_positive(std_dev, "feature operator std");
    const auto side = design.patch_side;
    const auto P = static_cast<Eigen::Index>(design.rows());
    const auto N = static_cast<Eigen::Index>(design.cols());
    FeatureOperator out{Matrix::Zero(P, N), Mask::Constant(P, N, false)};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std_dev);
    Eigen::Index row = 0;
    for (const auto& b : design.blocks) {
        const auto m = FeatureDesign::positions(b, side);
        for (std::size_t filter = 0; filter < b.count; ++filter) {
            for (std::size_t pi = 0; pi < m; ++pi) {
                for (std::size_t pj = 0; pj < m; ++pj, ++row) {
                    for (std::size_t r = pi * b.stride; r < pi * b.stride + b.filter; ++r) {
                        for (std::size_t c = pj * b.stride; c < pj * b.stride + b.filter; ++c) {
                            const auto col = static_cast<Eigen::Index>(r * side + c);
                            out.L(row, col) = normal(rng);
                            out.support(row, col) = true;
                        }
                    }
                }
            }
        }
    }
    return out;
}

struct LayerParams {
    double tau = 1.0;
    double sigma = 1.0;
    Matrix L;
    /// Empty when L is unconstrained.
    Mask support;

    bool has_mask() const { return support.size() > 0; }

    void validate() const {
        require_positive(tau, "layer tau");
        require_positive(sigma, "layer sigma");
        if (sigma <= kMinSigma) throw ParameterError("layer sigma below " + std::to_string(kMinSigma));
        if (has_mask())
            require_dims(support.rows() == L.rows() && support.cols() == L.cols(), "layer mask does not match L");
    }

    void apply_mask() {
        if (has_mask()) L = support.select(L, Matrix::Zero(L.rows(), L.cols()));
    }
};

struct NetworkParams {
    std::vector<LayerParams> layers;
    CirculantOp op;
    FeatureDesign design;

    std::size_t depth() const { return layers.size(); }
    std::size_t patch_side() const { return design.patch_side; }

    void validate() const {
        if (layers.empty()) throw ParameterError("network has no layers");
        const auto N = static_cast<Eigen::Index>(op.shape().size());
        const auto P = layers.front().L.rows();
        for (const auto& layer : layers) {
            layer.validate();
            require_dims(layer.L.cols() == N && layer.L.rows() == P,
                         "network layers must share an L of shape " + std::to_string(P) + "x" + std::to_string(N));
        }
    }
};

enum class LayerPosition { First, Middle, Last, Only };

inline bool is_first(LayerPosition p) { return p == LayerPosition::First || p == LayerPosition::Only; }
inline bool is_last(LayerPosition p) { return p == LayerPosition::Last || p == LayerPosition::Only; }

inline LayerPosition position_of(std::size_t k, std::size_t depth) {
    if (depth == 1) return LayerPosition::Only;
    if (k == 0) return LayerPosition::First;
    if (k + 1 == depth) return LayerPosition::Last;
    return LayerPosition::Middle;
}

struct LayerCache {
    Vector x_in, y_in;
    Vector Lx;
    Vector v1, v2, v3;
    Vector w1, w2, w3;
    Vector Ltw2;
    Vector x_out, y_out;
};

/// One layer; Atz = A^T z is passed in since it is shared by every layer of a sample.
inline LayerCache layer_forward(const LayerParams& params, const CirculantOp& op, const Vector& Atz, const Vector& x,
                                const Vector& y, LayerPosition position) {
    require_positive(params.tau, "layer tau");
    require_positive(params.sigma, "layer sigma");
    if (params.sigma <= kMinSigma) throw ParameterError("layer sigma below " + std::to_string(kMinSigma));
    const auto N = params.L.cols();
    const auto P = params.L.rows();
    require_dims(x.size() == N && Atz.size() == N, "layer_forward: primal state does not match L columns");
    require_dims(static_cast<std::size_t>(N) == op.shape().size(), "layer_forward: L does not match operator grid");

    const double tau = params.tau;
    const double sigma = params.sigma;

    LayerCache c;
    c.x_in = x;
    if (is_first(position)) {
        c.y_in = Vector::Zero(P);
    } else {
        require_dims(y.size() == P, "layer_forward: dual state does not match L rows");
        c.y_in = y;
    }
    c.Lx = params.L * x;
    c.v3 = sigma * c.Lx + c.y_in;
    c.v2 = c.Lx + c.y_in / sigma;
    c.w2 = prox_l1(c.v2, 1.0 / sigma);
    c.w3 = prox_l1_conjugate(c.v3, sigma);

    Eigen::Matrix<double, Eigen::Dynamic, 2> stacked(P, 2);
    stacked.col(0) = c.v3;
    stacked.col(1) = c.w2;
    const Eigen::Matrix<double, Eigen::Dynamic, 2> back = params.L.transpose() * stacked;
    c.v1 = x - tau * back.col(0) + tau * Atz;
    c.w1 = c.v1;
    c.Ltw2 = back.col(1);

    const Resolvent resolvent(op, tau);
    c.x_out = resolvent.apply(c.w1 + sigma * tau * c.Ltw2);
    if (!is_last(position)) c.y_out = c.w3;
    return c;
}

struct ForwardResult {
    Vector x_hat;
    Vector Atz;
    std::vector<LayerCache> caches;
};

/// Runs the K layers from u1 = (A^T z, 0).
inline ForwardResult network_forward(const NetworkParams& net, const Vector& z) {
    if (net.layers.empty()) throw ParameterError("network_forward: network has no layers");
    require_dims(static_cast<std::size_t>(z.size()) == net.op.shape().size(),
                 "network_forward: observation does not match operator grid");
    ForwardResult out;
    out.Atz = net.op.apply_adjoint(z);
    out.caches.reserve(net.depth());
    Vector x = out.Atz;
    Vector y;
    for (std::size_t k = 0; k < net.depth(); ++k) {
        out.caches.push_back(layer_forward(net.layers[k], net.op, out.Atz, x, y, position_of(k, net.depth())));
        x = out.caches.back().x_out;
        y = out.caches.back().y_out;
    }
    out.x_hat = std::move(x);
    return out;
}

}  // namespace pdnet
