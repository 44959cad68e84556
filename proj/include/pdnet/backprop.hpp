#pragma once

// Reverse-mode pass through the unfolded network. Every Jacobian is applied as a
// vector-Jacobian product; nothing of size (N + 2P)^2 is ever formed.

#include <string>
#include <vector>

#include "pdnet/linops.hpp"
#include "pdnet/network.hpp"
#include "pdnet/proxcalc.hpp"

namespace pdnet {

struct LayerGrads {
    double d_tau = 0.0;
    double d_sigma = 0.0;
    Matrix d_L;

    LayerGrads& operator+=(const LayerGrads& other) {
        d_tau += other.d_tau;
        d_sigma += other.d_sigma;
        if (d_L.size() == 0)
            d_L = other.d_L;
        else
            d_L += other.d_L;
        return *this;
    }
};

struct ParamGrads {
    std::vector<LayerGrads> layers;

    static ParamGrads zeros_like(const NetworkParams& net) {
        ParamGrads g;
        for (const auto& layer : net.layers) g.layers.push_back({0.0, 0.0, Matrix::Zero(layer.L.rows(), layer.L.cols())});
        return g;
    }

    ParamGrads& operator+=(const ParamGrads& other) {
        if (layers.empty()) {
            layers = other.layers;
            return *this;
        }
        for (std::size_t k = 0; k < layers.size(); ++k) layers[k] += other.layers[k];
        return *this;
    }

    bool all_finite() const {
        for (const auto& g : layers)
            if (!std::isfinite(g.d_tau) || !std::isfinite(g.d_sigma) || !g.d_L.allFinite()) return false;
        return true;
    }
};

/// Running adjoint t = (t_x, t_y) with respect to a layer output (x, y).
struct Adjoint {
    Vector t_x;
    Vector t_y;
};

struct LossGrad {
    double loss = 0.0;
    Vector grad;
};

/// ||x_hat - x_true||^2 / I and its gradient (2/I)(x_hat - x_true).
inline LossGrad loss_and_grad(const Vector& x_hat, const Vector& x_true, std::size_t batch_count) {
    require_dims(x_hat.size() == x_true.size(), "loss_and_grad: dimension mismatch");
    if (batch_count == 0) throw ParameterError("loss_and_grad: batch count must be positive");
    const double inv = 1.0 / static_cast<double>(batch_count);
    Vector diff = x_hat - x_true;
    return {diff.squaredNorm() * inv, 2.0 * inv * diff};
}

/// Deliberate derivative faults, used only as negative controls for the gradient checker.
enum class GradientFault { None, DropResolventTauTerm, FlipProxSigmaTerm };

struct LayerBackward {
    Adjoint adj_in;
    LayerGrads grads;
};

inline LayerBackward layer_backward(const LayerParams& params, const CirculantOp& op, const Vector& Atz,
                                    const LayerCache& cache, const Adjoint& adj_out, LayerPosition position,
                                    GradientFault fault = GradientFault::None) {
    const auto N = params.L.cols();
    const auto P = params.L.rows();
    require_dims(cache.x_in.size() == N && cache.v2.size() == P && cache.w2.size() == P,
                 "layer_backward: cache does not match layer parameters");
    require_dims(adj_out.t_x.size() == N, "layer_backward: primal adjoint has wrong size");
    const bool has_dual = !is_last(position) && adj_out.t_y.size() != 0;
    if (has_dual) require_dims(adj_out.t_y.size() == P, "layer_backward: dual adjoint has wrong size");

    const double tau = params.tau;
    const double sigma = params.sigma;
    const Vector& gx = adj_out.t_x;

    LayerBackward out;
    LayerGrads& g = out.grads;

    // H: x+ = R (w1 + sigma tau L^T w2) with R = (tau A^T A + I)^{-1} symmetric.
    const Resolvent resolvent(op, tau);
    const Vector q = resolvent.apply(gx);
    const Vector Lq = params.L * q;

    // dH/dtau = [F^-1 B F, F^-1 C F sigma L^T], B = -|Λ|²/(τ|Λ|²+1)², C = 1/(τ|Λ|²+1)².
    {
        auto G = fft::forward(op.shape(), gx);
        const auto B = resolvent.derivative_diagonal();
        const auto C = resolvent.scaled_derivative_diagonal();
        auto GB = G;
        for (std::size_t i = 0; i < G.size(); ++i) {
            GB[i] *= B[i];
            G[i] *= C[i];
        }
        const Vector Bgx = fft::inverse_real(op.shape(), std::move(GB));
        const Vector Cgx = fft::inverse_real(op.shape(), std::move(G));
        if (fault != GradientFault::DropResolventTauTerm) g.d_tau += Bgx.dot(cache.w1);
        g.d_tau += sigma * Cgx.dot(cache.Ltw2);
    }
    // dH/dsigma = [0, tau R L^T, 0].
    g.d_sigma += tau * Lq.dot(cache.w2);

    // Adjoints on the activations w = (w1, w2, w3).
    const Vector& a1 = q;
    const Vector a2 = sigma * tau * Lq;

    // eta: r1 = 1, r2/r3 from the subgradient selections; only w2 depends on sigma directly.
    const Subgradients r = subgrad_r(cache.v2, cache.v3, sigma);
    const Vector& b1 = a1;
    const Vector b2 = r.r2.cwiseProduct(a2);
    const Vector b3 = has_dual ? Vector(r.r3.cwiseProduct(adj_out.t_y)) : Vector::Zero(P);
    const double prox_sigma = a2.dot(dprox_dsigma(cache.v2, sigma));
    g.d_sigma += fault == GradientFault::FlipProxSigmaTerm ? -prox_sigma : prox_sigma;

    // G and b. Lb1 = Lq since b1 = q.
    //   dv1/dtau = -sigma L^T L x - L^T y + A^T z = -L^T v3 + A^T z
    //   dv1/dsigma = -tau L^T L x,  dv2/dsigma = -y / sigma^2,  dv3/dsigma = L x
    g.d_tau += -Lq.dot(cache.v3) + b1.dot(Atz);
    g.d_sigma += -tau * Lq.dot(cache.Lx) - b2.dot(cache.y_in) / (sigma * sigma) + b3.dot(cache.Lx);

    // Every occurrence of L, collected into two rank-one updates:
    //   G rows:  -tau sigma [(L b1) x^T + (L x) b1^T] - tau y b1^T + b2 x^T + sigma b3 x^T
    //   H block: sigma tau w2 q^T
    const Vector u1 = -tau * sigma * Lq + b2 + sigma * b3;
    const Vector u2 = -tau * sigma * cache.Lx - tau * cache.y_in + sigma * tau * cache.w2;
    g.d_L = u1 * cache.x_in.transpose();
    g.d_L.noalias() += u2 * q.transpose();

    // Adjoint with respect to the layer input (x, y).
    out.adj_in.t_x = b1 + params.L.transpose() * u1;
    if (!is_first(position)) out.adj_in.t_y = -tau * Lq + b2 / sigma + b3;
    return out;
}

struct BackwardOptions {
    /// Zero d_L outside the support mask of masked layers.
    bool respect_mask = true;
    GradientFault fault = GradientFault::None;
};

/// Gradient of ||x_true - f(A^T z)||^2 / I with respect to every layer's (tau, sigma, L).
inline ParamGrads network_backward(const NetworkParams& net, const ForwardResult& forward, const Vector& x_true,
                                   std::size_t batch_count, const BackwardOptions& options = {}) {
    require_dims(forward.caches.size() == net.depth(), "network_backward: cache count does not match depth");
    const auto seed = loss_and_grad(forward.x_hat, x_true, batch_count);
    Adjoint adj{seed.grad, Vector()};
    ParamGrads grads;
    grads.layers.resize(net.depth());
    for (std::size_t k = net.depth(); k-- > 0;) {
        auto step = layer_backward(net.layers[k], net.op, forward.Atz, forward.caches[k], adj,
                                   position_of(k, net.depth()), options.fault);
        if (options.respect_mask && net.layers[k].has_mask())
            step.grads.d_L = net.layers[k].support.select(step.grads.d_L, Matrix::Zero(step.grads.d_L.rows(),
                                                                                        step.grads.d_L.cols()));
        grads.layers[k] = std::move(step.grads);
        adj = std::move(step.adj_in);
    }
    return grads;
}

}  // namespace pdnet
