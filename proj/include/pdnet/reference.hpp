#pragma once

// Extended-precision forward pass used as the finite-difference oracle for the
// analytic gradients. It shares no arithmetic with the production path: blur
// and its adjoint are direct circular convolutions, and the resolvent uses a
// naive separable DFT, all in long double.

#include <cmath>
#include <complex>
#include <vector>

#include "pdnet/network.hpp"

namespace pdnet::reference {

using Real = long double;
using RVector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using RMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CReal = std::complex<Real>;

class Convolution {
public:
    Convolution() = default;
    Convolution(const Matrix& kernel, GridShape shape) : kernel_(kernel.cast<Real>()), shape_(shape) {
        // Eigenvalues of the circulant operator by direct summation.
        const auto R = shape.rows, C = shape.cols;
        power_.assign(R * C, 0.0L);
        const Real two_pi = 2.0L * std::acos(-1.0L);
        for (std::size_t u = 0; u < R; ++u) {
            for (std::size_t v = 0; v < C; ++v) {
                CReal acc = 0.0L;
                for (Eigen::Index a = 0; a < kernel_.rows(); ++a) {
                    for (Eigen::Index b = 0; b < kernel_.cols(); ++b) {
                        const auto dr = static_cast<Real>(a - (kernel_.rows() - 1) / 2);
                        const auto dc = static_cast<Real>(b - (kernel_.cols() - 1) / 2);
                        const Real phase = -two_pi * (dr * static_cast<Real>(u) / static_cast<Real>(R) +
                                                      dc * static_cast<Real>(v) / static_cast<Real>(C));
                        acc += kernel_(a, b) * CReal(std::cos(phase), std::sin(phase));
                    }
                }
                power_[u * C + v] = std::norm(acc);
            }
        }
        twiddle_r_ = twiddles(R);
        twiddle_c_ = twiddles(C);
    }

    RVector apply(const RVector& x, bool adjoint) const {
        const auto R = static_cast<Eigen::Index>(shape_.rows);
        const auto C = static_cast<Eigen::Index>(shape_.cols);
        const auto ar = (kernel_.rows() - 1) / 2, ac = (kernel_.cols() - 1) / 2;
        RVector out = RVector::Zero(x.size());
        for (Eigen::Index i = 0; i < R; ++i)
            for (Eigen::Index j = 0; j < C; ++j)
                for (Eigen::Index a = 0; a < kernel_.rows(); ++a)
                    for (Eigen::Index b = 0; b < kernel_.cols(); ++b) {
                        const Eigen::Index di = adjoint ? (a - ar) : -(a - ar);
                        const Eigen::Index dj = adjoint ? (b - ac) : -(b - ac);
                        const auto r = ((i + di) % R + R) % R;
                        const auto c = ((j + dj) % C + C) % C;
                        out[i * C + j] += kernel_(a, b) * x[r * C + c];
                    }
        return out;
    }

    /// (tau A^T A + I)^{-1} x through a naive 2-D DFT.
    RVector resolvent(const RVector& x, Real tau) const {
        auto X = dft(x, false);
        for (std::size_t i = 0; i < X.size(); ++i) X[i] /= tau * power_[i] + 1.0L;
        X = dft_complex(X, true);
        RVector out(x.size());
        const Real scale = 1.0L / static_cast<Real>(X.size());
        for (std::size_t i = 0; i < X.size(); ++i) out[static_cast<Eigen::Index>(i)] = X[i].real() * scale;
        return out;
    }

private:
    static std::vector<CReal> twiddles(std::size_t n) {
        std::vector<CReal> w(n);
        const Real two_pi = 2.0L * std::acos(-1.0L);
        for (std::size_t k = 0; k < n; ++k) {
            const Real phase = -two_pi * static_cast<Real>(k) / static_cast<Real>(n);
            w[k] = CReal(std::cos(phase), std::sin(phase));
        }
        return w;
    }

    std::vector<CReal> dft(const RVector& x, bool inverse) const {
        std::vector<CReal> in(static_cast<std::size_t>(x.size()));
        for (std::size_t i = 0; i < in.size(); ++i) in[i] = x[static_cast<Eigen::Index>(i)];
        return dft_complex(in, inverse);
    }

    std::vector<CReal> dft_complex(const std::vector<CReal>& in, bool inverse) const {
        const auto R = shape_.rows, C = shape_.cols;
        auto tw = [&](const std::vector<CReal>& table, std::size_t k) { return inverse ? std::conj(table[k]) : table[k]; };
        std::vector<CReal> rows_done(R * C), out(R * C);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t v = 0; v < C; ++v) {
                CReal acc = 0.0L;
                for (std::size_t c = 0; c < C; ++c) acc += in[r * C + c] * tw(twiddle_c_, (v * c) % C);
                rows_done[r * C + v] = acc;
            }
        for (std::size_t u = 0; u < R; ++u)
            for (std::size_t v = 0; v < C; ++v) {
                CReal acc = 0.0L;
                for (std::size_t r = 0; r < R; ++r) acc += rows_done[r * C + v] * tw(twiddle_r_, (u * r) % R);
                out[u * C + v] = acc;
            }
        return out;
    }

    RMatrix kernel_;
    GridShape shape_;
    std::vector<Real> power_;
    std::vector<CReal> twiddle_r_, twiddle_c_;
};

struct Layer {
    Real tau;
    Real sigma;
    RMatrix L;
};

struct Network {
    std::vector<Layer> layers;
    Convolution conv;

    explicit Network(const NetworkParams& net) : conv(net.op.kernel(), net.op.shape()) {
        for (const auto& l : net.layers) layers.push_back({l.tau, l.sigma, l.L.cast<Real>()});
    }
};

struct Output {
    RVector x_hat;
    /// Signs of every prox input relative to its kink, per layer, for the outputs that matter.
    std::vector<signed char> pattern;
};

inline Output forward(const Network& net, const Vector& z_in) {
    const RVector z = z_in.cast<Real>();
    const RVector Atz = net.conv.apply(z, true);
    Output out;
    RVector x = Atz;
    RVector y = RVector::Zero(net.layers.front().L.rows());
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const auto& layer = net.layers[k];
        const bool last = k + 1 == net.layers.size();
        const RVector Lx = layer.L * x;
        const RVector v2 = Lx + y / layer.sigma;
        const RVector v3 = layer.sigma * Lx + y;
        const Real t = 1.0L / layer.sigma;
        RVector w2(v2.size()), w3(v3.size());
        for (Eigen::Index p = 0; p < v2.size(); ++p) {
            const Real m = std::abs(v2[p]) - t;
            w2[p] = m > 0 ? std::copysign(m, v2[p]) : 0.0L;
            w3[p] = std::min(1.0L, std::max(-1.0L, v3[p]));
            out.pattern.push_back(static_cast<signed char>(v2[p] > t ? 1 : (v2[p] < -t ? -1 : 0)));
        }
        if (!last)
            for (Eigen::Index p = 0; p < v3.size(); ++p)
                out.pattern.push_back(static_cast<signed char>(v3[p] > 1 ? 1 : (v3[p] < -1 ? -1 : 0)));
        const RVector v1 = x - layer.tau * (layer.L.transpose() * v3) + layer.tau * Atz;
        const RVector s = v1 + layer.sigma * layer.tau * (layer.L.transpose() * w2);
        x = net.conv.resolvent(s, layer.tau);
        y = w3;
    }
    out.x_hat = std::move(x);
    return out;
}

inline Real loss(const Output& out, const Vector& x_true) { return (out.x_hat - x_true.cast<Real>()).squaredNorm(); }

}  // namespace pdnet::reference
