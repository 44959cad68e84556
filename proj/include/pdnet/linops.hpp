#pragma once

// Circulant (periodic-boundary) convolution operators, diagonal in the DFT basis.

#include <cassert>
#include <cmath>
#include <memory>
#include <vector>

#include "pdnet/fft.hpp"
#include "pdnet/types.hpp"

namespace pdnet {

class CirculantOp {
public:
    CirculantOp() = default;

    /// Kernel anchored at tap ((kh - 1) / 2, (kw - 1) / 2) and wrapped onto the grid.
    CirculantOp(Matrix kernel, GridShape shape) : kernel_(std::move(kernel)), shape_(shape) {
        require_dims(kernel_.rows() > 0 && kernel_.cols() > 0, "build_circulant: empty kernel");
        require_dims(static_cast<std::size_t>(kernel_.rows()) <= shape.rows &&
                         static_cast<std::size_t>(kernel_.cols()) <= shape.cols,
                     "build_circulant: kernel " + std::to_string(kernel_.rows()) + "x" +
                         std::to_string(kernel_.cols()) + " larger than grid " + to_string(shape));
        if (!kernel_.allFinite()) throw ParameterError("build_circulant: kernel has non-finite taps");

        Vector padded = Vector::Zero(static_cast<Eigen::Index>(shape.size()));
        const auto anchor_r = (kernel_.rows() - 1) / 2;
        const auto anchor_c = (kernel_.cols() - 1) / 2;
        const auto R = static_cast<Eigen::Index>(shape.rows);
        const auto C = static_cast<Eigen::Index>(shape.cols);
        for (Eigen::Index a = 0; a < kernel_.rows(); ++a) {
            for (Eigen::Index b = 0; b < kernel_.cols(); ++b) {
                const auto r = ((a - anchor_r) % R + R) % R;
                const auto c = ((b - anchor_c) % C + C) % C;
                padded[r * C + c] += kernel_(a, b);
            }
        }
        spectrum_ = fft::forward(shape, padded);
        power_.resize(spectrum_.size());
        for (std::size_t i = 0; i < spectrum_.size(); ++i) power_[i] = std::norm(spectrum_[i]);
    }

    /// Operator defined directly by its eigenvalues (no spatial kernel).
    static CirculantOp from_spectrum(fft::Spectrum spectrum, GridShape shape) {
        require_dims(spectrum.size() == shape.size(), "from_spectrum: spectrum does not match grid");
        CirculantOp op;
        op.shape_ = shape;
        op.spectrum_ = std::move(spectrum);
        op.power_.resize(op.spectrum_.size());
        for (std::size_t i = 0; i < op.spectrum_.size(); ++i) op.power_[i] = std::norm(op.spectrum_[i]);
        return op;
    }

    GridShape shape() const { return shape_; }
    const Matrix& kernel() const { return kernel_; }
    const fft::Spectrum& spectrum() const { return spectrum_; }
    /// |Λ_ii|², the eigenvalues of A*A.
    const std::vector<double>& power() const { return power_; }

    Vector apply(const Eigen::Ref<const Vector>& x) const { return multiply(x, false); }
    Vector apply_adjoint(const Eigen::Ref<const Vector>& y) const { return multiply(y, true); }

    /// A*A x.
    Vector apply_gram(const Eigen::Ref<const Vector>& x) const { return apply_diagonal(x, power_); }

    /// Multiplies by F^{-1} diag(d) F for a real diagonal d.
    Vector apply_diagonal(const Eigen::Ref<const Vector>& x, const std::vector<double>& d) const {
        check_shape(x, "apply_diagonal");
        auto X = fft::forward(shape_, x);
        for (std::size_t i = 0; i < X.size(); ++i) X[i] *= d[i];
        return fft::inverse_real(shape_, std::move(X));
    }

private:
    void check_shape(const Eigen::Ref<const Vector>& x, const char* what) const {
        require_dims(static_cast<std::size_t>(x.size()) == shape_.size(),
                     std::string(what) + ": input of size " + std::to_string(x.size()) +
                         " does not match grid " + to_string(shape_));
    }

    Vector multiply(const Eigen::Ref<const Vector>& x, bool conjugate) const {
        check_shape(x, conjugate ? "apply_adjoint" : "apply");
        auto X = fft::forward(shape_, x);
        for (std::size_t i = 0; i < X.size(); ++i) X[i] *= conjugate ? std::conj(spectrum_[i]) : spectrum_[i];
        X = fft::inverse_complex(shape_, std::move(X));
        assert(fft::imaginary_residue(X) < 1e-9);
        Vector out(static_cast<Eigen::Index>(X.size()));
        for (std::size_t i = 0; i < X.size(); ++i) out[static_cast<Eigen::Index>(i)] = X[i].real();
        return out;
    }

    Matrix kernel_;
    GridShape shape_;
    fft::Spectrum spectrum_;
    std::vector<double> power_;
};

inline CirculantOp build_circulant(const Matrix& kernel, GridShape shape) { return CirculantOp(kernel, shape); }

/// p x p box filter with taps 1/p².
inline Matrix uniform_kernel(std::size_t p) {
    require_dims(p > 0, "uniform_kernel: size must be positive");
    const auto n = static_cast<Eigen::Index>(p);
    return Matrix::Constant(n, n, 1.0 / static_cast<double>(p * p));
}

inline Matrix identity_kernel() { return Matrix::Constant(1, 1, 1.0); }

/// (τ A*A + I)^{-1}, applied by spectral division.
class Resolvent {
public:
    Resolvent(const CirculantOp& op, double tau) : op_(&op), tau_(tau) {
        if (!(tau >= 0.0) || !std::isfinite(tau)) throw ParameterError("Resolvent: tau must be nonnegative and finite");
        inv_spectrum_.resize(op.power().size());
        for (std::size_t i = 0; i < inv_spectrum_.size(); ++i) inv_spectrum_[i] = 1.0 / (tau * op.power()[i] + 1.0);
    }

    double tau() const { return tau_; }
    const CirculantOp& op() const { return *op_; }
    const std::vector<double>& inv_spectrum() const { return inv_spectrum_; }

    Vector apply(const Eigen::Ref<const Vector>& x) const { return op_->apply_diagonal(x, inv_spectrum_); }

    /// d/dτ (τA*A + I)^{-1}: diagonal -|Λ|²/(τ|Λ|²+1)².
    std::vector<double> derivative_diagonal() const {
        std::vector<double> b(inv_spectrum_.size());
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = -op_->power()[i] * inv_spectrum_[i] * inv_spectrum_[i];
        return b;
    }

    /// d/dτ [τ (τA*A + I)^{-1}]: diagonal 1/(τ|Λ|²+1)².
    std::vector<double> scaled_derivative_diagonal() const {
        std::vector<double> c(inv_spectrum_.size());
        for (std::size_t i = 0; i < c.size(); ++i) c[i] = inv_spectrum_[i] * inv_spectrum_[i];
        return c;
    }

private:
    const CirculantOp* op_;
    double tau_;
    std::vector<double> inv_spectrum_;
};

inline Vector apply_resolvent(const Resolvent& res, const Eigen::Ref<const Vector>& x) { return res.apply(x); }

}  // namespace pdnet
