#pragma once

// Degradation model z = A x + e, patch sampling, sliding-window restoration and PSNR.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pdnet/dataset.hpp"
#include "pdnet/linops.hpp"
#include "pdnet/network.hpp"
#include "pdnet/parallel.hpp"

namespace pdnet {

inline constexpr double kPsnrCap = 99.0;

struct ImageTensor {
    Matrix pixels;
    double range_peak = 255.0;

    GridShape shape() const {
        return {static_cast<std::size_t>(pixels.rows()), static_cast<std::size_t>(pixels.cols())};
    }

    Vector flat() const { return Eigen::Map<const Vector>(pixels.data(), pixels.size()); }

    static ImageTensor from_flat(const Vector& v, GridShape shape, double peak = 255.0) {
        ImageTensor img;
        img.pixels = Eigen::Map<const Matrix>(v.data(), static_cast<Eigen::Index>(shape.rows),
                                              static_cast<Eigen::Index>(shape.cols));
        img.range_peak = peak;
        return img;
    }

    ImageTensor clipped() const {
        ImageTensor out = *this;
        out.pixels = pixels.cwiseMax(0.0).cwiseMin(range_peak);
        return out;
    }
};

struct DegradationSpec {
    /// Blur kernel (1x1 identity for pure denoising).
    Matrix kernel = identity_kernel();
    double alpha = 0.0;
    std::uint64_t seed = 0;

    static DegradationSpec uniform(std::size_t blur, double alpha, std::uint64_t seed) {
        if (alpha < 0.0 || !std::isfinite(alpha)) throw ParameterError("noise level alpha must be >= 0");
        return {blur <= 1 ? identity_kernel() : uniform_kernel(blur), alpha, seed};
    }
};

/// A x + e with e ~ N(0, alpha^2 I) drawn from mt19937_64(seed); not clipped.
inline ImageTensor degrade(const ImageTensor& image, const DegradationSpec& spec, const CirculantOp& op) {
    require_dims(op.shape() == image.shape(), "degrade: operator grid " + to_string(op.shape()) +
                                                  " does not match image " + to_string(image.shape()));
    if (spec.alpha < 0.0) throw ParameterError("degrade: alpha must be nonnegative");
    Vector z = op.apply(image.flat());
    if (spec.alpha > 0.0) {
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> noise(0.0, spec.alpha);
        for (auto& v : z) v += noise(rng);
    }
    return ImageTensor::from_flat(z, image.shape(), image.range_peak);
}

inline ImageTensor degrade(const ImageTensor& image, const DegradationSpec& spec) {
    return degrade(image, spec, CirculantOp(spec.kernel, image.shape()));
}

inline Vector crop(const Matrix& pixels, std::size_t top, std::size_t left, std::size_t side) {
    const auto s = static_cast<Eigen::Index>(side);
    Matrix block = pixels.block(static_cast<Eigen::Index>(top), static_cast<Eigen::Index>(left), s, s);
    return Eigen::Map<const Vector>(block.data(), block.size());
}

struct PatchCorner {
    std::size_t top = 0;
    std::size_t left = 0;
};

/// Uniform top-left corners for count patches inside a rows x cols image.
inline std::vector<PatchCorner> sample_corners(GridShape image, std::size_t side, std::size_t count,
                                               std::uint64_t seed) {
    require_dims(side > 0 && side <= image.rows && side <= image.cols,
                 "patch of side " + std::to_string(side) + " does not fit in image " + to_string(image));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> row(0, image.rows - side), col(0, image.cols - side);
    std::vector<PatchCorner> corners(count);
    for (auto& c : corners) {
        c.top = row(rng);
        c.left = col(rng);
    }
    return corners;
}

/// Aligned crops of a clean image and its degraded version.
inline PatchPairSet extract_patches(const ImageTensor& clean, const ImageTensor& degraded, std::size_t count,
                                    std::size_t patch_side, std::uint64_t seed) {
    require_dims(clean.shape() == degraded.shape(), "extract_patches: clean and degraded images are not aligned");
    PatchPairSet set;
    set.patch_side = patch_side;
    for (const auto& c : sample_corners(clean.shape(), patch_side, count, seed)) {
        set.clean.push_back(crop(clean.pixels, c.top, c.left, patch_side));
        set.degraded.push_back(crop(degraded.pixels, c.top, c.left, patch_side));
    }
    return set;
}

/// Crops clean patches and degrades each one on its own periodic grid, so the
/// degradation matches the network's internal operator exactly.
inline PatchPairSet extract_patches_circulant(const ImageTensor& clean, const DegradationSpec& spec, std::size_t count,
                                              std::size_t patch_side, std::uint64_t seed) {
    const CirculantOp op(spec.kernel, {patch_side, patch_side});
    PatchPairSet set;
    set.patch_side = patch_side;
    set.kernel = spec.kernel;
    set.alpha = spec.alpha;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.alpha > 0.0 ? spec.alpha : 1.0);
    for (const auto& c : sample_corners(clean.shape(), patch_side, count, seed)) {
        Vector x = crop(clean.pixels, c.top, c.left, patch_side);
        Vector z = op.apply(x);
        if (spec.alpha > 0.0)
            for (auto& v : z) v += noise(rng);
        set.clean.push_back(std::move(x));
        set.degraded.push_back(std::move(z));
    }
    return set;
}

enum class StitchMode { Independent, Averaged };

/// Window origins along one axis: 0, s, 2s, ... plus a final window flush with the end.
inline std::vector<std::size_t> window_origins(std::size_t length, std::size_t side, std::size_t stride) {
    require_dims(side <= length, "window larger than image");
    if (stride == 0) throw ParameterError("stride must be positive");
    std::vector<std::size_t> origins;
    for (std::size_t p = 0; p + side <= length; p += stride) origins.push_back(p);
    if (origins.back() + side < length) origins.push_back(length - side);
    return origins;
}

/// Per-pixel number of windows covering it.
inline Matrix coverage_counts(GridShape image, std::size_t side, std::size_t stride) {
    Matrix counts = Matrix::Zero(static_cast<Eigen::Index>(image.rows), static_cast<Eigen::Index>(image.cols));
    const auto s = static_cast<Eigen::Index>(side);
    for (auto r : window_origins(image.rows, side, stride))
        for (auto c : window_origins(image.cols, side, stride))
            counts.block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c), s, s).array() += 1.0;
    return counts;
}

struct RestoreOptions {
    StitchMode mode = StitchMode::Averaged;
    /// Window stride for averaged mode; independent mode always tiles with stride = patch side.
    std::size_t stride = 1;
    std::size_t threads = 1;
};

/// Slides the network over the image. Each window is restored from its own
/// degraded crop; overlapping outputs are averaged per pixel.
inline ImageTensor restore(const NetworkParams& net, const ImageTensor& degraded, const RestoreOptions& options = {}) {
    const std::size_t side = net.patch_side();
    const auto shape = degraded.shape();
    require_dims(side > 0 && side <= shape.rows && side <= shape.cols,
                 "restore: image " + to_string(shape) + " smaller than patch side " + std::to_string(side));
    const std::size_t stride = options.mode == StitchMode::Independent ? side : options.stride;
    const auto rows = window_origins(shape.rows, side, stride);
    const auto cols = window_origins(shape.cols, side, stride);

    // One partial sum per row of windows, merged in order.
    std::vector<Matrix> partial(rows.size());
    const auto s = static_cast<Eigen::Index>(side);
    parallel_for(rows.size(), options.threads, [&](std::size_t i) {
        Matrix acc = Matrix::Zero(s, static_cast<Eigen::Index>(shape.cols));
        for (auto c : cols) {
            const Vector out = network_forward(net, crop(degraded.pixels, rows[i], c, side)).x_hat;
            acc.block(0, static_cast<Eigen::Index>(c), s, s) += Eigen::Map<const Matrix>(out.data(), s, s);
        }
        partial[i] = std::move(acc);
    });
    Matrix sum = Matrix::Zero(static_cast<Eigen::Index>(shape.rows), static_cast<Eigen::Index>(shape.cols));
    for (std::size_t i = 0; i < rows.size(); ++i)
        sum.block(static_cast<Eigen::Index>(rows[i]), 0, s, sum.cols()) += partial[i];
    ImageTensor out;
    out.range_peak = degraded.range_peak;
    out.pixels = sum.cwiseQuotient(coverage_counts(shape, side, stride));
    return out;
}

/// 10 log10(peak^2 / MSE), capped at 99 dB.
inline double psnr(const ImageTensor& reference, const ImageTensor& test) {
    require_dims(reference.shape() == test.shape(), "psnr: image dimensions differ");
    const double mse = (reference.pixels - test.pixels).squaredNorm() / static_cast<double>(reference.pixels.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(reference.range_peak * reference.range_peak / mse));
}

}  // namespace pdnet
