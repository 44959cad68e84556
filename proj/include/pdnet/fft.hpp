#pragma once

#include <complex>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include <fftw3.h>

#include "pdnet/types.hpp"

namespace pdnet::fft {

using Complex = std::complex<double>;
using Spectrum = std::vector<Complex>;

namespace detail {

// FFTW planning is not thread-safe; execution through the new-array interface is.
// Plans are created once per (shape, direction) and shared.
class PlanCache {
public:
    static PlanCache& instance() {
        static PlanCache cache;
        return cache;
    }

    fftw_plan get(GridShape shape, int sign) {
        std::lock_guard lock(mutex_);
        auto key = std::make_tuple(shape.rows, shape.cols, sign);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        std::vector<Complex> scratch(shape.size());
        auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
        fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(shape.rows), static_cast<int>(shape.cols), buf, buf,
                                          sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
        plans_.emplace(key, plan);
        return plan;
    }

    PlanCache(const PlanCache&) = delete;
    PlanCache& operator=(const PlanCache&) = delete;

private:
    PlanCache() = default;
    ~PlanCache() {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

    std::mutex mutex_;
    std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

inline void execute(GridShape shape, int sign, Spectrum& data) {
    fftw_plan plan = PlanCache::instance().get(shape, sign);
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(plan, buf, buf);
}

}  // namespace detail

/// Unnormalized 2-D DFT of a real row-major signal.
inline Spectrum forward(GridShape shape, const Eigen::Ref<const Vector>& x) {
    require_dims(static_cast<std::size_t>(x.size()) == shape.size(),
                 "fft::forward: signal of size " + std::to_string(x.size()) + " does not match grid " + to_string(shape));
    Spectrum data(shape.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = Complex(x[static_cast<Eigen::Index>(i)], 0.0);
    detail::execute(shape, FFTW_FORWARD, data);
    return data;
}

/// Inverse DFT (normalized by 1/size); returns the complex result.
inline Spectrum inverse_complex(GridShape shape, Spectrum data) {
    detail::execute(shape, FFTW_BACKWARD, data);
    const double scale = 1.0 / static_cast<double>(shape.size());
    for (auto& c : data) c *= scale;
    return data;
}

/// Largest |imag| relative to the largest |real| entry.
inline double imaginary_residue(const Spectrum& data) {
    double re = 0.0, im = 0.0;
    for (const auto& c : data) {
        re = std::max(re, std::abs(c.real()));
        im = std::max(im, std::abs(c.imag()));
    }
    return im / std::max(re, 1.0);
}

/// Inverse DFT of a spectrum known to belong to a real signal.
inline Vector inverse_real(GridShape shape, Spectrum data) {
    data = inverse_complex(shape, std::move(data));
    Vector out(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) out[static_cast<Eigen::Index>(i)] = data[i].real();
    return out;
}

}  // namespace pdnet::fft
