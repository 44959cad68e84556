#pragma once

// Proximity operators of h = ||.||_1 and its conjugate, with the subgradient
// selections used by backpropagation. On the kinks (|v| equal to the threshold)
// the selection is always 0.

#include <cmath>

#include "pdnet/types.hpp"

namespace pdnet {

enum class ProxFamily { L1 };

/// Soft thresholding: sign(v) max(|v| - threshold, 0).
inline Vector prox_l1(const Eigen::Ref<const Vector>& v, double threshold) {
    require_positive(threshold, "prox_l1 threshold");
    Vector out(v.size());
    for (Eigen::Index p = 0; p < v.size(); ++p) {
        const double mag = std::abs(v[p]) - threshold;
        out[p] = mag > 0.0 ? std::copysign(mag, v[p]) : 0.0;
    }
    return out;
}

/// prox of sigma h*. For h = l1 this is the projection onto [-1, 1]^P whatever sigma is.
inline Vector prox_l1_conjugate(const Eigen::Ref<const Vector>& v, double sigma) {
    require_positive(sigma, "prox_l1_conjugate sigma");
    return v.cwiseMax(-1.0).cwiseMin(1.0);
}

struct Subgradients {
    Vector r2;
    Vector r3;
};

/// Derivative selections of the two prox nodes: r2 for soft thresholding at 1/sigma,
/// r3 for clipping to [-1, 1]. The identity node has r1 = 1.
inline Subgradients subgrad_r(const Eigen::Ref<const Vector>& v2, const Eigen::Ref<const Vector>& v3, double sigma) {
    require_positive(sigma, "subgrad_r sigma");
    const double t = 1.0 / sigma;
    Subgradients s{Vector(v2.size()), Vector(v3.size())};
    for (Eigen::Index p = 0; p < v2.size(); ++p) s.r2[p] = std::abs(v2[p]) > t ? 1.0 : 0.0;
    for (Eigen::Index p = 0; p < v3.size(); ++p) s.r3[p] = std::abs(v3[p]) < 1.0 ? 1.0 : 0.0;
    return s;
}

/// d/dsigma of prox_l1(v2, 1/sigma) at fixed v2.
inline Vector dprox_dsigma(const Eigen::Ref<const Vector>& v2, double sigma) {
    require_positive(sigma, "dprox_dsigma sigma");
    const double t = 1.0 / sigma;
    const double d = t * t;
    Vector out(v2.size());
    for (Eigen::Index p = 0; p < v2.size(); ++p) {
        if (v2[p] > t)
            out[p] = d;
        else if (v2[p] < -t)
            out[p] = -d;
        else
            out[p] = 0.0;
    }
    return out;
}

/// h(u) for the given family.
inline double penalty(ProxFamily family, const Eigen::Ref<const Vector>& u) {
    switch (family) {
        case ProxFamily::L1:
            return u.lpNorm<1>();
    }
    return 0.0;
}

}  // namespace pdnet
