#pragma once

#include <string>
#include <vector>

#include "pdnet/types.hpp"

namespace pdnet {

/// Aligned (clean, degraded) patch pairs, each flattened row-major.
struct PatchPairSet {
    std::vector<Vector> clean;
    std::vector<Vector> degraded;
    std::size_t patch_side = 0;
    /// Blur used to produce the degraded patches.
    Matrix kernel;
    double alpha = 0.0;
    std::string source;

    std::size_t size() const { return clean.size(); }
    bool empty() const { return clean.empty(); }

    void validate() const {
        require_dims(clean.size() == degraded.size(), "patch set: clean and degraded counts differ");
        const auto n = static_cast<Eigen::Index>(patch_side * patch_side);
        for (std::size_t i = 0; i < clean.size(); ++i)
            require_dims(clean[i].size() == n && degraded[i].size() == n,
                         "patch set: patch " + std::to_string(i) + " does not have " + std::to_string(n) + " pixels");
    }

    PatchPairSet subset(std::size_t begin, std::size_t end) const {
        PatchPairSet out;
        out.patch_side = patch_side;
        out.kernel = kernel;
        out.alpha = alpha;
        out.source = source;
        out.clean.assign(clean.begin() + static_cast<std::ptrdiff_t>(begin), clean.begin() + static_cast<std::ptrdiff_t>(end));
        out.degraded.assign(degraded.begin() + static_cast<std::ptrdiff_t>(begin),
                            degraded.begin() + static_cast<std::ptrdiff_t>(end));
        return out;
    }
};

}  // namespace pdnet
