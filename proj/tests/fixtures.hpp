#pragma once

#include <string>

#include "pdnet/image_io.hpp"
#include "pdnet/imaging.hpp"

namespace pdnet::testing {

inline std::filesystem::path data_dir() { return PDNET_TEST_DATA; }

/// count patches of side 10 from one training image, each blurred and noised on its own periodic grid.
inline PatchPairSet toy_patch_set(std::size_t count, std::uint64_t seed, std::size_t blur = 3, double alpha = 10.0,
                                  const std::string& image = "train/camera_0.pgm") {
    const auto clean = io::read_pgm(data_dir() / image);
    return extract_patches_circulant(clean, DegradationSpec::uniform(blur, alpha, seed), count, 10, seed);
}

}  // namespace pdnet::testing
