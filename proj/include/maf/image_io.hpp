#pragma once

#include <filesystem>

#include "maf/tensor.hpp"

namespace maf {

/// Binary PPM from a (3,H,W) image in [0,1] (values clamped).
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);
/// Binary PGM from an (H,W) map, min-max normalized to 0..255.
void write_pgm(const std::filesystem::path& path, const Tensor<float>& map);
/// Reads a binary PPM (maxval 255) into (3,H,W) in [0,1].
Tensor<float> read_ppm(const std::filesystem::path& path);

}  // namespace maf
