#pragma once

#include <filesystem>

#include "biskip/image.hpp"
#include "biskip/tensor.hpp"

namespace biskip {

// Decodes PNG/JPEG into RGB (3 channels). Throws DataError on failure.
ByteImage read_image(const std::filesystem::path& path);
// Writes PNG (RGB or single channel).
void write_png(const std::filesystem::path& path, const ByteImage& img);

// [0,1] map -> 8-bit grayscale.
ByteImage map_to_gray(const Tensor& map);
// JET-colored map blended over `base` (RGB).
ByteImage heatmap_overlay(const ByteImage& base, const Tensor& map, double map_weight = 0.6);

}  // namespace biskip
