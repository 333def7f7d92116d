#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "matprobe/image.hpp"
#include "matprobe/renderer.hpp"

namespace matprobe::tools {

/// Raw samples of a strip or tiled TIFF, interleaved, as stored.
struct TiffRaster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    int bits = 8;           // 8 or 16 unsigned, or 32 float
    bool floating = false;
    std::vector<double> samples;
};

[[nodiscard]] TiffRaster read_tiff(const std::filesystem::path& path);
void write_tiff(const std::filesystem::path& path, const TiffRaster& raster);

/// Integer samples are taken as sRGB-encoded and converted to linear light;
/// alpha is dropped.
[[nodiscard]] Image tiff_to_image(const TiffRaster& raster);
/// First channel times `scale` metres; zero and non-finite values become NaN.
[[nodiscard]] renderer::DepthMap tiff_to_depth(const TiffRaster& raster, double scale);

}  // namespace matprobe::tools
