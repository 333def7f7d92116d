#pragma once

#include <cstddef>
#include <vector>

namespace matprobe {

/// Interleaved double image, row-major. Values are linear-light unless a
/// function says otherwise.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::size_t c, double fill = 0.0) : width(w), height(h), channels(c), data(w * h * c, fill) {}

    [[nodiscard]] bool empty() const { return data.empty(); }
    [[nodiscard]] std::size_t pixels() const { return width * height; }
    double& at(std::size_t x, std::size_t y, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
    [[nodiscard]] double at(std::size_t x, std::size_t y, std::size_t c = 0) const {
        return data[(y * width + x) * channels + c];
    }

    /// Bilinear lookup in pixel coordinates where (0,0) is the centre of the
    /// top-left pixel; coordinates are clamped to the image.
    [[nodiscard]] double bilinear(double x, double y, std::size_t c) const;

    /// Sub-image [x0, x0+w) x [y0, y0+h); throws DataError when out of bounds.
    [[nodiscard]] Image crop(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) const;
    /// Mean over channels, keeps one channel.
    [[nodiscard]] Image luminance() const;
    [[nodiscard]] double mean() const;

    friend bool operator==(const Image&, const Image&) = default;
};

/// Peak signal-to-noise ratio in dB for signals in [0, peak].
[[nodiscard]] double psnr(const Image& a, const Image& b, double peak = 1.0);

}  // namespace matprobe
