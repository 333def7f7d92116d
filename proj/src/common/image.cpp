#include "matprobe/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "matprobe/error.hpp"

namespace matprobe {

double Image::bilinear(double x, double y, std::size_t c) const {
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    const auto x0 = static_cast<std::size_t>(x);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t x1 = std::min(x0 + 1, width - 1);
    const std::size_t y1 = std::min(y0 + 1, height - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    const double top = (1.0 - fx) * at(x0, y0, c) + fx * at(x1, y0, c);
    const double bottom = (1.0 - fx) * at(x0, y1, c) + fx * at(x1, y1, c);
    return (1.0 - fy) * top + fy * bottom;
}

Image Image::crop(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) const {
    if (w == 0 || h == 0) throw DataError("empty crop");
    if (x0 + w > width || y0 + h > height) {
        throw DataError("crop " + std::to_string(w) + "x" + std::to_string(h) + "+" + std::to_string(x0) + "+" +
                        std::to_string(y0) + " exceeds " + std::to_string(width) + "x" + std::to_string(height));
    }
    Image out(w, h, channels);
    for (std::size_t y = 0; y < h; ++y) {
        const double* src = data.data() + ((y0 + y) * width + x0) * channels;
        std::copy_n(src, w * channels, out.data.data() + y * w * channels);
    }
    return out;
}

Image Image::luminance() const {
    Image out(width, height, 1);
    for (std::size_t i = 0; i < pixels(); ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < channels; ++c) s += data[i * channels + c];
        out.data[i] = s / static_cast<double>(channels);
    }
    return out;
}

double Image::mean() const {
    double s = 0.0;
    for (double v : data) s += v;
    return data.empty() ? 0.0 : s / static_cast<double>(data.size());
}

double psnr(const Image& a, const Image& b, double peak) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
        throw DataError("psnr: image shapes differ");
    }
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace matprobe
