#include <algorithm>
#include <cmath>
#include <string>

#include "matprobe/error.hpp"
#include "matprobe/renderer.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::renderer {

namespace {

// Taps of a normalised box of `width` samples centred on zero.
std::vector<std::pair<long, double>> box_taps(long width) {
    std::vector<std::pair<long, double>> taps;
    const double w = 1.0 / static_cast<double>(width);
    if (width % 2 == 1) {
        for (long o = -(width - 1) / 2; o <= (width - 1) / 2; ++o) taps.emplace_back(o, w);
    } else {
        const long h = width / 2;
        for (long o = -h; o <= h; ++o) taps.emplace_back(o, (o == -h || o == h) ? 0.5 * w : w);
    }
    return taps;
}

}  // namespace

Image pixel_integrate(const Image& img, long width) {
    if (width < 1) {
        throw UsageError("pixel box of " + std::to_string(width) +
                         " samples is below the ray-grid resolution; decrease ray_spacing or raise the fill factor");
    }
    if (width == 1) return img;
    const auto taps = box_taps(width);
    const long w = static_cast<long>(img.width);
    const long h = static_cast<long>(img.height);
    const std::size_t ch = img.channels;
    Image tmp(img.width, img.height, ch);
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < ch; ++c) {
                double s = 0.0;
                for (const auto& [o, wt] : taps) s += wt * img.at(std::clamp(x + o, 0L, w - 1), y, c);
                tmp.at(x, y, c) = s;
            }
        }
    }
    Image out(img.width, img.height, ch);
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < ch; ++c) {
                double s = 0.0;
                for (const auto& [o, wt] : taps) s += wt * tmp.at(x, std::clamp(y + o, 0L, h - 1), c);
                out.at(x, y, c) = s;
            }
        }
    }
    return out;
}

Image sample_grid(const Image& img, std::size_t step) {
    if (step < 1) throw UsageError("sample step must be >= 1");
    if (step == 1) return img;
    const std::size_t off = (step - 1) / 2;
    Image out(img.width / step, img.height / step, img.channels);
    for (std::size_t y = 0; y < out.height; ++y) {
        for (std::size_t x = 0; x < out.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(x * step + off, y * step + off, c);
        }
    }
    return out;
}

Image add_noise(const Image& img, double read_noise, double photon_gain, std::uint64_t seed) {
    if (!(read_noise >= 0.0) || !(photon_gain >= 0.0)) throw UsageError("noise parameters must be >= 0");
    if (read_noise == 0.0 && photon_gain == 0.0) return img;
    Image out = img;
    const double var0 = read_noise * read_noise;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double v = out.data[i];
        const double sd = std::sqrt(var0 + photon_gain * std::max(v, 0.0));
        out.data[i] = v + sd * rng::gaussian(seed, i);
    }
    return out;
}

}  // namespace matprobe::renderer
