#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "matprobe/error.hpp"
#include "matprobe/renderer.hpp"

namespace matprobe::renderer {

double mitchell(double x, double b, double c) {
    x = std::abs(x);
    if (x < 1.0) {
        return ((12.0 - 9.0 * b - 6.0 * c) * x * x * x + (-18.0 + 12.0 * b + 6.0 * c) * x * x + (6.0 - 2.0 * b)) / 6.0;
    }
    if (x < 2.0) {
        return ((-b - 6.0 * c) * x * x * x + (6.0 * b + 30.0 * c) * x * x + (-12.0 * b - 48.0 * c) * x +
                (8.0 * b + 24.0 * c)) /
               6.0;
    }
    return 0.0;
}

double lanczos3(double x) {
    x = std::abs(x);
    if (x < 1e-12) return 1.0;
    if (x >= 3.0) return 0.0;
    const double px = std::numbers::pi * x;
    return 3.0 * std::sin(px) * std::sin(px / 3.0) / (px * px);
}

namespace {

struct Contribution {
    long first = 0;
    long nearest = 0;
    std::vector<double> weights;
};

// Weights for every output position; out-of-range taps are clamped to the
// edge sample.
std::vector<Contribution> contributions(std::size_t in, std::size_t out, ResampleFilter f) {
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const double fscale = std::max(1.0, scale);
    const double radius = (f == ResampleFilter::mitchell ? 2.0 : 3.0) * fscale;
    std::vector<Contribution> cs(out);
    for (std::size_t o = 0; o < out; ++o) {
        const double centre = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const long lo = static_cast<long>(std::floor(centre - radius));
        const long hi = static_cast<long>(std::ceil(centre + radius));
        Contribution& c = cs[o];
        c.first = lo;
        c.nearest = std::lround(centre);
        double sum = 0.0;
        for (long i = lo; i <= hi; ++i) {
            const double d = (static_cast<double>(i) - centre) / fscale;
            const double w = f == ResampleFilter::mitchell ? mitchell(d) : lanczos3(d);
            c.weights.push_back(w);
            sum += w;
        }
        for (double& w : c.weights) w /= sum;
    }
    return cs;
}

// Accumulates offsets from the nearest sample so a constant signal comes
// back bit-exact regardless of weight rounding.
double apply(const Contribution& c, std::size_t n, auto&& sample) {
    const long last = static_cast<long>(n) - 1;
    const double ref = sample(static_cast<std::size_t>(std::clamp(c.nearest, 0L, last)));
    double s = 0.0;
    for (std::size_t k = 0; k < c.weights.size(); ++k) {
        const long i = std::clamp<long>(c.first + static_cast<long>(k), 0, last);
        s += c.weights[k] * (sample(static_cast<std::size_t>(i)) - ref);
    }
    return ref + s;
}

Image resize_axis(const Image& img, std::size_t out, bool horizontal) {
    const std::size_t in = horizontal ? img.width : img.height;
    if (out == in) return img;
    const auto f = out > in ? ResampleFilter::mitchell : ResampleFilter::lanczos3;
    const auto cs = contributions(in, out, f);
    Image res(horizontal ? out : img.width, horizontal ? img.height : out, img.channels);
    for (std::size_t y = 0; y < res.height; ++y) {
        for (std::size_t x = 0; x < res.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double v = horizontal ? apply(cs[x], in, [&](std::size_t i) { return img.at(i, y, c); })
                                            : apply(cs[y], in, [&](std::size_t i) { return img.at(x, i, c); });
                res.at(x, y, c) = v;
            }
        }
    }
    return res;
}

}  // namespace

std::vector<double> resample_1d(std::span<const double> in, std::size_t out_size, ResampleFilter f) {
    if (in.empty() || out_size == 0) throw UsageError("cannot resample an empty signal");
    const auto cs = contributions(in.size(), out_size, f);
    std::vector<double> out(out_size);
    for (std::size_t o = 0; o < out_size; ++o) out[o] = apply(cs[o], in.size(), [&](std::size_t i) { return in[i]; });
    return out;
}

Image resize(const Image& img, std::size_t width, std::size_t height) {
    if (img.empty() || width == 0 || height == 0) throw UsageError("cannot resize to or from an empty image");
    return resize_axis(resize_axis(img, width, true), height, false);
}

CropRect centered_clean_square(std::size_t width, std::size_t height, std::span<const std::uint8_t> flagged) {
    if (flagged.size() != width * height) throw UsageError("flag mask does not match the frame");
    // Summed-area table for O(1) rectangle queries.
    std::vector<std::size_t> sat((width + 1) * (height + 1), 0);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            sat[(y + 1) * (width + 1) + x + 1] = flagged[y * width + x] + sat[y * (width + 1) + x + 1] +
                                                 sat[(y + 1) * (width + 1) + x] - sat[y * (width + 1) + x];
        }
    }
    for (std::size_t side = std::min(width, height); side > 0; --side) {
        const std::size_t x0 = (width - side) / 2;
        const std::size_t y0 = (height - side) / 2;
        const std::size_t x1 = x0 + side;
        const std::size_t y1 = y0 + side;
        const std::size_t n = sat[y1 * (width + 1) + x1] + sat[y0 * (width + 1) + x0] - sat[y0 * (width + 1) + x1] -
                              sat[y1 * (width + 1) + x0];
        if (n == 0) return {x0, y0, side, side};
    }
    throw DataError("empty crop: every centred square contains missed rays");
}

Image finalize(const Image& img, const CropRect& crop, std::size_t target_width, std::size_t target_height) {
    Image c = img.crop(crop.x, crop.y, crop.width, crop.height);
    if (target_width == 0 || target_height == 0) return c;
    return resize(c, target_width, target_height);
}

}  // namespace matprobe::renderer
