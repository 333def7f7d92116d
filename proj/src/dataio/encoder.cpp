#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"

namespace matprobe::dataio {

namespace {

constexpr std::size_t N = TrivialEncoder::kInput;

// Grid cell statistics: means, variances and gradient energies, one value
// per cell each, appended as three separate blocks.
void cell_stats(const Image& g, std::size_t grid, std::vector<std::vector<double>>& blocks) {
    const std::size_t cell = N / grid;
    std::vector<double> means, vars, grads;
    for (std::size_t cy = 0; cy < grid; ++cy) {
        for (std::size_t cx = 0; cx < grid; ++cx) {
            double s = 0.0, s2 = 0.0, e = 0.0;
            std::size_t ne = 0;
            for (std::size_t y = cy * cell; y < (cy + 1) * cell; ++y) {
                for (std::size_t x = cx * cell; x < (cx + 1) * cell; ++x) {
                    const double v = g.at(x, y);
                    s += v;
                    s2 += v * v;
                    if (x + 1 < N && y + 1 < N) {
                        const double gx = g.at(x + 1, y) - v;
                        const double gy = g.at(x, y + 1) - v;
                        e += gx * gx + gy * gy;
                        ++ne;
                    }
                }
            }
            const double n = static_cast<double>(cell * cell);
            const double m = s / n;
            means.push_back(m);
            vars.push_back(std::max(0.0, s2 / n - m * m));
            grads.push_back(ne ? e / static_cast<double>(ne) : 0.0);
        }
    }
    blocks.push_back(std::move(means));
    blocks.push_back(std::move(vars));
    blocks.push_back(std::move(grads));
}

// Power spectrum of an n x n window (mean removed, Hann tapered), pooled into
// log-spaced radial bins over [1/n, 1/2] cycles per pixel and orientation
// bins over [0, pi). Bins hold the square root of their share of the energy.
std::vector<double> spectrum(const Image& g, std::size_t x0, std::size_t y0, std::size_t n, std::size_t radial,
                             std::size_t angular) {
    std::vector<double> hann(n);
    for (std::size_t i = 0; i < n; ++i) {
        hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n));
    }
    double mean = 0.0;
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) mean += g.at(x0 + x, y0 + y);
    }
    mean /= static_cast<double>(n * n);

    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> grid(n * n), line(n), out(n);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) line[x] = (g.at(x0 + x, y0 + y) - mean) * hann[x] * hann[y];
        fft.fwd(out, line);
        std::copy(out.begin(), out.end(), grid.begin() + static_cast<std::ptrdiff_t>(y * n));
    }
    for (std::size_t x = 0; x < n; ++x) {
        for (std::size_t y = 0; y < n; ++y) line[y] = grid[y * n + x];
        fft.fwd(out, line);
        for (std::size_t y = 0; y < n; ++y) grid[y * n + x] = out[y];
    }

    std::vector<double> bins(radial * angular, 0.0);
    const double rmin = 1.0 / static_cast<double>(n);
    const double span = std::log(0.5 / rmin);
    double total = 0.0;
    const auto freq = [n](std::size_t k) {
        const auto s = static_cast<double>(k);
        return (k < n / 2 ? s : s - static_cast<double>(n)) / static_cast<double>(n);
    };
    for (std::size_t ky = 0; ky < n; ++ky) {
        for (std::size_t kx = 0; kx < n; ++kx) {
            const double u = freq(kx), v = freq(ky);
            const double r = std::hypot(u, v);
            if (r < rmin) continue;
            const auto rb = std::min(radial - 1, static_cast<std::size_t>(static_cast<double>(radial) * std::log(r / rmin) / span));
            double theta = std::atan2(v, u);
            if (theta < 0.0) theta += std::numbers::pi;
            const auto ab = std::min(angular - 1, static_cast<std::size_t>(static_cast<double>(angular) * theta / std::numbers::pi));
            const double p = std::norm(grid[ky * n + kx]);
            bins[rb * angular + ab] += p;
            total += p;
        }
    }
    if (total > 0.0) {
        for (double& b : bins) b = std::sqrt(b / total);
    }
    return bins;
}

}  // namespace

std::vector<double> TrivialEncoder::encode(const Image& img) const {
    if (img.width < kMinSize || img.height < kMinSize) {
        throw DataError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        "; the trivial encoder needs at least " + std::to_string(kMinSize) + "x" +
                        std::to_string(kMinSize));
    }
    if (img.channels == 0) throw DataError("image has no channels");
    Image g = renderer::resize(to_grayscale(img, 1), N, N);
    const double mean = g.mean();
    if (mean > 0.0) {
        for (double& v : g.data) v /= mean;
    }

    std::vector<std::vector<double>> blocks;
    cell_stats(g, 4, blocks);
    cell_stats(g, 8, blocks);
    blocks.push_back(spectrum(g, 0, 0, N, 16, 12));
    std::vector<double> quadrants;
    for (std::size_t q = 0; q < 4; ++q) {
        const auto s = spectrum(g, (q % 2) * N / 2, (q / 2) * N / 2, N / 2, 8, 8);
        quadrants.insert(quadrants.end(), s.begin(), s.end());
    }
    blocks.push_back(std::move(quadrants));
    std::vector<double> hist(16, 0.0);
    for (const double v : g.data) {
        const auto b = static_cast<std::size_t>(std::clamp(v / 2.0 * 16.0, 0.0, 15.0));
        hist[b] += 1.0 / static_cast<double>(g.data.size());
    }
    blocks.push_back(std::move(hist));

    std::vector<double> out;
    out.reserve(kDim);
    for (auto& b : blocks) {
        double ss = 0.0;
        for (const double v : b) ss += v * v;
        const double rms = std::sqrt(ss / static_cast<double>(b.size()));
        // Near-zero blocks (a flat image's variances) are left as they are.
        if (rms > 1e-12) {
            for (double& v : b) v /= rms;
        }
        out.insert(out.end(), b.begin(), b.end());
    }
    out.resize(kDim, 0.0);
    return out;
}

}  // namespace matprobe::dataio
