#pragma once

// Synthetic scenes and image measurements shared by renderer tests and the
// acceptance runner.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>

#include "matprobe/renderer.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::testing {

/// Fronto-parallel plane filling the source camera at depth `d`.
inline renderer::Sample plane_sample(std::size_t w, std::size_t h, double focal, double d,
                                     const std::function<double(std::size_t, std::size_t)>& texture) {
    renderer::Sample s;
    s.appearance = Image(w, h, 1);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) s.appearance.at(x, y) = texture(x, y);
    }
    s.depth = renderer::DepthMap(w, h, static_cast<float>(d));
    s.intrinsics = renderer::CameraIntrinsics::centered(w, h, focal);
    return s;
}

/// Smooth pattern plus per-pixel detail, values in [0.05, 0.95].
inline double textured(std::size_t x, std::size_t y) {
    const double fx = static_cast<double>(x);
    const double fy = static_cast<double>(y);
    const double smooth = 0.5 + 0.25 * std::sin(fx * 0.07) * std::cos(fy * 0.05);
    const double detail = 0.15 * (rng::uniform(99, y * 100003 + x) - 0.5);
    return smooth + detail;
}

/// Sub-pixel positions where a row profile first rises through `level`
/// and later falls back through it, searching outward from the centre.
inline std::optional<double> feature_extent(const std::vector<double>& row, double level) {
    const std::size_t mid = row.size() / 2;
    if (row[mid] < level) return std::nullopt;
    std::size_t l = mid;
    while (l > 0 && row[l - 1] >= level) --l;
    std::size_t r = mid;
    while (r + 1 < row.size() && row[r + 1] >= level) ++r;
    if (l == 0 || r + 1 == row.size()) return std::nullopt;
    const double left = static_cast<double>(l - 1) + (level - row[l - 1]) / (row[l] - row[l - 1]);
    const double right = static_cast<double>(r) + (row[r] - level) / (row[r] - row[r + 1]);
    return right - left;
}

/// Distance between the 10% and 90% crossings of a rising edge profile.
inline double edge_spread(const std::vector<double>& row) {
    const double lo = row.front();
    const double hi = row.back();
    auto crossing = [&](double frac) {
        const double level = lo + frac * (hi - lo);
        for (std::size_t i = 1; i < row.size(); ++i) {
            if (row[i] >= level && row[i - 1] < level) {
                return static_cast<double>(i - 1) + (level - row[i - 1]) / (row[i] - row[i - 1]);
            }
        }
        return std::nan("");
    };
    return crossing(0.9) - crossing(0.1);
}

/// Row profile averaged over `rows` rows around the vertical centre.
inline std::vector<double> centre_profile(const Image& img, std::size_t rows) {
    std::vector<double> p(img.width, 0.0);
    const std::size_t y0 = img.height / 2 - rows / 2;
    for (std::size_t y = y0; y < y0 + rows; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) p[x] += img.at(x, y) / static_cast<double>(rows);
    }
    return p;
}

/// Geometry scene: a 201x201 plane at 1 m, a bright 40 px square in the
/// middle of a dark plane. Returns the feature's pixel extent when the plane
/// is moved to `distance`.
inline std::optional<double> feature_extent_at(double distance) {
    const auto s = plane_sample(201, 201, 200.0, 1.0, [](std::size_t x, std::size_t y) {
        return (x >= 80 && x < 120 && y >= 80 && y < 120) ? 0.9 : 0.1;
    });
    renderer::ViewRecipe r;
    r.transform.translation = {0.0, 0.0, distance - 1.0};
    r.spp = 1;
    r.background = 0.0;
    r.crop = renderer::CropMode::full;
    r.target_size = 0;
    const auto view = renderer::render_novel_view(s, r);
    std::vector<double> row(view.image.width);
    for (std::size_t x = 0; x < row.size(); ++x) row[x] = view.image.at(x, view.image.height / 2);
    return feature_extent(row, 0.5);
}

/// Defocus scene: step texture at 1 m, focus at `focus`; returns the
/// 10-90% edge spread in pixels.
inline double defocus_edge_spread(double focus, std::size_t spp = 64) {
    const auto s = plane_sample(161, 161, 400.0, 1.0, [](std::size_t x, std::size_t) { return x < 80 ? 0.1 : 0.9; });
    renderer::ViewRecipe r;
    r.lens.pupil_radius = 0.02;
    r.lens.focus_distance = focus;
    r.auto_focus = false;
    r.spp = spp;
    r.crop = renderer::CropMode::full;
    r.target_size = 0;
    r.seed = 5;
    const auto view = renderer::render_novel_view(s, r);
    auto p = centre_profile(view.image, 21);
    return edge_spread(std::vector<double>(p.begin() + 40, p.end() - 40));
}

}  // namespace matprobe::testing
