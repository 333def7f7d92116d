#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <string>

#include "matprobe/probe.hpp"

namespace matprobe::probe {

namespace {

using Glyph = std::array<std::uint8_t, 7>;  // rows top to bottom, bit 4 is the left column

Glyph glyph(char ch) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (c >= 'A' && c <= 'Z') {
        static constexpr Glyph letters[26] = {
            {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}, {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},
            {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}, {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E},
            {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}, {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},
            {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}, {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},
            {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}, {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},
            {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}, {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},
            {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}, {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},
            {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},
            {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}, {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},
            {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}, {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},
            {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},
            {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}, {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},
            {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}};
        return letters[c - 'A'];
    }
    if (c >= '0' && c <= '9') {
        static constexpr Glyph digits[10] = {
            {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
            {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
            {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
            {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
            {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}};
        return digits[c - '0'];
    }
    switch (c) {
        case ' ': return {0, 0, 0, 0, 0, 0, 0};
        case '>': return {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08};
        case '-': return {0, 0, 0, 0x1F, 0, 0, 0};
        case '.': return {0, 0, 0, 0, 0, 0x0C, 0x0C};
        case ',': return {0, 0, 0, 0, 0x0C, 0x04, 0x08};
        case '(': return {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02};
        case ')': return {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08};
        case ':': return {0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0};
        case '%': return {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03};
        case '/': return {0, 0x01, 0x02, 0x04, 0x08, 0x10, 0};
        case '_': return {0, 0, 0, 0, 0, 0, 0x1F};
        default: return {0x0E, 0x11, 0x01, 0x02, 0x04, 0, 0x04};
    }
}

constexpr double kFrame[3] = {1.0, 0.8, 0.0};
constexpr double kText[3] = {1.0, 1.0, 1.0};
constexpr double kPanel[3] = {0.01, 0.01, 0.01};

void put(Image& img, long x, long y, const double* rgb) {
    if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) return;
    for (std::size_t c = 0; c < 3; ++c) img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) = rgb[c];
}

void fill(Image& img, long x0, long y0, long w, long h, const double* rgb) {
    for (long y = y0; y < y0 + h; ++y) {
        for (long x = x0; x < x0 + w; ++x) put(img, x, y, rgb);
    }
}

void text(Image& img, long x0, long y0, const std::string& s, long scale, bool bold) {
    for (std::size_t k = 0; k < s.size(); ++k) {
        const Glyph g = glyph(s[k]);
        const long gx = x0 + static_cast<long>(k) * 6 * scale;
        for (long r = 0; r < 7; ++r) {
            for (long col = 0; col < 5; ++col) {
                if (!(g[static_cast<std::size_t>(r)] >> (4 - col) & 1)) continue;
                fill(img, gx + col * scale, y0 + r * scale, scale + (bold ? 1 : 0), scale, kText);
            }
        }
    }
}

}  // namespace

Image annotate_image(const Image& image, const HierarchicalPrediction& pred) {
    Image out(image.width, image.height, 3);
    for (std::size_t i = 0; i < image.pixels(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            out.data[i * 3 + c] = image.data[i * image.channels + (image.channels >= 3 ? c : 0)];
        }
    }
    const long scale = std::max<long>(1, static_cast<long>(std::min(image.width, image.height)) / 256);
    long wx = 0, wy = 0, ws = 0;
    if (pred.window) {
        wx = static_cast<long>(pred.window->x);
        wy = static_cast<long>(pred.window->y);
        ws = static_cast<long>(pred.window->size);
        const long t = scale;
        fill(out, wx, wy, ws, t, kFrame);
        fill(out, wx, wy + ws - t, ws, t, kFrame);
        fill(out, wx, wy, t, ws, kFrame);
        fill(out, wx + ws - t, wy, t, ws, kFrame);
    }

    std::vector<std::string> lines;
    for (std::size_t i = 1; i < pred.path.size(); ++i) {
        const auto& s = pred.path[i];
        lines.push_back(s.name + " " + std::to_string(static_cast<int>(std::lround(100.0 * s.confidence))) + "%");
    }
    if (lines.empty() && !pred.path.empty()) lines.push_back(pred.path.front().name);
    if (!pred.tags.empty()) {
        std::string t;
        for (const auto& tag : pred.tags) t += (t.empty() ? "" : ", ") + tag;
        lines.push_back(t);
    }
    std::size_t longest = 0;
    for (const auto& l : lines) longest = std::max(longest, l.size());
    const long line_h = 9 * scale;
    const long panel_w = static_cast<long>(longest) * 6 * scale + 4 * scale;
    const long panel_h = static_cast<long>(lines.size()) * line_h + 3 * scale;
    const long img_h = static_cast<long>(out.height);
    long px = wx;
    long py = wy + ws + scale;
    if (py + panel_h > img_h) py = wy - panel_h - scale;
    if (py < 0) py = 0;
    px = std::clamp(px, 0L, std::max(0L, static_cast<long>(out.width) - panel_w));
    fill(out, px, py, panel_w, panel_h, kPanel);
    // The finest accepted level is drawn bold; tags follow on the last line.
    const std::size_t finest_line = pred.path.size() > 1 ? pred.path.size() - 2 : 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        text(out, px + 2 * scale, py + 2 * scale + static_cast<long>(i) * line_h, lines[i], scale,
             i == finest_line && pred.path.size() > 1);
    }
    return out;
}

}  // namespace matprobe::probe
