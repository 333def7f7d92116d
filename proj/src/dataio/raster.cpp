#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"
#include "matprobe/fileio.hpp"

namespace matprobe::dataio {

static_assert(std::endian::native == std::endian::little, "raster I/O assumes a little-endian host");

double srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
    return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

namespace {

struct ReadState {
    std::string_view bytes;
    std::size_t pos = 0;
};

void png_read_mem(png_structp png, png_bytep out, png_size_t n) {
    auto* st = static_cast<ReadState*>(png_get_io_ptr(png));
    if (st->pos + n > st->bytes.size()) png_error(png, "truncated PNG data");
    std::memcpy(out, st->bytes.data() + st->pos, n);
    st->pos += n;
}

void png_write_mem(png_structp png, png_bytep data, png_size_t n) {
    static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), n);
}

void png_flush_mem(png_structp) {}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
    *static_cast<std::string*>(png_get_error_ptr(png)) = msg;
    png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

// Decoded sRGB code value -> linear, via a table per bit depth.
const std::vector<double>& decode_table(int bits) {
    static const std::vector<double> t8 = [] {
        std::vector<double> t(256);
        for (int i = 0; i < 256; ++i) t[i] = srgb_to_linear(i / 255.0);
        return t;
    }();
    static const std::vector<double> t16 = [] {
        std::vector<double> t(65536);
        for (int i = 0; i < 65536; ++i) t[i] = srgb_to_linear(i / 65535.0);
        return t;
    }();
    return bits == 16 ? t16 : t8;
}

}  // namespace

Image decode_png(std::string_view bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
        throw DataError("not a PNG file (bad signature)");
    }
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
    if (!png) throw DataError("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    ReadState st{bytes, 0};
    Image img;
    std::vector<png_bytep> rows;
    std::vector<unsigned char> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("PNG decode failed: " + error);
    }
    png_set_read_fn(png, &st, png_read_mem);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    int bits = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bits < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (bits == 16) png_set_swap(png);
    png_read_update_info(png, info);
    bits = png_get_bit_depth(png, info);
    const std::size_t w = png_get_image_width(png, info);
    const std::size_t h = png_get_image_height(png, info);
    const std::size_t ch = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * h);
    rows.resize(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = buffer.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    img = Image(w, h, ch);
    const auto& table = decode_table(bits);
    for (std::size_t i = 0; i < w * h * ch; ++i) {
        std::size_t code;
        if (bits == 16) {
            std::uint16_t v;
            std::memcpy(&v, buffer.data() + 2 * i + (i / (w * ch)) * (stride - 2 * w * ch), 2);
            code = v;
        } else {
            code = buffer[i + (i / (w * ch)) * (stride - w * ch)];
        }
        img.data[i] = table[code];
    }
    return img;
}

Image read_png(const std::filesystem::path& path) {
    try {
        return decode_png(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string encode_png(const Image& img, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw UsageError("PNG bit depth must be 8 or 16");
    if (img.empty()) throw UsageError("cannot encode an empty image");
    int color;
    switch (img.channels) {
        case 1: color = PNG_COLOR_TYPE_GRAY; break;
        case 3: color = PNG_COLOR_TYPE_RGB; break;
        default: throw UsageError("PNG output supports 1 or 3 channels, got " + std::to_string(img.channels));
    }
    const std::size_t row_values = img.width * img.channels;
    const std::size_t stride = row_values * (bit_depth / 8);
    std::vector<unsigned char> buffer(stride * img.height);
    const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::isfinite(img.data[i]) ? std::clamp(img.data[i], 0.0, 1.0) : 0.0;
        const auto code = static_cast<unsigned>(std::lround(linear_to_srgb(v) * maxv));
        if (bit_depth == 16) {
            buffer[2 * i] = static_cast<unsigned char>(code >> 8);  // PNG is big-endian
            buffer[2 * i + 1] = static_cast<unsigned char>(code & 0xff);
        } else {
            buffer[i] = static_cast<unsigned char>(code);
        }
    }
    std::string out;
    std::string error;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
    if (!png) throw DataError("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    std::vector<png_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * stride;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG encode failed: " + error);
    }
    png_set_write_fn(png, &out, png_write_mem, png_flush_mem);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), bit_depth,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_sRGB(png, info, PNG_sRGB_INTENT_PERCEPTUAL);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png(const std::filesystem::path& path, const Image& img, int bit_depth) {
    write_file_atomic(path, encode_png(img, bit_depth));
}

namespace {

constexpr std::size_t kDepthHeader = 4 + 1 + 4 + 4;
constexpr std::uint8_t kDepthVersion = 1;

std::uint32_t get_u32(std::string_view b, std::size_t off) {
    std::uint32_t v;
    std::memcpy(&v, b.data() + off, 4);
    return v;
}

}  // namespace

renderer::DepthMap decode_depth_raster(std::string_view bytes) {
    if (bytes.size() < kDepthHeader) {
        throw DataError("depth raster header truncated: expected " + std::to_string(kDepthHeader) + " bytes, got " +
                        std::to_string(bytes.size()));
    }
    if (bytes.substr(0, 4) != "DPTH") throw DataError("not a depth raster (bad magic)");
    const auto version = static_cast<std::uint8_t>(bytes[4]);
    if (version != kDepthVersion) throw DataError("unsupported depth raster version " + std::to_string(version));
    const std::uint32_t w = get_u32(bytes, 5);
    const std::uint32_t h = get_u32(bytes, 9);
    const std::size_t expected = kDepthHeader + std::size_t{w} * h * 4;
    if (bytes.size() != expected) {
        throw DataError("depth raster " + std::to_string(w) + "x" + std::to_string(h) + " needs " +
                        std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
    }
    renderer::DepthMap d;
    d.width = w;
    d.height = h;
    d.depth.resize(std::size_t{w} * h);
    std::memcpy(d.depth.data(), bytes.data() + kDepthHeader, d.depth.size() * 4);
    return d;
}

renderer::DepthMap read_depth_raster(const std::filesystem::path& path) {
    try {
        return decode_depth_raster(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string encode_depth_raster(const renderer::DepthMap& d) {
    if (d.depth.size() != d.width * d.height) throw DataError("depth map size does not match its header");
    std::string out(kDepthHeader + d.depth.size() * 4, '\0');
    std::memcpy(out.data(), "DPTH", 4);
    out[4] = static_cast<char>(kDepthVersion);
    const auto w = static_cast<std::uint32_t>(d.width);
    const auto h = static_cast<std::uint32_t>(d.height);
    std::memcpy(out.data() + 5, &w, 4);
    std::memcpy(out.data() + 9, &h, 4);
    std::memcpy(out.data() + kDepthHeader, d.depth.data(), d.depth.size() * 4);
    return out;
}

void write_depth_raster(const std::filesystem::path& path, const renderer::DepthMap& d) {
    write_file_atomic(path, encode_depth_raster(d));
}

Image to_grayscale(const Image& img, std::size_t channels) {
    if (channels == 0) throw UsageError("grayscale needs at least one channel");
    Image out(img.width, img.height, channels);
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        double y;
        if (img.channels >= 3) {
            const double* p = img.data.data() + i * img.channels;
            y = 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2];
        } else {
            y = img.data[i * img.channels];
        }
        for (std::size_t c = 0; c < channels; ++c) out.data[i * channels + c] = y;
    }
    return out;
}

Image to_grayscale(const Image& img) { return to_grayscale(img, img.channels); }

}  // namespace matprobe::dataio
