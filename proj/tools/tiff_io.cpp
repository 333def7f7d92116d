#include "tiff_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>

#include <tiffio.h>

#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"

namespace matprobe::tools {

namespace {

struct TiffCloser {
    void operator()(TIFF* t) const { TIFFClose(t); }
};
using TiffPtr = std::unique_ptr<TIFF, TiffCloser>;

// libtiff reports through global handlers; silence them and rely on return codes.
void quiet(const char*, const char*, va_list) {}

TiffPtr open(const std::filesystem::path& path, const char* mode) {
    TIFFSetErrorHandler(quiet);
    TIFFSetWarningHandler(quiet);
    TiffPtr t(TIFFOpen(path.c_str(), mode));
    if (!t) throw DataError("cannot open TIFF " + path.string());
    return t;
}

double decode(const unsigned char* p, int bits, bool floating) {
    if (floating) {
        float f;
        std::memcpy(&f, p, sizeof f);
        return f;
    }
    if (bits == 16) {
        std::uint16_t v;
        std::memcpy(&v, p, sizeof v);
        return v;
    }
    return *p;
}

}  // namespace

TiffRaster read_tiff(const std::filesystem::path& path) {
    auto t = open(path, "r");
    std::uint32_t w = 0, h = 0;
    std::uint16_t spp = 1, bits = 8, format = SAMPLEFORMAT_UINT, planar = PLANARCONFIG_CONTIG;
    TIFFGetField(t.get(), TIFFTAG_IMAGEWIDTH, &w);
    TIFFGetField(t.get(), TIFFTAG_IMAGELENGTH, &h);
    TIFFGetFieldDefaulted(t.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
    TIFFGetFieldDefaulted(t.get(), TIFFTAG_BITSPERSAMPLE, &bits);
    TIFFGetFieldDefaulted(t.get(), TIFFTAG_SAMPLEFORMAT, &format);
    TIFFGetFieldDefaulted(t.get(), TIFFTAG_PLANARCONFIG, &planar);
    const std::string where = path.string() + ": ";
    if (w == 0 || h == 0) throw DataError(where + "empty image");
    if (spp < 1 || spp > 4) throw DataError(where + std::to_string(spp) + " samples per pixel is unsupported");
    if (planar != PLANARCONFIG_CONTIG) throw DataError(where + "planar TIFFs are unsupported");
    const bool floating = format == SAMPLEFORMAT_IEEEFP;
    if (floating ? bits != 32 : (format != SAMPLEFORMAT_UINT || (bits != 8 && bits != 16))) {
        throw DataError(where + "only 8/16-bit unsigned and 32-bit float samples are supported");
    }
    if (TIFFIsTiled(t.get())) throw DataError(where + "tiled TIFFs are unsupported");

    TiffRaster r{w, h, spp, bits, floating, {}};
    r.samples.resize(std::size_t{w} * h * spp);
    std::vector<unsigned char> line(TIFFScanlineSize(t.get()));
    const std::size_t step = bits / 8;
    for (std::uint32_t y = 0; y < h; ++y) {
        if (TIFFReadScanline(t.get(), line.data(), y) < 0) throw DataError(where + "corrupt scanline " + std::to_string(y));
        for (std::size_t i = 0; i < std::size_t{w} * spp; ++i) {
            r.samples[y * std::size_t{w} * spp + i] = decode(line.data() + i * step, bits, floating);
        }
    }
    return r;
}

void write_tiff(const std::filesystem::path& path, const TiffRaster& r) {
    auto t = open(path, "w");
    TIFFSetField(t.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(r.width));
    TIFFSetField(t.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(r.height));
    TIFFSetField(t.get(), TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(r.channels));
    TIFFSetField(t.get(), TIFFTAG_BITSPERSAMPLE, static_cast<std::uint16_t>(r.bits));
    TIFFSetField(t.get(), TIFFTAG_SAMPLEFORMAT, r.floating ? SAMPLEFORMAT_IEEEFP : SAMPLEFORMAT_UINT);
    TIFFSetField(t.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(t.get(), TIFFTAG_PHOTOMETRIC, r.channels >= 3 ? PHOTOMETRIC_RGB : PHOTOMETRIC_MINISBLACK);
    TIFFSetField(t.get(), TIFFTAG_ROWSPERSTRIP, 1u);
    const std::size_t step = r.bits / 8;
    std::vector<unsigned char> line(r.width * r.channels * step);
    for (std::size_t y = 0; y < r.height; ++y) {
        for (std::size_t i = 0; i < r.width * r.channels; ++i) {
            const double v = r.samples[y * r.width * r.channels + i];
            unsigned char* p = line.data() + i * step;
            if (r.floating) {
                const float f = static_cast<float>(v);
                std::memcpy(p, &f, sizeof f);
            } else if (r.bits == 16) {
                const auto u = static_cast<std::uint16_t>(v);
                std::memcpy(p, &u, sizeof u);
            } else {
                *p = static_cast<unsigned char>(v);
            }
        }
        if (TIFFWriteScanline(t.get(), line.data(), static_cast<std::uint32_t>(y)) < 0) {
            throw DataError("cannot write " + path.string());
        }
    }
}

Image tiff_to_image(const TiffRaster& r) {
    const std::size_t colour = r.channels >= 3 ? 3 : 1;
    Image img(r.width, r.height, colour);
    const double peak = r.floating ? 1.0 : std::ldexp(1.0, r.bits) - 1.0;
    for (std::size_t p = 0; p < r.width * r.height; ++p) {
        for (std::size_t c = 0; c < colour; ++c) {
            const double v = std::clamp(r.samples[p * r.channels + c] / peak, 0.0, 1.0);
            img.data[p * colour + c] = r.floating ? v : dataio::srgb_to_linear(v);
        }
    }
    return img;
}

renderer::DepthMap tiff_to_depth(const TiffRaster& r, double scale) {
    renderer::DepthMap d(r.width, r.height);
    for (std::size_t p = 0; p < r.width * r.height; ++p) {
        const double v = r.samples[p * r.channels] * scale;
        d.depth[p] = (v > 0.0 && std::isfinite(v)) ? static_cast<float>(v) : std::numeric_limits<float>::quiet_NaN();
    }
    return d;
}

}  // namespace matprobe::tools
