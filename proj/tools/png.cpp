#include "png.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>

#include <png.h>

#include "samba/errors.hpp"

namespace samba::app {

void write_png(const std::filesystem::path& path, const RgbImage& img) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
    if (!fp) throw FormatError(FormatErrorKind::Io, "cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError(FormatErrorKind::Io, "libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError(FormatErrorKind::Io, "libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(img.w), png_uint_32(img.h), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(std::size_t(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const Rgb& p = img.pixels[std::size_t(y) * img.w + x];
            row[std::size_t(x) * 3] = p.r;
            row[std::size_t(x) * 3 + 1] = p.g;
            row[std::size_t(x) * 3 + 2] = p.b;
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

namespace {

bool boundary(const Mask2D& m, int y, int x) {
    if (!m.at(y, x)) return false;
    for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= m.h || xx < 0 || xx >= m.w || !m.at(yy, xx)) return true;
    }
    return false;
}

}  // namespace

RgbImage overlay(const Image2D& slice, const Mask2D& truth, const Mask2D& pred, int scale) {
    if (truth.h != slice.h || truth.w != slice.w || pred.h != slice.h || pred.w != slice.w)
        throw ValidationError("overlay: mask and slice sizes differ");
    RgbImage img(slice.h * scale, slice.w * scale);
    for (int y = 0; y < slice.h; ++y)
        for (int x = 0; x < slice.w; ++x) {
            const auto g = std::uint8_t(std::clamp(slice.at(y, x), 0.0f, 1.0f) * 255.0f + 0.5f);
            Rgb c{g, g, g};
            if (boundary(truth, y, x)) c = {0, 220, 0};
            if (boundary(pred, y, x)) c = {230, 0, 0};
            for (int sy = 0; sy < scale; ++sy)
                for (int sx = 0; sx < scale; ++sx) img.at(y * scale + sy, x * scale + sx) = c;
        }
    return img;
}

}  // namespace samba::app
