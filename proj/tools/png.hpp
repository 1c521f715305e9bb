#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "samba/volumes.hpp"

namespace samba::app {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

struct RgbImage {
    int h = 0, w = 0;
    std::vector<Rgb> pixels;

    RgbImage(int rows, int cols) : h(rows), w(cols), pixels(std::size_t(rows) * std::size_t(cols)) {}
    Rgb& at(int y, int x) { return pixels[std::size_t(y) * w + x]; }
};

/// 8-bit RGB PNG without time or text chunks, so identical pixels give identical files.
void write_png(const std::filesystem::path& path, const RgbImage& img);

/// Grey slice (clamped to [0, 1]) scaled by `scale`, with the boundary of `truth` in green and
/// of `pred` in red; red wins where both boundaries meet.
RgbImage overlay(const Image2D& slice, const Mask2D& truth, const Mask2D& pred, int scale = 4);

}  // namespace samba::app
