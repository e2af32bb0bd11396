// PNG (8-bit gray/RGB, 16-bit gray) and PGM image I/O.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace occ {

struct ImageU8 {
    int h = 0;
    int w = 0;
    int channels = 0;  // 1 or 3, interleaved rows
    std::vector<std::uint8_t> px;

    std::uint8_t& at(int y, int x, int c = 0) {
        return px[(static_cast<std::size_t>(y) * w + x) * channels + c];
    }
    std::uint8_t at(int y, int x, int c = 0) const {
        return px[(static_cast<std::size_t>(y) * w + x) * channels + c];
    }
};

struct ImageU16 {
    int h = 0;
    int w = 0;
    std::vector<std::uint16_t> px;

    std::uint16_t& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
    std::uint16_t at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
};

// Decodes any 8-bit-compatible PNG to gray or RGB (palette expanded, alpha
// stripped, 16-bit narrowed).
ImageU8 png_read_u8(const std::string& path);

// Decodes a 16-bit grayscale PNG (the depth-image encoding).
ImageU16 png_read_u16(const std::string& path);

void png_write_u8(const std::string& path, const ImageU8& img);
void png_write_u16(const std::string& path, const ImageU16& img);

// Binary PGM (P5), single channel.
void pgm_write(const std::string& path, const ImageU8& img);

}  // namespace occ
