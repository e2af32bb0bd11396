// Little-endian binary stream helpers for the model and patch-cache formats.
#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace occ::bin {

inline void write_u16(std::ostream& f, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 2);
}

inline void write_u32(std::ostream& f, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f32(std::ostream& f, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(f, bits);
}

inline void write_f64(std::ostream& f, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    }
    f.write(reinterpret_cast<const char*>(b), 8);
}

[[noreturn]] inline void truncated(const std::string& what) {
    throw FormatError("truncated " + what);
}

inline std::uint16_t read_u16(std::istream& f, const std::string& what) {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    if (f.gcount() != 2) {
        truncated(what);
    }
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& f, const std::string& what) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() != 4) {
        truncated(what);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float read_f32(std::istream& f, const std::string& what) {
    const std::uint32_t bits = read_u32(f, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline double read_f64(std::istream& f, const std::string& what) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (f.gcount() != 8) {
        truncated(what);
    }
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

// Bulk f32 array, little-endian on disk.
inline void write_f32_array(std::ostream& f, const float* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        write_f32(f, data[i]);
    }
}

inline void read_f32_array(std::istream& f, float* data, std::size_t n, const std::string& what) {
    std::vector<unsigned char> raw(n * 4);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size())) {
        truncated(what);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
        std::memcpy(&data[i], &bits, 4);
    }
}

}  // namespace occ::bin
