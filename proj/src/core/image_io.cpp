#include "core/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "core/common.hpp"

namespace occ {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void quiet_warning(png_structp, png_const_charp) {}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;

    PngReader() {
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
        if (png) {
            info = png_create_info_struct(png);
        }
    }
    ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
    PngReader(const PngReader&) = delete;
    PngReader& operator=(const PngReader&) = delete;
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;

    PngWriter() {
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
        if (png) {
            info = png_create_info_struct(png);
        }
    }
    ~PngWriter() { png_destroy_write_struct(&png, &info); }
    PngWriter(const PngWriter&) = delete;
    PngWriter& operator=(const PngWriter&) = delete;
};

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw DataError("cannot open image file: " + path);
    }
    return f;
}

}  // namespace

ImageU8 png_read_u8(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    PngReader r;
    if (!r.png || !r.info) {
        throw FormatError("libpng init failed");
    }
    ImageU8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(r.png))) {
        throw FormatError("undecodable image: " + path);
    }
    png_init_io(r.png, f.get());
    png_read_info(r.png, r.info);

    png_set_expand(r.png);       // palette -> rgb, gray<8 -> 8, tRNS -> alpha
    png_set_strip_16(r.png);
    png_set_strip_alpha(r.png);
    png_read_update_info(r.png, r.info);

    img.h = static_cast<int>(png_get_image_height(r.png, r.info));
    img.w = static_cast<int>(png_get_image_width(r.png, r.info));
    const int ch = static_cast<int>(png_get_channels(r.png, r.info));
    if (ch != 1 && ch != 3) {
        throw FormatError("unsupported channel count " + std::to_string(ch) + " in " + path);
    }
    img.channels = ch;
    img.px.resize(static_cast<std::size_t>(img.h) * img.w * ch);
    rows.resize(static_cast<std::size_t>(img.h));
    for (int y = 0; y < img.h; ++y) {
        rows[static_cast<std::size_t>(y)] = img.px.data() + static_cast<std::size_t>(y) * img.w * ch;
    }
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return img;
}

ImageU16 png_read_u16(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    PngReader r;
    if (!r.png || !r.info) {
        throw FormatError("libpng init failed");
    }
    ImageU16 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(r.png))) {
        throw FormatError("undecodable image: " + path);
    }
    png_init_io(r.png, f.get());
    png_read_info(r.png, r.info);

    const int depth = png_get_bit_depth(r.png, r.info);
    const int color = png_get_color_type(r.png, r.info);
    if (depth != 16 || color != PNG_COLOR_TYPE_GRAY) {
        throw FormatError("expected 16-bit grayscale PNG: " + path);
    }
    png_set_swap(r.png);  // PNG stores big-endian, memory wants host LE
    png_read_update_info(r.png, r.info);

    img.h = static_cast<int>(png_get_image_height(r.png, r.info));
    img.w = static_cast<int>(png_get_image_width(r.png, r.info));
    img.px.resize(static_cast<std::size_t>(img.h) * img.w);
    rows.resize(static_cast<std::size_t>(img.h));
    for (int y = 0; y < img.h; ++y) {
        rows[static_cast<std::size_t>(y)] =
            reinterpret_cast<png_bytep>(img.px.data() + static_cast<std::size_t>(y) * img.w);
    }
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return img;
}

void png_write_u8(const std::string& path, const ImageU8& img) {
    if (img.h <= 0 || img.w <= 0 || (img.channels != 1 && img.channels != 3) ||
        img.px.size() != static_cast<std::size_t>(img.h) * img.w * img.channels) {
        throw ShapeError("png_write_u8: malformed image buffer");
    }
    FilePtr f = open_file(path, "wb");
    PngWriter w;
    if (!w.png || !w.info) {
        throw FormatError("libpng init failed");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
    for (int y = 0; y < img.h; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
            img.px.data() + static_cast<std::size_t>(y) * img.w * img.channels);
    }
    if (setjmp(png_jmpbuf(w.png))) {
        throw DataError("png write failed: " + path);
    }
    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    png_write_image(w.png, rows.data());
    png_write_end(w.png, nullptr);
}

void png_write_u16(const std::string& path, const ImageU16& img) {
    if (img.h <= 0 || img.w <= 0 ||
        img.px.size() != static_cast<std::size_t>(img.h) * img.w) {
        throw ShapeError("png_write_u16: malformed image buffer");
    }
    FilePtr f = open_file(path, "wb");
    PngWriter w;
    if (!w.png || !w.info) {
        throw FormatError("libpng init failed");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.h));
    for (int y = 0; y < img.h; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(reinterpret_cast<const png_byte*>(
            img.px.data() + static_cast<std::size_t>(y) * img.w));
    }
    if (setjmp(png_jmpbuf(w.png))) {
        throw DataError("png write failed: " + path);
    }
    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h),
                 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    png_set_swap(w.png);
    png_write_image(w.png, rows.data());
    png_write_end(w.png, nullptr);
}

void pgm_write(const std::string& path, const ImageU8& img) {
    if (img.channels != 1) {
        throw ShapeError("pgm_write: expects a single-channel image");
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw DataError("cannot open image file: " + path);
    }
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.px.data()),
            static_cast<std::streamsize>(img.px.size()));
    if (!f) {
        throw DataError("pgm write failed: " + path);
    }
}

}  // namespace occ
