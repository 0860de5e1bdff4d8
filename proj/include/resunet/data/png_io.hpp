#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "resunet/error.hpp"

namespace resunet {

class PngError : public InputError {
public:
    enum class Kind { io, decode, bit_depth, encode };

    PngError(Kind kind, const std::string& what) : InputError(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Interleaved 8-bit pixels, row-major, `channels` is 1 (gray) or 3 (RGB).
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_to_longjmp(png_structp png, png_const_charp) { std::longjmp(png_jmpbuf(png), 1); }
inline void png_silent_warning(png_structp, png_const_charp) {}

}  // namespace detail

/// Decodes an 8-bit PNG. Palette images expand to RGB, alpha is dropped,
/// gray stays single-channel. 16-bit and sub-byte depths are rejected.
inline Image8 read_png(const std::filesystem::path& path) {
    detail::FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw PngError(PngError::Kind::io, "cannot open " + path.string());

    png_byte signature[8];
    if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
        throw PngError(PngError::Kind::decode, path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_to_longjmp,
                                             detail::png_silent_warning);
    if (!png) throw PngError(PngError::Kind::decode, "libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw PngError(PngError::Kind::decode, "libpng initialisation failed");
    }

    Image8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw PngError(PngError::Kind::decode, "corrupt PNG data in " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth != 8 && !(color_type == PNG_COLOR_TYPE_PALETTE && bit_depth <= 8)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw PngError(PngError::Kind::bit_depth,
                       path.string() + " has bit depth " + std::to_string(bit_depth) + ", expected 8");
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw PngError(PngError::Kind::decode,
                       path.string() + " decodes to " + std::to_string(img.channels) + " channels");
    }
    img.pixels.resize(img.width * img.height * img.channels);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png(const std::filesystem::path& path, const Image8& img) {
    if (img.channels != 1 && img.channels != 3) {
        throw PngError(PngError::Kind::encode, "write_png supports 1 or 3 channels");
    }
    if (img.pixels.size() != img.width * img.height * img.channels) {
        throw PngError(PngError::Kind::encode, "pixel buffer does not match image dimensions");
    }
    detail::FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw PngError(PngError::Kind::io, "cannot create " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_to_longjmp,
                                              detail::png_silent_warning);
    if (!png) throw PngError(PngError::Kind::encode, "libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw PngError(PngError::Kind::encode, "libpng initialisation failed");
    }
    std::vector<png_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y) {
        rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw PngError(PngError::Kind::encode, "failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace resunet
