#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "lss/core.hpp"

namespace lss {

namespace detail {

// 12-bit data frequently ships in 16-bit containers; normalize by 4095
// when the observed max fits, else by the container max.
inline double pick_16bit_scale(const std::vector<uint16_t>& raw) {
    uint16_t mx = 0;
    for (uint16_t v : raw) mx = std::max(mx, v);
    return (mx <= 4095) ? 4095.0 : 65535.0;
}

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

}  // namespace detail

inline GrayImage read_png(const std::string& path) {
    detail::PngReadCloser ctx;
    ctx.fp = std::fopen(path.c_str(), "rb");
    if (!ctx.fp) throw IoError("read_png: cannot open " + path);

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8))
        throw IoError("read_png: not a PNG file: " + path);

    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoError("read_png: libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoError("read_png: libpng info init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw IoError("read_png: libpng error reading " + path);

    png_init_io(ctx.png, ctx.fp);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
    const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
    const int bit_depth = png_get_bit_depth(ctx.png, ctx.info);
    const int color_type = png_get_color_type(ctx.png, ctx.info);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
    if (color_type & PNG_COLOR_MASK_COLOR || color_type == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray(ctx.png, 1, -1, -1);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(ctx.png);
    if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
    if (bit_depth == 16) png_set_swap(ctx.png);  // stream is big-endian
    png_read_update_info(ctx.png, ctx.info);

    const int out_depth = png_get_bit_depth(ctx.png, ctx.info);
    const size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
    std::vector<unsigned char> buf(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = buf.data() + r * rowbytes;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);

    GrayImage img(static_cast<int>(h), static_cast<int>(w));
    if (out_depth == 16) {
        std::vector<uint16_t> raw(static_cast<size_t>(w) * h);
        std::memcpy(raw.data(), buf.data(), raw.size() * sizeof(uint16_t));
        const double scale = detail::pick_16bit_scale(raw);
        for (size_t i = 0; i < raw.size(); ++i) img.data[i] = clamp01(raw[i] / scale);
    } else {
        for (size_t i = 0; i < img.size(); ++i) img.data[i] = buf[i] / 255.0;
    }
    return img;
}

inline void write_png_gray8(const std::string& path, const GrayImage& img) {
    detail::PngWriteCloser ctx;
    ctx.fp = std::fopen(path.c_str(), "wb");
    if (!ctx.fp) throw IoError("write_png: cannot open " + path);
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoError("write_png: libpng init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoError("write_png: libpng info init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw IoError("write_png: libpng error writing " + path);

    png_init_io(ctx.png, ctx.fp);
    png_set_IHDR(ctx.png, ctx.info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);

    std::vector<unsigned char> row(img.width);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c)
            row[c] = static_cast<unsigned char>(std::lround(clamp01(img.at(r, c)) * 255.0));
        png_write_row(ctx.png, row.data());
    }
    png_write_end(ctx.png, nullptr);
}

// Masks are written 0/255 per the file contract.
inline void write_mask_png(const std::string& path, const BinaryMask& mask) {
    GrayImage img(mask.height, mask.width);
    for (size_t i = 0; i < mask.size(); ++i) img.data[i] = mask.bits[i] ? 1.0 : 0.0;
    write_png_gray8(path, img);
}

inline BinaryMask read_mask_png(const std::string& path) {
    GrayImage img = read_png(path);
    BinaryMask m(img.height, img.width);
    for (size_t i = 0; i < img.size(); ++i) m.bits[i] = img.data[i] > 0.5 ? 1 : 0;
    return m;
}

// Binary PGM (P5), 8- or 16-bit.
inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_pgm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw IoError("read_pgm: unsupported magic '" + magic + "' in " + path);

    auto next_int = [&in, &path]() {
        // skip whitespace and '#' comments between header fields
        while (true) {
            int ch = in.peek();
            if (ch == '#') {
                std::string line;
                std::getline(in, line);
            } else if (ch != EOF && std::isspace(static_cast<unsigned char>(ch))) {
                in.get();
            } else {
                break;
            }
        }
        long v = -1;
        in >> v;
        if (!in || v < 0) throw IoError("read_pgm: malformed header in " + path);
        return v;
    };

    const long w = next_int();
    const long h = next_int();
    const long maxval = next_int();
    in.get();  // single whitespace before raster
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
        throw IoError("read_pgm: bad dimensions in " + path);

    GrayImage img(static_cast<int>(h), static_cast<int>(w));
    const size_t n = img.size();
    if (maxval < 256) {
        std::vector<unsigned char> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
        if (!in) throw IoError("read_pgm: truncated raster in " + path);
        for (size_t i = 0; i < n; ++i) img.data[i] = raw[i] / static_cast<double>(maxval);
    } else {
        std::vector<unsigned char> raw(n * 2);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 2));
        if (!in) throw IoError("read_pgm: truncated raster in " + path);
        std::vector<uint16_t> vals(n);
        for (size_t i = 0; i < n; ++i)
            vals[i] = static_cast<uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);  // big-endian
        const double scale = (maxval == 65535) ? detail::pick_16bit_scale(vals)
                                               : static_cast<double>(maxval);
        for (size_t i = 0; i < n; ++i) img.data[i] = clamp01(vals[i] / scale);
    }
    return img;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pgm: cannot open " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    for (double v : img.data) out.put(static_cast<char>(std::lround(clamp01(v) * 255.0)));
    if (!out) throw IoError("write_pgm: write failed for " + path);
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline GrayImage read_image(const std::string& path) {
    if (has_suffix(path, ".pgm") || has_suffix(path, ".PGM")) return read_pgm(path);
    return read_png(path);
}

}  // namespace lss
