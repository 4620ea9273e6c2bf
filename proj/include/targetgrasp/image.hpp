#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include "targetgrasp/error.hpp"
#include "targetgrasp/geometry.hpp"

namespace targetgrasp {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    bool operator==(const Rgb&) const = default;
};

/// 8-bit RGB raster, row-major, origin top-left.
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(int width, int height, Rgb fill = {}) : width_(width), height_(height)
    {
        if (width <= 0 || height <= 0)
            fail(ErrorCode::InvalidArgument, "image size must be positive");
        data_.resize(static_cast<std::size_t>(width) * height * 3);
        for (int j = 0; j < height; ++j)
            for (int i = 0; i < width; ++i)
                set(i, j, fill);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }
    const std::vector<std::uint8_t>& bytes() const { return data_; }

    bool inside(int i, int j) const { return i >= 0 && j >= 0 && i < width_ && j < height_; }

    Rgb at(int i, int j) const
    {
        const auto* p = &data_[index(i, j)];
        return {p[0], p[1], p[2]};
    }

    void set(int i, int j, Rgb c)
    {
        auto* p = &data_[index(i, j)];
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
    }

    bool operator==(const RgbImage&) const = default;

private:
    std::size_t index(int i, int j) const { return (static_cast<std::size_t>(j) * width_ + i) * 3; }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

// ---------------------------------------------------------------------------
// Drawing

/// Integer rasterization of a half-open box: pixel (i, j) belongs to the box
/// iff its center (i + 0.5, j + 0.5) does. Returns false when no pixel does.
struct PixelRect {
    int i0 = 0, j0 = 0, i1 = -1, j1 = -1; // inclusive
};

inline bool rasterize(const BBox2D& b, int width, int height, PixelRect& out)
{
    out.i0 = std::max(0, static_cast<int>(std::ceil(b.x1 - 0.5)));
    out.j0 = std::max(0, static_cast<int>(std::ceil(b.y1 - 0.5)));
    out.i1 = std::min(width - 1, static_cast<int>(std::ceil(b.x2 - 0.5)) - 1);
    out.j1 = std::min(height - 1, static_cast<int>(std::ceil(b.y2 - 0.5)) - 1);
    return out.i0 <= out.i1 && out.j0 <= out.j1;
}

inline void drawRectOutline(RgbImage& img, const BBox2D& b, Rgb color)
{
    PixelRect r;
    if (!rasterize(b, img.width(), img.height(), r))
        return;
    for (int i = r.i0; i <= r.i1; ++i) {
        img.set(i, r.j0, color);
        img.set(i, r.j1, color);
    }
    for (int j = r.j0; j <= r.j1; ++j) {
        img.set(r.i0, j, color);
        img.set(r.i1, j, color);
    }
}

inline void drawLine(RgbImage& img, Pixel a, Pixel b, Rgb color)
{
    const double len = std::max(std::abs(b.u - a.u), std::abs(b.v - a.v));
    const int steps = std::max(1, static_cast<int>(std::ceil(len)));
    for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const int i = static_cast<int>(std::floor(a.u + t * (b.u - a.u)));
        const int j = static_cast<int>(std::floor(a.v + t * (b.v - a.v)));
        if (img.inside(i, j))
            img.set(i, j, color);
    }
}

inline void drawDisc(RgbImage& img, Pixel c, int radius, Rgb color)
{
    const int ci = static_cast<int>(std::floor(c.u));
    const int cj = static_cast<int>(std::floor(c.v));
    for (int dj = -radius; dj <= radius; ++dj)
        for (int di = -radius; di <= radius; ++di)
            if (di * di + dj * dj <= radius * radius && img.inside(ci + di, cj + dj))
                img.set(ci + di, cj + dj, color);
}

// ---------------------------------------------------------------------------
// PNG via libpng

namespace png_detail {

inline void writeToVector(png_structp png, png_bytep data, png_size_t length)
{
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

inline void flushNoop(png_structp) {}

struct ReadCursor {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t offset;
};

inline void readFromBuffer(png_structp png, png_bytep out, png_size_t length)
{
    auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cur->offset + length > cur->size)
        png_error(png, "truncated PNG data");
    std::copy(cur->data + cur->offset, cur->data + cur->offset + length, out);
    cur->offset += length;
}

// libpng reports errors through longjmp, so these two functions keep only
// trivially destructible locals between setjmp and the libpng calls.
inline bool encodeRaw(const std::uint8_t* rgb, int width, int height, std::vector<std::uint8_t>* out)
{
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        return false;
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_set_write_fn(png, out, writeToVector, flushNoop);
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int j = 0; j < height; ++j)
        png_write_row(png, const_cast<png_bytep>(rgb + static_cast<std::size_t>(j) * width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

struct Decoded {
    int width = 0;
    int height = 0;
    std::uint8_t* pixels = nullptr; // malloc'ed, width*height*3
};

inline bool decodeRaw(ReadCursor* cursor, Decoded* result)
{
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        return false;
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::free(result->pixels);
        result->pixels = nullptr;
        return false;
    }
    png_set_read_fn(png, cursor, readFromBuffer);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    result->width = static_cast<int>(png_get_image_width(png, info));
    result->height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(result->width) * 3)
        png_error(png, "unsupported pixel layout");
    result->pixels = static_cast<std::uint8_t*>(std::malloc(static_cast<std::size_t>(result->width) * result->height * 3));
    if (!result->pixels)
        png_error(png, "out of memory");
    png_bytep* rows = static_cast<png_bytep*>(png_malloc(png, sizeof(png_bytep) * result->height));
    for (int j = 0; j < result->height; ++j)
        rows[j] = result->pixels + static_cast<std::size_t>(j) * result->width * 3;
    png_read_image(png, rows);
    png_free(png, rows);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

} // namespace png_detail

inline std::vector<std::uint8_t> encodePng(const RgbImage& img)
{
    if (img.empty())
        fail(ErrorCode::InvalidArgument, "cannot encode an empty image");
    std::vector<std::uint8_t> out;
    if (!png_detail::encodeRaw(img.bytes().data(), img.width(), img.height(), &out))
        fail(ErrorCode::Io, "PNG encoding failed");
    return out;
}

inline RgbImage decodePng(const std::vector<std::uint8_t>& data)
{
    if (data.size() < 8 || png_sig_cmp(data.data(), 0, 8) != 0)
        fail(ErrorCode::Io, "not a PNG stream");
    png_detail::ReadCursor cursor{data.data(), data.size(), 0};
    png_detail::Decoded decoded;
    if (!png_detail::decodeRaw(&cursor, &decoded))
        fail(ErrorCode::Io, "PNG decoding failed");
    std::unique_ptr<std::uint8_t, void (*)(void*)> pixels(decoded.pixels, &std::free);
    RgbImage img(decoded.width, decoded.height);
    for (int j = 0; j < decoded.height; ++j)
        for (int i = 0; i < decoded.width; ++i) {
            const auto* p = pixels.get() + (static_cast<std::size_t>(j) * decoded.width + i) * 3;
            img.set(i, j, {p[0], p[1], p[2]});
        }
    return img;
}

inline void writePngFile(const std::string& path, const RgbImage& img)
{
    const auto bytes = encodePng(img);
    std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!f)
        fail(ErrorCode::Io, "cannot write " + path);
    if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
        fail(ErrorCode::Io, "short write to " + path);
}

inline RgbImage readPngFile(const std::string& path)
{
    std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!f)
        fail(ErrorCode::Io, "cannot open " + path);
    std::vector<std::uint8_t> bytes;
    std::uint8_t buf[65536];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f.get())) > 0)
        bytes.insert(bytes.end(), buf, buf + n);
    return decodePng(bytes);
}

} // namespace targetgrasp
