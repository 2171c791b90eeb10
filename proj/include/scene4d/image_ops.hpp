#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "scene4d/tensor.hpp"

namespace scene4d {

// Separable Gaussian blur over the two trailing axes, edge-clamped. Each channel is blurred
// independently; a normalized kernel keeps constant images constant.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& in, double sigma) {
    if (sigma <= 0.0) return in;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& k : kernel) k /= total;

    const std::size_t c = in.channels(), h = in.height(), w = in.width();
    std::vector<double> tmp(h * w);
    Tensor<T> out(in.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = in.storage().data() + ch * h * w;
        T* dst = out.storage().data() + ch * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const long xx = std::clamp<long>(long(x) + i, 0, long(w) - 1);
                    acc += kernel[i + radius] * double(src[y * w + xx]);
                }
                tmp[y * w + x] = acc;
            }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const long yy = std::clamp<long>(long(y) + i, 0, long(h) - 1);
                    acc += kernel[i + radius] * tmp[yy * w + x];
                }
                dst[y * w + x] = static_cast<T>(acc);
            }
    }
    return out;
}

template <typename A, typename B>
double mean_squared_error(const Tensor<A>& a, const Tensor<B>& b) {
    require_same_shape(a, b, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        acc += d * d;
    }
    return a.size() ? acc / double(a.size()) : 0.0;
}

// Peak 1.0. Identical inputs give +inf.
inline double psnr_from_mse(double mse) {
    if (mse <= 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

template <typename A, typename B>
double psnr(const Tensor<A>& a, const Tensor<B>& b) {
    return psnr_from_mse(mean_squared_error(a, b));
}

// MSE restricted to pixels where mask == 1 (mask is [H,W], images [C,H,W]). Empty -> nullopt.
inline std::optional<double> masked_mse(const Image& a, const Image& b, const Mask& mask) {
    require_same_shape(a, b, "masked_mse");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t ch = 0; ch < a.channels(); ++ch)
        for (std::size_t p = 0; p < a.plane(); ++p) {
            if (mask[p] < 0.5f) continue;
            const double d = double(a[ch * a.plane() + p]) - double(b[ch * a.plane() + p]);
            acc += d * d;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return acc / double(n);
}

// ---------------------------------------------------------------------------
// 8-bit PNG I/O through libpng. Images are [3,H,W] floats in [0,1].

inline void save_png(const std::string& path, const Image& image) {
    const std::size_t c = image.channels(), h = image.height(), w = image.width();
    if (c != 3 && c != 1) throw std::invalid_argument("png: expected 1 or 3 channels");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("png: write failed for " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(w * c);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const float v = std::clamp(image.at(ch, y, x), 0.0f, 1.0f);
                row[x * c + ch] = static_cast<png_byte>(std::lround(v * 255.0f));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Image load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("missing file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("png: read failed for " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_expand(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    Image out = Image::image(3, h, w);
    for (std::size_t y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch) out.at(ch, y, x) = float(row[x * 3 + ch]) / 255.0f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

}  // namespace scene4d
