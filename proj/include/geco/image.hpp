#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geco/geometry.hpp"
#include "geco/mat.hpp"

namespace geco::image {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct ImageU8 {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;

    ImageU8() = default;
    ImageU8(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0) {}
    uint8_t* px(int x, int y) { return rgb.data() + (static_cast<size_t>(y) * width + x) * 3; }
    const uint8_t* px(int x, int y) const {
        return rgb.data() + (static_cast<size_t>(y) * width + x) * 3;
    }
};

/// Reads an 8-bit PNG (grayscale, RGB, or RGBA; any scanline filter; no
/// interlacing) into RGB. Throws MissingImage if the file cannot be
/// opened, SchemaError for malformed or unsupported files.
ImageU8 read_png(const std::string& path);

/// Writes 8-bit RGB PNG (single IDAT, unfiltered scanlines, zlib level 6).
void write_png(const std::string& path, const ImageU8& img);

/// (h*w) x 3 matrix of [0,1] intensities, raster-major.
Mat to_matrix(const ImageU8& img);
ImageU8 from_matrix(const Mat& m, int h, int w);

/// Bilinear resampling with half-pixel centers.
ImageU8 resize_bilinear(const ImageU8& img, int out_w, int out_h);

/// Places img at the top-left of a black canvas_w x canvas_h canvas.
ImageU8 pad_to(const ImageU8& img, int canvas_w, int canvas_h);

/// 1-pixel rectangle outline, clipped to the image.
void draw_box(ImageU8& img, const Box& b, uint8_t r, uint8_t g, uint8_t bl);

/// Digits, '.', '-' and spaces in a 3x5 pixel font at integer scale.
void draw_text(ImageU8& img, int x, int y, const std::string& text, uint8_t r, uint8_t g,
               uint8_t bl, int scale = 2);

}  // namespace geco::image
