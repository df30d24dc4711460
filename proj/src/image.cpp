#include "geco/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "geco/common.hpp"

namespace geco::image {

namespace {

constexpr uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& data) {
    put_u32(out, static_cast<uint32_t>(data.size()));
    const size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc =
        crc32(crc32(0L, Z_NULL, 0), out.data() + crc_start, static_cast<uInt>(4 + data.size()));
    put_u32(out, static_cast<uint32_t>(crc));
}

uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
    if (pb <= pc) return static_cast<uint8_t>(b);
    return static_cast<uint8_t>(c);
}

}  // namespace

ImageU8 read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw MissingImage(path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kSignature, 8) != 0)
        throw SchemaError(path, "not a PNG file");

    int width = 0, height = 0, depth = 0, color = 0, interlace = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= buf.size()) {
        const uint32_t len = get_u32(buf.data() + pos);
        if (pos + 12 + len > buf.size()) throw SchemaError(path, "truncated chunk");
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const uint8_t* data = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw SchemaError(path, "malformed IHDR");
            width = static_cast<int>(get_u32(data));
            height = static_cast<int>(get_u32(data + 4));
            depth = data[8];
            color = data[9];
            interlace = data[12];
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend) throw SchemaError(path, "missing IHDR or IEND");
    if (width <= 0 || height <= 0) throw SchemaError(path, "bad dimensions");
    if (depth != 8) throw SchemaError(path, "only 8-bit PNGs are supported");
    if (interlace != 0) throw SchemaError(path, "interlaced PNGs are not supported");
    int channels = 0;
    switch (color) {
        case 0: channels = 1; break;  // grayscale
        case 2: channels = 3; break;  // RGB
        case 6: channels = 4; break;  // RGBA
        default: throw SchemaError(path, "unsupported color type " + std::to_string(color));
    }

    const size_t stride = static_cast<size_t>(width) * channels;
    std::vector<uint8_t> raw(height * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw SchemaError(path, "corrupt compressed image data");

    // Undo per-scanline filters in place (prior row already reconstructed).
    std::vector<uint8_t> prior(stride, 0);
    ImageU8 img(width, height);
    std::vector<uint8_t> line(stride);
    for (int y = 0; y < height; ++y) {
        const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1);
        const uint8_t filter = src[0];
        const uint8_t* in = src + 1;
        for (size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<size_t>(channels) ? line[i - channels] : 0;
            const int b = prior[i];
            const int c = i >= static_cast<size_t>(channels) ? prior[i - channels] : 0;
            int v = in[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw SchemaError(path, "unknown scanline filter");
            }
            line[i] = static_cast<uint8_t>(v);
        }
        for (int x = 0; x < width; ++x) {
            uint8_t* dst = img.px(x, y);
            const uint8_t* s = line.data() + static_cast<size_t>(x) * channels;
            if (channels == 1) {
                dst[0] = dst[1] = dst[2] = s[0];
            } else {
                dst[0] = s[0];
                dst[1] = s[1];
                dst[2] = s[2];
            }
        }
        prior = line;
    }
    return img;
}

void write_png(const std::string& path, const ImageU8& img) {
    GECO_CHECK(img.width > 0 && img.height > 0 &&
                   img.rgb.size() == static_cast<size_t>(img.width) * img.height * 3,
               "image buffer does not match its dimensions");
    const size_t stride = static_cast<size_t>(img.width) * 3;
    std::vector<uint8_t> raw(img.height * (stride + 1));
    for (int y = 0; y < img.height; ++y) {
        uint8_t* dst = raw.data() + static_cast<size_t>(y) * (stride + 1);
        dst[0] = 0;  // filter: none
        std::memcpy(dst + 1, img.px(0, y), stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) !=
        Z_OK)
        throw ShapeError("image compression failed for " + path);
    compressed.resize(bound);

    std::vector<uint8_t> out(kSignature, kSignature + 8);
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(img.width));
    put_u32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    GECO_CHECK(f.good(), "cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    GECO_CHECK(f.good(), "write failed: " + path);
}

Mat to_matrix(const ImageU8& img) {
    Mat m(img.width * img.height, 3);
    for (size_t i = 0; i < m.numel(); ++i) m[i] = img.rgb[i] / 255.0;
    return m;
}

ImageU8 from_matrix(const Mat& m, int h, int w) {
    GECO_CHECK(m.rows() == h * w && m.cols() == 3, "matrix is not an (h*w) x 3 raster");
    ImageU8 img(w, h);
    for (size_t i = 0; i < m.numel(); ++i)
        img.rgb[i] = static_cast<uint8_t>(std::clamp(std::lround(m[i] * 255.0), 0l, 255l));
    return img;
}

ImageU8 resize_bilinear(const ImageU8& img, int out_w, int out_h) {
    GECO_CHECK(out_w > 0 && out_h > 0, "target size must be positive");
    ImageU8 out(out_w, out_h);
    const double sx = static_cast<double>(img.width) / out_w;
    const double sy = static_cast<double>(img.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            const uint8_t* p00 = img.px(x0, y0);
            const uint8_t* p01 = img.px(x1, y0);
            const uint8_t* p10 = img.px(x0, y1);
            const uint8_t* p11 = img.px(x1, y1);
            uint8_t* dst = out.px(x, y);
            for (int c = 0; c < 3; ++c) {
                const double top = p00[c] + (p01[c] - p00[c]) * wx;
                const double bot = p10[c] + (p11[c] - p10[c]) * wx;
                dst[c] = static_cast<uint8_t>(std::lround(top + (bot - top) * wy));
            }
        }
    }
    return out;
}

ImageU8 pad_to(const ImageU8& img, int canvas_w, int canvas_h) {
    GECO_CHECK(canvas_w >= img.width && canvas_h >= img.height,
               "canvas must contain the image");
    ImageU8 out(canvas_w, canvas_h);
    const size_t stride = static_cast<size_t>(img.width) * 3;
    for (int y = 0; y < img.height; ++y) std::memcpy(out.px(0, y), img.px(0, y), stride);
    return out;
}

void draw_box(ImageU8& img, const Box& b, uint8_t r, uint8_t g, uint8_t bl) {
    const int x1 = std::clamp(static_cast<int>(std::lround(b.x1)), 0, img.width - 1);
    const int y1 = std::clamp(static_cast<int>(std::lround(b.y1)), 0, img.height - 1);
    const int x2 = std::clamp(static_cast<int>(std::lround(b.x2)) - 1, 0, img.width - 1);
    const int y2 = std::clamp(static_cast<int>(std::lround(b.y2)) - 1, 0, img.height - 1);
    auto set = [&](int x, int y) {
        uint8_t* p = img.px(x, y);
        p[0] = r;
        p[1] = g;
        p[2] = bl;
    };
    for (int x = x1; x <= x2; ++x) {
        set(x, y1);
        set(x, y2);
    }
    for (int y = y1; y <= y2; ++y) {
        set(x1, y);
        set(x2, y);
    }
}

namespace {
// 3x5 glyphs, row-major bits (msb = left column).
const uint8_t kFont[13][5] = {
    {0b111, 0b101, 0b101, 0b101, 0b111},  // 0
    {0b010, 0b110, 0b010, 0b010, 0b111},  // 1
    {0b111, 0b001, 0b111, 0b100, 0b111},  // 2
    {0b111, 0b001, 0b011, 0b001, 0b111},  // 3
    {0b101, 0b101, 0b111, 0b001, 0b001},  // 4
    {0b111, 0b100, 0b111, 0b001, 0b111},  // 5
    {0b111, 0b100, 0b111, 0b101, 0b111},  // 6
    {0b111, 0b001, 0b010, 0b010, 0b010},  // 7
    {0b111, 0b101, 0b111, 0b101, 0b111},  // 8
    {0b111, 0b101, 0b111, 0b001, 0b111},  // 9
    {0b000, 0b000, 0b000, 0b000, 0b010},  // .
    {0b000, 0b000, 0b111, 0b000, 0b000},  // -
    {0b000, 0b000, 0b000, 0b000, 0b000},  // space
};

int glyph_index(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c == '.') return 10;
    if (c == '-') return 11;
    return 12;
}
}  // namespace

void draw_text(ImageU8& img, int x, int y, const std::string& text, uint8_t r, uint8_t g,
               uint8_t bl, int scale) {
    int cx = x;
    for (const char c : text) {
        const uint8_t* rows = kFont[glyph_index(c)];
        for (int gy = 0; gy < 5; ++gy) {
            for (int gx = 0; gx < 3; ++gx) {
                if (!(rows[gy] & (0b100 >> gx))) continue;
                for (int sy = 0; sy < scale; ++sy) {
                    for (int sx = 0; sx < scale; ++sx) {
                        const int px = cx + gx * scale + sx;
                        const int py = y + gy * scale + sy;
                        if (px < 0 || py < 0 || px >= img.width || py >= img.height) continue;
                        uint8_t* p = img.px(px, py);
                        p[0] = r;
                        p[1] = g;
                        p[2] = bl;
                    }
                }
            }
        }
        cx += 4 * scale;
    }
}

}  // namespace geco::image
