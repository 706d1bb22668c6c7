#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "ewt/common.hpp"

namespace ewt {

// Planar CHW image with values in [0,1]. Gray = 1 channel, RGB = 3.
struct Image {
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<double> pixels;  // [C,H,W]

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return pixels[(c * height + y) * width + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[(c * height + y) * width + x];
    }
    std::size_t size() const { return pixels.size(); }

    void clamp01() {
        for (auto& v : pixels) v = std::clamp(v, 0.0, 1.0);
    }
};

namespace detail {

// PNM header token reader that skips whitespace and '#' comments and tracks
// the byte offset for error messages.
struct PnmReader {
    const std::string& buf;
    std::size_t pos = 0;

    explicit PnmReader(const std::string& b) : buf(b) {}

    void skip_space() {
        while (pos < buf.size()) {
            char c = buf[pos];
            if (c == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    std::string token() {
        skip_space();
        std::size_t start = pos;
        while (pos < buf.size() && !std::isspace((unsigned char)buf[pos])) ++pos;
        if (start == pos) throw ParseError("pnm: unexpected end of header at byte " + std::to_string(pos));
        return buf.substr(start, pos - start);
    }

    std::size_t number() {
        std::size_t at = pos;
        std::string t = token();
        for (char c : t)
            if (!std::isdigit((unsigned char)c))
                throw ParseError("pnm: expected integer at byte " + std::to_string(at) + ", got '" + t + "'");
        return std::stoull(t);
    }
};

}  // namespace detail

// Binary PGM (P5) and PPM (P6), 8-bit only. Values map to [0,1] by /255.
inline Image load_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_image: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::PnmReader r(buf);
    std::string magic = r.token();
    std::size_t channels;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw ParseError("pnm: unsupported magic '" + magic + "' at byte 0 in " + path);
    std::size_t w = r.number(), h = r.number(), maxval = r.number();
    if (w == 0 || h == 0)
        throw ParseError("pnm: degenerate dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                         " at byte " + std::to_string(r.pos));
    if (maxval != 255)
        throw ParseError("pnm: only maxval 255 supported, got " + std::to_string(maxval));
    // Exactly one whitespace byte separates the header from the payload.
    if (r.pos >= buf.size() || !std::isspace((unsigned char)buf[r.pos]))
        throw ParseError("pnm: missing header terminator at byte " + std::to_string(r.pos));
    std::size_t start = r.pos + 1;
    std::size_t need = w * h * channels;
    if (buf.size() - start < need)
        throw ParseError("pnm: truncated payload at byte " + std::to_string(buf.size()) + " (need " +
                         std::to_string(start + need) + " bytes)");

    Image img{channels, h, w, std::vector<double>(need)};
    // Payload is interleaved row-major; store planar CHW.
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < channels; ++c)
                img.at(c, y, x) = double((unsigned char)buf[start + (y * w + x) * channels + c]) / 255.0;
    return img;
}

inline void save_image(const Image& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3)
        throw DimensionError("save_image: channels must be 1 or 3");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_image: cannot open " + path);
    f << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> row(img.width * img.channels);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c) {
                double v = std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0;
                row[x * img.channels + c] = (unsigned char)std::floor(v + 0.5);  // round half up
            }
        f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!f) throw IoError("save_image: write failed for " + path);
}

}  // namespace ewt
