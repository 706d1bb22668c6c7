#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ewt/image.hpp"
#include "ewt/rng.hpp"

namespace ewt {

enum class NoiseKind { Gaussian, Poisson, Speckle };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::Gaussian;
    double sigma = 25.0;  // gaussian/speckle, on the 0-255 scale
    double peak = 30.0;   // poisson
    std::uint64_t seed = 0;

    std::string describe() const {
        switch (kind) {
            case NoiseKind::Gaussian: return "gaussian sigma=" + std::to_string(sigma);
            case NoiseKind::Poisson: return "poisson peak=" + std::to_string(peak);
            case NoiseKind::Speckle: return "speckle sigma=" + std::to_string(sigma);
        }
        return "?";
    }
};

inline NoiseKind parse_noise_kind(const std::string& s) {
    if (s == "gaussian") return NoiseKind::Gaussian;
    if (s == "poisson") return NoiseKind::Poisson;
    if (s == "speckle") return NoiseKind::Speckle;
    throw ConfigError("noise kind must be gaussian|poisson|speckle, got '" + s + "'");
}

// Noisy values are intentionally not clamped to [0,1]; clamping would change
// the noise distribution. save_image clamps for visualization.
inline Image add_awgn(const Image& img, double sigma, std::uint64_t seed) {
    if (sigma < 0) throw ContractError("add_awgn: sigma must be >= 0");
    Image out = img;
    if (sigma == 0) return out;
    SplitMix64 rng(seed);
    double s = sigma / 255.0;
    for (auto& v : out.pixels) v += s * rng.gaussian();
    return out;
}

inline Image add_poisson(const Image& img, double peak, std::uint64_t seed) {
    if (peak <= 0) throw ContractError("add_poisson: peak must be > 0");
    Image out = img;
    SplitMix64 rng(seed);
    for (auto& v : out.pixels) v = double(rng.poisson(std::max(0.0, v) * peak)) / peak;
    return out;
}

inline Image add_speckle(const Image& img, double sigma, std::uint64_t seed) {
    if (sigma < 0) throw ContractError("add_speckle: sigma must be >= 0");
    Image out = img;
    if (sigma == 0) return out;
    SplitMix64 rng(seed);
    double s = sigma / 255.0;
    for (auto& v : out.pixels) v *= 1.0 + s * rng.gaussian();
    return out;
}

inline Image add_noise(const Image& img, const NoiseSpec& spec) {
    switch (spec.kind) {
        case NoiseKind::Gaussian: return add_awgn(img, spec.sigma, spec.seed);
        case NoiseKind::Poisson: return add_poisson(img, spec.peak, spec.seed);
        case NoiseKind::Speckle: return add_speckle(img, spec.sigma, spec.seed);
    }
    throw ContractError("add_noise: unknown kind");
}

inline Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t size) {
    Image out{img.channels, size, size, std::vector<double>(img.channels * size * size)};
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
    return out;
}

// Uniformly random top-left corners, deterministic per seed.
inline std::vector<Image> extract_patches(const Image& img, std::size_t size, std::size_t count,
                                          std::uint64_t seed) {
    if (size > img.height || size > img.width)
        throw DimensionError("extract_patches: patch " + std::to_string(size) + " exceeds image " +
                             shape_str({img.height, img.width}));
    SplitMix64 rng(seed);
    std::vector<Image> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t y0 = rng.below(img.height - size + 1);
        std::size_t x0 = rng.below(img.width - size + 1);
        out.push_back(crop(img, y0, x0, size));
    }
    return out;
}

// Dihedral-4 group action. Codes 0..3 rotate by 90*code degrees CCW; codes
// 4..7 flip horizontally first, then rotate by 90*(code-4).
inline Image augment(const Image& img, int code) {
    if (code < 0 || code > 7) throw ContractError("augment: code must be in [0,8)");
    Image cur = img;
    if (code >= 4) {
        Image f = cur;
        for (std::size_t c = 0; c < cur.channels; ++c)
            for (std::size_t y = 0; y < cur.height; ++y)
                for (std::size_t x = 0; x < cur.width; ++x)
                    f.at(c, y, x) = cur.at(c, y, cur.width - 1 - x);
        cur = f;
        code -= 4;
    }
    for (int r = 0; r < code; ++r) {
        Image rot{cur.channels, cur.width, cur.height,
                  std::vector<double>(cur.pixels.size())};
        // (y,x) <- (x, H_old-1-y) is a 90-degree CCW rotation
        for (std::size_t c = 0; c < cur.channels; ++c)
            for (std::size_t y = 0; y < rot.height; ++y)
                for (std::size_t x = 0; x < rot.width; ++x)
                    rot.at(c, y, x) = cur.at(c, x, cur.width - 1 - y);
        cur = rot;
    }
    return cur;
}

// 10*log10(max^2/MSE) over all channels jointly; MSE == 0 reports the 100 dB cap.
inline double psnr(const Image& a, const Image& b, double max_val = 1.0) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw DimensionError("psnr: image shapes differ");
    double mse = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        double d = a.pixels[i] - b.pixels[i];
        mse += d * d;
    }
    mse /= double(a.pixels.size());
    if (mse == 0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(max_val * max_val / mse));
}

}  // namespace ewt
