#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "ewt/adam.hpp"
#include "ewt/config.hpp"
#include "ewt/image.hpp"
#include "ewt/model.hpp"
#include "ewt/noise.hpp"

namespace ewt {

// ---------------------------------------------------------------------------
// Image <-> tensor bridges

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    std::vector<T> v(img.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(img.pixels[i]);
    return Tensor<T>({1, img.channels, img.height, img.width}, std::move(v));
}

template <typename T>
Tensor<T> batch_to_tensor(const std::vector<Image>& imgs) {
    std::size_t c = imgs[0].channels, h = imgs[0].height, w = imgs[0].width;
    std::vector<T> v;
    v.reserve(imgs.size() * c * h * w);
    for (const auto& img : imgs)
        for (double p : img.pixels) v.push_back(T(p));
    return Tensor<T>({imgs.size(), c, h, w}, std::move(v));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
    if (t.ndim() != 4 || t.dim(0) != 1) throw DimensionError("tensor_to_image: expects 1xCxHxW");
    Image img{t.dim(1), t.dim(2), t.dim(3), std::vector<double>(t.numel())};
    for (std::size_t i = 0; i < t.numel(); ++i) img.pixels[i] = double(t.data()[i]);
    return img;
}

// Reflection padding on bottom/right up to the next multiple of `mult`.
inline Image reflect_pad_to_multiple(const Image& img, std::size_t mult) {
    std::size_t h = (img.height + mult - 1) / mult * mult;
    std::size_t w = (img.width + mult - 1) / mult * mult;
    if (h == img.height && w == img.width) return img;
    if (h - img.height >= img.height || w - img.width >= img.width)
        throw DimensionError("reflect_pad: image too small to pad to multiple of " +
                             std::to_string(mult));
    Image out{img.channels, h, w, std::vector<double>(img.channels * h * w)};
    auto ry = [&](std::size_t y) { return y < img.height ? y : 2 * img.height - 2 - y; };
    auto rx = [&](std::size_t x) { return x < img.width ? x : 2 * img.width - 2 - x; };
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, ry(y), rx(x));
    return out;
}

// ---------------------------------------------------------------------------
// Inference

// Whole-image path requires divisibility; tile > 0 processes tile x tile
// crops, each reflect-padded to the divisibility multiple and cropped back.
template <typename T>
Image denoise_image(Model<T>& m, const Image& img, std::size_t tile = 0) {
    NoGradGuard ng;
    std::size_t mult = m.config.size_multiple();
    if (tile == 0) {
        if (img.height % mult || img.width % mult)
            throw DimensionError("denoise: image " + shape_str({img.height, img.width}) +
                                 " not divisible by " + std::to_string(mult) +
                                 " (window * 2^level); use --tile");
        return tensor_to_image(forward(m, image_to_tensor<T>(img)));
    }
    Image out{img.channels, img.height, img.width,
              std::vector<double>(img.channels * img.height * img.width)};
    // Edge tiles are shifted back to keep the full tile extent (overlapping
    // the previous tile) so reflection padding always has enough context.
    auto starts = [&](std::size_t extent) {
        std::vector<std::size_t> s;
        for (std::size_t o = 0;; o += tile) {
            if (o + tile >= extent) {
                s.push_back(extent > tile ? extent - tile : 0);
                break;
            }
            s.push_back(o);
        }
        return s;
    };
    for (std::size_t y0 : starts(img.height))
        for (std::size_t x0 : starts(img.width)) {
            std::size_t th = std::min(tile, img.height - y0);
            std::size_t tw = std::min(tile, img.width - x0);
            Image patch{img.channels, th, tw, std::vector<double>(img.channels * th * tw)};
            for (std::size_t c = 0; c < img.channels; ++c)
                for (std::size_t y = 0; y < th; ++y)
                    for (std::size_t x = 0; x < tw; ++x)
                        patch.at(c, y, x) = img.at(c, y0 + y, x0 + x);
            Image padded = reflect_pad_to_multiple(patch, mult);
            Image den = tensor_to_image(forward(m, image_to_tensor<T>(padded)));
            for (std::size_t c = 0; c < img.channels; ++c)
                for (std::size_t y = 0; y < th; ++y)
                    for (std::size_t x = 0; x < tw; ++x)
                        out.at(c, y0 + y, x0 + x) = den.at(c, y, x);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Training

// Halves every quarter of the schedule.
inline double lr_at(double base, std::size_t step, std::size_t total_steps) {
    std::size_t quarter = std::max<std::size_t>(1, total_steps / 4);
    std::size_t halvings = std::min<std::size_t>(3, (step - 1) / quarter);
    return base / double(std::size_t(1) << halvings);
}

struct StepLog {
    std::size_t step;
    double loss;
    double lr;
    double seconds;
};

// One denoiser training session over in-memory clean images:
// sample patch -> augment -> add noise -> forward -> L1 -> backward -> Adam.
template <typename T>
std::vector<StepLog> train_loop(Model<T>& m, const std::vector<Image>& clean,
                                const TrainSettings& ts, const NoiseSpec& noise,
                                const std::function<void(std::size_t, Model<T>&)>& on_checkpoint = {}) {
    if (clean.empty()) throw ConfigError("train: no training images");
    for (const auto& img : clean)
        if (img.channels != m.config.in_channels)
            throw ConfigError("train: image channel count does not match model");
    m.set_requires_grad(true);
    std::vector<Tensor<T>> params = m.params();
    AdamState<T> state;
    SplitMix64 rng(ts.seed);
    std::vector<StepLog> log;
    auto t0 = std::chrono::steady_clock::now();
    for (std::size_t step = 1; step <= ts.steps; ++step) {
        std::vector<Image> noisy_batch, clean_batch;
        for (std::size_t b = 0; b < ts.batch; ++b) {
            const Image& src = clean[rng.below(clean.size())];
            std::size_t y0 = rng.below(src.height - ts.patch + 1);
            std::size_t x0 = rng.below(src.width - ts.patch + 1);
            Image patch = augment(crop(src, y0, x0, ts.patch), int(rng.below(8)));
            clean_batch.push_back(patch);
            noisy_batch.push_back(add_noise(patch, {noise.kind, noise.sigma, noise.peak,
                                                    rng.next_u64()}));
        }
        Tensor<T> pred = forward(m, batch_to_tensor<T>(noisy_batch));
        Tensor<T> loss = l1_loss(pred, batch_to_tensor<T>(clean_batch));
        m.zero_grad();
        loss.backward();
        double lr = lr_at(ts.lr, step, ts.steps);
        adam_step(params, state, T(lr));
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.push_back({step, double(loss.item()), lr, secs});
        if (on_checkpoint && ts.checkpoint_every && step % ts.checkpoint_every == 0)
            on_checkpoint(step, m);
    }
    return log;
}

inline std::vector<std::string> list_images(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ConfigError("dataset directory does not exist: " + dir);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string ext = e.path().extension().string();
        if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no .pgm/.ppm images in " + dir);
    return files;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
    std::string file;
    double psnr_noisy;
    double psnr_denoised;
};

template <typename T>
std::vector<EvalRow> evaluate(Model<T>& m, const std::string& clean_dir, const NoiseSpec& spec,
                              std::size_t tile = 0) {
    std::vector<EvalRow> rows;
    SplitMix64 seeds(spec.seed);
    for (const std::string& path : list_images(clean_dir)) {
        Image clean = load_image(path);
        NoiseSpec per{spec.kind, spec.sigma, spec.peak, seeds.next_u64()};
        Image noisy = add_noise(clean, per);
        std::size_t mult = m.config.size_multiple();
        std::size_t use_tile = tile;
        if (use_tile == 0 && (clean.height % mult || clean.width % mult))
            use_tile = std::max(mult, std::min(clean.height, clean.width) / mult * mult);
        Image den = denoise_image(m, noisy, use_tile);
        rows.push_back({std::filesystem::path(path).filename().string(), psnr(noisy, clean),
                        psnr(den, clean)});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Efficiency benchmark

struct BenchRow {
    int level;
    std::size_t params;
    std::uint64_t flops;
    std::uint64_t footprint;
    double median_seconds;
};

template <typename T>
BenchRow bench_level(ModelConfig config, int level, std::size_t size, std::size_t runs = 20,
                     std::size_t warmups = 3, std::uint64_t seed = 1) {
    config.wavelet_level = level;
    config.validate();
    if (size % config.size_multiple())
        throw ConfigError("bench: size must be divisible by " + std::to_string(config.size_multiple()));
    Model<T> m = build<T>(config, seed);
    SplitMix64 rng(seed + 17);
    Tensor<T> x({1, config.in_channels, size, size});
    for (auto& v : x.data()) v = T(rng.next_double());
    NoGradGuard ng;
    std::vector<double> times;
    for (std::size_t r = 0; r < warmups + runs; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        Tensor<T> y = forward(m, x);
        double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (r >= warmups) times.push_back(dt);
    }
    std::sort(times.begin(), times.end());
    double median = times[times.size() / 2];
    if (times.size() % 2 == 0) median = 0.5 * (median + times[times.size() / 2 - 1]);
    return {level, param_count(m), flops_estimate(config, size, size),
            activation_footprint(config, size, size), median};
}

}  // namespace ewt
