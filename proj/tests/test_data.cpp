#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ewt/image.hpp"
#include "ewt/noise.hpp"
#include "ewt/rng.hpp"

using namespace ewt;

namespace {

Image random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
    SplitMix64 rng(seed);
    Image img{c, h, w, std::vector<double>(c * h * w)};
    for (auto& v : img.pixels) v = rng.uniform(0.0, 1.0);
    return img;
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("P5 bytes 0,128,255,64 map to 0, 0.50196, 1, 0.25098") {
    TempFile tf("map_test.pgm");
    {
        std::ofstream f(tf.path, std::ios::binary);
        f << "P5\n2 2\n255\n";
        unsigned char bytes[4] = {0, 128, 255, 64};
        f.write(reinterpret_cast<char*>(bytes), 4);
    }
    Image img = load_image(tf.path);
    REQUIRE(img.channels == 1);
    REQUIRE(img.height == 2);
    REQUIRE(img.width == 2);
    CHECK(img.pixels[0] == doctest::Approx(0.0));
    CHECK(img.pixels[1] == doctest::Approx(128.0 / 255.0));
    CHECK(img.pixels[2] == doctest::Approx(1.0));
    CHECK(img.pixels[3] == doctest::Approx(64.0 / 255.0));
}

TEST_CASE("save(load(x)) is byte-identical for P5 and P6") {
    TempFile a("rt_a.pgm"), b("rt_b.pgm");
    {
        std::ofstream f(a.path, std::ios::binary);
        f << "P5\n3 2\n255\n";
        unsigned char bytes[6] = {0, 7, 99, 128, 200, 255};
        f.write(reinterpret_cast<char*>(bytes), 6);
    }
    save_image(load_image(a.path), b.path);
    CHECK(slurp(a.path) == slurp(b.path));

    TempFile c("rt_c.ppm"), d("rt_d.ppm");
    {
        std::ofstream f(c.path, std::ios::binary);
        f << "P6\n2 1\n255\n";
        unsigned char bytes[6] = {10, 20, 30, 200, 100, 0};
        f.write(reinterpret_cast<char*>(bytes), 6);
    }
    save_image(load_image(c.path), d.path);
    CHECK(slurp(c.path) == slurp(d.path));
}

TEST_CASE("round trip through save/load preserves every 8-bit level") {
    Image img{1, 16, 16, std::vector<double>(256)};
    for (int i = 0; i < 256; ++i) img.pixels[i] = i / 255.0;
    TempFile tf("levels.pgm");
    save_image(img, tf.path);
    Image back = load_image(tf.path);
    for (int i = 0; i < 256; ++i) CHECK(back.pixels[i] == doctest::Approx(i / 255.0));
}

TEST_CASE("comments and flexible whitespace in headers are accepted") {
    TempFile tf("comment.pgm");
    {
        std::ofstream f(tf.path, std::ios::binary);
        f << "P5\n# a comment line\n 2 # inline\n2\n255\n";
        unsigned char bytes[4] = {1, 2, 3, 4};
        f.write(reinterpret_cast<char*>(bytes), 4);
    }
    Image img = load_image(tf.path);
    CHECK(img.width == 2);
    CHECK(img.height == 2);
}

TEST_CASE("malformed headers raise parse errors") {
    TempFile tf("bad.pgm");
    {
        std::ofstream f(tf.path, std::ios::binary);
        f << "P5 0 0 255\n";
    }
    CHECK_THROWS_AS(load_image(tf.path), ParseError);
    {
        std::ofstream f(tf.path, std::ios::binary);
        f << "P7\n2 2\n255\n....";
    }
    CHECK_THROWS_AS(load_image(tf.path), ParseError);
    {
        // truncated payload: header promises 4 bytes, file has 2
        std::ofstream f(tf.path, std::ios::binary);
        f << "P5\n2 2\n255\n";
        unsigned char bytes[2] = {1, 2};
        f.write(reinterpret_cast<char*>(bytes), 2);
    }
    try {
        load_image(tf.path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        // the message points at the byte offset where data ran out
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
}

TEST_CASE("awgn with sigma=0 is the identity; statistics match sigma/255") {
    Image img = random_image(1, 1000, 1000, 1);
    Image same = add_awgn(img, 0.0, 5);
    CHECK(same.pixels == img.pixels);

    Image noisy = add_awgn(img, 25.0, 5);
    double n = double(img.pixels.size());
    double mean = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) mean += noisy.pixels[i] - img.pixels[i];
    mean /= n;
    double var = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        double d = noisy.pixels[i] - img.pixels[i] - mean;
        var += d * d;
    }
    var /= n;
    double s = 25.0 / 255.0;
    CHECK(std::abs(mean) < 3 * s / 1000.0);
    CHECK(std::sqrt(var) == doctest::Approx(s).epsilon(0.01));
}

TEST_CASE("awgn at sigma=25 gives PSNR near 20.17 dB on a large image") {
    Image img = random_image(1, 1000, 1000, 2);
    Image noisy = add_awgn(img, 25.0, 9);
    CHECK(psnr(noisy, img) == doctest::Approx(20.0 * std::log10(255.0 / 25.0)).epsilon(0.005));
}

TEST_CASE("noise synthesis is deterministic in (img, params, seed)") {
    Image img = random_image(3, 32, 32, 3);
    CHECK(add_awgn(img, 25, 7).pixels == add_awgn(img, 25, 7).pixels);
    CHECK(add_awgn(img, 25, 7).pixels != add_awgn(img, 25, 8).pixels);
    CHECK(add_poisson(img, 30, 7).pixels == add_poisson(img, 30, 7).pixels);
    CHECK(add_speckle(img, 25, 7).pixels == add_speckle(img, 25, 7).pixels);
}

TEST_CASE("poisson: zeros stay zero; mean and variance scale with peak") {
    Image zero{1, 8, 8, std::vector<double>(64, 0.0)};
    Image z = add_poisson(zero, 30.0, 4);
    for (double v : z.pixels) CHECK(v == 0.0);

    double value = 0.4, peak = 30.0;
    Image flat{1, 500, 500, std::vector<double>(250000, value)};
    Image noisy = add_poisson(flat, peak, 11);
    double n = double(noisy.pixels.size());
    double mean = 0;
    for (double v : noisy.pixels) mean += v;
    mean /= n;
    double var = 0;
    for (double v : noisy.pixels) var += (v - mean) * (v - mean);
    var /= n;
    CHECK(std::abs(mean - value) < 3 * std::sqrt(value / peak) / std::sqrt(n));
    CHECK(var == doctest::Approx(value / peak).epsilon(0.02));
}

TEST_CASE("speckle: sigma=0 and zero images are fixed points; std scales with value") {
    Image img = random_image(1, 16, 16, 6);
    CHECK(add_speckle(img, 0.0, 3).pixels == img.pixels);
    Image zero{1, 8, 8, std::vector<double>(64, 0.0)};
    for (double v : add_speckle(zero, 25.0, 3).pixels) CHECK(v == 0.0);

    double value = 0.8, sigma = 25.0;
    Image flat{1, 500, 500, std::vector<double>(250000, value)};
    Image noisy = add_speckle(flat, sigma, 13);
    double n = double(noisy.pixels.size());
    double mean = 0;
    for (double v : noisy.pixels) mean += v;
    mean /= n;
    double var = 0;
    for (double v : noisy.pixels) var += (v - mean) * (v - mean);
    var /= n;
    CHECK(std::sqrt(var) == doctest::Approx(value * sigma / 255.0).epsilon(0.02));
}

TEST_CASE("extract_patches: full-size patch is the image; corners stay in bounds") {
    Image img = random_image(1, 32, 48, 8);
    auto full = extract_patches(img, 32, 3, 1);
    REQUIRE(full.size() == 3);
    for (const auto& p : full) {
        CHECK(p.height == 32);
        CHECK(p.width == 32);
    }
    auto some = extract_patches(img, 16, 1000, 2);
    for (const auto& p : some) {
        CHECK(p.height == 16);
        CHECK(p.width == 16);
        for (double v : p.pixels) CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(extract_patches(img, 64, 1, 1), DimensionError);
}

TEST_CASE("extract_patches is deterministic per seed") {
    Image img = random_image(3, 64, 64, 9);
    auto a = extract_patches(img, 16, 20, 33);
    auto b = extract_patches(img, 16, 20, 33);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].pixels == b[i].pixels);
}

TEST_CASE("augment: identity, involutions, and group order") {
    Image img = random_image(3, 8, 12, 10);
    CHECK(augment(img, 0).pixels == img.pixels);
    // code 4 is a pure horizontal flip; applying it twice returns the image
    CHECK(augment(augment(img, 4), 4).pixels == img.pixels);
    // rotating 90 degrees four times returns the image
    Image r = img;
    for (int i = 0; i < 4; ++i) r = augment(r, 1);
    CHECK(r.pixels == img.pixels);
    CHECK_THROWS_AS(augment(img, 8), ContractError);
    CHECK_THROWS_AS(augment(img, -1), ContractError);
}

TEST_CASE("augment is a faithful D4 group action (all 64 composition pairs)") {
    // Composition table computed independently by tracking where the
    // transforms send coordinate axes; codes 0-3 rotate, 4-7 flip+rotate.
    Image img = random_image(1, 6, 10, 12);
    auto compose = [&](int a, int b) {
        int ra = a & 3, rb = b & 3;
        bool fa = a >= 4, fb = b >= 4;
        // applying a then b: flips conjugate rotations into their inverses
        int rot = fb ? (rb - ra + 8) % 4 : (ra + rb) % 4;
        bool flip = fa != fb;
        return (flip ? 4 : 0) + rot;
    };
    for (int a = 0; a < 8; ++a)
        for (int b = 0; b < 8; ++b) {
            Image lhs = augment(augment(img, a), b);
            Image rhs = augment(img, compose(a, b));
            REQUIRE(lhs.height == rhs.height);
            CHECK(lhs.pixels == rhs.pixels);
        }
}

TEST_CASE("psnr: identical images cap at 100 dB; closed-form uniform difference") {
    Image a = random_image(3, 8, 8, 14);
    CHECK(psnr(a, a) == 100.0);

    Image b = a;
    for (auto& v : b.pixels) v += 16.0 / 255.0;
    double expect = 20.0 * std::log10(255.0 / 16.0);
    CHECK(psnr(a, b) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)));

    Image wrong = random_image(3, 8, 9, 15);
    CHECK_THROWS_AS(psnr(a, wrong), DimensionError);
}

TEST_CASE("psnr decreases monotonically with noise level") {
    Image img = random_image(1, 512, 512, 16);
    double prev = 1e9;
    for (double sigma : {5.0, 15.0, 25.0, 50.0}) {
        double p = psnr(add_awgn(img, sigma, 77), img);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("noise spec dispatch and parsing") {
    CHECK(parse_noise_kind("gaussian") == NoiseKind::Gaussian);
    CHECK(parse_noise_kind("poisson") == NoiseKind::Poisson);
    CHECK(parse_noise_kind("speckle") == NoiseKind::Speckle);
    CHECK_THROWS_AS(parse_noise_kind("salt"), ConfigError);

    Image img = random_image(1, 16, 16, 17);
    NoiseSpec spec{NoiseKind::Gaussian, 25.0, 30.0, 21};
    CHECK(add_noise(img, spec).pixels == add_awgn(img, 25.0, 21).pixels);
    spec.kind = NoiseKind::Poisson;
    CHECK(add_noise(img, spec).pixels == add_poisson(img, 30.0, 21).pixels);
    spec.kind = NoiseKind::Speckle;
    CHECK(add_noise(img, spec).pixels == add_speckle(img, 25.0, 21).pixels);
}
