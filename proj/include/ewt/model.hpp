#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ewt/blocks.hpp"
#include "ewt/wavelet.hpp"

namespace ewt {

struct ModelConfig {
    std::size_t in_channels = 3;
    std::size_t embed_dim = 180;
    std::size_t window = 8;
    std::size_t heads = 6;
    std::size_t num_dfeb = 4;
    std::size_t blocks_per_dfeb = 6;
    double lambda = 0.1;
    int wavelet_level = 1;  // 0 = no-wavelet ablation: head conv on the raw image
    static constexpr std::size_t mlp_ratio = 2;
    BranchMode branch_mode = BranchMode::Dual;  // ablation harness only, not user-configurable

    // 4^L * C channels enter the head conv.
    std::size_t wavelet_channels() const {
        std::size_t c = in_channels;
        for (int l = 0; l < wavelet_level; ++l) c *= 4;
        return c;
    }
    // Input H,W must be divisible by this.
    std::size_t size_multiple() const { return window << std::size_t(wavelet_level); }

    void validate() const {
        if (in_channels != 1 && in_channels != 3)
            throw ConfigError("config: in_channels must be 1 or 3");
        if (embed_dim == 0 || heads == 0 || embed_dim % heads)
            throw ConfigError("config: embed_dim must be a positive multiple of heads");
        if (window == 0) throw ConfigError("config: window must be positive");
        if (num_dfeb == 0) throw ConfigError("config: num_dfeb must be >= 1");
        if (blocks_per_dfeb == 0) throw ConfigError("config: blocks_per_dfeb must be >= 1");
        if (lambda < 0.0 || lambda > 1.0) throw ConfigError("config: lambda must be in [0,1]");
        if (wavelet_level < 0 || wavelet_level > 4)
            throw ConfigError("config: wavelet_level must be in [0,4]");
    }
};

template <typename T>
struct Model {
    ModelConfig config;
    Tensor<T> head_w, head_b;
    MFAMParams<T> body;
    Tensor<T> tail_w, tail_b;

    template <typename F>
    void visit(F&& f) {
        f("head.w", head_w);
        f("head.b", head_b);
        body.visit([&](const std::string& n, Tensor<T>& t) { f("body." + n, t); });
        f("tail.w", tail_w);
        f("tail.b", tail_b);
    }

    std::vector<std::pair<std::string, Tensor<T>>> named_params() {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        visit([&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, t); });
        return out;
    }

    std::vector<Tensor<T>> params() {
        std::vector<Tensor<T>> out;
        visit([&](const std::string&, Tensor<T>& t) { out.push_back(t); });
        return out;
    }

    void set_requires_grad(bool rg) {
        visit([&](const std::string&, Tensor<T>& t) { t.set_requires_grad(rg); });
    }

    void zero_grad() {
        visit([&](const std::string&, Tensor<T>& t) { t.zero_grad(); });
    }

    void zero_params() {
        visit([&](const std::string&, Tensor<T>& t) {
            std::fill(t.data().begin(), t.data().end(), T(0));
        });
        // Keep default affine normalization so zero-body means identity blocks.
        body.visit([&](const std::string& n, Tensor<T>& t) {
            if (n.size() >= 2 && n.compare(n.size() - 2, 2, ".g") == 0 && n.find("ln") != std::string::npos)
                std::fill(t.data().begin(), t.data().end(), T(1));
        });
    }
};

template <typename T>
Model<T> build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    SplitMix64 rng(seed);
    Model<T> m;
    m.config = config;
    std::size_t cw = config.wavelet_channels(), d = config.embed_dim;
    m.head_w = init::uniform_fan_in<T>({d, cw, 3, 3}, cw * 9, rng);
    m.head_b = init::zeros<T>({d});
    m.body = MFAMParams<T>::init(d, config.heads, config.window, config.num_dfeb,
                                 config.blocks_per_dfeb, T(config.lambda), rng, config.branch_mode);
    m.tail_w = init::uniform_fan_in<T>({cw, d, 3, 3}, d * 9, rng);
    m.tail_b = init::zeros<T>({cw});
    return m;
}

template <typename T>
std::size_t param_count(Model<T>& m) {
    std::size_t n = 0;
    m.visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
}

// Eqs of the forward pipeline: wavelet downsample, head conv, MFAM body,
// tail conv, residual in the wavelet domain, inverse wavelet.
template <typename T>
Tensor<T> forward(Model<T>& m, const Tensor<T>& noisy) {
    const auto& cfg = m.config;
    if (noisy.ndim() != 4 || noisy.dim(1) != cfg.in_channels)
        throw DimensionError("forward: expects NCHW with " + std::to_string(cfg.in_channels) +
                             " channels");
    std::size_t mult = cfg.size_multiple();
    if (noisy.dim(2) % mult || noisy.dim(3) % mult)
        throw DimensionError("forward: H,W must be multiples of " + std::to_string(mult) +
                             " (window * 2^level), got " + shape_str(noisy.shape()));
    Tensor<T> fe = cfg.wavelet_level ? dwt_multi(noisy, cfg.wavelet_level) : noisy;
    std::size_t hb = fe.dim(2), wb = fe.dim(3), ws = cfg.window;
    AttnMask mask0 = build_attn_mask(hb, wb, ws, 0);
    AttnMask mask_s = build_attn_mask(hb, wb, ws, ws / 2);
    Tensor<T> fin = conv2d(fe, m.head_w, m.head_b, 1, 1);
    Tensor<T> fout = mfam(fin, m.body, ws, mask0, mask_s);
    Tensor<T> fout2 = conv2d(fout, m.tail_w, m.tail_b, 1, 1);
    Tensor<T> fr = add(fe, fout2);
    return cfg.wavelet_level ? iwt_multi(fr, cfg.wavelet_level) : fr;
}

// ---------------------------------------------------------------------------
// Analytic cost model. Counts multiply-accumulates of one forward pass at
// batch 1; see README "Cost model" for the formula sheet.

inline std::uint64_t flops_estimate(const ModelConfig& config, std::size_t h, std::size_t w) {
    config.validate();
    std::uint64_t d = config.embed_dim, ws = config.window;
    std::uint64_t cw = config.wavelet_channels();
    std::uint64_t hb = h >> std::size_t(config.wavelet_level);
    std::uint64_t wb = w >> std::size_t(config.wavelet_level);
    std::uint64_t tokens = hb * wb;
    std::uint64_t nw = (hb / ws) * (wb / ws);

    auto conv = [&](std::uint64_t cin, std::uint64_t cout) { return 9 * cin * cout * tokens; };
    std::uint64_t conv_block = 2 * conv(d, d);
    std::uint64_t tblock = tokens * d * 3 * d          // qkv projection
                           + 2 * nw * ws * ws * ws * ws * d  // scores + weighted values
                           + tokens * d * d            // output projection
                           + 2 * tokens * d * 2 * d;   // 2x-hidden MLP
    std::uint64_t dfeb = conv_block + config.blocks_per_dfeb * tblock + conv(2 * d, d);
    std::uint64_t body = config.num_dfeb * dfeb + conv_block;
    return conv(cw, d) + body + conv(d, cw);
}

// Peak simultaneously-live activation elements under a straightforward
// forward schedule (batch 1); stands in for device memory, ratios only.
inline std::uint64_t activation_footprint(const ModelConfig& config, std::size_t h, std::size_t w) {
    config.validate();
    std::uint64_t d = config.embed_dim, ws = config.window, heads = config.heads;
    std::uint64_t cw = config.wavelet_channels();
    std::uint64_t hb = h >> std::size_t(config.wavelet_level);
    std::uint64_t wb = w >> std::size_t(config.wavelet_level);
    std::uint64_t tokens = hb * wb;
    std::uint64_t nw = (hb / ws) * (wb / ws);

    // Live through the whole body: wavelet features stashed for the residual.
    std::uint64_t stash = cw * tokens;
    // Transformer block peak: tokens + normed + qkv + scores + attn weights.
    std::uint64_t tblock = 3 * d * tokens + 2 * d * tokens + 2 * nw * heads * ws * ws * ws * ws;
    std::uint64_t cblock = 2 * d * tokens;
    // DFEB holds both branch outputs plus the running branch workspace.
    std::uint64_t dfeb = 2 * d * tokens + std::max(tblock, cblock);
    // MFAM keeps its input, the dense sum, and the current DFEB.
    std::uint64_t body = 2 * d * tokens + dfeb;
    return config.in_channels * h * w + stash + body;
}

// ---------------------------------------------------------------------------
// Weight serialization: UTF-8 manifest, '\0', little-endian blob, CRC32(blob).
// Manifest line: `name dtype d0,d1,... offset`.

struct ChecksumError : IoError {
    explicit ChecksumError(const std::string& m) : IoError(m) {}
};
struct NameSetError : IoError {
    explicit NameSetError(const std::string& m) : IoError(m) {}
};
struct ShapeError : IoError {
    explicit ShapeError(const std::string& m) : IoError(m) {}
};

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t len, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

template <typename T>
constexpr const char* dtype_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace detail

template <typename T>
void save(Model<T>& m, const std::string& path) {
    std::string manifest;
    std::vector<unsigned char> blob;
    m.visit([&](const std::string& name, Tensor<T>& t) {
        manifest += name;
        manifest += ' ';
        manifest += detail::dtype_name<T>();
        manifest += ' ';
        const Shape& s = t.shape();
        for (std::size_t i = 0; i < s.size(); ++i)
            manifest += (i ? "," : "") + std::to_string(s[i]);
        manifest += ' ' + std::to_string(blob.size()) + '\n';
        std::size_t bytes = t.numel() * sizeof(T);
        std::size_t off = blob.size();
        blob.resize(off + bytes);
        std::memcpy(blob.data() + off, t.data().data(), bytes);  // little-endian host assumed
    });
    std::uint32_t crc = detail::crc32(blob.data(), blob.size());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save: cannot open " + path);
    f.write(manifest.data(), std::streamsize(manifest.size()));
    f.put('\0');
    f.write(reinterpret_cast<const char*>(blob.data()), std::streamsize(blob.size()));
    unsigned char cb[4] = {(unsigned char)(crc & 0xFF), (unsigned char)((crc >> 8) & 0xFF),
                           (unsigned char)((crc >> 16) & 0xFF), (unsigned char)((crc >> 24) & 0xFF)};
    f.write(reinterpret_cast<const char*>(cb), 4);
    if (!f) throw IoError("save: write failed for " + path);
}

template <typename T>
Model<T> load(const ModelConfig& config, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load: cannot open " + path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::size_t sep = raw.find('\0');
    if (sep == std::string::npos || raw.size() < sep + 5)
        throw IoError("load: malformed file (missing separator or checksum)");
    std::string manifest = raw.substr(0, sep);
    const unsigned char* blob = reinterpret_cast<const unsigned char*>(raw.data()) + sep + 1;
    std::size_t blob_len = raw.size() - sep - 5;
    const unsigned char* cb = blob + blob_len;
    std::uint32_t stored = std::uint32_t(cb[0]) | (std::uint32_t(cb[1]) << 8) |
                           (std::uint32_t(cb[2]) << 16) | (std::uint32_t(cb[3]) << 24);
    if (detail::crc32(blob, blob_len) != stored)
        throw ChecksumError("load: CRC32 mismatch in " + path);

    struct Entry {
        std::string dtype;
        Shape shape;
        std::size_t offset;
    };
    std::vector<std::pair<std::string, Entry>> entries;
    std::istringstream ms(manifest);
    std::string line;
    while (std::getline(ms, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name, dtype, dims;
        std::size_t offset;
        if (!(ls >> name >> dtype >> dims >> offset))
            throw IoError("load: malformed manifest line: " + line);
        Entry e{dtype, {}, offset};
        std::istringstream ds(dims);
        std::string tok;
        while (std::getline(ds, tok, ',')) e.shape.push_back(std::stoull(tok));
        entries.emplace_back(name, e);
    }

    Model<T> m = build<T>(config, 0);
    std::size_t idx = 0;
    m.visit([&](const std::string& name, Tensor<T>& t) {
        if (idx >= entries.size() || entries[idx].first != name)
            throw NameSetError("load: parameter name set mismatch at '" + name +
                               "' (config does not match checkpoint)");
        const Entry& e = entries[idx].second;
        if (e.dtype != detail::dtype_name<T>())
            throw ShapeError("load: dtype mismatch for '" + name + "'");
        if (e.shape != t.shape())
            throw ShapeError("load: shape mismatch for '" + name + "': file " + shape_str(e.shape) +
                             " vs model " + shape_str(t.shape()));
        std::size_t bytes = t.numel() * sizeof(T);
        if (e.offset + bytes > blob_len) throw IoError("load: blob truncated at '" + name + "'");
        std::memcpy(t.data().data(), blob + e.offset, bytes);
        ++idx;
    });
    if (idx != entries.size())
        throw NameSetError("load: checkpoint has " + std::to_string(entries.size() - idx) +
                           " extra parameters");
    return m;
}

}  // namespace ewt
