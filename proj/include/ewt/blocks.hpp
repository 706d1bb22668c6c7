#pragma once

#include <vector>

#include "ewt/attention.hpp"
#include "ewt/rng.hpp"
#include "ewt/tensor.hpp"

namespace ewt {

namespace init {

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for conv and linear weights.
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, SplitMix64& rng) {
    T bound = T(1) / std::sqrt(T(fan_in));
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = T(rng.uniform(-double(bound), double(bound)));
    return t;
}

template <typename T>
Tensor<T> zeros(Shape shape) {
    return Tensor<T>(std::move(shape), T(0));
}

template <typename T>
Tensor<T> ones(Shape shape) {
    return Tensor<T>(std::move(shape), T(1));
}

}  // namespace init

// Two 3x3 convolutions with a ReLU between; output scaled by lambda and added
// back to the input.
template <typename T>
struct ConvBlockParams {
    Tensor<T> w1, b1, w2, b2;
    T lambda = T(0.1);

    static ConvBlockParams init(std::size_t d, T lambda, SplitMix64& rng) {
        std::size_t fan = d * 9;
        return {init::uniform_fan_in<T>({d, d, 3, 3}, fan, rng), init::zeros<T>({d}),
                init::uniform_fan_in<T>({d, d, 3, 3}, fan, rng), init::zeros<T>({d}), lambda};
    }

    template <typename F>
    void visit(F&& f) {
        f("conv1.w", w1);
        f("conv1.b", b1);
        f("conv2.w", w2);
        f("conv2.b", b2);
    }
};

template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, ConvBlockParams<T>& p) {
    if (x.dim(1) != p.w1.dim(1))
        throw DimensionError("conv_block: channel mismatch " + std::to_string(x.dim(1)) + " vs " +
                             std::to_string(p.w1.dim(1)));
    return add(x, scale(conv2d(relu(conv2d(x, p.w1, p.b1, 1, 1)), p.w2, p.b2, 1, 1), p.lambda));
}

// Pre-norm Transformer block: x + WMSA(LN(x)), then x + MLP(LN(x)), with a
// 2x-hidden GELU MLP. shift is 0 or ws/2, alternating along the branch.
template <typename T>
struct TransformerBlockParams {
    Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
    AttentionParams<T> attn;
    Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    std::size_t shift = 0;

    static TransformerBlockParams init(std::size_t d, std::size_t heads, std::size_t ws,
                                       std::size_t shift, SplitMix64& rng) {
        TransformerBlockParams p;
        p.ln1_g = init::ones<T>({d});
        p.ln1_b = init::zeros<T>({d});
        p.ln2_g = init::ones<T>({d});
        p.ln2_b = init::zeros<T>({d});
        p.attn.w_qkv = init::uniform_fan_in<T>({d, 3 * d}, d, rng);
        p.attn.b_qkv = init::zeros<T>({3 * d});
        p.attn.w_proj = init::uniform_fan_in<T>({d, d}, d, rng);
        p.attn.b_proj = init::zeros<T>({d});
        p.attn.rel_bias = init::zeros<T>({(2 * ws - 1) * (2 * ws - 1), heads});
        p.attn.heads = heads;
        p.attn.ws = ws;
        p.mlp_w1 = init::uniform_fan_in<T>({d, 2 * d}, d, rng);
        p.mlp_b1 = init::zeros<T>({2 * d});
        p.mlp_w2 = init::uniform_fan_in<T>({2 * d, d}, 2 * d, rng);
        p.mlp_b2 = init::zeros<T>({d});
        p.shift = shift;
        return p;
    }

    template <typename F>
    void visit(F&& f) {
        f("ln1.g", ln1_g);
        f("ln1.b", ln1_b);
        attn.visit([&](const std::string& n, Tensor<T>& t) { f("attn." + n, t); });
        f("ln2.g", ln2_g);
        f("ln2.b", ln2_b);
        f("mlp.w1", mlp_w1);
        f("mlp.b1", mlp_b1);
        f("mlp.w2", mlp_w2);
        f("mlp.b2", mlp_b2);
    }
};

// NCHW in/out; tokens are NHWC internally.
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, TransformerBlockParams<T>& p, std::size_t ws,
                            const AttnMask& mask) {
    if (x.ndim() != 4) throw DimensionError("transformer_block: expects NCHW");
    std::size_t h = x.dim(2), w = x.dim(3);
    if (h % ws || w % ws)
        throw DimensionError("transformer_block: H,W not divisible by window size " + std::to_string(ws));
    Tensor<T> tok = permute(x, {0, 2, 3, 1});  // NHWC
    Tensor<T> a = wmsa(layer_norm(tok, p.ln1_g, p.ln1_b), p.attn, ws, p.shift, mask);
    Tensor<T> x1 = add(tok, a);
    Tensor<T> m = layer_norm(x1, p.ln2_g, p.ln2_b);
    m = linear(gelu(linear(m, p.mlp_w1, p.mlp_b1)), p.mlp_w2, p.mlp_b2);
    Tensor<T> x2 = add(x1, m);
    return permute(x2, {0, 3, 1, 2});
}

// Branch layout of a DFEB. Dual (conv + transformer) is the production
// setting; the homogeneous variants exist for the ablation harness only.
enum class BranchMode { Dual, ConvConv, TransTrans };

template <typename T>
struct DFEBParams {
    BranchMode mode = BranchMode::Dual;
    ConvBlockParams<T> conv;                        // Dual / ConvConv branch 1
    ConvBlockParams<T> conv2;                       // ConvConv branch 2
    std::vector<TransformerBlockParams<T>> trans;   // Dual / TransTrans branch 2
    std::vector<TransformerBlockParams<T>> trans2;  // TransTrans branch 1
    Tensor<T> fuse_w, fuse_b;                       // 3x3 conv, 2D -> D

    static DFEBParams init(std::size_t d, std::size_t heads, std::size_t ws, std::size_t blocks,
                           T lambda, SplitMix64& rng, BranchMode mode = BranchMode::Dual) {
        DFEBParams p;
        p.mode = mode;
        auto make_chain = [&] {
            std::vector<TransformerBlockParams<T>> chain;
            for (std::size_t j = 0; j < blocks; ++j)
                chain.push_back(
                    TransformerBlockParams<T>::init(d, heads, ws, (j % 2) ? ws / 2 : 0, rng));
            return chain;
        };
        if (mode != BranchMode::TransTrans) p.conv = ConvBlockParams<T>::init(d, lambda, rng);
        if (mode == BranchMode::ConvConv) p.conv2 = ConvBlockParams<T>::init(d, lambda, rng);
        if (mode != BranchMode::ConvConv) p.trans = make_chain();
        if (mode == BranchMode::TransTrans) p.trans2 = make_chain();
        p.fuse_w = init::uniform_fan_in<T>({d, 2 * d, 3, 3}, 2 * d * 9, rng);
        p.fuse_b = init::zeros<T>({d});
        return p;
    }

    template <typename F>
    void visit(F&& f) {
        if (mode != BranchMode::TransTrans)
            conv.visit([&](const std::string& n, Tensor<T>& t) { f("conv." + n, t); });
        if (mode == BranchMode::ConvConv)
            conv2.visit([&](const std::string& n, Tensor<T>& t) { f("conv2." + n, t); });
        auto visit_chain = [&](std::vector<TransformerBlockParams<T>>& chain, const std::string& tag) {
            for (std::size_t j = 0; j < chain.size(); ++j)
                chain[j].visit([&](const std::string& n, Tensor<T>& t) {
                    f(tag + std::to_string(j) + "." + n, t);
                });
        };
        if (mode != BranchMode::ConvConv) visit_chain(trans, "trans");
        if (mode == BranchMode::TransTrans) visit_chain(trans2, "transb");
        f("fuse.w", fuse_w);
        f("fuse.b", fuse_b);
    }
};

template <typename T>
Tensor<T> run_transformer_chain(const Tensor<T>& x, std::vector<TransformerBlockParams<T>>& chain,
                                std::size_t ws, const AttnMask& mask0, const AttnMask& mask_s) {
    Tensor<T> cur = x;
    for (auto& blk : chain) cur = transformer_block(cur, blk, ws, blk.shift ? mask_s : mask0);
    return cur;
}

// Both branches receive the full feature map; outputs are channel-concatenated
// and fused by a 3x3 conv back to D channels.
template <typename T>
Tensor<T> dfeb(const Tensor<T>& x, DFEBParams<T>& p, std::size_t ws, const AttnMask& mask0,
               const AttnMask& mask_s) {
    Tensor<T> b1, b2;
    switch (p.mode) {
        case BranchMode::Dual:
            b1 = conv_block(x, p.conv);
            b2 = run_transformer_chain(x, p.trans, ws, mask0, mask_s);
            break;
        case BranchMode::ConvConv:
            b1 = conv_block(x, p.conv);
            b2 = conv_block(x, p.conv2);
            break;
        case BranchMode::TransTrans:
            b1 = run_transformer_chain(x, p.trans2, ws, mask0, mask_s);
            b2 = run_transformer_chain(x, p.trans, ws, mask0, mask_s);
            break;
    }
    return conv2d(concat(std::vector<Tensor<T>>{b1, b2}, 1), p.fuse_w, p.fuse_b, 1, 1);
}

template <typename T>
struct MFAMParams {
    std::vector<DFEBParams<T>> dfebs;
    ConvBlockParams<T> tail;

    static MFAMParams init(std::size_t d, std::size_t heads, std::size_t ws, std::size_t num_dfeb,
                           std::size_t blocks, T lambda, SplitMix64& rng,
                           BranchMode mode = BranchMode::Dual) {
        MFAMParams p;
        for (std::size_t i = 0; i < num_dfeb; ++i)
            p.dfebs.push_back(DFEBParams<T>::init(d, heads, ws, blocks, lambda, rng, mode));
        p.tail = ConvBlockParams<T>::init(d, lambda, rng);
        return p;
    }

    template <typename F>
    void visit(F&& f) {
        for (std::size_t i = 0; i < dfebs.size(); ++i)
            dfebs[i].visit([&](const std::string& n, Tensor<T>& t) {
                f("dfeb" + std::to_string(i) + "." + n, t);
            });
        tail.visit([&](const std::string& n, Tensor<T>& t) { f("tail." + n, t); });
    }
};

// Chained DFEBs, dense sum of their outputs, tail ConvBlock, module residual.
template <typename T>
Tensor<T> mfam(const Tensor<T>& x, MFAMParams<T>& p, std::size_t ws, const AttnMask& mask0,
               const AttnMask& mask_s) {
    Tensor<T> cur = x;
    Tensor<T> dense;
    for (std::size_t i = 0; i < p.dfebs.size(); ++i) {
        cur = dfeb(cur, p.dfebs[i], ws, mask0, mask_s);
        dense = (i == 0) ? cur : add(dense, cur);
    }
    return add(x, conv_block(dense, p.tail));
}

}  // namespace ewt
