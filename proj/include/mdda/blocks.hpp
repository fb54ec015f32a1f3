#pragma once

// The two architectural blocks (MDAB, ETB) and the scale-transition units.

#include <string>
#include <utility>
#include <vector>

#include "mdda/dynconv.hpp"
#include "mdda/ops.hpp"

namespace mdda {

enum class FfnShortcutSource { kBlockInput, kTsaOutput };

namespace detail {

template <typename T>
TP<T> conv_param(ParamList<T>* reg, const std::string& name, int cout, int cin_pg, int k, Rng& rng) {
    auto w = param(reg, name, cout, cin_pg, k, k);
    init_uniform_fanin(w, cin_pg * k * k, rng);
    return w;
}

template <typename T>
TP<T> zeros_param(ParamList<T>* reg, const std::string& name, int c) {
    return param<T>(reg, name, 1, c, 1, 1);
}

template <typename T>
TP<T> const_param(ParamList<T>* reg, const std::string& name, int c, T value) {
    auto t = param<T>(reg, name, 1, c, 1, 1);
    for (T& v : t->data) v = value;
    return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MDAB: LN -> 1x1 expand -> 3x3 depthwise -> chunk gate -> MDConv -> 1x1
// project -> residual add.

template <typename T>
struct MdabParams {
    int channels = 0;
    int expanded = 0;  // e * C, must be even for the chunk gate
    TP<T> ln_g, ln_b;
    TP<T> expand_w, expand_b;
    TP<T> dw_w, dw_b;  // depthwise on expanded
    DynKernel<T> mdconv;  // Cin = Cout = expanded/2
    TP<T> proj_w, proj_b;
};

template <typename T>
MdabParams<T> make_mdab(int channels, double expansion, Rng& rng, ParamList<T>* reg,
                        const std::string& prefix) {
    MdabParams<T> p;
    p.channels = channels;
    const int ec = static_cast<int>(expansion * channels + 0.5);
    if (ec <= 0 || ec % 2 != 0)
        throw ConfigError("mdab: expanded width " + std::to_string(ec) + " must be positive and even");
    p.expanded = ec;
    const int m = ec / 2;
    p.ln_g = detail::const_param<T>(reg, prefix + ".ln.g", channels, T(1));
    p.ln_b = detail::zeros_param<T>(reg, prefix + ".ln.b", channels);
    p.expand_w = detail::conv_param<T>(reg, prefix + ".expand.w", ec, channels, 1, rng);
    p.expand_b = detail::zeros_param<T>(reg, prefix + ".expand.b", ec);
    p.dw_w = detail::conv_param<T>(reg, prefix + ".dw.w", ec, 1, 3, rng);
    p.dw_b = detail::zeros_param<T>(reg, prefix + ".dw.b", ec);
    p.mdconv = make_dyn_kernel<T>(m, m, 3, 1, 1, rng, reg, prefix + ".mdconv");
    p.proj_w = detail::conv_param<T>(reg, prefix + ".proj.w", channels, m, 1, rng);
    p.proj_b = detail::zeros_param<T>(reg, prefix + ".proj.b", channels);
    return p;
}

template <typename T>
TP<T> mdab_forward(Tape<T>* tape, const TP<T>& x, const MdabParams<T>& p) {
    if (x->shape.c != p.channels)
        throw DimError("mdab: input " + x->shape.str() + " expects C=" + std::to_string(p.channels));
    auto t = ops::layer_norm(tape, x, p.ln_g, p.ln_b, T(1e-6));
    t = ops::conv2d(tape, t, p.expand_w, p.expand_b, 1, 0, 1);
    t = ops::conv2d(tape, t, p.dw_w, p.dw_b, 1, 1, p.expanded);
    auto [c1, c2] = ops::chunk2(tape, t);
    auto gated = ops::mul(tape, c1, c2);
    // pi sees exactly the tensor entering the MDConv, i.e. the gate output.
    auto dyn = mdconv_forward(tape, gated, p.mdconv);
    auto out = ops::conv2d(tape, dyn, p.proj_w, p.proj_b, 1, 0, 1);
    return ops::add(tape, x, out);
}

// ---------------------------------------------------------------------------
// ETB: transposed self-attention over channels plus a gated feed-forward,
// each with a learnable channel-scaled shortcut.

template <typename T>
struct EtbParams {
    int channels = 0;
    int ffn_expanded = 0;  // e * C
    int heads = 1;
    FfnShortcutSource ffn_shortcut = FfnShortcutSource::kBlockInput;
    TP<T> ln1_g, ln1_b;
    TP<T> qkv_w, qkv_b;        // 1x1, C -> 3C
    TP<T> qkv_dw_w, qkv_dw_b;  // depthwise 3x3 on 3C
    TP<T> attn_out_w, attn_out_b;
    TP<T> alpha;  // attention temperature, scalar
    TP<T> k1;     // shortcut channel scaler, init ones
    TP<T> ln2_g, ln2_b;
    TP<T> ffn_w, ffn_b;        // 1x1, C -> eC
    TP<T> ffn_dw_w, ffn_dw_b;  // depthwise 3x3 on eC
    TP<T> k2;                  // gate channel scaler, length eC/2
    TP<T> gate_proj_w, gate_proj_b;  // only when eC/2 != C
    TP<T> shortcut_w, shortcut_b;    // 1x1 C -> C applied to the block input
};

template <typename T>
EtbParams<T> make_etb(int channels, double ffn_expansion, int heads, FfnShortcutSource src,
                      Rng& rng, ParamList<T>* reg, const std::string& prefix) {
    EtbParams<T> p;
    p.channels = channels;
    p.heads = heads;
    p.ffn_shortcut = src;
    if (heads <= 0 || channels % heads != 0)
        throw ConfigError("etb: channels " + std::to_string(channels) + " not divisible by heads " +
                          std::to_string(heads));
    const int ec = static_cast<int>(ffn_expansion * channels + 0.5);
    if (ec <= 0 || ec % 2 != 0)
        throw ConfigError("etb: ffn width " + std::to_string(ec) + " must be positive and even");
    p.ffn_expanded = ec;
    p.ln1_g = detail::const_param<T>(reg, prefix + ".ln1.g", channels, T(1));
    p.ln1_b = detail::zeros_param<T>(reg, prefix + ".ln1.b", channels);
    p.qkv_w = detail::conv_param<T>(reg, prefix + ".qkv.w", 3 * channels, channels, 1, rng);
    p.qkv_b = detail::zeros_param<T>(reg, prefix + ".qkv.b", 3 * channels);
    p.qkv_dw_w = detail::conv_param<T>(reg, prefix + ".qkv_dw.w", 3 * channels, 1, 3, rng);
    p.qkv_dw_b = detail::zeros_param<T>(reg, prefix + ".qkv_dw.b", 3 * channels);
    p.attn_out_w = detail::conv_param<T>(reg, prefix + ".attn_out.w", channels, channels, 1, rng);
    p.attn_out_b = detail::zeros_param<T>(reg, prefix + ".attn_out.b", channels);
    p.alpha = detail::const_param<T>(reg, prefix + ".alpha", 1, T(1));
    p.k1 = detail::const_param<T>(reg, prefix + ".k1", channels, T(1));
    p.ln2_g = detail::const_param<T>(reg, prefix + ".ln2.g", channels, T(1));
    p.ln2_b = detail::zeros_param<T>(reg, prefix + ".ln2.b", channels);
    p.ffn_w = detail::conv_param<T>(reg, prefix + ".ffn.w", ec, channels, 1, rng);
    p.ffn_b = detail::zeros_param<T>(reg, prefix + ".ffn.b", ec);
    p.ffn_dw_w = detail::conv_param<T>(reg, prefix + ".ffn_dw.w", ec, 1, 3, rng);
    p.ffn_dw_b = detail::zeros_param<T>(reg, prefix + ".ffn_dw.b", ec);
    p.k2 = detail::const_param<T>(reg, prefix + ".k2", ec / 2, T(1));
    if (ec / 2 != channels) {
        p.gate_proj_w = detail::conv_param<T>(reg, prefix + ".gate_proj.w", channels, ec / 2, 1, rng);
        p.gate_proj_b = detail::zeros_param<T>(reg, prefix + ".gate_proj.b", channels);
    }
    p.shortcut_w = detail::conv_param<T>(reg, prefix + ".shortcut.w", channels, channels, 1, rng);
    p.shortcut_b = detail::zeros_param<T>(reg, prefix + ".shortcut.b", channels);
    return p;
}

// Channel attention: Q,K,V projections, per-head C^ x C^ map from
// softmax(Q^ K^T / alpha), applied to V^, then a 1x1 output projection plus
// the k1-scaled input shortcut. Attention rows sum to 1.
template <typename T>
TP<T> transposed_self_attention(Tape<T>* tape, const TP<T>& x, const EtbParams<T>& p) {
    const auto& s = x->shape;
    if (s.c != p.channels)
        throw DimError("tsa: input " + s.str() + " expects C=" + std::to_string(p.channels));
    const int hw = s.h * s.w;
    const int ch = p.channels / p.heads;  // channels per head
    auto t = ops::layer_norm(tape, x, p.ln1_g, p.ln1_b, T(1e-6));
    t = ops::conv2d(tape, t, p.qkv_w, p.qkv_b, 1, 0, 1);
    t = ops::conv2d(tape, t, p.qkv_dw_w, p.qkv_dw_b, 1, 1, 3 * p.channels);
    auto q = ops::slice_channels(tape, t, 0, p.channels);
    auto k = ops::slice_channels(tape, t, p.channels, 2 * p.channels);
    auto v = ops::slice_channels(tape, t, 2 * p.channels, 3 * p.channels);
    q = ops::reshape(tape, q, Shape4{s.n, p.heads, ch, hw});
    k = ops::reshape(tape, k, Shape4{s.n, p.heads, ch, hw});
    v = ops::reshape(tape, v, Shape4{s.n, p.heads, ch, hw});
    auto logits = ops::matmul(tape, q, ops::transpose_last2(tape, k));
    logits = ops::scalar_div(tape, logits, p.alpha);
    auto attn = ops::softmax_lastdim(tape, logits);
    auto f = ops::matmul(tape, attn, v);
    f = ops::reshape(tape, f, s);
    f = ops::conv2d(tape, f, p.attn_out_w, p.attn_out_b, 1, 0, 1);
    return ops::add(tape, f, ops::channel_scale(tape, x, p.k1));
}

template <typename T>
TP<T> etb_forward(Tape<T>* tape, const TP<T>& x, const EtbParams<T>& p) {
    auto tsa = transposed_self_attention(tape, x, p);
    auto t = ops::layer_norm(tape, tsa, p.ln2_g, p.ln2_b, T(1e-6));
    t = ops::conv2d(tape, t, p.ffn_w, p.ffn_b, 1, 0, 1);
    t = ops::conv2d(tape, t, p.ffn_dw_w, p.ffn_dw_b, 1, 1, p.ffn_expanded);
    auto [c1, c2] = ops::chunk2(tape, t);
    auto gated = ops::channel_scale(tape, ops::mul(tape, c1, c2), p.k2);
    if (p.gate_proj_w) gated = ops::conv2d(tape, gated, p.gate_proj_w, p.gate_proj_b, 1, 0, 1);
    const TP<T>& src = p.ffn_shortcut == FfnShortcutSource::kBlockInput ? x : tsa;
    auto out = ops::add(tape, gated, ops::conv2d(tape, src, p.shortcut_w, p.shortcut_b, 1, 0, 1));
    return ops::add(tape, out, src);
}

// ---------------------------------------------------------------------------
// Scale transitions: 3x3 conv then pixel (un)shuffle.

template <typename T>
struct ScaleParams {
    TP<T> w, b;
};

// conv C -> C/2, unshuffle r=2: doubles channels, halves resolution.
template <typename T>
ScaleParams<T> make_downsample(int channels, Rng& rng, ParamList<T>* reg, const std::string& prefix) {
    if (channels % 2 != 0) throw ConfigError("downsample: channels " + std::to_string(channels) + " must be even");
    ScaleParams<T> p;
    p.w = detail::conv_param<T>(reg, prefix + ".w", channels / 2, channels, 3, rng);
    p.b = detail::zeros_param<T>(reg, prefix + ".b", channels / 2);
    return p;
}

template <typename T>
TP<T> downsample(Tape<T>* tape, const TP<T>& x, const ScaleParams<T>& p) {
    if (x->shape.h % 2 != 0 || x->shape.w % 2 != 0)
        throw DimError("downsample: spatial dims of " + x->shape.str() + " must be even");
    auto t = ops::conv2d(tape, x, p.w, p.b, 1, 1, 1);
    return ops::pixel_unshuffle(tape, t, 2);
}

// conv C -> 2C, shuffle r=2: halves channels, doubles resolution.
template <typename T>
ScaleParams<T> make_upsample(int channels, Rng& rng, ParamList<T>* reg, const std::string& prefix) {
    if (channels % 2 != 0) throw ConfigError("upsample: channels " + std::to_string(channels) + " must be even");
    ScaleParams<T> p;
    p.w = detail::conv_param<T>(reg, prefix + ".w", channels * 2, channels, 3, rng);
    p.b = detail::zeros_param<T>(reg, prefix + ".b", channels * 2);
    return p;
}

template <typename T>
TP<T> upsample(Tape<T>* tape, const TP<T>& x, const ScaleParams<T>& p) {
    auto t = ops::conv2d(tape, x, p.w, p.b, 1, 1, 1);
    return ops::pixel_shuffle(tape, t, 2);
}

}  // namespace mdda
