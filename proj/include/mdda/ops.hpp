#pragma once

// Tape-recorded tensor operations. Every op validates shapes, computes the
// forward result (rejecting non-finite outputs), and registers one backward
// node when grad is required. Backward closures accumulate into input
// gradients; a node whose output grad was never touched is a no-op.

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "mdda/kernels.hpp"
#include "mdda/tensor.hpp"

namespace mdda::ops {

template <typename T>
bool grad_needed(Tape<T>* tape, std::initializer_list<const TP<T>*> ins) {
    if (!tape) return false;
    for (auto* p : ins)
        if (*p && (*p)->requires_grad) return true;
    return false;
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
TP<T> conv2d(Tape<T>* tape, const TP<T>& x, const TP<T>& w,
             const std::type_identity_t<TP<T>>& b, int stride, int pad, int groups) {
    const auto& xs = x->shape;
    const auto& ws = w->shape;
    if (groups <= 0 || xs.c % groups != 0 || ws.n % groups != 0)
        throw ConfigError("conv2d: channels (" + std::to_string(xs.c) + "," + std::to_string(ws.n) +
                          ") not divisible by groups " + std::to_string(groups));
    if (ws.c * groups != xs.c)
        throw DimError("conv2d: weight expects " + std::to_string(ws.c * groups) +
                       " input channels, tensor has " + std::to_string(xs.c));
    if (ws.h != ws.w) throw DimError("conv2d: non-square kernel " + ws.str());
    if (b && !(b->shape == Shape4{1, ws.n, 1, 1}))
        throw DimError("conv2d: bias shape " + b->shape.str() + " != 1x" + std::to_string(ws.n) + "x1x1");
    const auto d = kernels::ConvDims::make(xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, stride, pad, groups);

    auto y = make_tensor<T>(d.n, d.cout, d.oh, d.ow);
    kernels::par::conv2d_forward(d, x->data.data(), w->data.data(),
                                 b ? b->data.data() : nullptr, y->data.data());
    check_finite(y, "conv2d");

    y->requires_grad = grad_needed(tape, {&x, &w, &b});
    record_if_needed(tape, y, "conv2d", [=]() {
        if (y->grad.empty()) return;
        const T* gy = y->grad.data();
        if (x->requires_grad) {
            x->ensure_grad();
            kernels::par::conv2d_backward_input(d, w->data.data(), gy, x->grad.data());
        }
        if (w->requires_grad || (b && b->requires_grad)) {
            w->ensure_grad();
            T* gb = nullptr;
            if (b && b->requires_grad) {
                b->ensure_grad();
                gb = b->grad.data();
            }
            kernels::par::conv2d_backward_weight(d, x->data.data(), gy, w->grad.data(), gb);
        }
    });
    return y;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
TP<T> relu(Tape<T>* tape, const TP<T>& x) {
    auto y = make_tensor<T>(x->shape);
    for (size_t i = 0; i < x->size(); ++i) y->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "relu", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->size(); ++i)
            if (x->data[i] > T(0)) x->grad[i] += y->grad[i];
    });
    return y;
}

template <typename T>
TP<T> sigmoid(Tape<T>* tape, const TP<T>& x) {
    auto y = make_tensor<T>(x->shape);
    for (size_t i = 0; i < x->size(); ++i) {
        const T v = x->data[i];
        // split on sign to avoid exp overflow
        y->data[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                               : std::exp(v) / (T(1) + std::exp(v));
    }
    check_finite(y, "sigmoid");
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "sigmoid", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->size(); ++i)
            x->grad[i] += y->grad[i] * y->data[i] * (T(1) - y->data[i]);
    });
    return y;
}

template <typename T>
TP<T> add(Tape<T>* tape, const TP<T>& a, const TP<T>& b) {
    if (!(a->shape == b->shape))
        throw DimError("add: " + a->shape.str() + " vs " + b->shape.str());
    auto y = make_tensor<T>(a->shape);
    for (size_t i = 0; i < a->size(); ++i) y->data[i] = a->data[i] + b->data[i];
    check_finite(y, "add");
    y->requires_grad = grad_needed(tape, {&a, &b});
    record_if_needed(tape, y, "add", [=]() {
        if (y->grad.empty()) return;
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < a->size(); ++i) a->grad[i] += y->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < b->size(); ++i) b->grad[i] += y->grad[i];
        }
    });
    return y;
}

template <typename T>
TP<T> mul(Tape<T>* tape, const TP<T>& a, const TP<T>& b) {
    if (!(a->shape == b->shape))
        throw DimError("mul: " + a->shape.str() + " vs " + b->shape.str());
    auto y = make_tensor<T>(a->shape);
    for (size_t i = 0; i < a->size(); ++i) y->data[i] = a->data[i] * b->data[i];
    check_finite(y, "mul");
    y->requires_grad = grad_needed(tape, {&a, &b});
    record_if_needed(tape, y, "mul", [=]() {
        if (y->grad.empty()) return;
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < a->size(); ++i) a->grad[i] += y->grad[i] * b->data[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < b->size(); ++i) b->grad[i] += y->grad[i] * a->data[i];
        }
    });
    return y;
}

template <typename T>
TP<T> scale(Tape<T>* tape, const TP<T>& x, T s) {
    auto y = make_tensor<T>(x->shape);
    for (size_t i = 0; i < x->size(); ++i) y->data[i] = x->data[i] * s;
    check_finite(y, "scale");
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "scale", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->size(); ++i) x->grad[i] += y->grad[i] * s;
    });
    return y;
}

// y[n,c,h,w] = x[n,c,h,w] * k[c], k shaped 1xCx1x1. Used for the ETB k1/k2
// channel scalers.
template <typename T>
TP<T> channel_scale(Tape<T>* tape, const TP<T>& x, const TP<T>& k) {
    if (!(k->shape == Shape4{1, x->shape.c, 1, 1}))
        throw DimError("channel_scale: scaler " + k->shape.str() + " for input " + x->shape.str());
    auto y = make_tensor<T>(x->shape);
    const size_t plane = static_cast<size_t>(x->shape.h) * x->shape.w;
    for (int n = 0; n < x->shape.n; ++n)
        for (int c = 0; c < x->shape.c; ++c) {
            const T kv = k->data[c];
            const size_t base = (static_cast<size_t>(n) * x->shape.c + c) * plane;
            for (size_t t = 0; t < plane; ++t) y->data[base + t] = x->data[base + t] * kv;
        }
    check_finite(y, "channel_scale");
    y->requires_grad = grad_needed(tape, {&x, &k});
    record_if_needed(tape, y, "channel_scale", [=]() {
        if (y->grad.empty()) return;
        const size_t pl = static_cast<size_t>(x->shape.h) * x->shape.w;
        if (x->requires_grad) {
            x->ensure_grad();
            for (int n = 0; n < x->shape.n; ++n)
                for (int c = 0; c < x->shape.c; ++c) {
                    const T kv = k->data[c];
                    const size_t base = (static_cast<size_t>(n) * x->shape.c + c) * pl;
                    for (size_t t = 0; t < pl; ++t) x->grad[base + t] += y->grad[base + t] * kv;
                }
        }
        if (k->requires_grad) {
            k->ensure_grad();
            for (int n = 0; n < x->shape.n; ++n)
                for (int c = 0; c < x->shape.c; ++c) {
                    const size_t base = (static_cast<size_t>(n) * x->shape.c + c) * pl;
                    T acc = 0;
                    for (size_t t = 0; t < pl; ++t) acc += y->grad[base + t] * x->data[base + t];
                    k->grad[c] += acc;
                }
        }
    });
    return y;
}

// y = x / a with a learnable scalar a (1x1x1x1). The ETB attention
// temperature divides the logits.
template <typename T>
TP<T> scalar_div(Tape<T>* tape, const TP<T>& x, const TP<T>& a) {
    if (a->size() != 1) throw DimError("scalar_div: divisor must be scalar, got " + a->shape.str());
    const T av = a->data[0];
    auto y = make_tensor<T>(x->shape);
    for (size_t i = 0; i < x->size(); ++i) y->data[i] = x->data[i] / av;
    check_finite(y, "scalar_div");
    y->requires_grad = grad_needed(tape, {&x, &a});
    record_if_needed(tape, y, "scalar_div", [=]() {
        if (y->grad.empty()) return;
        if (x->requires_grad) {
            x->ensure_grad();
            for (size_t i = 0; i < x->size(); ++i) x->grad[i] += y->grad[i] / av;
        }
        if (a->requires_grad) {
            a->ensure_grad();
            T acc = 0;
            for (size_t i = 0; i < x->size(); ++i) acc += y->grad[i] * y->data[i];
            a->grad[0] -= acc / av;
        }
    });
    return y;
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
TP<T> reshape(Tape<T>* tape, const TP<T>& x, Shape4 s) {
    if (s.numel() != x->size())
        throw DimError("reshape: " + x->shape.str() + " -> " + s.str() + " changes element count");
    auto y = make_tensor<T>(s);
    y->data = x->data;
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "reshape", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->size(); ++i) x->grad[i] += y->grad[i];
    });
    return y;
}

template <typename T>
TP<T> transpose_last2(Tape<T>* tape, const TP<T>& x) {
    const auto& s = x->shape;
    auto y = make_tensor<T>(s.n, s.c, s.w, s.h);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const size_t xb = (static_cast<size_t>(n) * s.c + c) * s.h * s.w;
            const size_t yb = xb;
            for (int i = 0; i < s.h; ++i)
                for (int j = 0; j < s.w; ++j)
                    y->data[yb + static_cast<size_t>(j) * s.h + i] = x->data[xb + static_cast<size_t>(i) * s.w + j];
        }
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "transpose_last2", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const size_t b = (static_cast<size_t>(n) * s.c + c) * s.h * s.w;
                for (int i = 0; i < s.h; ++i)
                    for (int j = 0; j < s.w; ++j)
                        x->grad[b + static_cast<size_t>(i) * s.w + j] += y->grad[b + static_cast<size_t>(j) * s.h + i];
            }
    });
    return y;
}

template <typename T>
TP<T> slice_channels(Tape<T>* tape, const TP<T>& x, int c0, int c1) {
    const auto& s = x->shape;
    if (c0 < 0 || c1 > s.c || c0 >= c1)
        throw DimError("slice_channels: [" + std::to_string(c0) + "," + std::to_string(c1) +
                       ") out of range for " + s.str());
    auto y = make_tensor<T>(s.n, c1 - c0, s.h, s.w);
    const size_t plane = static_cast<size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        std::memcpy(y->data.data() + static_cast<size_t>(n) * (c1 - c0) * plane,
                    x->data.data() + (static_cast<size_t>(n) * s.c + c0) * plane,
                    sizeof(T) * (c1 - c0) * plane);
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "slice_channels", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        const size_t pl = static_cast<size_t>(s.h) * s.w;
        for (int n = 0; n < s.n; ++n) {
            const size_t yb = static_cast<size_t>(n) * (c1 - c0) * pl;
            const size_t xb = (static_cast<size_t>(n) * s.c + c0) * pl;
            for (size_t t = 0; t < static_cast<size_t>(c1 - c0) * pl; ++t) x->grad[xb + t] += y->grad[yb + t];
        }
    });
    return y;
}

// Channel split into equal halves; downstream code multiplies the halves
// elementwise (the chunk gate).
template <typename T>
std::pair<TP<T>, TP<T>> chunk2(Tape<T>* tape, const TP<T>& x) {
    if (x->shape.c % 2 != 0)
        throw DimError("chunk2: channel count " + std::to_string(x->shape.c) + " is odd");
    const int half = x->shape.c / 2;
    return {slice_channels(tape, x, 0, half), slice_channels(tape, x, half, x->shape.c)};
}

template <typename T>
TP<T> concat_channels(Tape<T>* tape, const std::vector<TP<T>>& xs) {
    if (xs.empty()) throw DimError("concat_channels: empty input list");
    const auto& s0 = xs[0]->shape;
    int ctot = 0;
    for (const auto& x : xs) {
        const auto& s = x->shape;
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
            throw DimError("concat_channels: incompatible " + s.str() + " vs " + s0.str());
        ctot += s.c;
    }
    auto y = make_tensor<T>(s0.n, ctot, s0.h, s0.w);
    const size_t plane = static_cast<size_t>(s0.h) * s0.w;
    for (int n = 0; n < s0.n; ++n) {
        size_t off = 0;
        for (const auto& x : xs) {
            std::memcpy(y->data.data() + (static_cast<size_t>(n) * ctot) * plane + off,
                        x->data.data() + static_cast<size_t>(n) * x->shape.c * plane,
                        sizeof(T) * x->shape.c * plane);
            off += static_cast<size_t>(x->shape.c) * plane;
        }
    }
    bool need = false;
    for (const auto& x : xs) need = need || (tape && x->requires_grad);
    y->requires_grad = need;
    record_if_needed(tape, y, "concat_channels", [=]() {
        if (y->grad.empty()) return;
        const size_t pl = static_cast<size_t>(s0.h) * s0.w;
        for (int n = 0; n < s0.n; ++n) {
            size_t off = 0;
            for (const auto& x : xs) {
                if (x->requires_grad) {
                    x->ensure_grad();
                    const size_t xb = static_cast<size_t>(n) * x->shape.c * pl;
                    const size_t yb = static_cast<size_t>(n) * ctot * pl + off;
                    for (size_t t = 0; t < static_cast<size_t>(x->shape.c) * pl; ++t)
                        x->grad[xb + t] += y->grad[yb + t];
                }
                off += static_cast<size_t>(x->shape.c) * pl;
            }
        }
    });
    return y;
}

// Space-to-channel rearrangement. Channel order is row-major over the rxr
// cell: out[n, c*r*r + di*r + dj, oh, ow] = in[n, c, oh*r+di, ow*r+dj].
template <typename T>
TP<T> pixel_unshuffle(Tape<T>* tape, const TP<T>& x, int r) {
    const auto& s = x->shape;
    if (r <= 0) throw ConfigError("pixel_unshuffle: r must be positive");
    if (s.h % r != 0 || s.w % r != 0)
        throw DimError("pixel_unshuffle: spatial " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                       " not divisible by r=" + std::to_string(r));
    auto y = make_tensor<T>(s.n, s.c * r * r, s.h / r, s.w / r);
    const auto& t = y->shape;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int oh = 0; oh < t.h; ++oh)
                for (int di = 0; di < r; ++di)
                    for (int dj = 0; dj < r; ++dj)
                        for (int ow = 0; ow < t.w; ++ow)
                            y->at(n, c * r * r + di * r + dj, oh, ow) = x->at(n, c, oh * r + di, ow * r + dj);
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "pixel_unshuffle", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        const auto& ts = y->shape;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int oh = 0; oh < ts.h; ++oh)
                    for (int di = 0; di < r; ++di)
                        for (int dj = 0; dj < r; ++dj)
                            for (int ow = 0; ow < ts.w; ++ow)
                                x->grad[x->idx(n, c, oh * r + di, ow * r + dj)] +=
                                    y->grad[y->idx(n, c * r * r + di * r + dj, oh, ow)];
    });
    return y;
}

// Exact inverse of pixel_unshuffle with the same r.
template <typename T>
TP<T> pixel_shuffle(Tape<T>* tape, const TP<T>& x, int r) {
    const auto& s = x->shape;
    if (r <= 0) throw ConfigError("pixel_shuffle: r must be positive");
    if (s.c % (r * r) != 0)
        throw DimError("pixel_shuffle: channels " + std::to_string(s.c) + " not divisible by r^2=" +
                       std::to_string(r * r));
    auto y = make_tensor<T>(s.n, s.c / (r * r), s.h * r, s.w * r);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < y->shape.c; ++c)
            for (int ih = 0; ih < s.h; ++ih)
                for (int di = 0; di < r; ++di)
                    for (int dj = 0; dj < r; ++dj)
                        for (int iw = 0; iw < s.w; ++iw)
                            y->at(n, c, ih * r + di, iw * r + dj) = x->at(n, c * r * r + di * r + dj, ih, iw);
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "pixel_shuffle", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < y->shape.c; ++c)
                for (int ih = 0; ih < s.h; ++ih)
                    for (int di = 0; di < r; ++di)
                        for (int dj = 0; dj < r; ++dj)
                            for (int iw = 0; iw < s.w; ++iw)
                                x->grad[x->idx(n, c * r * r + di * r + dj, ih, iw)] +=
                                    y->grad[y->idx(n, c, ih * r + di, iw * r + dj)];
    });
    return y;
}

// Reflect padding on the bottom/right edges (used to make inference inputs
// divisible by the downsampling factor).
template <typename T>
TP<T> pad_reflect(Tape<T>* tape, const TP<T>& x, int ph, int pw) {
    const auto& s = x->shape;
    if (ph < 0 || pw < 0) throw ConfigError("pad_reflect: negative padding");
    if (ph > s.h - 1 || pw > s.w - 1)
        throw ConfigError("pad_reflect: padding (" + std::to_string(ph) + "," + std::to_string(pw) +
                          ") too large for " + s.str());
    auto y = make_tensor<T>(s.n, s.c, s.h + ph, s.w + pw);
    auto src_h = [&](int h) { return h < s.h ? h : 2 * s.h - 2 - h; };
    auto src_w = [&](int w) { return w < s.w ? w : 2 * s.w - 2 - w; };
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < y->shape.h; ++h)
                for (int w = 0; w < y->shape.w; ++w)
                    y->at(n, c, h, w) = x->at(n, c, src_h(h), src_w(w));
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "pad_reflect", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        auto sh = [&](int h) { return h < s.h ? h : 2 * s.h - 2 - h; };
        auto sw = [&](int w) { return w < s.w ? w : 2 * s.w - 2 - w; };
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int h = 0; h < y->shape.h; ++h)
                    for (int w = 0; w < y->shape.w; ++w)
                        x->grad[x->idx(n, c, sh(h), sw(w))] += y->grad[y->idx(n, c, h, w)];
    });
    return y;
}

// Keep the top-left h1 x w1 region.
template <typename T>
TP<T> crop_spatial(Tape<T>* tape, const TP<T>& x, int h1, int w1) {
    const auto& s = x->shape;
    if (h1 <= 0 || w1 <= 0 || h1 > s.h || w1 > s.w)
        throw DimError("crop_spatial: target " + std::to_string(h1) + "x" + std::to_string(w1) +
                       " from " + s.str());
    auto y = make_tensor<T>(s.n, s.c, h1, w1);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < h1; ++h)
                std::memcpy(&y->at(n, c, h, 0), &x->at(n, c, h, 0), sizeof(T) * w1);
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "crop_spatial", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int h = 0; h < h1; ++h)
                    for (int w = 0; w < w1; ++w)
                        x->grad[x->idx(n, c, h, w)] += y->grad[y->idx(n, c, h, w)];
    });
    return y;
}

// ---------------------------------------------------------------------------
// Normalization / attention pieces

// LayerNorm over the channel axis, independently at each (n, h, w) position.
template <typename T>
TP<T> layer_norm(Tape<T>* tape, const TP<T>& x, const TP<T>& gamma, const TP<T>& beta, T eps) {
    const auto& s = x->shape;
    if (eps <= T(0)) throw ConfigError("layer_norm: eps must be > 0");
    if (!(gamma->shape == Shape4{1, s.c, 1, 1}) || !(beta->shape == Shape4{1, s.c, 1, 1}))
        throw DimError("layer_norm: gamma/beta must be 1x" + std::to_string(s.c) + "x1x1");
    auto y = make_tensor<T>(s);
    const size_t plane = static_cast<size_t>(s.h) * s.w;
    const size_t npos = static_cast<size_t>(s.n) * plane;
    auto istd = std::make_shared<std::vector<T>>(npos);
    auto mean = std::make_shared<std::vector<T>>(npos);
#pragma omp parallel for schedule(static)
    for (long long p = 0; p < static_cast<long long>(npos); ++p) {
        const int n = static_cast<int>(p / plane);
        const size_t hw = p % plane;
        const size_t base = static_cast<size_t>(n) * s.c * plane + hw;
        T mu = 0;
        for (int c = 0; c < s.c; ++c) mu += x->data[base + static_cast<size_t>(c) * plane];
        mu /= static_cast<T>(s.c);
        T var = 0;
        for (int c = 0; c < s.c; ++c) {
            const T d = x->data[base + static_cast<size_t>(c) * plane] - mu;
            var += d * d;
        }
        var /= static_cast<T>(s.c);
        const T is = T(1) / std::sqrt(var + eps);
        (*mean)[p] = mu;
        (*istd)[p] = is;
        for (int c = 0; c < s.c; ++c) {
            const size_t xi = base + static_cast<size_t>(c) * plane;
            y->data[xi] = gamma->data[c] * (x->data[xi] - mu) * is + beta->data[c];
        }
    }
    check_finite(y, "layer_norm");
    y->requires_grad = grad_needed(tape, {&x, &gamma, &beta});
    record_if_needed(tape, y, "layer_norm", [=]() {
        if (y->grad.empty()) return;
        const size_t pl = static_cast<size_t>(s.h) * s.w;
        const size_t np = static_cast<size_t>(s.n) * pl;
        if (x->requires_grad) x->ensure_grad();
        if (gamma->requires_grad) gamma->ensure_grad();
        if (beta->requires_grad) beta->ensure_grad();
        const T invc = T(1) / static_cast<T>(s.c);
        if (x->requires_grad) {
#pragma omp parallel for schedule(static)
            for (long long p = 0; p < static_cast<long long>(np); ++p) {
                const int n = static_cast<int>(p / pl);
                const size_t hw = p % pl;
                const size_t base = static_cast<size_t>(n) * s.c * pl + hw;
                const T mu = (*mean)[p], is = (*istd)[p];
                T sum_gh = 0, sum_ghx = 0;
                for (int c = 0; c < s.c; ++c) {
                    const size_t xi = base + static_cast<size_t>(c) * pl;
                    const T xhat = (x->data[xi] - mu) * is;
                    const T gh = y->grad[xi] * gamma->data[c];
                    sum_gh += gh;
                    sum_ghx += gh * xhat;
                }
                sum_gh *= invc;
                sum_ghx *= invc;
                for (int c = 0; c < s.c; ++c) {
                    const size_t xi = base + static_cast<size_t>(c) * pl;
                    const T xhat = (x->data[xi] - mu) * is;
                    const T gh = y->grad[xi] * gamma->data[c];
                    x->grad[xi] += is * (gh - sum_gh - xhat * sum_ghx);
                }
            }
        }
        if (gamma->requires_grad || beta->requires_grad) {
            for (int c = 0; c < s.c; ++c) {
                T gg = 0, gb = 0;
                for (size_t p = 0; p < np; ++p) {
                    const int n = static_cast<int>(p / pl);
                    const size_t hw = p % pl;
                    const size_t xi = static_cast<size_t>(n) * s.c * pl + static_cast<size_t>(c) * pl + hw;
                    const T xhat = (x->data[xi] - (*mean)[p]) * (*istd)[p];
                    gg += y->grad[xi] * xhat;
                    gb += y->grad[xi];
                }
                if (gamma->requires_grad) gamma->grad[c] += gg;
                if (beta->requires_grad) beta->grad[c] += gb;
            }
        }
    });
    return y;
}

// Softmax over the last (w) axis; rows are all leading dims flattened.
// Max-subtraction keeps large logits finite.
template <typename T>
TP<T> softmax_lastdim(Tape<T>* tape, const TP<T>& x) {
    const auto& s = x->shape;
    const size_t rows = static_cast<size_t>(s.n) * s.c * s.h;
    const int cols = s.w;
    auto y = make_tensor<T>(s);
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(rows); ++r) {
        const T* xr = x->data.data() + static_cast<size_t>(r) * cols;
        T* yr = y->data.data() + static_cast<size_t>(r) * cols;
        T mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        T sum = 0;
        for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < cols; ++j) yr[j] *= inv;
    }
    check_finite(y, "softmax");
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "softmax", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        const size_t rws = static_cast<size_t>(s.n) * s.c * s.h;
#pragma omp parallel for schedule(static)
        for (long long r = 0; r < static_cast<long long>(rws); ++r) {
            const T* yr = y->data.data() + static_cast<size_t>(r) * cols;
            const T* gr = y->grad.data() + static_cast<size_t>(r) * cols;
            T* xr = x->grad.data() + static_cast<size_t>(r) * cols;
            T dot = 0;
            for (int j = 0; j < cols; ++j) dot += gr[j] * yr[j];
            for (int j = 0; j < cols; ++j) xr[j] += yr[j] * (gr[j] - dot);
        }
    });
    return y;
}

// Batched matrix product: a is (N, G, R, K), b is (N, G, K, S) -> (N, G, R, S).
// Plain 2-D matrices travel as (1, 1, R, K).
template <typename T>
TP<T> matmul(Tape<T>* tape, const TP<T>& a, const TP<T>& b) {
    const auto& as = a->shape;
    const auto& bs = b->shape;
    if (as.n != bs.n || as.c != bs.c || as.w != bs.h)
        throw DimError("matmul: " + as.str() + " x " + bs.str());
    const int batch = as.n * as.c, rows = as.h, inner = as.w, cols = bs.w;
    auto y = make_tensor<T>(as.n, as.c, rows, cols);
    kernels::par::matmul(batch, rows, inner, cols, a->data.data(), b->data.data(), y->data.data());
    check_finite(y, "matmul");
    y->requires_grad = grad_needed(tape, {&a, &b});
    record_if_needed(tape, y, "matmul", [=]() {
        if (y->grad.empty()) return;
        if (a->requires_grad) {
            a->ensure_grad();
            kernels::par::matmul_backward_a(batch, rows, inner, cols, y->grad.data(), b->data.data(), a->grad.data());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kernels::par::matmul_backward_b(batch, rows, inner, cols, a->data.data(), y->grad.data(), b->grad.data());
        }
    });
    return y;
}

// ---------------------------------------------------------------------------
// Reductions / vector ops

// Spatial mean per (n, c): output N x C x 1 x 1.
template <typename T>
TP<T> global_avg_pool(Tape<T>* tape, const TP<T>& x) {
    const auto& s = x->shape;
    auto y = make_tensor<T>(s.n, s.c, 1, 1);
    const size_t plane = static_cast<size_t>(s.h) * s.w;
    const T inv = T(1) / static_cast<T>(plane);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* p = x->data.data() + (static_cast<size_t>(n) * s.c + c) * plane;
            T acc = 0;
            for (size_t t = 0; t < plane; ++t) acc += p[t];
            y->data[static_cast<size_t>(n) * s.c + c] = acc * inv;
        }
    check_finite(y, "global_avg_pool");
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "global_avg_pool", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        const size_t pl = static_cast<size_t>(s.h) * s.w;
        const T iv = T(1) / static_cast<T>(pl);
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const T g = y->grad[static_cast<size_t>(n) * s.c + c] * iv;
                T* p = x->grad.data() + (static_cast<size_t>(n) * s.c + c) * pl;
                for (size_t t = 0; t < pl; ++t) p[t] += g;
            }
    });
    return y;
}

// Affine map on per-sample vectors: x is (N, Cin, 1, 1), w is (Cout, Cin, 1, 1),
// b is (1, Cout, 1, 1) or null.
template <typename T>
TP<T> fully_connected(Tape<T>* tape, const TP<T>& x, const TP<T>& w,
                      const std::type_identity_t<TP<T>>& b) {
    const auto& s = x->shape;
    if (s.h != 1 || s.w != 1) throw DimError("fully_connected: input must be Nx C x1x1, got " + s.str());
    if (w->shape.c != s.c || w->shape.h != 1 || w->shape.w != 1)
        throw DimError("fully_connected: weight " + w->shape.str() + " for input " + s.str());
    const int out = w->shape.n;
    if (b && !(b->shape == Shape4{1, out, 1, 1}))
        throw DimError("fully_connected: bias shape " + b->shape.str());
    auto y = make_tensor<T>(s.n, out, 1, 1);
    for (int n = 0; n < s.n; ++n)
        for (int o = 0; o < out; ++o) {
            T acc = b ? b->data[o] : T(0);
            for (int i = 0; i < s.c; ++i)
                acc += w->data[static_cast<size_t>(o) * s.c + i] * x->data[static_cast<size_t>(n) * s.c + i];
            y->data[static_cast<size_t>(n) * out + o] = acc;
        }
    check_finite(y, "fully_connected");
    y->requires_grad = grad_needed(tape, {&x, &w, &b});
    record_if_needed(tape, y, "fully_connected", [=]() {
        if (y->grad.empty()) return;
        for (int n = 0; n < s.n; ++n)
            for (int o = 0; o < out; ++o) {
                const T g = y->grad[static_cast<size_t>(n) * out + o];
                if (x->requires_grad) {
                    x->ensure_grad();
                    for (int i = 0; i < s.c; ++i)
                        x->grad[static_cast<size_t>(n) * s.c + i] += g * w->data[static_cast<size_t>(o) * s.c + i];
                }
                if (w->requires_grad) {
                    w->ensure_grad();
                    for (int i = 0; i < s.c; ++i)
                        w->grad[static_cast<size_t>(o) * s.c + i] += g * x->data[static_cast<size_t>(n) * s.c + i];
                }
                if (b && b->requires_grad) {
                    b->ensure_grad();
                    b->grad[o] += g;
                }
            }
    });
    return y;
}

template <typename T>
TP<T> sum_all(Tape<T>* tape, const TP<T>& x) {
    auto y = make_tensor<T>(1, 1, 1, 1);
    T acc = 0;
    for (const T& v : x->data) acc += v;
    y->data[0] = acc;
    check_finite(y, "sum_all");
    y->requires_grad = grad_needed(tape, {&x});
    record_if_needed(tape, y, "sum_all", [=]() {
        if (y->grad.empty()) return;
        x->ensure_grad();
        const T g = y->grad[0];
        for (size_t i = 0; i < x->size(); ++i) x->grad[i] += g;
    });
    return y;
}

}  // namespace mdda::ops
