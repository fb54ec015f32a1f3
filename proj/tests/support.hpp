#pragma once

// Shared test helpers: tensor construction, independent oracles, and a
// deterministic synthetic clean-image generator.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <vector>

#include "mdda/kernels.hpp"
#include "mdda/rng.hpp"
#include "mdda/tensor.hpp"

namespace testsupport {

using mdda::Rng;
using mdda::Shape4;
using mdda::Tensor;
using mdda::TP;

template <typename T>
TP<T> tensor_from(Shape4 s, std::initializer_list<double> values, bool requires_grad = false) {
    auto t = mdda::make_tensor<T>(s, requires_grad);
    size_t i = 0;
    for (double v : values) t->data[i++] = static_cast<T>(v);
    return t;
}

template <typename T>
TP<T> random_tensor(Shape4 s, uint64_t seed, double lo = -1.0, double hi = 1.0,
                    bool requires_grad = false) {
    auto t = mdda::make_tensor<T>(s, requires_grad);
    Rng rng(seed);
    for (auto& v : t->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
double max_abs_diff(const TP<T>& a, const TP<T>& b) {
    REQUIRE(a->shape == b->shape);
    double m = 0;
    for (size_t i = 0; i < a->size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a->data[i]) - static_cast<double>(b->data[i])));
    return m;
}

// Direct six-loop convolution; the reference semantics for conv2d.
template <typename T>
TP<T> conv2d_oracle(const TP<T>& x, const TP<T>& w, const TP<T>& b, int stride, int pad, int groups) {
    const auto d = mdda::kernels::ConvDims::make(x->shape.n, x->shape.c, x->shape.h, x->shape.w,
                                                 w->shape.n, w->shape.h, stride, pad, groups);
    auto y = mdda::make_tensor<T>(d.n, d.cout, d.oh, d.ow);
    mdda::kernels::serial::conv2d_forward(d, x->data.data(), w->data.data(),
                                          b ? b->data.data() : nullptr, y->data.data());
    return y;
}

// Triple-loop matrix product oracle for (N,G,R,K) x (N,G,K,S).
template <typename T>
TP<T> matmul_oracle(const TP<T>& a, const TP<T>& b) {
    auto y = mdda::make_tensor<T>(a->shape.n, a->shape.c, a->shape.h, b->shape.w);
    mdda::kernels::serial::matmul(a->shape.n * a->shape.c, a->shape.h, a->shape.w, b->shape.w,
                                  a->data.data(), b->data.data(), y->data.data());
    return y;
}

// Smooth synthetic "clean" image: a few random Gaussian blobs on a gradient.
// Deterministic under seed; values in [0,1] on the 1/255 grid when quantized.
inline TP<float> synthetic_clean(int h, int w, uint64_t seed) {
    Rng rng(seed);
    auto img = mdda::make_tensor<float>(1, 3, h, w);
    struct Blob {
        double cx, cy, r, amp[3];
    };
    std::vector<Blob> blobs(6);
    for (auto& b : blobs) {
        b.cx = rng.uniform() * w;
        b.cy = rng.uniform() * h;
        b.r = rng.uniform(0.08, 0.35) * std::min(h, w);
        for (double& a : b.amp) a = rng.uniform(-0.5, 0.5);
    }
    const double gx = rng.uniform(-0.3, 0.3), gy = rng.uniform(-0.3, 0.3);
    const size_t plane = static_cast<size_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double base = 0.5 + gx * (static_cast<double>(x) / w - 0.5) + gy * (static_cast<double>(y) / h - 0.5);
            double ch[3] = {base, base, base};
            for (const auto& b : blobs) {
                const double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
                const double g = std::exp(-d2 / (2 * b.r * b.r));
                for (int c = 0; c < 3; ++c) ch[c] += b.amp[c] * g;
            }
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(ch[c], 0.0, 1.0);
                img->data[c * plane + static_cast<size_t>(y) * w + x] =
                    static_cast<float>(std::round(v * 255.0) / 255.0);
            }
        }
    return img;
}

}  // namespace testsupport
