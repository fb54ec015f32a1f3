#pragma once

// Compute kernels, in two flavours:
//   kernels::serial — direct loop-nest definitions. These are the reference
//   semantics: tests compare the parallel kernels against them and the
//   bench_kernels tool times both.
//   kernels::par — OpenMP versions. Each output element is owned by exactly
//   one thread and inner accumulation order is fixed, so results are
//   identical for every thread count.

#include <algorithm>
#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mdda/common.hpp"

namespace mdda::kernels {

struct ConvDims {
    int n, cin, h, w;        // input
    int cout, k;             // weight (k odd)
    int stride, pad, groups;
    int oh, ow;              // output spatial size

    static ConvDims make(int n, int cin, int h, int w, int cout, int k,
                         int stride, int pad, int groups) {
        if (k <= 0 || k % 2 == 0) throw ConfigError("conv kernel size must be odd, got " + std::to_string(k));
        if (stride <= 0) throw ConfigError("conv stride must be positive");
        if (pad < 0) throw ConfigError("conv pad must be >= 0");
        if (groups <= 0 || cin % groups != 0 || cout % groups != 0)
            throw ConfigError("conv channels (" + std::to_string(cin) + "," + std::to_string(cout) +
                              ") not divisible by groups " + std::to_string(groups));
        ConvDims d{n, cin, h, w, cout, k, stride, pad, groups, 0, 0};
        d.oh = (h + 2 * pad - k) / stride + 1;
        d.ow = (w + 2 * pad - k) / stride + 1;
        if (d.oh <= 0 || d.ow <= 0)
            throw DimError("conv output would be empty: input " + std::to_string(h) + "x" + std::to_string(w) +
                           " k=" + std::to_string(k) + " pad=" + std::to_string(pad));
        return d;
    }
    int cpg() const { return cin / groups; }   // channels per group
    int opg() const { return cout / groups; }  // filters per group
};

namespace serial {

// The six-loop convolution definition. y must be pre-sized n*cout*oh*ow.
template <typename T>
void conv2d_forward(const ConvDims& d, const T* x, const T* w, const T* b, T* y) {
    for (int n = 0; n < d.n; ++n)
        for (int o = 0; o < d.cout; ++o) {
            const int g = o / d.opg();
            for (int oh = 0; oh < d.oh; ++oh)
                for (int ow = 0; ow < d.ow; ++ow) {
                    T acc = b ? b[o] : T(0);
                    for (int c = 0; c < d.cpg(); ++c)
                        for (int i = 0; i < d.k; ++i)
                            for (int j = 0; j < d.k; ++j) {
                                const int ih = oh * d.stride - d.pad + i;
                                const int iw = ow * d.stride - d.pad + j;
                                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                                const size_t xi = ((static_cast<size_t>(n) * d.cin + g * d.cpg() + c) * d.h + ih) * d.w + iw;
                                const size_t wi = ((static_cast<size_t>(o) * d.cpg() + c) * d.k + i) * d.k + j;
                                acc += x[xi] * w[wi];
                            }
                    y[((static_cast<size_t>(n) * d.cout + o) * d.oh + oh) * d.ow + ow] = acc;
                }
        }
}

// C[b] = A[b] * B[b] for `batch` independent row-major matrices.
template <typename T>
void matmul(int batch, int rows, int inner, int cols, const T* a, const T* bm, T* c) {
    for (int b = 0; b < batch; ++b)
        for (int r = 0; r < rows; ++r)
            for (int s = 0; s < cols; ++s) {
                T acc = 0;
                for (int k = 0; k < inner; ++k)
                    acc += a[(static_cast<size_t>(b) * rows + r) * inner + k] *
                           bm[(static_cast<size_t>(b) * inner + k) * cols + s];
                c[(static_cast<size_t>(b) * rows + r) * cols + s] = acc;
            }
}

}  // namespace serial

namespace par {

template <typename T>
void conv2d_forward(const ConvDims& d, const T* __restrict x, const T* __restrict w,
                    const T* __restrict b, T* __restrict y) {
    const int cpg = d.cpg(), opg = d.opg();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < d.n; ++n)
        for (int o = 0; o < d.cout; ++o) {
            const int g = o / opg;
            for (int oh = 0; oh < d.oh; ++oh) {
                T* yrow = y + ((static_cast<size_t>(n) * d.cout + o) * d.oh + oh) * d.ow;
                const T bias = b ? b[o] : T(0);
                for (int ow = 0; ow < d.ow; ++ow) yrow[ow] = bias;
                for (int c = 0; c < cpg; ++c) {
                    const T* xch = x + (static_cast<size_t>(n) * d.cin + g * cpg + c) * d.h * d.w;
                    const T* wch = w + (static_cast<size_t>(o) * cpg + c) * d.k * d.k;
                    for (int i = 0; i < d.k; ++i) {
                        const int ih = oh * d.stride - d.pad + i;
                        if (ih < 0 || ih >= d.h) continue;
                        const T* xrow = xch + static_cast<size_t>(ih) * d.w;
                        const T* wrow = wch + static_cast<size_t>(i) * d.k;
                        if (d.stride == 1) {
                            for (int j = 0; j < d.k; ++j) {
                                const T wv = wrow[j];
                                const int lo = std::max(0, d.pad - j);
                                const int hi = std::min(d.ow, d.w + d.pad - j);
                                const T* xseg = xrow + (lo + j - d.pad);
                                for (int ow = lo; ow < hi; ++ow) yrow[ow] += wv * xseg[ow - lo];
                            }
                        } else {
                            for (int j = 0; j < d.k; ++j) {
                                const T wv = wrow[j];
                                for (int ow = 0; ow < d.ow; ++ow) {
                                    const int iw = ow * d.stride - d.pad + j;
                                    if (iw < 0 || iw >= d.w) continue;
                                    yrow[ow] += wv * xrow[iw];
                                }
                            }
                        }
                    }
                }
            }
        }
}

// Input gradient. gx is accumulated into (callers pass a zeroed or
// already-partial buffer). Each (n, ic) plane is owned by one thread.
template <typename T>
void conv2d_backward_input(const ConvDims& d, const T* __restrict w, const T* __restrict gy,
                           T* __restrict gx) {
    const int cpg = d.cpg(), opg = d.opg();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < d.n; ++n)
        for (int ic = 0; ic < d.cin; ++ic) {
            const int g = ic / cpg, c = ic % cpg;
            T* gxch = gx + (static_cast<size_t>(n) * d.cin + ic) * d.h * d.w;
            for (int o = g * opg; o < (g + 1) * opg; ++o) {
                const T* wch = w + (static_cast<size_t>(o) * cpg + c) * d.k * d.k;
                const T* gych = gy + (static_cast<size_t>(n) * d.cout + o) * d.oh * d.ow;
                for (int i = 0; i < d.k; ++i)
                    for (int oh = 0; oh < d.oh; ++oh) {
                        const int ih = oh * d.stride - d.pad + i;
                        if (ih < 0 || ih >= d.h) continue;
                        T* gxrow = gxch + static_cast<size_t>(ih) * d.w;
                        const T* gyrow = gych + static_cast<size_t>(oh) * d.ow;
                        if (d.stride == 1) {
                            for (int j = 0; j < d.k; ++j) {
                                const T wv = wch[static_cast<size_t>(i) * d.k + j];
                                const int lo = std::max(0, d.pad - j);
                                const int hi = std::min(d.ow, d.w + d.pad - j);
                                T* seg = gxrow + (lo + j - d.pad);
                                for (int ow = lo; ow < hi; ++ow) seg[ow - lo] += wv * gyrow[ow];
                            }
                        } else {
                            for (int j = 0; j < d.k; ++j) {
                                const T wv = wch[static_cast<size_t>(i) * d.k + j];
                                for (int ow = 0; ow < d.ow; ++ow) {
                                    const int iw = ow * d.stride - d.pad + j;
                                    if (iw < 0 || iw >= d.w) continue;
                                    gxrow[iw] += wv * gyrow[ow];
                                }
                            }
                        }
                    }
            }
        }
}

// Weight/bias gradients, accumulated into gw/gb. One thread per filter o, so
// the n-summation order is fixed.
template <typename T>
void conv2d_backward_weight(const ConvDims& d, const T* __restrict x, const T* __restrict gy,
                            T* __restrict gw, T* __restrict gb) {
    const int cpg = d.cpg(), opg = d.opg();
#pragma omp parallel for schedule(static)
    for (int o = 0; o < d.cout; ++o) {
        const int g = o / opg;
        T* gwch = gw + static_cast<size_t>(o) * cpg * d.k * d.k;
        T gbo = 0;
        for (int n = 0; n < d.n; ++n) {
            const T* gych = gy + (static_cast<size_t>(n) * d.cout + o) * d.oh * d.ow;
            if (gb) {
                for (size_t t = 0; t < static_cast<size_t>(d.oh) * d.ow; ++t) gbo += gych[t];
            }
            for (int c = 0; c < cpg; ++c) {
                const T* xch = x + (static_cast<size_t>(n) * d.cin + g * cpg + c) * d.h * d.w;
                for (int i = 0; i < d.k; ++i)
                    for (int j = 0; j < d.k; ++j) {
                        T acc = 0;
                        for (int oh = 0; oh < d.oh; ++oh) {
                            const int ih = oh * d.stride - d.pad + i;
                            if (ih < 0 || ih >= d.h) continue;
                            const T* xrow = xch + static_cast<size_t>(ih) * d.w;
                            const T* gyrow = gych + static_cast<size_t>(oh) * d.ow;
                            if (d.stride == 1) {
                                const int lo = std::max(0, d.pad - j);
                                const int hi = std::min(d.ow, d.w + d.pad - j);
                                const T* xseg = xrow + (lo + j - d.pad);
                                for (int ow = lo; ow < hi; ++ow) acc += xseg[ow - lo] * gyrow[ow];
                            } else {
                                for (int ow = 0; ow < d.ow; ++ow) {
                                    const int iw = ow * d.stride - d.pad + j;
                                    if (iw < 0 || iw >= d.w) continue;
                                    acc += xrow[iw] * gyrow[ow];
                                }
                            }
                        }
                        gwch[(static_cast<size_t>(c) * d.k + i) * d.k + j] += acc;
                    }
            }
        }
        if (gb) gb[o] += gbo;
    }
}

template <typename T>
void matmul(int batch, int rows, int inner, int cols, const T* __restrict a,
            const T* __restrict bm, T* __restrict c) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < batch; ++b)
        for (int r = 0; r < rows; ++r) {
            T* crow = c + (static_cast<size_t>(b) * rows + r) * cols;
            for (int s = 0; s < cols; ++s) crow[s] = T(0);
            const T* arow = a + (static_cast<size_t>(b) * rows + r) * inner;
            for (int k = 0; k < inner; ++k) {
                const T av = arow[k];
                const T* brow = bm + (static_cast<size_t>(b) * inner + k) * cols;
                for (int s = 0; s < cols; ++s) crow[s] += av * brow[s];
            }
        }
}

// gA[b,r,k] = sum_s gC[b,r,s] * B[b,k,s]
template <typename T>
void matmul_backward_a(int batch, int rows, int inner, int cols, const T* __restrict gc,
                       const T* __restrict bm, T* __restrict ga) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < batch; ++b)
        for (int r = 0; r < rows; ++r) {
            const T* gcrow = gc + (static_cast<size_t>(b) * rows + r) * cols;
            T* garow = ga + (static_cast<size_t>(b) * rows + r) * inner;
            for (int k = 0; k < inner; ++k) {
                const T* brow = bm + (static_cast<size_t>(b) * inner + k) * cols;
                T acc = 0;
                for (int s = 0; s < cols; ++s) acc += gcrow[s] * brow[s];
                garow[k] += acc;
            }
        }
}

// gB[b,k,s] = sum_r A[b,r,k] * gC[b,r,s]
template <typename T>
void matmul_backward_b(int batch, int rows, int inner, int cols, const T* __restrict a,
                       const T* __restrict gc, T* __restrict gb) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < batch; ++b)
        for (int k = 0; k < inner; ++k) {
            T* gbrow = gb + (static_cast<size_t>(b) * inner + k) * cols;
            for (int r = 0; r < rows; ++r) {
                const T av = a[(static_cast<size_t>(b) * rows + r) * inner + k];
                const T* gcrow = gc + (static_cast<size_t>(b) * rows + r) * cols;
                for (int s = 0; s < cols; ++s) gbrow[s] += av * gcrow[s];
            }
        }
}

}  // namespace par

}  // namespace mdda::kernels
