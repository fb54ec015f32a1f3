#pragma once

// Multi-dimensional dynamic convolution. A small attention generator turns
// the input's channel statistics into three sigmoid-bounded factors (spatial,
// channel, filter); the effective kernel for each sample is the static weight
// bank rescaled by their outer product. With all factors at 1 the op reduces
// to a plain convolution over the static weights.

#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mdda/ops.hpp"
#include "mdda/rng.hpp"

namespace mdda {

template <typename T>
using ParamList = std::vector<std::pair<std::string, TP<T>>>;

template <typename T>
struct DynKernel {
    TP<T> W;                      // static weights [Cout, Cin, k, k], no bias
    TP<T> fc1_w, fc1_b;           // squeeze Cin -> hidden, hidden = max(Cin/4, 4)
    TP<T> head_s_w, head_s_b;     // hidden -> k*k
    TP<T> head_c_w, head_c_b;     // hidden -> Cin
    TP<T> head_f_w, head_f_b;     // hidden -> Cout
    int k = 3, stride = 1, pad = 1;

    int cin() const { return W->shape.c; }
    int cout() const { return W->shape.n; }
    static int hidden_for(int cin) { return std::max(cin / 4, 4); }
};

namespace detail {

template <typename T>
TP<T> param(ParamList<T>* reg, const std::string& name, int n, int c, int h, int w) {
    auto t = make_tensor<T>(n, c, h, w, true);
    if (reg) reg->emplace_back(name, t);
    return t;
}

template <typename T>
void init_uniform_fanin(const TP<T>& t, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& v : t->data) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace detail

// Builds a DynKernel with fan-in uniform weights and zero biases, so initial
// attentions sit at sigmoid(0) = 0.5. Registration order is fixed.
template <typename T>
DynKernel<T> make_dyn_kernel(int cin, int cout, int k, int stride, int pad, Rng& rng,
                             ParamList<T>* reg, const std::string& prefix) {
    DynKernel<T> dk;
    dk.k = k;
    dk.stride = stride;
    dk.pad = pad;
    const int hidden = DynKernel<T>::hidden_for(cin);
    dk.W = detail::param(reg, prefix + ".W", cout, cin, k, k);
    detail::init_uniform_fanin(dk.W, cin * k * k, rng);
    dk.fc1_w = detail::param(reg, prefix + ".pi.fc1.w", hidden, cin, 1, 1);
    dk.fc1_b = detail::param(reg, prefix + ".pi.fc1.b", 1, hidden, 1, 1);
    detail::init_uniform_fanin(dk.fc1_w, cin, rng);
    dk.head_s_w = detail::param(reg, prefix + ".pi.head_s.w", k * k, hidden, 1, 1);
    dk.head_s_b = detail::param(reg, prefix + ".pi.head_s.b", 1, k * k, 1, 1);
    detail::init_uniform_fanin(dk.head_s_w, hidden, rng);
    dk.head_c_w = detail::param(reg, prefix + ".pi.head_c.w", cin, hidden, 1, 1);
    dk.head_c_b = detail::param(reg, prefix + ".pi.head_c.b", 1, cin, 1, 1);
    detail::init_uniform_fanin(dk.head_c_w, hidden, rng);
    dk.head_f_w = detail::param(reg, prefix + ".pi.head_f.w", cout, hidden, 1, 1);
    dk.head_f_b = detail::param(reg, prefix + ".pi.head_f.b", 1, cout, 1, 1);
    detail::init_uniform_fanin(dk.head_f_w, hidden, rng);
    return dk;
}

// pi(X): GAP -> FC+ReLU -> three FC+Sigmoid heads.
// Returns (alpha_s [N,1,k,k], alpha_c [N,Cin,1,1], alpha_f [N,Cout,1,1]).
template <typename T>
std::tuple<TP<T>, TP<T>, TP<T>> attention_triple(Tape<T>* tape, const TP<T>& x,
                                                 const DynKernel<T>& dk) {
    if (x->shape.c != dk.cin())
        throw DimError("attention_triple: input channels " + std::to_string(x->shape.c) +
                       " != kernel Cin " + std::to_string(dk.cin()));
    auto v = ops::global_avg_pool(tape, x);
    auto h = ops::relu(tape, ops::fully_connected(tape, v, dk.fc1_w, dk.fc1_b));
    auto as = ops::sigmoid(tape, ops::fully_connected(tape, h, dk.head_s_w, dk.head_s_b));
    auto ac = ops::sigmoid(tape, ops::fully_connected(tape, h, dk.head_c_w, dk.head_c_b));
    auto af = ops::sigmoid(tape, ops::fully_connected(tape, h, dk.head_f_w, dk.head_f_b));
    as = ops::reshape(tape, as, Shape4{x->shape.n, 1, dk.k, dk.k});
    return {as, ac, af};
}

namespace ops_dyn {

// Applies a per-sample rescaled kernel: for sample n,
//   Wd[n][o,c,i,j] = W[o,c,i,j] * as[n,i,j] * ac[n,c] * af[n,o]
// then convolves sample n with Wd[n]. Gradients reach W and all three
// attention tensors.
template <typename T>
TP<T> dyn_conv_apply(Tape<T>* tape, const TP<T>& x, const TP<T>& W,
                     const TP<T>& as, const TP<T>& ac, const TP<T>& af,
                     int stride, int pad) {
    const auto& xs = x->shape;
    const auto& ws = W->shape;
    const int N = xs.n, cin = ws.c, cout = ws.n, k = ws.h;
    if (xs.c != cin) throw DimError("dyn_conv: input channels " + std::to_string(xs.c) + " != " + std::to_string(cin));
    if (!(as->shape == Shape4{N, 1, k, k})) throw DimError("dyn_conv: alpha_s shape " + as->shape.str());
    if (!(ac->shape == Shape4{N, cin, 1, 1})) throw DimError("dyn_conv: alpha_c shape " + ac->shape.str());
    if (!(af->shape == Shape4{N, cout, 1, 1})) throw DimError("dyn_conv: alpha_f shape " + af->shape.str());

    const auto d1 = kernels::ConvDims::make(1, cin, xs.h, xs.w, cout, k, stride, pad, 1);
    auto y = make_tensor<T>(N, cout, d1.oh, d1.ow);
    const size_t wsz = W->size();
    const size_t kk = static_cast<size_t>(k) * k;

    auto materialize = [=](int n, std::vector<T>& wd) {
        const T* asp = as->data.data() + static_cast<size_t>(n) * kk;
        const T* acp = ac->data.data() + static_cast<size_t>(n) * cin;
        const T* afp = af->data.data() + static_cast<size_t>(n) * cout;
        size_t t = 0;
        for (int o = 0; o < cout; ++o)
            for (int c = 0; c < cin; ++c)
                for (size_t ij = 0; ij < kk; ++ij, ++t)
                    wd[t] = W->data[t] * asp[ij] * acp[c] * afp[o];
    };

    {
        std::vector<T> wd(wsz);
        for (int n = 0; n < N; ++n) {
            materialize(n, wd);
            kernels::par::conv2d_forward(d1,
                x->data.data() + static_cast<size_t>(n) * cin * xs.h * xs.w,
                wd.data(), static_cast<const T*>(nullptr),
                y->data.data() + static_cast<size_t>(n) * cout * d1.oh * d1.ow);
        }
    }
    check_finite(y, "dyn_conv");

    y->requires_grad = ops::grad_needed(tape, {&x, &W, &as, &ac, &af});
    record_if_needed(tape, y, "dyn_conv", [=]() {
        if (y->grad.empty()) return;
        if (x->requires_grad) x->ensure_grad();
        if (W->requires_grad) W->ensure_grad();
        if (as->requires_grad) as->ensure_grad();
        if (ac->requires_grad) ac->ensure_grad();
        if (af->requires_grad) af->ensure_grad();
        std::vector<T> wd(wsz), gwd(wsz);
        for (int n = 0; n < N; ++n) {
            materialize(n, wd);
            const T* gy = y->grad.data() + static_cast<size_t>(n) * cout * d1.oh * d1.ow;
            if (x->requires_grad)
                kernels::par::conv2d_backward_input(d1, wd.data(), gy,
                    x->grad.data() + static_cast<size_t>(n) * cin * xs.h * xs.w);
            std::fill(gwd.begin(), gwd.end(), T(0));
            kernels::par::conv2d_backward_weight(d1,
                x->data.data() + static_cast<size_t>(n) * cin * xs.h * xs.w,
                gy, gwd.data(), static_cast<T*>(nullptr));
            const T* asp = as->data.data() + static_cast<size_t>(n) * kk;
            const T* acp = ac->data.data() + static_cast<size_t>(n) * cin;
            const T* afp = af->data.data() + static_cast<size_t>(n) * cout;
            size_t t = 0;
            for (int o = 0; o < cout; ++o)
                for (int c = 0; c < cin; ++c)
                    for (size_t ij = 0; ij < kk; ++ij, ++t) {
                        const T g = gwd[t];
                        const T w = W->data[t];
                        if (W->requires_grad) W->grad[t] += g * asp[ij] * acp[c] * afp[o];
                        if (as->requires_grad) as->grad[static_cast<size_t>(n) * kk + ij] += g * w * acp[c] * afp[o];
                        if (ac->requires_grad) ac->grad[static_cast<size_t>(n) * cin + c] += g * w * asp[ij] * afp[o];
                        if (af->requires_grad) af->grad[static_cast<size_t>(n) * cout + o] += g * w * asp[ij] * acp[c];
                    }
        }
    });
    return y;
}

}  // namespace ops_dyn

template <typename T>
TP<T> mdconv_forward(Tape<T>* tape, const TP<T>& x, const DynKernel<T>& dk) {
    auto [as, ac, af] = attention_triple(tape, x, dk);
    return ops_dyn::dyn_conv_apply(tape, x, dk.W, as, ac, af, dk.stride, dk.pad);
}

}  // namespace mdda
