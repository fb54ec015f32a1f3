#pragma once

// Central-difference validation of the backward rules. Runs in double
// precision: the forward is rebuilt from the current parameter values on
// every probe, so the callable must route through the shared tensors.

#include <functional>
#include <vector>

#include "mdda/rng.hpp"
#include "mdda/tensor.hpp"

namespace mdda {

// forward: (Tape<double>*) -> scalar loss tensor. Called once with a tape to
// collect analytic grads, then twice per sampled coordinate without one.
// Returns max over sampled coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<TP<double>(Tape<double>*)>& forward,
                         const std::vector<TP<double>>& params,
                         double h = 1e-4, int coords_per_tensor = 20, uint64_t seed = 7) {
    for (const auto& p : params) p->zero_grad();
    Tape<double> tape;
    auto loss = forward(&tape);
    if (loss->size() != 1) throw DimError("grad_check: loss must be scalar");
    if (!is_finite(loss->data[0])) throw NumericError("grad_check: non-finite loss at probe point");
    tape.backward(loss);

    Rng rng(seed);
    double max_rel = 0.0;
    for (const auto& p : params) {
        p->ensure_grad();
        const size_t n = p->size();
        const size_t samples = std::min<size_t>(n, static_cast<size_t>(coords_per_tensor));
        for (size_t s = 0; s < samples; ++s) {
            const size_t i = samples == n ? s : static_cast<size_t>(rng.below(n));
            const double saved = p->data[i];
            p->data[i] = saved + h;
            const double lp = forward(nullptr)->data[0];
            p->data[i] = saved - h;
            const double lm = forward(nullptr)->data[0];
            p->data[i] = saved;
            if (!is_finite(lp) || !is_finite(lm))
                throw NumericError("grad_check: non-finite loss during perturbation");
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = p->grad[i];
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

// Fills a tensor with uniform values in [lo, hi); test/probe helper.
template <typename T>
void fill_uniform(const TP<T>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (T& v : t->data) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace mdda
