#pragma once

// Analytic complexity accounting: parameter totals and multiply-accumulate
// counts for one forward pass, derived purely from the config (no tensors
// are allocated). The headline MAC figure covers convolution and
// fully-connected work, which is the convention the published
// parameter/FLOP tables follow; the attention matrix products (C^ x C^ maps,
// C^2 * HW MACs each) are tracked separately so both views are available.

#include <cstdint>

#include "mdda/network.hpp"

namespace mdda {

struct FlopCount {
    int64_t conv_fc_macs = 0;  // convolutions, projections, pi FC layers
    int64_t attn_macs = 0;     // Q^ K^T and A V^ matrix products
    int64_t total() const { return conv_fc_macs + attn_macs; }
};

// Exact count of learnable scalars; matches count_params(build_model(cfg, *)).
int64_t count_params(const ModelConfig& cfg);

// MACs of one forward pass at batch 1, input 3 x h x w. h and w must be
// divisible by 8.
FlopCount count_flops(const ModelConfig& cfg, int h, int w);

}  // namespace mdda
