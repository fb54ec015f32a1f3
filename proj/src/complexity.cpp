#include "mdda/complexity.hpp"

namespace mdda {

namespace {

struct Acc {
    int64_t params = 0;
    int64_t macs = 0;
    int64_t attn = 0;

    void conv(int64_t cout, int64_t cin_pg, int64_t k, int64_t px, bool bias = true) {
        params += cout * cin_pg * k * k + (bias ? cout : 0);
        macs += cout * cin_pg * k * k * px;
    }
    void fc(int64_t out, int64_t in, int64_t samples = 1) {
        params += out * in + out;
        macs += out * in * samples;
    }
};

void add_mdab(Acc& a, int c, double expansion, int64_t px) {
    const int ec = static_cast<int>(expansion * c + 0.5);
    const int m = ec / 2;
    const int hidden = std::max(m / 4, 4);
    a.params += 2 * c;                 // layer norm
    a.conv(ec, c, 1, px);              // expand
    a.conv(ec, 1, 3, px);              // depthwise
    a.conv(m, m, 3, px, false);        // mdconv static bank, no bias
    a.fc(hidden, m);                   // pi squeeze (per sample)
    a.fc(9, hidden);                   // pi heads
    a.fc(m, hidden);
    a.fc(m, hidden);
    a.conv(c, m, 1, px);               // project
}

void add_etb(Acc& a, int c, double expansion, int heads, int64_t px) {
    const int ec = static_cast<int>(expansion * c + 0.5);
    a.params += 2 * c;                 // ln1
    a.conv(3 * c, c, 1, px);           // qkv point
    a.conv(3 * c, 1, 3, px);           // qkv depthwise
    a.attn += 2LL * (c / heads) * (c / heads) * px * heads;
    a.conv(c, c, 1, px);               // attention output projection
    a.params += 1 + c;                 // temperature, k1
    a.params += 2 * c;                 // ln2
    a.conv(ec, c, 1, px);              // ffn point
    a.conv(ec, 1, 3, px);              // ffn depthwise
    a.params += ec / 2;                // k2
    if (ec / 2 != c) a.conv(c, ec / 2, 1, px);  // gate projection
    a.conv(c, c, 1, px);               // input shortcut
}

Acc walk(const ModelConfig& cfg, int64_t h, int64_t w) {
    cfg.validate();
    Acc a;
    const int c0 = cfg.base_dim;
    const int64_t px0 = h * w;
    a.conv(c0, 3, 3, px0);  // embedding
    const int64_t stage_px[7] = {px0, px0 / 4, px0 / 16, px0 / 64, px0 / 16, px0 / 4, px0};
    for (int s = 0; s < 7; ++s) {
        const int width = cfg.block_width(s);
        for (int i = 0; i < cfg.stage_blocks(s); ++i) {
            if (cfg.stage_is_etb(s))
                add_etb(a, width, cfg.expansion_etb, cfg.heads, stage_px[s]);
            else
                add_mdab(a, width, cfg.expansion_mdab, stage_px[s]);
        }
        if (s < 3) a.conv(width / 2, width, 3, stage_px[s]);          // downsample conv
        if (s >= 3 && s <= 5) a.conv(width * 2, width, 3, stage_px[s]);  // upsample conv
        if (s == 3) a.conv(4 * c0, 8 * c0, 1, stage_px[4]);           // dec3 reduce
        if (s == 4) a.conv(2 * c0, 4 * c0, 1, stage_px[5]);           // dec2 reduce
    }
    a.conv(c0, 2 * c0, 3, px0);  // tail
    a.conv(3, c0, 3, px0);
    return a;
}

}  // namespace

int64_t count_params(const ModelConfig& cfg) {
    return walk(cfg, 256, 256).params;
}

FlopCount count_flops(const ModelConfig& cfg, int h, int w) {
    if (h % 8 != 0 || w % 8 != 0)
        throw ConfigError("count_flops: resolution " + std::to_string(h) + "x" + std::to_string(w) +
                          " must be divisible by 8");
    const Acc a = walk(cfg, h, w);
    return FlopCount{a.macs, a.attn};
}

}  // namespace mdda
