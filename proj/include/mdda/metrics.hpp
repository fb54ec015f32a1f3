#pragma once

// PSNR / SSIM evaluation on [0,1] images, with the Y-channel variant used by
// restoration benchmarks.

#include <string>
#include <vector>

#include "mdda/tensor.hpp"

namespace mdda {

// Identical images report the 100 dB sentinel so aggregates stay finite.
inline constexpr double kPsnrCapDb = 100.0;

double psnr(const TP<float>& a, const TP<float>& b);

// Mean SSIM over the valid region: 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, dynamic range 1, computed per channel then averaged.
double ssim(const TP<float>& a, const TP<float>& b);

// ITU-R BT.601 studio-swing luma: Y = (65.481 R + 128.553 G + 24.966 B + 16)/255.
TP<float> rgb_to_y(const TP<float>& img);

enum class ChannelMode { kRgb, kY };

struct EvalEntry {
    std::string path;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<EvalEntry> entries;
    ChannelMode mode = ChannelMode::kRgb;
    double mean_psnr() const;
    double mean_ssim() const;
};

EvalEntry evaluate_pair(const TP<float>& restored, const TP<float>& clean,
                        ChannelMode mode, const std::string& path);

void write_eval_csv(const EvalReport& report, const std::string& path);

}  // namespace mdda
