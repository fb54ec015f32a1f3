#pragma once

// Synthetic degradations, patch extraction, flip augmentation. All operations
// are pure and deterministic under their seed.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdda/tensor.hpp"

namespace mdda {

enum class DegradeKind { kGaussianNoise, kRainStreaks, kHaze, kLowLight };
enum class HazeDepth { kLinearGradient, kRadial };

struct DegradeSpec {
    DegradeKind kind = DegradeKind::kGaussianNoise;
    // gaussian noise: sigma on the 0..255 scale (15/25/50 in the usual setups)
    double sigma = 25.0;
    // rain streaks
    int rain_count = 40;
    double rain_length = 16.0;   // px
    double rain_angle = 75.0;    // degrees from horizontal
    double rain_intensity = 0.5; // additive brightness in [0,1]
    // haze: atmospheric scattering I = J*t + A*(1-t), t = exp(-beta*d)
    double haze_beta = 1.0;
    double haze_airlight = 0.8;  // A in (0,1]
    HazeDepth haze_depth = HazeDepth::kLinearGradient;
    // low light
    double ll_gamma = 2.2;
    double ll_gain = 0.5;

    uint64_t rng_seed = 0;

    void validate() const;
};

DegradeSpec parse_degrade_kind(const std::string& name);  // fills `kind` from its text name
std::string degrade_kind_name(DegradeKind k);

// clean: 1x3xHxW in [0,1]. Returns the degraded image, clamped to [0,1];
// never modifies the input.
TP<float> degrade(const TP<float>& clean, const DegradeSpec& spec);

struct Patch {
    TP<float> data;
    int top = 0, left = 0;
};

// `count` patches of size x size at uniformly random positions.
std::vector<Patch> extract_patches(const TP<float>& img, int size, int count, uint64_t seed);

enum class Flip { kNone, kH, kV, kHV };

Flip draw_flip(uint64_t seed);
TP<float> apply_flip(const TP<float>& t, Flip f);

// Same flip applied to both tensors; each of the four outcomes equally likely.
std::pair<TP<float>, TP<float>> flip_augment(const TP<float>& degraded, const TP<float>& clean,
                                             uint64_t seed);

}  // namespace mdda
