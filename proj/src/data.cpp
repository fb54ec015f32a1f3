#include "mdda/data.hpp"

#include <algorithm>
#include <cmath>

#include "mdda/rng.hpp"

namespace mdda {

void DegradeSpec::validate() const {
    switch (kind) {
        case DegradeKind::kGaussianNoise:
            if (sigma < 0.0) throw ConfigError("gaussian_noise: sigma must be >= 0, got " + std::to_string(sigma));
            break;
        case DegradeKind::kRainStreaks:
            if (rain_count < 0) throw ConfigError("rain_streaks: count must be >= 0");
            if (rain_length <= 0.0) throw ConfigError("rain_streaks: length must be > 0");
            if (rain_intensity < 0.0 || rain_intensity > 1.0)
                throw ConfigError("rain_streaks: intensity must be in [0,1]");
            break;
        case DegradeKind::kHaze:
            if (haze_beta < 0.0) throw ConfigError("haze: beta must be >= 0");
            if (haze_airlight <= 0.0 || haze_airlight > 1.0)
                throw ConfigError("haze: airlight must be in (0,1], got " + std::to_string(haze_airlight));
            break;
        case DegradeKind::kLowLight:
            if (ll_gamma <= 0.0) throw ConfigError("low_light: gamma must be > 0");
            if (ll_gain <= 0.0 || ll_gain > 1.0) throw ConfigError("low_light: gain must be in (0,1]");
            break;
    }
}

DegradeSpec parse_degrade_kind(const std::string& name) {
    DegradeSpec s;
    if (name == "gaussian_noise") s.kind = DegradeKind::kGaussianNoise;
    else if (name == "rain_streaks") s.kind = DegradeKind::kRainStreaks;
    else if (name == "haze") s.kind = DegradeKind::kHaze;
    else if (name == "low_light") s.kind = DegradeKind::kLowLight;
    else throw ConfigError("unknown degradation '" + name + "'");
    return s;
}

std::string degrade_kind_name(DegradeKind k) {
    switch (k) {
        case DegradeKind::kGaussianNoise: return "gaussian_noise";
        case DegradeKind::kRainStreaks: return "rain_streaks";
        case DegradeKind::kHaze: return "haze";
        case DegradeKind::kLowLight: return "low_light";
    }
    return "?";
}

namespace {

void check_image(const TP<float>& img, const char* who) {
    if (img->shape.n != 1 || img->shape.c != 3)
        throw DimError(std::string(who) + ": need 1x3xHxW, got " + img->shape.str());
}

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

TP<float> add_gaussian_noise(const TP<float>& clean, double sigma255, Rng& rng) {
    auto out = make_tensor<float>(clean->shape);
    const double sigma = sigma255 / 255.0;
    for (size_t i = 0; i < clean->size(); ++i)
        out->data[i] = clamp01(clean->data[i] + static_cast<float>(sigma * rng.normal()));
    return out;
}

// Additive bright streaks: oriented line segments with a Gaussian cross
// profile, shared across channels.
TP<float> add_rain(const TP<float>& clean, const DegradeSpec& s, Rng& rng) {
    const int h = clean->shape.h, w = clean->shape.w;
    std::vector<float> mask(static_cast<size_t>(h) * w, 0.0f);
    const double profile_sigma = 0.7;
    for (int streak = 0; streak < s.rain_count; ++streak) {
        const double cx = rng.uniform() * w;
        const double cy = rng.uniform() * h;
        const double ang = (s.rain_angle + rng.uniform(-4.0, 4.0)) * 3.14159265358979 / 180.0;
        const double len = s.rain_length * rng.uniform(0.7, 1.3);
        const double amp = s.rain_intensity * rng.uniform(0.6, 1.0);
        const double dx = std::cos(ang), dy = std::sin(ang);
        for (double t = -len / 2; t <= len / 2; t += 0.5) {
            const double px = cx + t * dx, py = cy + t * dy;
            const int x0 = static_cast<int>(std::floor(px)) - 1, y0 = static_cast<int>(std::floor(py)) - 1;
            for (int y = y0; y <= y0 + 2; ++y)
                for (int x = x0; x <= x0 + 2; ++x) {
                    if (x < 0 || x >= w || y < 0 || y >= h) continue;
                    const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
                    const float v = static_cast<float>(amp * std::exp(-d2 / (2 * profile_sigma * profile_sigma)));
                    float& m = mask[static_cast<size_t>(y) * w + x];
                    m = std::max(m, v);
                }
        }
    }
    auto out = make_tensor<float>(clean->shape);
    const size_t plane = static_cast<size_t>(h) * w;
    for (int c = 0; c < 3; ++c)
        for (size_t p = 0; p < plane; ++p)
            out->data[c * plane + p] = clamp01(clean->data[c * plane + p] + mask[p]);
    return out;
}

// I = J*t + A*(1-t) with t = exp(-beta * d), d a synthetic unit depth map.
TP<float> add_haze(const TP<float>& clean, const DegradeSpec& s) {
    const int h = clean->shape.h, w = clean->shape.w;
    auto out = make_tensor<float>(clean->shape);
    const size_t plane = static_cast<size_t>(h) * w;
    const float A = static_cast<float>(s.haze_airlight);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double d;
            if (s.haze_depth == HazeDepth::kLinearGradient) {
                d = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
            } else {
                const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
                const double r = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
                const double rmax = std::sqrt(cy * cy + cx * cx);
                d = rmax > 0 ? r / rmax : 0.0;
            }
            const float t = static_cast<float>(std::exp(-s.haze_beta * d));
            for (int c = 0; c < 3; ++c) {
                const size_t i = c * plane + static_cast<size_t>(y) * w + x;
                out->data[i] = clamp01(clean->data[i] * t + A * (1.0f - t));
            }
        }
    return out;
}

TP<float> darken(const TP<float>& clean, const DegradeSpec& s) {
    auto out = make_tensor<float>(clean->shape);
    for (size_t i = 0; i < clean->size(); ++i)
        out->data[i] = clamp01(static_cast<float>(s.ll_gain * std::pow(clean->data[i], s.ll_gamma)));
    return out;
}

}  // namespace

TP<float> degrade(const TP<float>& clean, const DegradeSpec& spec) {
    check_image(clean, "degrade");
    spec.validate();
    Rng rng(spec.rng_seed);
    switch (spec.kind) {
        case DegradeKind::kGaussianNoise:
            if (spec.sigma == 0.0) {
                auto out = make_tensor<float>(clean->shape);
                out->data = clean->data;
                return out;
            }
            return add_gaussian_noise(clean, spec.sigma, rng);
        case DegradeKind::kRainStreaks: return add_rain(clean, spec, rng);
        case DegradeKind::kHaze: return add_haze(clean, spec);
        case DegradeKind::kLowLight: return darken(clean, spec);
    }
    throw ConfigError("degrade: unhandled kind");
}

std::vector<Patch> extract_patches(const TP<float>& img, int size, int count, uint64_t seed) {
    check_image(img, "extract_patches");
    const int h = img->shape.h, w = img->shape.w;
    if (size <= 0 || size > std::min(h, w))
        throw DimError("extract_patches: size " + std::to_string(size) + " exceeds image " +
                       std::to_string(h) + "x" + std::to_string(w));
    Rng rng(seed);
    std::vector<Patch> out;
    out.reserve(static_cast<size_t>(std::max(count, 0)));
    const size_t plane = static_cast<size_t>(h) * w;
    for (int i = 0; i < count; ++i) {
        Patch p;
        p.top = h == size ? 0 : static_cast<int>(rng.below(static_cast<uint64_t>(h - size + 1)));
        p.left = w == size ? 0 : static_cast<int>(rng.below(static_cast<uint64_t>(w - size + 1)));
        p.data = make_tensor<float>(1, 3, size, size);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    p.data->data[(static_cast<size_t>(c) * size + y) * size + x] =
                        img->data[c * plane + static_cast<size_t>(p.top + y) * w + (p.left + x)];
        out.push_back(std::move(p));
    }
    return out;
}

Flip draw_flip(uint64_t seed) {
    Rng rng(seed);
    return static_cast<Flip>(rng.below(4));
}

TP<float> apply_flip(const TP<float>& t, Flip f) {
    const auto& s = t->shape;
    auto out = make_tensor<float>(s);
    const bool fh = f == Flip::kH || f == Flip::kHV;  // mirror left-right
    const bool fv = f == Flip::kV || f == Flip::kHV;  // mirror top-bottom
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x)
                    out->at(n, c, y, x) = t->at(n, c, fv ? s.h - 1 - y : y, fh ? s.w - 1 - x : x);
    return out;
}

std::pair<TP<float>, TP<float>> flip_augment(const TP<float>& degraded, const TP<float>& clean,
                                             uint64_t seed) {
    if (!(degraded->shape == clean->shape))
        throw DimError("flip_augment: " + degraded->shape.str() + " vs " + clean->shape.str());
    const Flip f = draw_flip(seed);
    return {apply_flip(degraded, f), apply_flip(clean, f)};
}

}  // namespace mdda
