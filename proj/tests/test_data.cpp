#include <doctest.h>

#include "mdda/data.hpp"
#include "mdda/metrics.hpp"
#include "support.hpp"

using namespace mdda;
using namespace testsupport;

TEST_SUITE_BEGIN("data");

TEST_CASE("sigma 0 noise is the identity") {
    auto clean = synthetic_clean(16, 16, 1);
    DegradeSpec s;
    s.sigma = 0;
    auto out = degrade(clean, s);
    CHECK(out->data == clean->data);
}

TEST_CASE("beta 0 haze is the identity") {
    auto clean = synthetic_clean(16, 16, 2);
    DegradeSpec s;
    s.kind = DegradeKind::kHaze;
    s.haze_beta = 0;
    CHECK(degrade(clean, s)->data == clean->data);
}

TEST_CASE("sigma 25 noise on a constant mid-gray image hits the closed-form PSNR") {
    auto clean = make_tensor<float>(1, 3, 64, 64);
    for (auto& v : clean->data) v = 0.5f;
    DegradeSpec s;
    s.sigma = 25;
    double total = 0;
    const int runs = 12;
    for (int i = 0; i < runs; ++i) {
        s.rng_seed = 100 + i;
        total += psnr(degrade(clean, s), clean);
    }
    const double mean = total / runs;
    // 20*log10(255/25) = 20.172 dB; clamping is negligible around 0.5
    CHECK(mean > 20.17 - 0.3);
    CHECK(mean < 20.17 + 0.3);
}

TEST_CASE("degrade is pure and deterministic under seed") {
    auto clean = synthetic_clean(24, 24, 3);
    const auto before = clean->data;
    DegradeSpec s;
    s.sigma = 50;
    s.rng_seed = 9;
    auto a = degrade(clean, s);
    auto b = degrade(clean, s);
    CHECK(clean->data == before);
    CHECK(a->data == b->data);
    s.rng_seed = 10;
    CHECK(degrade(clean, s)->data != a->data);

    SUBCASE("outputs stay in [0,1] for every kind") {
        for (auto kind : {DegradeKind::kGaussianNoise, DegradeKind::kRainStreaks, DegradeKind::kHaze,
                          DegradeKind::kLowLight}) {
            DegradeSpec d;
            d.kind = kind;
            d.rng_seed = 4;
            auto out = degrade(clean, d);
            for (float v : out->data) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
        }
    }
}

TEST_CASE("rain and haze strictly lower PSNR for non-degenerate specs") {
    auto clean = synthetic_clean(48, 48, 5);
    DegradeSpec rain;
    rain.kind = DegradeKind::kRainStreaks;
    rain.rain_count = 12;
    rain.rain_intensity = 0.4;
    rain.rng_seed = 6;
    CHECK(psnr(degrade(clean, rain), clean) < kPsnrCapDb - 1);
    DegradeSpec haze;
    haze.kind = DegradeKind::kHaze;
    haze.haze_beta = 1.0;
    CHECK(psnr(degrade(clean, haze), clean) < kPsnrCapDb - 1);
}

TEST_CASE("invalid spec parameters are config errors") {
    auto clean = synthetic_clean(16, 16, 7);
    DegradeSpec s;
    s.sigma = -1;
    CHECK_THROWS_AS(degrade(clean, s), ConfigError);
    DegradeSpec h;
    h.kind = DegradeKind::kHaze;
    h.haze_airlight = 0.0;
    CHECK_THROWS_AS(degrade(clean, h), ConfigError);
    h.haze_airlight = 1.5;
    CHECK_THROWS_AS(degrade(clean, h), ConfigError);
    CHECK_THROWS_AS(parse_degrade_kind("sparkles"), ConfigError);
}

TEST_CASE("full-size patch is the whole image regardless of seed") {
    auto img = synthetic_clean(20, 20, 8);
    for (uint64_t seed : {1u, 99u}) {
        auto patches = extract_patches(img, 20, 3, seed);
        REQUIRE(patches.size() == 3);
        for (const auto& p : patches) {
            CHECK(p.top == 0);
            CHECK(p.left == 0);
            CHECK(p.data->data == img->data);
        }
    }
}

TEST_CASE("count 0 gives an empty list; oversize patches are dimension errors") {
    auto img = synthetic_clean(16, 16, 9);
    CHECK(extract_patches(img, 8, 0, 1).empty());
    CHECK_THROWS_AS(extract_patches(img, 17, 1, 1), DimError);
}

TEST_CASE("patch values match direct indexing at the reported coords") {
    // coordinate-ramp image: value encodes (channel, y, x)
    auto img = make_tensor<float>(1, 3, 32, 32);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) img->at(0, c, y, x) = static_cast<float>(c * 10000 + y * 100 + x);
    auto patches = extract_patches(img, 8, 10, 11);
    REQUIRE(patches.size() == 10);
    for (const auto& p : patches) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    CHECK(p.data->at(0, c, y, x) == img->at(0, c, p.top + y, p.left + x));
    }
}

TEST_CASE("double horizontal flip is the identity") {
    auto img = synthetic_clean(12, 12, 12);
    auto once = apply_flip(img, Flip::kH);
    auto twice = apply_flip(once, Flip::kH);
    CHECK(twice->data == img->data);
}

TEST_CASE("flip mirrors an asymmetric marker as expected") {
    auto img = make_tensor<float>(1, 3, 4, 4);
    img->at(0, 0, 0, 1) = 1.0f;  // marker at row 0, col 1
    auto h = apply_flip(img, Flip::kH);
    CHECK(h->at(0, 0, 0, 2) == 1.0f);
    auto v = apply_flip(img, Flip::kV);
    CHECK(v->at(0, 0, 3, 1) == 1.0f);
    auto hv = apply_flip(img, Flip::kHV);
    CHECK(hv->at(0, 0, 3, 2) == 1.0f);
}

TEST_CASE("flip_augment applies the same flip to both tensors") {
    auto a = synthetic_clean(8, 8, 13);
    auto b = synthetic_clean(8, 8, 14);
    for (uint64_t seed = 0; seed < 8; ++seed) {
        auto [fa, fb] = flip_augment(a, b, seed);
        const Flip f = draw_flip(seed);
        CHECK(fa->data == apply_flip(a, f)->data);
        CHECK(fb->data == apply_flip(b, f)->data);
    }
    auto bad = synthetic_clean(10, 8, 15);
    CHECK_THROWS_AS(flip_augment(a, bad, 0), DimError);
}

TEST_CASE("flip outcomes are roughly uniform over 1000 seeds") {
    int counts[4] = {0, 0, 0, 0};
    for (uint64_t seed = 0; seed < 1000; ++seed) counts[static_cast<int>(draw_flip(seed))]++;
    for (int c : counts) {
        CHECK(c > 250 - 60);
        CHECK(c < 250 + 60);
    }
}

TEST_SUITE_END();
