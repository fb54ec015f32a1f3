#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mdda/checkpoint.hpp"
#include "mdda/data.hpp"
#include "mdda/train.hpp"
#include "support.hpp"

using namespace mdda;
using namespace testsupport;

namespace {

std::string temp_dir(const char* leaf) {
    auto dir = std::filesystem::temp_directory_path() / "mdda_train_test" / leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

// Micro training setup: 8x8 patches, tiny model, a handful of steps.
std::vector<TrainPair> micro_pairs(int n, uint64_t seed) {
    std::vector<TrainPair> pairs;
    for (int i = 0; i < n; ++i) {
        auto clean = synthetic_clean(8, 8, seed + i);
        DegradeSpec s;
        s.sigma = 25;
        s.rng_seed = seed + 100 + i;
        pairs.push_back(TrainPair{degrade(clean, s), clean});
    }
    return pairs;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("psnr_loss closed forms") {
    auto a = random_tensor<float>({1, 3, 4, 4}, 1, 0, 1);
    auto same = make_tensor<float>(a->shape);
    same->data = a->data;
    CHECK(psnr_loss<float>(nullptr, a, same)->data[0] == doctest::Approx(-80.0).epsilon(1e-6));

    auto b = make_tensor<float>(a->shape);
    for (size_t i = 0; i < a->size(); ++i) b->data[i] = a->data[i] * 0.0f;  // placeholder
    // uniform 0.1 difference -> MSE 0.01 -> loss -20
    auto p = make_tensor<float>(1, 3, 4, 4);
    auto q = make_tensor<float>(1, 3, 4, 4);
    for (size_t i = 0; i < p->size(); ++i) {
        p->data[i] = 0.45f;
        q->data[i] = 0.55f;
    }
    CHECK(psnr_loss<float>(nullptr, p, q)->data[0] == doctest::Approx(-20.0).epsilon(1e-4));
    auto bad = make_tensor<float>(1, 3, 4, 5);
    CHECK_THROWS_AS(psnr_loss<float>(nullptr, p, bad), DimError);
}

TEST_CASE("cosine schedule endpoints, midpoint, monotonicity") {
    Schedule s;
    s.total_steps = 1000;
    CHECK(cosine_lr(0, s) == doctest::Approx(2e-4));
    CHECK(cosine_lr(1000, s) == doctest::Approx(1e-6));
    CHECK(cosine_lr(500, s) == doctest::Approx((2e-4 + 1e-6) / 2).epsilon(1e-9));
    double prev = cosine_lr(0, s);
    for (int i = 1; i <= 1000; ++i) {
        const double lr = cosine_lr(i, s);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
    CHECK(cosine_lr(2000, s) == doctest::Approx(1e-6));  // clamped past the end
}

TEST_CASE("adamw: zero grads leave params unchanged without decay") {
    auto p = tensor_from<float>({1, 1, 1, 1}, {1.5}, true);
    p->ensure_grad();
    ParamList<float> params{{"p", p}};
    AdamW<float> opt;
    opt.weight_decay = 0.0;
    opt.init(params);
    opt.apply(params, 0.1);
    CHECK(p->data[0] == doctest::Approx(1.5));
}

TEST_CASE("adamw: first step moves by lr for unit gradient") {
    auto p = tensor_from<float>({1, 1, 1, 1}, {1.0}, true);
    p->ensure_grad();
    p->grad[0] = 1.0f;
    ParamList<float> params{{"p", p}};
    AdamW<float> opt;
    opt.weight_decay = 0.0;
    opt.init(params);
    opt.apply(params, 0.1);
    CHECK(p->data[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw: pure decay shrinks parameters multiplicatively") {
    auto p = tensor_from<float>({1, 1, 1, 2}, {2.0, -4.0}, true);
    p->ensure_grad();
    ParamList<float> params{{"p", p}};
    AdamW<float> opt;  // wd = 0.02
    opt.init(params);
    opt.apply(params, 0.5);
    CHECK(p->data[0] == doctest::Approx(2.0 * (1 - 0.5 * 0.02)));
    CHECK(p->data[1] == doctest::Approx(-4.0 * (1 - 0.5 * 0.02)));
}

TEST_CASE("adamw converges on a scalar quadratic") {
    auto p = tensor_from<float>({1, 1, 1, 1}, {0.0}, true);
    ParamList<float> params{{"p", p}};
    AdamW<float> opt;
    opt.weight_decay = 0.0;
    opt.init(params);
    for (int i = 0; i < 100; ++i) {
        p->ensure_grad();
        p->zero_grad();
        p->grad[0] = 2.0f * (p->data[0] - 3.0f);  // d/dp (p-3)^2
        opt.apply(params, 0.05);
    }
    CHECK(std::abs(p->data[0] - 3.0f) < 0.1f);
}

TEST_CASE("adamw rejects non-finite gradients with the parameter name") {
    auto p = tensor_from<float>({1, 1, 1, 1}, {1.0}, true);
    p->ensure_grad();
    p->grad[0] = std::numeric_limits<float>::quiet_NaN();
    ParamList<float> params{{"spiky", p}};
    AdamW<float> opt;
    opt.init(params);
    try {
        opt.apply(params, 0.1);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("spiky") != std::string::npos);
    }
}

TEST_CASE("train_loop: zero steps is a no-op") {
    auto model = build_model<float>(ModelConfig::tiny(), 1);
    const auto before = model.params[0].second->data;
    AdamW<float> opt;
    opt.init(model.params);
    TrainOptions opts;
    opts.steps = 0;
    const auto trace = train_loop(model, opt, micro_pairs(2, 1), {}, opts);
    CHECK(trace.empty());
    CHECK(model.params[0].second->data == before);
}

TEST_CASE("identical seeds give identical loss traces") {
    const auto pairs = micro_pairs(3, 2);
    TrainOptions opts;
    opts.steps = 6;
    opts.batch = 2;
    opts.seed = 77;
    opts.eval_every = 0;
    opts.sched.total_steps = 6;
    std::vector<double> losses[2];
    for (int run = 0; run < 2; ++run) {
        auto model = build_model<float>(ModelConfig::tiny(), 5);
        AdamW<float> opt;
        opt.init(model.params);
        for (const auto& row : train_loop(model, opt, pairs, {}, opts)) losses[run].push_back(row.loss);
    }
    CHECK(losses[0] == losses[1]);
}

TEST_CASE("checkpoint round trip restores params and moments bit-identically") {
    const auto dir = temp_dir("ckpt");
    auto model = build_model<float>(ModelConfig::tiny(), 6);
    AdamW<float> opt;
    opt.init(model.params);
    auto pairs = micro_pairs(2, 3);
    TrainOptions opts;
    opts.steps = 3;
    opts.batch = 2;
    opts.seed = 8;
    opts.eval_every = 0;
    opts.sched.total_steps = 3;
    train_loop(model, opt, pairs, {}, opts);

    const std::string path = dir + "/model.ckpt";
    save_checkpoint(model, opt, path);
    auto loaded = load_checkpoint(path);
    CHECK(loaded.opt.step == opt.step);
    REQUIRE(loaded.model.params.size() == model.params.size());
    for (size_t i = 0; i < model.params.size(); ++i) {
        CHECK(loaded.model.params[i].first == model.params[i].first);
        CHECK(loaded.model.params[i].second->data == model.params[i].second->data);
        CHECK(loaded.opt.m[i] == opt.m[i]);
        CHECK(loaded.opt.v[i] == opt.v[i]);
    }
}

TEST_CASE("truncated checkpoint is a clean I/O error naming the entry") {
    const auto dir = temp_dir("trunc");
    auto model = build_model<float>(ModelConfig::tiny(), 7);
    AdamW<float> opt;
    opt.init(model.params);
    const std::string path = dir + "/model.ckpt";
    save_checkpoint(model, opt, path);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    std::ofstream(dir + "/junk.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(dir + "/junk.ckpt"), IoError);
}

TEST_CASE("train 3 + resume 3 equals train 6 straight") {
    const auto dir = temp_dir("resume");
    const auto pairs = micro_pairs(3, 4);
    TrainOptions opts;
    opts.batch = 2;
    opts.seed = 21;
    opts.eval_every = 0;
    opts.sched.total_steps = 6;

    auto straight = build_model<float>(ModelConfig::tiny(), 9);
    AdamW<float> opt_s;
    opt_s.init(straight.params);
    opts.steps = 6;
    train_loop(straight, opt_s, pairs, {}, opts);

    auto part = build_model<float>(ModelConfig::tiny(), 9);
    AdamW<float> opt_p;
    opt_p.init(part.params);
    opts.steps = 3;
    train_loop(part, opt_p, pairs, {}, opts);
    save_checkpoint(part, opt_p, dir + "/mid.ckpt");
    auto resumed = load_checkpoint(dir + "/mid.ckpt");
    train_loop(resumed.model, resumed.opt, pairs, {}, opts);

    for (size_t i = 0; i < straight.params.size(); ++i)
        CHECK(resumed.model.params[i].second->data == straight.params[i].second->data);
}

TEST_CASE("non-finite forward aborts the step with a diagnostic") {
    auto model = build_model<float>(ModelConfig::tiny(), 10);
    model.embed_w->data[0] = std::numeric_limits<float>::infinity();
    AdamW<float> opt;
    opt.init(model.params);
    TrainOptions opts;
    opts.steps = 1;
    opts.batch = 1;
    opts.sched.total_steps = 1;
    CHECK_THROWS_AS(train_loop(model, opt, micro_pairs(1, 5), {}, opts), NumericError);
}

TEST_SUITE_END();
