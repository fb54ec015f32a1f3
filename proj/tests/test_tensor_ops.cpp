#include <doctest.h>

#include "mdda/ops.hpp"
#include "support.hpp"

using namespace mdda;
using namespace testsupport;

TEST_SUITE_BEGIN("tensor_ops");

TEST_CASE("conv2d box sum of ones: center 9, corner 4") {
    auto x = tensor_from<float>({1, 1, 3, 3}, {1, 1, 1, 1, 1, 1, 1, 1, 1});
    auto w = tensor_from<float>({1, 1, 3, 3}, {1, 1, 1, 1, 1, 1, 1, 1, 1});
    auto y = ops::conv2d<float>(nullptr, x, w, nullptr, 1, 1, 1);
    CHECK(y->shape == Shape4{1, 1, 3, 3});
    CHECK(y->at(0, 0, 1, 1) == doctest::Approx(9.0));
    CHECK(y->at(0, 0, 0, 0) == doctest::Approx(4.0));
    CHECK(y->at(0, 0, 0, 2) == doctest::Approx(4.0));
    CHECK(y->at(0, 0, 2, 0) == doctest::Approx(4.0));
    CHECK(y->at(0, 0, 0, 1) == doctest::Approx(6.0));
}

TEST_CASE("1x1 conv is scalar scaling") {
    auto x = tensor_from<float>({1, 1, 2, 2}, {1, 2, 3, 4});
    auto w = tensor_from<float>({1, 1, 1, 1}, {2});
    auto y = ops::conv2d<float>(nullptr, x, w, nullptr, 1, 0, 1);
    CHECK(y->data == std::vector<float>{2, 4, 6, 8});
}

TEST_CASE("conv2d matches the six-loop oracle") {
    auto x = random_tensor<float>({2, 4, 8, 8}, 11);
    auto w = random_tensor<float>({6, 4, 3, 3}, 12);
    auto b = random_tensor<float>({1, 6, 1, 1}, 13);
    auto y = ops::conv2d<float>(nullptr, x, w, b, 1, 1, 1);
    auto ref = conv2d_oracle<float>(x, w, b, 1, 1, 1);
    CHECK(max_abs_diff(y, ref) < 1e-6);

    SUBCASE("stride 2") {
        auto y2 = ops::conv2d<float>(nullptr, x, w, b, 2, 1, 1);
        auto r2 = conv2d_oracle<float>(x, w, b, 2, 1, 1);
        CHECK(y2->shape == Shape4{2, 6, 4, 4});
        CHECK(max_abs_diff(y2, r2) < 1e-6);
    }
}

TEST_CASE("depthwise conv (groups = Cin) matches the oracle") {
    auto x = random_tensor<float>({2, 6, 8, 8}, 21);
    auto w = random_tensor<float>({6, 1, 3, 3}, 22);
    auto b = random_tensor<float>({1, 6, 1, 1}, 23);
    auto y = ops::conv2d<float>(nullptr, x, w, b, 1, 1, 6);
    auto ref = conv2d_oracle<float>(x, w, b, 1, 1, 6);
    CHECK(max_abs_diff(y, ref) < 1e-6);
}

TEST_CASE("conv2d results are independent of the thread count") {
    auto x = random_tensor<float>({2, 8, 16, 16}, 31);
    auto w = random_tensor<float>({8, 8, 3, 3}, 32);
    set_threads(1);
    auto y1 = ops::conv2d<float>(nullptr, x, w, nullptr, 1, 1, 1);
    set_threads(2);
    auto y2 = ops::conv2d<float>(nullptr, x, w, nullptr, 1, 1, 1);
    CHECK(y1->data == y2->data);  // bit-exact
}

TEST_CASE("conv2d rejects bad arguments") {
    auto x = random_tensor<float>({1, 4, 6, 6}, 41);
    auto w_badc = random_tensor<float>({2, 3, 3, 3}, 42);
    CHECK_THROWS_AS(ops::conv2d<float>(nullptr, x, w_badc, nullptr, 1, 1, 1), DimError);
    auto w_even = random_tensor<float>({2, 4, 2, 2}, 43);
    CHECK_THROWS_AS(ops::conv2d<float>(nullptr, x, w_even, nullptr, 1, 1, 1), ConfigError);
    auto w_ok = random_tensor<float>({2, 2, 3, 3}, 44);
    CHECK_THROWS_AS(ops::conv2d<float>(nullptr, x, w_ok, nullptr, 1, 1, 3), ConfigError);  // 4 % 3 != 0
}

TEST_CASE("layer_norm constant input is zeroed by eps guard") {
    auto x = make_tensor<float>(1, 4, 2, 2);
    for (auto& v : x->data) v = 5.0f;
    auto g = tensor_from<float>({1, 4, 1, 1}, {1, 1, 1, 1});
    auto b = tensor_from<float>({1, 4, 1, 1}, {0, 0, 0, 0});
    auto y = ops::layer_norm<float>(nullptr, x, g, b, 1e-6f);
    for (float v : y->data) CHECK(v == doctest::Approx(0.0f));
}

TEST_CASE("layer_norm standardizes a two-channel position symmetrically") {
    auto x = tensor_from<double>({1, 2, 1, 1}, {1.0, 3.0});
    auto g = tensor_from<double>({1, 2, 1, 1}, {1, 1});
    auto b = tensor_from<double>({1, 2, 1, 1}, {0, 0});
    auto y = ops::layer_norm<double>(nullptr, x, g, b, 1e-12);
    CHECK(y->data[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y->data[1] == doctest::Approx(+1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm per-position moments") {
    auto x = random_tensor<float>({1, 8, 4, 4}, 51);
    auto g = tensor_from<float>({1, 8, 1, 1}, {1, 1, 1, 1, 1, 1, 1, 1});
    auto b = make_tensor<float>(1, 8, 1, 1);
    auto y = ops::layer_norm<float>(nullptr, x, g, b, 1e-6f);
    for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) {
            double mu = 0, var = 0;
            for (int c = 0; c < 8; ++c) mu += y->at(0, c, h, w);
            mu /= 8;
            for (int c = 0; c < 8; ++c) {
                const double d = y->at(0, c, h, w) - mu;
                var += d * d;
            }
            var /= 8;
            CHECK(std::abs(mu) < 1e-5);
            CHECK(std::abs(var - 1.0) < 1e-4);
        }
}

TEST_CASE("layer_norm validates affine lengths") {
    auto x = random_tensor<float>({1, 4, 2, 2}, 52);
    auto g = make_tensor<float>(1, 3, 1, 1);
    auto b = make_tensor<float>(1, 4, 1, 1);
    CHECK_THROWS_AS(ops::layer_norm<float>(nullptr, x, g, b, 1e-6f), DimError);
}

TEST_CASE("softmax basics") {
    auto x = tensor_from<float>({1, 1, 1, 2}, {0, 0});
    auto y = ops::softmax_lastdim<float>(nullptr, x);
    CHECK(y->data[0] == doctest::Approx(0.5));
    CHECK(y->data[1] == doctest::Approx(0.5));

    SUBCASE("huge logits do not overflow") {
        auto big = tensor_from<float>({1, 1, 1, 3}, {1000, 1000, 1000});
        auto yb = ops::softmax_lastdim<float>(nullptr, big);
        for (float v : yb->data) CHECK(v == doctest::Approx(1.0 / 3));
    }
    SUBCASE("rows sum to one; shift invariance") {
        auto m = random_tensor<float>({1, 1, 4, 7}, 61, -3, 3);
        auto ym = ops::softmax_lastdim<float>(nullptr, m);
        for (int r = 0; r < 4; ++r) {
            double s = 0;
            for (int c = 0; c < 7; ++c) s += ym->at(0, 0, r, c);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
        auto shifted = make_tensor<float>(m->shape);
        for (size_t i = 0; i < m->size(); ++i) shifted->data[i] = m->data[i] + 7.25f;
        auto ys = ops::softmax_lastdim<float>(nullptr, shifted);
        CHECK(max_abs_diff(ym, ys) < 1e-6);
    }
}

TEST_CASE("pixel_unshuffle defining layout and round trip") {
    auto x = tensor_from<float>({1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = ops::pixel_unshuffle<float>(nullptr, x, 2);
    CHECK(y->shape == Shape4{1, 4, 1, 1});
    CHECK(y->data == std::vector<float>{1, 2, 3, 4});  // row-major over the 2x2 cell

    auto back = ops::pixel_shuffle<float>(nullptr, y, 2);
    CHECK(back->data == x->data);

    SUBCASE("r=1 is the identity") {
        auto a = random_tensor<float>({2, 3, 4, 4}, 71);
        CHECK(ops::pixel_unshuffle<float>(nullptr, a, 1)->data == a->data);
        CHECK(ops::pixel_shuffle<float>(nullptr, a, 1)->data == a->data);
    }
    SUBCASE("round trip is bit-exact") {
        auto a = random_tensor<float>({2, 3, 8, 8}, 72);
        auto rt = ops::pixel_shuffle<float>(nullptr, ops::pixel_unshuffle<float>(nullptr, a, 2), 2);
        CHECK(rt->data == a->data);
        auto b = random_tensor<float>({1, 8, 3, 3}, 73);
        auto rt2 = ops::pixel_unshuffle<float>(nullptr, ops::pixel_shuffle<float>(nullptr, b, 2), 2);
        CHECK(rt2->data == b->data);
    }
    SUBCASE("indivisible dims are dimension errors") {
        auto bad = random_tensor<float>({1, 1, 3, 4}, 74);
        CHECK_THROWS_AS(ops::pixel_unshuffle<float>(nullptr, bad, 2), DimError);
        auto badc = random_tensor<float>({1, 3, 2, 2}, 75);
        CHECK_THROWS_AS(ops::pixel_shuffle<float>(nullptr, badc, 2), DimError);
    }
}

TEST_CASE("chunk2 splits channels; gate semantics") {
    auto x = tensor_from<float>({1, 2, 1, 2}, {1, 2, 10, 20});
    auto [a, b] = ops::chunk2<float>(nullptr, x);
    CHECK(a->data == std::vector<float>{1, 2});
    CHECK(b->data == std::vector<float>{10, 20});
    auto prod = ops::mul<float>(nullptr, a, b);
    CHECK(prod->data == std::vector<float>{10, 40});

    SUBCASE("second half of ones leaves the first half unchanged") {
        auto g = tensor_from<float>({1, 2, 1, 2}, {3, -4, 1, 1});
        auto [c, d] = ops::chunk2<float>(nullptr, g);
        CHECK(ops::mul<float>(nullptr, c, d)->data == c->data);
    }
    SUBCASE("reassembly") {
        auto r = random_tensor<float>({1, 6, 2, 2}, 81);
        auto [h1, h2] = ops::chunk2<float>(nullptr, r);
        auto cat = ops::concat_channels<float>(nullptr, {h1, h2});
        CHECK(cat->data == r->data);
    }
    SUBCASE("odd channel count rejected") {
        auto odd = random_tensor<float>({1, 3, 2, 2}, 82);
        CHECK_THROWS_AS(ops::chunk2<float>(nullptr, odd), DimError);
    }
}

TEST_CASE("matmul") {
    auto eye = tensor_from<float>({1, 1, 2, 2}, {1, 0, 0, 1});
    auto a = tensor_from<float>({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(ops::matmul<float>(nullptr, eye, a)->data == a->data);

    auto ones = tensor_from<float>({1, 1, 2, 1}, {1, 1});
    auto y = ops::matmul<float>(nullptr, a, ones);
    CHECK(y->data == std::vector<float>{3, 7});

    SUBCASE("random case matches the triple-loop oracle") {
        auto p = random_tensor<float>({1, 1, 5, 4}, 91);
        auto q = random_tensor<float>({1, 1, 4, 6}, 92);
        CHECK(max_abs_diff(ops::matmul<float>(nullptr, p, q), matmul_oracle<float>(p, q)) < 1e-6);
    }
    SUBCASE("batched over groups") {
        auto p = random_tensor<float>({2, 3, 4, 5}, 93);
        auto q = random_tensor<float>({2, 3, 5, 2}, 94);
        CHECK(max_abs_diff(ops::matmul<float>(nullptr, p, q), matmul_oracle<float>(p, q)) < 1e-6);
    }
    SUBCASE("inner dimension mismatch") {
        auto p = random_tensor<float>({1, 1, 2, 3}, 95);
        auto q = random_tensor<float>({1, 1, 4, 2}, 96);
        CHECK_THROWS_AS(ops::matmul<float>(nullptr, p, q), DimError);
    }
}

TEST_CASE("transpose / reshape / slice / concat round trips") {
    auto x = random_tensor<float>({2, 3, 4, 5}, 101);
    auto tt = ops::transpose_last2<float>(nullptr, ops::transpose_last2<float>(nullptr, x));
    CHECK(tt->data == x->data);

    auto r = ops::reshape<float>(nullptr, x, {1, 1, 6, 20});
    CHECK(r->data == x->data);
    CHECK_THROWS_AS(ops::reshape<float>(nullptr, x, Shape4{1, 1, 1, 7}), DimError);

    auto s1 = ops::slice_channels<float>(nullptr, x, 0, 1);
    auto s2 = ops::slice_channels<float>(nullptr, x, 1, 3);
    auto cat = ops::concat_channels<float>(nullptr, {s1, s2});
    CHECK(cat->data == x->data);
}

TEST_CASE("global_avg_pool and fully_connected") {
    auto x = tensor_from<float>({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    auto g = ops::global_avg_pool<float>(nullptr, x);
    CHECK(g->shape == Shape4{1, 2, 1, 1});
    CHECK(g->data[0] == doctest::Approx(2.5));
    CHECK(g->data[1] == doctest::Approx(25.0));

    auto w = tensor_from<float>({3, 2, 1, 1}, {1, 0, 0, 1, 1, 1});
    auto b = tensor_from<float>({1, 3, 1, 1}, {0, 0, 5});
    auto y = ops::fully_connected<float>(nullptr, g, w, b);
    CHECK(y->data[0] == doctest::Approx(2.5));
    CHECK(y->data[1] == doctest::Approx(25.0));
    CHECK(y->data[2] == doctest::Approx(32.5));
}

TEST_CASE("relu, sigmoid, channel_scale, scalar_div") {
    auto x = tensor_from<float>({1, 2, 1, 2}, {-1, 2, -3, 4});
    CHECK(ops::relu<float>(nullptr, x)->data == std::vector<float>{0, 2, 0, 4});
    auto s = ops::sigmoid<float>(nullptr, tensor_from<float>({1, 1, 1, 1}, {0}));
    CHECK(s->data[0] == doctest::Approx(0.5));

    auto k = tensor_from<float>({1, 2, 1, 1}, {2, -1});
    CHECK(ops::channel_scale<float>(nullptr, x, k)->data == std::vector<float>{-2, 4, 3, -4});

    auto alpha = tensor_from<float>({1, 1, 1, 1}, {2});
    CHECK(ops::scalar_div<float>(nullptr, x, alpha)->data == std::vector<float>{-0.5, 1, -1.5, 2});
}

TEST_CASE("non-finite op output raises a numeric error") {
    auto x = tensor_from<float>({1, 1, 1, 2}, {1e38, 1e38});
    auto w = tensor_from<float>({1, 1, 1, 1}, {1e38});
    CHECK_THROWS_AS(ops::conv2d<float>(nullptr, x, w, nullptr, 1, 0, 1), NumericError);
}

TEST_CASE("pad_reflect / crop_spatial") {
    auto x = tensor_from<float>({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    auto p = ops::pad_reflect<float>(nullptr, x, 1, 1);
    CHECK(p->shape == Shape4{1, 1, 3, 4});
    // bottom row reflects row 0, right column reflects column 1
    CHECK(p->at(0, 0, 2, 0) == doctest::Approx(1));
    CHECK(p->at(0, 0, 0, 3) == doctest::Approx(2));
    CHECK(p->at(0, 0, 2, 3) == doctest::Approx(2));
    auto c = ops::crop_spatial<float>(nullptr, p, 2, 3);
    CHECK(c->data == x->data);
    CHECK_THROWS_AS(ops::pad_reflect<float>(nullptr, x, 2, 0), ConfigError);
}

TEST_CASE("tape replays nodes in exact reverse of recording order") {
    Tape<float> tape;
    std::vector<int> order;
    auto loss = make_tensor<float>(1, 1, 1, 1, true);
    for (int i = 0; i < 5; ++i) tape.record("probe", [&order, i] { order.push_back(i); });
    tape.backward(loss);
    CHECK(order == std::vector<int>{4, 3, 2, 1, 0});
}

TEST_CASE("tape backward populates reachable leaves in reverse order") {
    auto x = tensor_from<float>({1, 1, 1, 2}, {3, 4}, true);
    auto k = tensor_from<float>({1, 1, 1, 1}, {0}, false);  // not a leaf that needs grad
    Tape<float> tape;
    auto y = ops::mul<float>(&tape, x, x);             // x^2
    auto loss = ops::sum_all<float>(&tape, y);         // sum of squares
    tape.backward(loss);
    REQUIRE(x->grad.size() == 2);
    CHECK(x->grad[0] == doctest::Approx(6));
    CHECK(x->grad[1] == doctest::Approx(8));
    CHECK(k->grad.empty());
}

TEST_SUITE_END();
