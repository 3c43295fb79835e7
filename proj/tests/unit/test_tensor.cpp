#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "sadreg/sart.hpp"
#include "sadreg/tensor.hpp"

using namespace sadreg;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

// Direct nested-loop cross-correlation with border-clamped (same) or no (valid) padding.
Tensor naive_conv(const Tensor &x, const Tensor &k, const Tensor &b, Padding pad) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = k.dim(0), K = k.dim(2);
    const long p = pad == Padding::same ? static_cast<long>(K / 2) : 0;
    const std::size_t OH = pad == Padding::same ? H : H - K + 1, OW = pad == Padding::same ? W : W - K + 1;
    Tensor out({N, O, OH, OW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t y = 0; y < OH; ++y)
                for (std::size_t xx = 0; xx < OW; ++xx) {
                    double acc = b[o];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t i = 0; i < K; ++i)
                            for (std::size_t j = 0; j < K; ++j) {
                                long sy = static_cast<long>(y + i) - p, sx = static_cast<long>(xx + j) - p;
                                sy = std::clamp(sy, 0L, static_cast<long>(H) - 1);
                                sx = std::clamp(sx, 0L, static_cast<long>(W) - 1);
                                acc += k.at(o, c, i, j) * x.at(n, c, static_cast<std::size_t>(sy),
                                                                static_cast<std::size_t>(sx));
                            }
                    out.at(n, o, y, xx) = acc;
                }
    return out;
}

} // namespace

TEST_CASE("elementwise arithmetic") {
    Tensor a({2}, std::vector<double>{1, 2});
    Tensor b({2}, std::vector<double>{3, 4});
    CHECK(ops::add(a, b) == Tensor({2}, std::vector<double>{4, 6}));
    const Tensor x = random_tensor({2, 3, 4}, 1);
    CHECK(ops::mul(x, Tensor::ones_like(x)) == x);
    CHECK(ops::sub(x, x) == Tensor::zeros_like(x));
    CHECK(ops::scale(x, 2.0) == ops::add(x, x));
}

TEST_CASE("broadcast matches explicit tiling") {
    const Tensor a = random_tensor({2, 3, 4, 5}, 2);
    const Tensor b = random_tensor({3, 1, 5}, 3);
    Tensor tiled(a.shape());
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t h = 0; h < 4; ++h)
                for (std::size_t w = 0; w < 5; ++w) tiled.at(n, c, h, w) = b[c * 5 + w];
    CHECK(ops::add(a, b) == ops::add(a, tiled));
    CHECK(ops::mul(a, b) == ops::mul(a, tiled));
    // leading-block fast path
    const Tensor c = random_tensor({2, 3, 1, 1}, 4);
    Tensor tiled_c(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) tiled_c[i] = c[i / 20];
    CHECK(ops::mul(a, c) == ops::mul(a, tiled_c));
    CHECK(max_abs_diff(ops::sum_to_shape(tiled_c, c.shape()), ops::scale(c, 20.0)) <= 1e-13);
}

TEST_CASE("broadcast shape errors") {
    const Tensor a = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(ops::add(a, Tensor::zeros({4})), ShapeError);
    CHECK_THROWS_AS(ops::add(a, Tensor::zeros({1, 2, 3})), ShapeError);
    CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor({2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("conv2d identity and hand cases") {
    const Tensor x = random_tensor({1, 1, 3, 3}, 5);
    CHECK(ops::conv2d(x, Tensor::ones({1, 1, 1, 1}), Tensor::zeros({1}), Padding::same) == x);
    Tensor x2({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    Tensor k2({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
    const Tensor y = ops::conv2d(x2, k2, Tensor::zeros({1}), Padding::valid);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 5.0);
}

TEST_CASE("conv2d matches nested-loop oracle") {
    const Tensor x = random_tensor({2, 3, 7, 6}, 6);
    const Tensor k = random_tensor({4, 3, 3, 3}, 7);
    const Tensor b = random_tensor({4}, 8);
    CHECK(max_abs_diff(ops::conv2d(x, k, b, Padding::same), naive_conv(x, k, b, Padding::same)) < 1e-12);
    CHECK(max_abs_diff(ops::conv2d(x, k, b, Padding::valid), naive_conv(x, k, b, Padding::valid)) < 1e-12);
    const Tensor k5 = random_tensor({2, 3, 5, 5}, 9);
    const Tensor b5 = random_tensor({2}, 10);
    CHECK(max_abs_diff(ops::conv2d(x, k5, b5, Padding::same), naive_conv(x, k5, b5, Padding::same)) < 1e-12);
}

TEST_CASE("conv2d adjoints satisfy <conv(x), g> = <x, conv^T(g)>") {
    const Tensor x = random_tensor({2, 3, 6, 5}, 11);
    const Tensor k = random_tensor({4, 3, 3, 3}, 12);
    for (Padding pad : {Padding::same, Padding::valid}) {
        const Tensor y = ops::conv2d(x, k, Tensor::zeros({4}), pad);
        const Tensor g = random_tensor(y.shape(), 13);
        const Tensor gx = ops::conv2d_grad_input(g, k, x.shape(), pad);
        const Tensor gk = ops::conv2d_grad_kernel(g, x, k.shape(), pad);
        const double lhs = ops::sum(ops::mul(y, g));
        CHECK(std::abs(lhs - ops::sum(ops::mul(x, gx))) < 1e-10);
        CHECK(std::abs(lhs - ops::sum(ops::mul(k, gk))) < 1e-10);
    }
}

TEST_CASE("conv2d is linear in input and kernel") {
    const Tensor x = random_tensor({1, 2, 5, 5}, 14), y = random_tensor({1, 2, 5, 5}, 15);
    const Tensor k = random_tensor({3, 2, 3, 3}, 16), k2 = random_tensor({3, 2, 3, 3}, 17);
    const Tensor z = Tensor::zeros({3});
    const double a = 0.7, b = -1.3;
    const Tensor lhs = ops::conv2d(ops::add(ops::scale(x, a), ops::scale(y, b)), k, z, Padding::same);
    const Tensor rhs = ops::add(ops::scale(ops::conv2d(x, k, z, Padding::same), a),
                                ops::scale(ops::conv2d(y, k, z, Padding::same), b));
    CHECK(max_abs_diff(lhs, rhs) < 1e-10);
    const Tensor lk = ops::conv2d(x, ops::add(ops::scale(k, a), ops::scale(k2, b)), z, Padding::same);
    const Tensor rk = ops::add(ops::scale(ops::conv2d(x, k, z, Padding::same), a),
                               ops::scale(ops::conv2d(x, k2, z, Padding::same), b));
    CHECK(max_abs_diff(lk, rk) < 1e-10);
}

TEST_CASE("conv2d same padding maps affine input changes to per-channel affine outputs") {
    const Tensor x = random_tensor({1, 2, 6, 6}, 18);
    const Tensor k = random_tensor({3, 2, 3, 3}, 19);
    const Tensor b = Tensor::zeros({3});
    const Tensor y = ops::conv2d(x, k, b, Padding::same);
    const Tensor y2 = ops::conv2d(ops::add_scalar(ops::scale(x, 2.0), 0.5), k, b, Padding::same);
    for (std::size_t o = 0; o < 3; ++o) {
        double ksum = 0.0;
        for (std::size_t i = 0; i < 18; ++i) ksum += k[o * 18 + i];
        for (std::size_t p = 0; p < 36; ++p) CHECK(std::abs(y2[o * 36 + p] - (2.0 * y[o * 36 + p] + 0.5 * ksum)) < 1e-12);
    }
}

TEST_CASE("conv2d errors") {
    const Tensor x = Tensor::zeros({1, 2, 4, 4});
    CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1}), Padding::same), ShapeError);
    CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1}), Padding::same), ShapeError);
    CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 2, 5, 5}), Tensor::zeros({1}), Padding::valid), ShapeError);
    CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({2}), Padding::same), ShapeError);
    CHECK_THROWS_AS(ops::conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({1}),
                                Padding::same),
                    ShapeError);
}

TEST_CASE("reductions") {
    const Tensor v({3}, std::vector<double>{2, 4, 6});
    CHECK(ops::mean(v) == 4.0);
    CHECK(ops::reduce(ReduceOp::var, Tensor({5}, 3.25), {0}, false)[0] == 0.0);
    CHECK(ops::reduce(ReduceOp::var, Tensor({2}, std::vector<double>{1, 3}), {0}, false)[0] == 1.0);
    const Tensor x = random_tensor({2, 3, 4}, 20);
    const Tensor s = ops::reduce(ReduceOp::sum, x, {1}, true);
    CHECK(s.shape() == Shape{2, 1, 4});
    CHECK(ops::reduce(ReduceOp::sum, x, {1}, false).shape() == Shape{2, 4});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t w = 0; w < 4; ++w) {
            double acc = 0;
            for (std::size_t c = 0; c < 3; ++c) acc += x[(n * 3 + c) * 4 + w];
            CHECK(std::abs(s[n * 4 + w] - acc) < 1e-15);
        }
    CHECK_THROWS_AS(ops::reduce(ReduceOp::sum, x, {3}, false), ShapeError);
}

TEST_CASE("nearest x2 resize and average pooling") {
    const Tensor one({1, 1, 1, 1}, 7.0);
    CHECK(ops::resize_nearest_x2(one) == Tensor({1, 1, 2, 2}, 7.0));
    const Tensor x = random_tensor({1, 3, 8, 8}, 21);
    const Tensor up = ops::resize_nearest_x2(x);
    CHECK(up.shape() == Shape{1, 3, 16, 16});
    CHECK(max_abs_diff(ops::avg_pool2(up), x) == 0.0);
    CHECK_THROWS_AS(ops::avg_pool2(Tensor::zeros({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("channel concat, slice, stack and take_sample round trip") {
    const Tensor a = random_tensor({2, 2, 3, 3}, 22), b = random_tensor({2, 3, 3, 3}, 23);
    const Tensor c = ops::concat_channels(a, b);
    CHECK(c.shape() == Shape{2, 5, 3, 3});
    CHECK(ops::slice_channels(c, 0, 2) == a);
    CHECK(ops::slice_channels(c, 2, 5) == b);
    CHECK_THROWS_AS(ops::slice_channels(c, 3, 3), ShapeError);
    const std::vector<Tensor> items{ops::take_sample(a, 0), ops::take_sample(a, 1)};
    CHECK(ops::stack(items) == a);
}

TEST_CASE("ops keep finite inputs finite") {
    const Tensor x = random_tensor({1, 2, 4, 4}, 24, -1e3, 1e3);
    CHECK(ops::relu(x).all_finite());
    CHECK(ops::avg_pool2(x).all_finite());
    CHECK(ops::conv2d(x, random_tensor({2, 2, 3, 3}, 25), Tensor::zeros({2}), Padding::same).all_finite());
    CHECK(ops::reduce(ReduceOp::var, x, {2, 3}, true).all_finite());
}

TEST_CASE("sart round trip") {
    const Tensor x = random_tensor({2, 3, 4}, 26);
    CHECK(sart::decode(sart::encode(x)) == x);
    const Tensor f = sart::decode(sart::encode(x, sart::DType::f32));
    CHECK(f.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(f[i] == static_cast<double>(static_cast<float>(x[i])));
    std::stringstream ss;
    sart::write(ss, x);
    CHECK(sart::read(ss) == x);
}

TEST_CASE("sart byte layout") {
    const auto bytes = sart::encode(Tensor({2, 1}, std::vector<double>{1.0, -2.0}));
    REQUIRE(bytes.size() == 4 + 1 + 1 + 2 * 4 + 1 + 2 * 8);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SART");
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 2);
    CHECK(bytes[6] == 2);
    CHECK(bytes[7] == 0);
    CHECK(bytes[10] == 1);
    CHECK(bytes[14] == 2);
    // 1.0 = 0x3FF0000000000000 little-endian
    CHECK(bytes[15 + 7] == 0x3F);
    CHECK(bytes[15 + 6] == 0xF0);
}

TEST_CASE("sart rejects malformed input") {
    auto good = sart::encode(Tensor({3}, 1.0));
    auto bad = good;
    bad[0] = 'X';
    CHECK_THROWS_AS(sart::decode(bad), sart::FormatError);
    bad = good;
    bad[4] = 9;
    CHECK_THROWS_AS(sart::decode(bad), sart::FormatError);
    bad = good;
    bad[5] = 0;
    CHECK_THROWS_AS(sart::decode(bad), sart::FormatError);
    bad = good;
    bad[10] = 7; // dtype tag
    CHECK_THROWS_AS(sart::decode(bad), sart::FormatError);
    bad = good;
    bad[6] = 0; // zero dimension
    CHECK_THROWS_AS(sart::decode(bad), sart::FormatError);
    bad = good;
    bad.pop_back();
    CHECK_THROWS_AS(sart::decode(bad), sart::FormatError);
    bad = good;
    bad.push_back(0);
    CHECK_THROWS_AS(sart::decode(bad), sart::FormatError);
    CHECK_THROWS_AS(sart::decode({}), sart::FormatError);
}
