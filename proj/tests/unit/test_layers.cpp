#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sadreg/layers.hpp"

using namespace sadreg;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

struct Stats {
    double mean, var;
};

Stats plane_stats(const Tensor &x, std::size_t n, std::size_t c) {
    const std::size_t HW = x.dim(2) * x.dim(3);
    const double *p = x.data().data() + (n * x.dim(1) + c) * HW;
    double m = 0.0;
    for (std::size_t i = 0; i < HW; ++i) m += p[i];
    m /= static_cast<double>(HW);
    double v = 0.0;
    for (std::size_t i = 0; i < HW; ++i) v += (p[i] - m) * (p[i] - m);
    return {m, v / static_cast<double>(HW)};
}

} // namespace

TEST_CASE("instance_norm hand cases") {
    CHECK(nn::instance_norm(Tensor({1, 1, 2, 3}, 4.2)) == Tensor::zeros({1, 1, 2, 3}));
    const Tensor x({1, 1, 1, 2}, std::vector<double>{-1, 1});
    const Tensor y = nn::instance_norm(x, 0.0);
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("instance_norm standardizes each plane") {
    const Tensor x = random_tensor({1, 2, 4, 4}, 1);
    const Tensor y = nn::instance_norm(x);
    for (std::size_t c = 0; c < 2; ++c) {
        const auto s = plane_stats(y, 0, c);
        CHECK(std::abs(s.mean) <= 1e-6);
        CHECK(std::abs(s.var - 1.0) <= 1e-4);
        // exact value with eps: var / (var + eps)
        const auto sx = plane_stats(x, 0, c);
        CHECK(s.var == doctest::Approx(sx.var / (sx.var + nn::kNormEps)).epsilon(1e-12));
    }
}

TEST_CASE("instance_norm affine invariance") {
    const Tensor x = random_tensor({2, 3, 5, 5}, 2);
    Tensor z(x.shape());
    const double a[3] = {0.5, 3.0, 1.7}, b[3] = {-2.0, 0.3, 10.0};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t c = (i / 25) % 3;
        z[i] = a[c] * x[i] + b[c];
    }
    CHECK(max_abs_diff(nn::instance_norm(x, 0.0), nn::instance_norm(z, 0.0)) <= 1e-12);
    // with eps the scale moves into the regularizer: IN(a x + b, eps) = IN(x, eps / a^2)
    const Tensor zs = ops::add_scalar(ops::scale(x, 0.5), 3.0);
    CHECK(max_abs_diff(nn::instance_norm(zs), nn::instance_norm(x, nn::kNormEps / 0.25)) <= 1e-12);
    // 8-bit scale images: the eps term is negligible and the tight bound holds
    const Tensor x8 = ops::scale(ops::add_scalar(x, 1.0), 127.5);
    const Tensor z8 = ops::add_scalar(ops::scale(x8, 0.6), 20.0);
    CHECK(max_abs_diff(nn::instance_norm(x8), nn::instance_norm(z8)) <= 1e-6);
}

TEST_CASE("instance_norm autodiff value equals tensor version") {
    const Tensor x = random_tensor({2, 2, 3, 4}, 3);
    ad::Tape tape;
    CHECK(nn::instance_norm(tape.constant(x)).value() == nn::instance_norm(x));
}

TEST_CASE("global_avg_pool") {
    const Tensor x({1, 1, 2, 2}, std::vector<double>{1, 3, 5, 7});
    CHECK(nn::global_avg_pool(x) == Tensor({1, 1}, 4.0));
    CHECK(nn::global_avg_pool(Tensor({2, 3, 4, 4}, 2.5)) == Tensor({2, 3}, 2.5));
    const Tensor r = random_tensor({1, 2, 3, 3}, 4);
    Tensor perm(r.shape());
    const std::size_t order[9] = {4, 7, 1, 0, 8, 2, 6, 3, 5};
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 9; ++i) perm[c * 9 + i] = r[c * 9 + order[i]];
    CHECK(max_abs_diff(nn::global_avg_pool(perm), nn::global_avg_pool(r)) <= 1e-15);
}

TEST_CASE("parameter set contract") {
    nn::ParameterSet p;
    p.add("b", Tensor::zeros({2}));
    p.add("a", Tensor::ones({3}));
    CHECK(p.names() == std::vector<std::string>{"a", "b"});
    CHECK(p.scalar_count() == 5);
    CHECK_THROWS_AS(p.add("a", Tensor::zeros({1})), std::invalid_argument);
    CHECK_THROWS_AS(p.add("nan", Tensor({1}, std::nan(""))), NumericError);
    CHECK_THROWS_AS(p.at("missing"), std::out_of_range);
}

TEST_CASE("kaiming uniform bounds and zero biases") {
    nn::Rng rng(7);
    nn::ParameterSet p;
    nn::add_conv(p, "c", 4, 8, 3, rng);
    const double bound = std::sqrt(6.0 / 36.0);
    double maxabs = 0.0;
    for (double v : p.at("c.weight").data()) maxabs = std::max(maxabs, std::abs(v));
    CHECK(maxabs <= bound);
    CHECK(maxabs > 0.9 * bound);
    CHECK(p.at("c.bias") == Tensor::zeros({8}));
    CHECK(p.at("c.weight").shape() == Shape{8, 4, 3, 3});
}

TEST_CASE("modulate at identity initialization equals instance_norm") {
    nn::ParameterSet p;
    nn::add_modulation(p, "m", 5, 3);
    const Tensor s = random_tensor({2, 3, 4, 4}, 8), a = random_tensor({2, 5}, 9);
    ad::Tape tape;
    nn::BoundParameters bp(tape, p, false);
    const Tensor y = nn::modulate(tape.constant(s), tape.constant(a), bp, "m").value();
    CHECK(max_abs_diff(y, nn::instance_norm(s)) == 0.0);
}

TEST_CASE("modulate with gamma = 0 is constant beta per channel") {
    nn::ParameterSet p;
    p.add("m.weight", Tensor::zeros({4, 3}));
    p.add("m.bias", Tensor({4}, std::vector<double>{0, 0, 1.5, -2}));
    ad::Tape tape;
    nn::BoundParameters bp(tape, p, false);
    const Tensor y =
        nn::modulate(tape.constant(random_tensor({1, 2, 3, 3}, 10)), tape.constant(random_tensor({1, 3}, 11)), bp, "m")
            .value();
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(y[i] == 1.5);
        CHECK(y[9 + i] == -2.0);
    }
}

TEST_CASE("modulate shape errors") {
    nn::ParameterSet p;
    nn::add_modulation(p, "m", 5, 3);
    ad::Tape tape;
    nn::BoundParameters bp(tape, p, false);
    CHECK_THROWS_AS(nn::modulate(tape.constant(Tensor::zeros({1, 4, 2, 2})), tape.constant(Tensor::zeros({1, 5})), bp, "m"),
                    ShapeError);
    CHECK_THROWS_AS(nn::modulate(tape.constant(Tensor::zeros({1, 3, 2, 2})), tape.constant(Tensor::zeros({2, 5})), bp, "m"),
                    ShapeError);
}

TEST_CASE("conv_block null map and shape contract") {
    nn::ParameterSet p;
    p.add("z.weight", Tensor::zeros({4, 2, 3, 3}));
    p.add("z.bias", Tensor::zeros({4}));
    nn::Rng rng(12);
    nn::add_conv(p, "c", 32, 64, 3, rng);
    ad::Tape tape;
    nn::BoundParameters bp(tape, p, false);
    CHECK(nn::conv_block(tape.constant(random_tensor({1, 2, 5, 5}, 13)), bp, "z", false).value() ==
          Tensor::zeros({1, 4, 5, 5}));
    CHECK(nn::conv_block(tape.constant(random_tensor({1, 32, 16, 16}, 14)), bp, "c", true).shape() ==
          Shape{1, 64, 16, 16});
}
