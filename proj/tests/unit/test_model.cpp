#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "sadreg/model.hpp"

using namespace sadreg;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

std::size_t conv_count(std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; }

// Parameter count re-derived from the architecture description.
std::size_t expected_count(const model::ModelConfig &c) {
    std::size_t n = 0, in = c.in_channels;
    for (std::size_t l = 0; l < c.levels; ++l) {
        const std::size_t w = c.base_channels << l;
        n += conv_count(in, w, 3) + conv_count(w, w, 3);
        in = w;
    }
    const std::size_t bottom = c.base_channels << c.levels;
    n += conv_count(in, bottom, 3) + conv_count(bottom, bottom, 3);
    in = bottom;
    for (std::size_t l = c.levels; l-- > 0;) {
        const std::size_t w = c.base_channels << l;
        n += conv_count(in + w, w, 3) + conv_count(w, w, 3);
        in = w;
    }
    n += conv_count(in, c.scene_channels, 1);
    in = c.in_channels;
    for (std::size_t j = 0; j < c.appearance_layers; ++j) {
        const std::size_t w = c.base_channels << j;
        n += conv_count(in, w, c.appearance_kernel);
        in = w;
    }
    n += in * c.appearance_channels + c.appearance_channels;
    in = c.scene_channels;
    for (std::size_t b = 0; b < c.levels; ++b) {
        const std::size_t w = c.base_channels << (c.levels - 1 - b);
        n += conv_count(in, w, 3);
        if (c.modulate_every_level || b == 0) n += c.appearance_channels * 2 * w + 2 * w;
        in = w;
    }
    return n + conv_count(in, c.in_channels, 1);
}

model::ModelConfig micro() {
    model::ModelConfig c;
    c.base_channels = 4;
    c.levels = 2;
    c.scene_channels = 6;
    c.appearance_channels = 3;
    c.image_size = 16;
    c.seed = 3;
    return c;
}

} // namespace

TEST_CASE("default config shapes") {
    const auto m = model::Model::create(model::ModelConfig{});
    ad::Tape tape;
    nn::BoundParameters p(tape, m.params, false);
    const auto img = tape.constant(random_tensor({1, 1, 64, 64}, 1, 0.0, 1.0));
    const auto s = model::encode_scene(img, p, m.config);
    CHECK(s.shape() == Shape{1, 64, 64, 64});
    const auto a = model::encode_appearance(tape.constant(random_tensor({2, 1, 64, 64}, 2)), p, m.config);
    CHECK(a.shape() == Shape{2, 32});
    const auto a1 = model::encode_appearance(img, p, m.config);
    CHECK(model::render(s, a1, p, m.config).shape() == Shape{1, 1, 64, 64});
}

TEST_CASE("default parameter count is pinned and matches the architecture") {
    const model::ModelConfig c;
    const auto m = model::Model::create(c);
    CHECK(m.params.scalar_count() == expected_count(c));
    CHECK(m.params.scalar_count() == 2150209);
    CHECK(model::Model::create(c).params.scalar_count() == m.params.scalar_count());
    auto single = c;
    single.modulate_every_level = false;
    CHECK(model::Model::create(single).params.scalar_count() == expected_count(single));
    CHECK_FALSE(model::Model::create(single).params.contains("render.block1.mod.weight"));
    CHECK(expected_count(micro()) == model::Model::create(micro()).params.scalar_count());
}

TEST_CASE("initialization is seed-determined") {
    auto c = micro();
    CHECK(model::Model::create(c).params == model::Model::create(c).params);
    c.seed = 4;
    CHECK_FALSE(model::Model::create(c).params == model::Model::create(micro()).params);
}

TEST_CASE("modulation starts at identity") {
    const auto m = model::Model::create(micro());
    for (const auto &name : m.params.names()) {
        if (!model::is_modulation_parameter(name)) continue;
        const Tensor &t = m.params.at(name);
        if (name.ends_with(".weight")) {
            CHECK(t == Tensor::zeros_like(t));
        } else {
            const std::size_t C = t.size() / 2;
            for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == (i < C ? 1.0 : 0.0));
        }
    }
    CHECK(model::is_modulation_parameter("render.block0.mod.bias"));
    CHECK_FALSE(model::is_modulation_parameter("render.block0.conv.bias"));
}

TEST_CASE("identical inputs give identical codes and reconstructions") {
    const auto m = model::Model::create(micro());
    const Tensor x = random_tensor({1, 1, 16, 16}, 5, 0.0, 1.0);
    const auto out = model::evaluate_pair(m, x, x);
    CHECK(out.scene_a == out.scene_b);
    CHECK(out.recon_a == out.recon_b);
    CHECK(out.b_to_a == out.recon_a);
}

TEST_CASE("evaluate_pair matches forward_pair") {
    const auto m = model::Model::create(micro());
    const Tensor a = random_tensor({1, 1, 16, 16}, 6, 0.0, 1.0), b = random_tensor({1, 1, 16, 16}, 7, 0.0, 1.0);
    ad::Tape tape;
    nn::BoundParameters p(tape, m.params, true);
    const auto out = model::forward_pair(tape.constant(a), tape.constant(b), p, m.config, false);
    const auto im = model::evaluate_pair(m, a, b);
    CHECK(out.b_to_a.value() == im.b_to_a);
    CHECK(out.recon_b.value() == im.recon_b);
    CHECK_FALSE(out.a_to_b.attached());
    CHECK(im.a_to_b.shape() == a.shape());
}

TEST_CASE("first post-norm scene activations ignore positive affine intensity maps") {
    const auto m = model::Model::create(micro());
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> ua(0.5, 2.0), ub(-64.0, 64.0);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = random_tensor({1, 1, 16, 16}, 100 + trial, 0.0, 255.0);
        const double a = ua(rng), b = ub(rng);
        const Tensor y = ops::add_scalar(ops::scale(x, a), b);
        ad::Tape tape;
        nn::BoundParameters p(tape, m.params, false);
        const Tensor sx = model::scene_stem(tape.constant(x), p, m.config).value();
        const Tensor sy = model::scene_stem(tape.constant(y), p, m.config).value();
        CHECK(max_abs_diff(sx, sy) <= 1e-5);
    }
}

TEST_CASE("appearance code of a single 1x1 conv layer is permutation invariant") {
    auto c = micro();
    c.appearance_layers = 1;
    c.appearance_kernel = 1;
    const auto m = model::Model::create(c);
    const Tensor x = random_tensor({1, 1, 16, 16}, 9);
    Tensor y(x.shape());
    std::vector<std::size_t> order(256);
    for (std::size_t i = 0; i < 256; ++i) order[i] = (i * 37 + 11) % 256;
    for (std::size_t i = 0; i < 256; ++i) y[i] = x[order[i]];
    ad::Tape tape;
    nn::BoundParameters p(tape, m.params, false);
    const Tensor ax = model::encode_appearance(tape.constant(x), p, c).value();
    const Tensor ay = model::encode_appearance(tape.constant(y), p, c).value();
    CHECK(max_abs_diff(ax, ay) <= 1e-12);
}

TEST_CASE("config validation and shape errors") {
    auto c = micro();
    c.image_size = 18;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = micro();
    c.levels = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = micro();
    c.appearance_kernel = 2;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    const auto m = model::Model::create(micro());
    ad::Tape tape;
    nn::BoundParameters p(tape, m.params, false);
    CHECK_THROWS_AS(model::encode_scene(tape.constant(Tensor::zeros({1, 1, 18, 18})), p, m.config), ShapeError);
    CHECK_THROWS_AS(model::encode_scene(tape.constant(Tensor::zeros({1, 2, 16, 16})), p, m.config), ShapeError);
    CHECK_THROWS_AS(model::forward_pair(tape.constant(Tensor::zeros({1, 1, 16, 16})),
                                        tape.constant(Tensor::zeros({2, 1, 16, 16})), p, m.config),
                    ShapeError);
}
