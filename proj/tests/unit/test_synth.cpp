#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "sadreg/losses.hpp"
#include "sadreg/metrics.hpp"
#include "sadreg/synth.hpp"

using namespace sadreg;
using testing::max_abs_diff;

TEST_CASE("pairs are deterministic in the seed") {
    synth::SynthConfig cfg;
    const auto a = synth::make_pair(42, cfg), b = synth::make_pair(42, cfg), c = synth::make_pair(43, cfg);
    CHECK(a.image_a == b.image_a);
    CHECK(a.image_b == b.image_b);
    CHECK(a.landmarks_b == b.landmarks_b);
    CHECK_FALSE(a.image_a == c.image_a);
    CHECK(synth::pair_seed(1, 0) != synth::pair_seed(1, 1));
    CHECK(synth::pair_seed(1, 0) != synth::pair_seed(2, 0));
}

TEST_CASE("identity appearance returns the scene") {
    const auto s = synth::gen_scene(5, 32, 32, 4);
    CHECK(synth::apply_appearance(s.field, synth::AppearanceParams{}) == s.field);
    CHECK(s.landmarks.size() == 4);
}

TEST_CASE("sampled appearance maps are strictly increasing") {
    synth::AppearanceBounds b;
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto p = synth::sample_appearance(s, b);
        double prev = p.map(0.0);
        for (int i = 1; i <= 100; ++i) {
            const double v = p.map(i / 100.0);
            CHECK(v > prev);
            prev = v;
        }
    }
    synth::AppearanceParams bad;
    bad.gamma = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("appearance shifts are nontrivial but structure-preserving") {
    synth::SynthConfig cfg;
    cfg.warp = {0, 0, 0, 0, 0, 10, 12};
    std::size_t nontrivial = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto p = synth::make_pair(synth::pair_seed(9, s), cfg);
        CHECK(loss::ncc(p.image_a, p.image_b) >= 0.5);
        double mad = 0.0;
        for (std::size_t i = 0; i < p.image_a.size(); ++i) mad += std::abs(p.image_a[i] - p.image_b[i]);
        mad /= static_cast<double>(p.image_a.size());
        if (mad >= 0.05) ++nontrivial;
    }
    CHECK(nontrivial >= 15);
}

TEST_CASE("zero warp bounds give a zero field") {
    synth::WarpBounds b{0, 0, 0, 0, 0, 10, 12};
    CHECK(synth::gen_warp(3, b, 16, 16).data == Tensor::zeros({1, 2, 16, 16}));
}

TEST_CASE("pure translation") {
    synth::WarpParams w;
    w.tx = 3.0;
    const auto f = synth::gen_warp(w, 32, 32);
    CHECK(max_abs_diff(f.data, reg::DisplacementField::constant(32, 32, 3.0, 0.0).data) <= 1e-12);
    const auto inv = synth::invert_point(f, {10.0, 7.0});
    CHECK(std::abs(inv.point.x - 7.0) <= 1e-9);
    CHECK(std::abs(inv.point.y - 7.0) <= 1e-9);
}

TEST_CASE("warp validation rejects folding and oversized warps") {
    synth::WarpParams w;
    w.bumps.push_back({10, 10, 20, 0});
    w.bump_width = 2.0;
    CHECK(w.jacobian_bound() >= 1.0);
    CHECK_THROWS_AS(w.validate(32, 32), std::invalid_argument);
    synth::SynthConfig cfg;
    cfg.warp.max_translation = 20.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("landmark inversion is accurate on sampled warps") {
    synth::SynthConfig cfg;
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto p = synth::make_pair(synth::pair_seed(4, s), cfg);
        CHECK(p.landmarks_a.size() == cfg.landmarks);
        for (std::size_t i = 0; i < p.landmarks_b.size(); ++i) {
            const auto u = p.truth.sample(p.landmarks_b[i]);
            CHECK(std::hypot(p.landmarks_b[i].x + u.x - p.landmarks_a[i].x,
                             p.landmarks_b[i].y + u.y - p.landmarks_a[i].y) <= 1e-6);
        }
    }
}

TEST_CASE("default corpus has a moderate initial misalignment") {
    synth::SynthConfig cfg;
    std::vector<double> medians;
    for (std::size_t i = 0; i < 200; ++i) {
        const auto p = synth::make_pair(synth::pair_seed(7, i), cfg);
        const auto e =
            metrics::evaluate_pair(p.landmarks_a, p.landmarks_b, reg::DisplacementField::zeros(cfg.size, cfg.size));
        medians.push_back(e.median_initial);
    }
    const double m = metrics::median(medians);
    CHECK(m >= 1.0);
    CHECK(m <= 5.0);
}

TEST_CASE("scoring the ground-truth field gives near-zero error") {
    synth::SynthConfig cfg;
    for (std::size_t i = 0; i < 20; ++i) {
        const auto p = synth::make_pair(synth::pair_seed(12, i), cfg);
        const auto e = metrics::evaluate_pair(p.landmarks_a, p.landmarks_b, p.truth);
        CHECK(e.median_final <= 0.02);
        const bool all_moved = std::all_of(e.rtre_initial.begin(), e.rtre_initial.end(), [](double v) { return v > 0.02; });
        if (all_moved) CHECK(e.robustness == 1.0);
    }
}
