// Synthetic image pairs with known scene, appearance transforms, warp and landmarks.
//
// A pair realizes I_A = T_A(S) and I_B = T_B(S o phi) where phi(x) = x + u(x) maps
// B's frame into A's (scene) frame: I_B(x) samples the scene at phi(x). Landmarks in
// A are blob centers of S; their B counterparts are phi^-1 of those points.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sadreg/registration.hpp"
#include "sadreg/tensor.hpp"

namespace sadreg::synth {

using reg::DisplacementField;
using reg::Point;

struct SceneField {
    Tensor field; // [1,1,H,W], values in [0,1]
    std::vector<Point> landmarks;
    std::vector<Point> spare_centers; // blob centers not used as landmarks
};

// Intensity map v -> sigmoid_contrast(v^gamma) + offset (+ noise).
struct AppearanceParams {
    double gamma = 1.0;
    double slope = 0.0; // 0 means the contrast stage is the identity
    double center = 0.5;
    double offset = 0.0;
    double noise_std = 0.0;

    // Rejects combinations whose noiseless map is not strictly increasing on [0,1].
    void validate() const;
    double map(double v) const; // noiseless
};

struct Bump {
    double cx = 0.0, cy = 0.0; // center
    double ax = 0.0, ay = 0.0; // displacement amplitude
};

// A concrete warp: similarity about the image center plus Gaussian bumps.
struct WarpParams {
    double rotation = 0.0; // radians
    double scale = 1.0;
    double tx = 0.0, ty = 0.0;
    std::vector<Bump> bumps;
    double bump_width = 8.0;       // sigma of every bump, px
    double max_displacement = 12.0; // px

    // Upper bound on ||u|| over an H x W grid.
    double displacement_bound(std::size_t height, std::size_t width) const;
    // Upper bound on the spectral norm of grad u; < 1 guarantees a bijection.
    double jacobian_bound() const;
    void validate(std::size_t height, std::size_t width) const;
};

struct WarpBounds {
    double max_rotation = 0.04; // radians
    double max_scale_delta = 0.03;
    double max_translation = 3.0;
    std::size_t bumps = 3;
    double max_bump_amplitude = 2.0;
    double bump_width = 10.0;
    double max_displacement = 12.0;
};

struct AppearanceBounds {
    double gamma_min = 0.5;
    double gamma_max = 2.0;
    double slope_max = 8.0;
    double center_min = 0.35;
    double center_max = 0.65;
    double max_offset = 0.1;
    double noise_std = 0.01;
};

struct SynthConfig {
    std::size_t size = 64;
    std::size_t landmarks = 8;
    std::size_t blobs = 24;
    WarpBounds warp;
    AppearanceBounds appearance;

    void validate() const;
};

struct SyntheticPair {
    Tensor image_a, image_b; // [1,1,H,W]
    std::vector<Point> landmarks_a, landmarks_b;
    WarpParams warp;
    DisplacementField truth;
    AppearanceParams appearance_a, appearance_b;
    std::uint64_t seed = 0;
    std::size_t resampled_landmarks = 0;
};

SceneField gen_scene(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t n_landmarks,
                     std::size_t n_blobs = 24, double margin = 2.0);

Tensor apply_appearance(const Tensor &field, const AppearanceParams &p, std::uint64_t noise_seed = 0);

WarpParams sample_warp(std::uint64_t seed, const WarpBounds &bounds, std::size_t height, std::size_t width);
AppearanceParams sample_appearance(std::uint64_t seed, const AppearanceBounds &bounds);

// Dense field u with phi(x) = x + u(x).
DisplacementField gen_warp(const WarpParams &p, std::size_t height, std::size_t width);
DisplacementField gen_warp(std::uint64_t seed, const WarpBounds &bounds, std::size_t height, std::size_t width);

// Solves q + u(q) = p by fixed-point iteration on the bilinearly interpolated field.
struct Inversion {
    Point point;
    double residual = 0.0;
    std::size_t iterations = 0;
};
Inversion invert_point(const DisplacementField &field, Point target, std::size_t max_iterations = 50,
                       double tolerance = 1e-6);

SyntheticPair make_pair(std::uint64_t seed, const SynthConfig &config);

// Independent per-pair seed for pair `index` of a corpus.
std::uint64_t pair_seed(std::uint64_t corpus_seed, std::size_t index);

} // namespace sadreg::synth
