// Scene encoder, appearance encoder and renderer, plus the paired forward pass.
//
// encode_scene:      U-Net with `levels` pooling stages, concatenating skips, instance
//                    norm in every conv block, 1x1 linear head to `scene_channels`.
// encode_appearance: conv/ReLU stack without normalization -> global average pool ->
//                    dense -> `appearance_channels`.
// render:            `levels` full-resolution blocks conv -> modulate(., A) -> ReLU,
//                    then a 1x1 linear conv to the image channels.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "sadreg/autodiff.hpp"
#include "sadreg/layers.hpp"

namespace sadreg::model {

struct ModelConfig {
    std::size_t in_channels = 1;
    std::size_t base_channels = 32;
    std::size_t levels = 3;
    std::size_t scene_channels = 64;
    std::size_t appearance_channels = 32;
    std::size_t appearance_layers = 2;
    std::size_t appearance_kernel = 3;
    std::size_t image_size = 64;
    bool modulate_every_level = true;
    double norm_eps = nn::kNormEps;
    std::uint64_t seed = 0;

    // Throws std::invalid_argument on violated invariants.
    void validate() const;
    friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

struct Model {
    ModelConfig config;
    nn::ParameterSet params;

    static Model create(const ModelConfig &config);
};

nn::ParameterSet init_parameters(const ModelConfig &config);

ad::Var encode_scene(const ad::Var &image, const nn::BoundParameters &p, const ModelConfig &config);
ad::Var encode_appearance(const ad::Var &image, const nn::BoundParameters &p, const ModelConfig &config);
ad::Var render(const ad::Var &scene, const ad::Var &appearance, const nn::BoundParameters &p,
               const ModelConfig &config);

// First scene-encoder conv followed by instance norm, before the ReLU.
ad::Var scene_stem(const ad::Var &image, const nn::BoundParameters &p, const ModelConfig &config);

struct PairOutputs {
    ad::Var scene_a, scene_b;
    ad::Var appearance_a, appearance_b;
    ad::Var recon_a, recon_b;
    ad::Var b_to_a; // render(scene_b, appearance_a)
    ad::Var a_to_b; // render(scene_a, appearance_b); unset when with_reverse is false
};

PairOutputs forward_pair(const ad::Var &image_a, const ad::Var &image_b, const nn::BoundParameters &p,
                         const ModelConfig &config, bool with_reverse = true);

// Gradient-free evaluation of forward_pair.
struct PairImages {
    Tensor scene_a, scene_b;
    Tensor appearance_a, appearance_b;
    Tensor recon_a, recon_b;
    Tensor b_to_a, a_to_b;
};

PairImages evaluate_pair(const Model &model, const Tensor &image_a, const Tensor &image_b);

// Names of the dense layers producing (gamma, beta).
bool is_modulation_parameter(const std::string &name);

} // namespace sadreg::model
