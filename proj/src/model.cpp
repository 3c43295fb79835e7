#include "sadreg/model.hpp"

#include <stdexcept>

namespace sadreg::model {

namespace {

std::string idx(const char *stem, std::size_t i) { return stem + std::to_string(i); }

std::size_t width_at(const ModelConfig &c, std::size_t level) { return c.base_channels << level; }

std::size_t render_width(const ModelConfig &c, std::size_t block) {
    return c.base_channels << (c.levels - 1 - block);
}

void require_divisible(const Shape &s, const ModelConfig &c) {
    const std::size_t factor = std::size_t{1} << c.levels;
    if (s.size() != 4 || s[1] != c.in_channels) {
        throw ShapeError("expected image [N," + std::to_string(c.in_channels) + ",H,W], got " +
                         shape_to_string(s));
    }
    if (s[2] % factor != 0 || s[3] % factor != 0) {
        throw ShapeError("image size " + shape_to_string(s) + " not divisible by 2^levels = " +
                         std::to_string(factor));
    }
}

} // namespace

void ModelConfig::validate() const {
    if (levels < 1) {
        throw std::invalid_argument("levels must be >= 1");
    }
    if (in_channels < 1 || base_channels < 1 || scene_channels < 1 || appearance_channels < 1 ||
        appearance_layers < 1) {
        throw std::invalid_argument("channel counts and appearance_layers must be >= 1");
    }
    if (appearance_kernel % 2 == 0) {
        throw std::invalid_argument("appearance_kernel must be odd");
    }
    const std::size_t factor = std::size_t{1} << levels;
    if (image_size == 0 || image_size % factor != 0) {
        throw std::invalid_argument("image_size " + std::to_string(image_size) +
                                    " must be divisible by 2^levels = " + std::to_string(factor));
    }
    if (!(norm_eps > 0.0)) {
        throw std::invalid_argument("norm_eps must be positive");
    }
}

nn::ParameterSet init_parameters(const ModelConfig &c) {
    c.validate();
    nn::Rng rng(c.seed);
    nn::ParameterSet p;

    // Scene encoder.
    std::size_t in = c.in_channels;
    for (std::size_t l = 0; l < c.levels; ++l) {
        const std::size_t w = width_at(c, l);
        nn::add_conv(p, "scene." + idx("enc", l) + ".conv0", in, w, 3, rng);
        nn::add_conv(p, "scene." + idx("enc", l) + ".conv1", w, w, 3, rng);
        in = w;
    }
    const std::size_t bottom = width_at(c, c.levels);
    nn::add_conv(p, "scene.bottleneck.conv0", in, bottom, 3, rng);
    nn::add_conv(p, "scene.bottleneck.conv1", bottom, bottom, 3, rng);
    in = bottom;
    for (std::size_t l = c.levels; l-- > 0;) {
        const std::size_t w = width_at(c, l);
        nn::add_conv(p, "scene." + idx("dec", l) + ".conv0", in + w, w, 3, rng);
        nn::add_conv(p, "scene." + idx("dec", l) + ".conv1", w, w, 3, rng);
        in = w;
    }
    nn::add_conv(p, "scene.head", in, c.scene_channels, 1, rng);

    // Appearance encoder.
    in = c.in_channels;
    for (std::size_t j = 0; j < c.appearance_layers; ++j) {
        const std::size_t w = width_at(c, j);
        nn::add_conv(p, "appearance." + idx("conv", j), in, w, c.appearance_kernel, rng);
        in = w;
    }
    nn::add_dense(p, "appearance.fc", in, c.appearance_channels, rng);

    // Renderer.
    in = c.scene_channels;
    for (std::size_t b = 0; b < c.levels; ++b) {
        const std::size_t w = render_width(c, b);
        nn::add_conv(p, "render." + idx("block", b) + ".conv", in, w, 3, rng);
        if (c.modulate_every_level || b == 0) {
            nn::add_modulation(p, "render." + idx("block", b) + ".mod", c.appearance_channels, w);
        }
        in = w;
    }
    nn::add_conv(p, "render.head", in, c.in_channels, 1, rng);
    return p;
}

Model Model::create(const ModelConfig &config) { return Model{config, init_parameters(config)}; }

ad::Var scene_stem(const ad::Var &image, const nn::BoundParameters &p, const ModelConfig &c) {
    require_divisible(image.shape(), c);
    return nn::instance_norm(nn::conv(image, p, "scene.enc0.conv0"), c.norm_eps);
}

ad::Var encode_scene(const ad::Var &image, const nn::BoundParameters &p, const ModelConfig &c) {
    require_divisible(image.shape(), c);
    std::vector<ad::Var> skips;
    ad::Var h = image;
    for (std::size_t l = 0; l < c.levels; ++l) {
        const std::string stage = "scene." + idx("enc", l);
        h = nn::conv_block(h, p, stage + ".conv0", true, c.norm_eps);
        h = nn::conv_block(h, p, stage + ".conv1", true, c.norm_eps);
        skips.push_back(h);
        h = ad::avg_pool2(h);
    }
    h = nn::conv_block(h, p, "scene.bottleneck.conv0", true, c.norm_eps);
    h = nn::conv_block(h, p, "scene.bottleneck.conv1", true, c.norm_eps);
    for (std::size_t l = c.levels; l-- > 0;) {
        const std::string stage = "scene." + idx("dec", l);
        h = ad::concat_channels(ad::upsample_x2(h), skips[l]);
        h = nn::conv_block(h, p, stage + ".conv0", true, c.norm_eps);
        h = nn::conv_block(h, p, stage + ".conv1", true, c.norm_eps);
    }
    return nn::conv(h, p, "scene.head");
}

ad::Var encode_appearance(const ad::Var &image, const nn::BoundParameters &p, const ModelConfig &c) {
    if (image.shape().size() != 4 || image.shape()[1] != c.in_channels) {
        throw ShapeError("encode_appearance: expected [N," + std::to_string(c.in_channels) +
                         ",H,W], got " + shape_to_string(image.shape()));
    }
    ad::Var h = image;
    for (std::size_t j = 0; j < c.appearance_layers; ++j) {
        if (j > 0 && h.shape()[2] % 2 == 0 && h.shape()[3] % 2 == 0) {
            h = ad::avg_pool2(h);
        }
        h = nn::conv_block(h, p, "appearance." + idx("conv", j), false);
    }
    return nn::dense(nn::global_avg_pool(h), p, "appearance.fc");
}

ad::Var render(const ad::Var &scene, const ad::Var &appearance, const nn::BoundParameters &p,
               const ModelConfig &c) {
    const Shape &s = scene.shape();
    if (s.size() != 4 || s[1] != c.scene_channels) {
        throw ShapeError("render: expected scene [N," + std::to_string(c.scene_channels) +
                         ",H,W], got " + shape_to_string(s));
    }
    if (appearance.shape().size() != 2 || appearance.shape()[0] != s[0] ||
        appearance.shape()[1] != c.appearance_channels) {
        throw ShapeError("render: appearance " + shape_to_string(appearance.shape()) +
                         " does not match scene batch " + std::to_string(s[0]) + " and width " +
                         std::to_string(c.appearance_channels));
    }
    ad::Var h = scene;
    for (std::size_t b = 0; b < c.levels; ++b) {
        const std::string block = "render." + idx("block", b);
        h = nn::conv(h, p, block + ".conv");
        if (c.modulate_every_level || b == 0) {
            h = nn::modulate(h, appearance, p, block + ".mod", c.norm_eps);
        } else {
            h = nn::instance_norm(h, c.norm_eps);
        }
        h = ad::relu(h);
    }
    return nn::conv(h, p, "render.head");
}

PairOutputs forward_pair(const ad::Var &image_a, const ad::Var &image_b, const nn::BoundParameters &p,
                         const ModelConfig &c, bool with_reverse) {
    if (image_a.shape() != image_b.shape()) {
        throw ShapeError("forward_pair: image shapes differ, " + shape_to_string(image_a.shape()) +
                         " vs " + shape_to_string(image_b.shape()));
    }
    PairOutputs out;
    out.scene_a = encode_scene(image_a, p, c);
    out.scene_b = encode_scene(image_b, p, c);
    out.appearance_a = encode_appearance(image_a, p, c);
    out.appearance_b = encode_appearance(image_b, p, c);
    out.recon_a = render(out.scene_a, out.appearance_a, p, c);
    out.recon_b = render(out.scene_b, out.appearance_b, p, c);
    out.b_to_a = render(out.scene_b, out.appearance_a, p, c);
    if (with_reverse) {
        out.a_to_b = render(out.scene_a, out.appearance_b, p, c);
    }
    return out;
}

PairImages evaluate_pair(const Model &model, const Tensor &image_a, const Tensor &image_b) {
    ad::Tape tape;
    nn::BoundParameters p(tape, model.params, false);
    auto out = forward_pair(tape.constant(image_a), tape.constant(image_b), p, model.config, true);
    return PairImages{out.scene_a.value(),      out.scene_b.value(), out.appearance_a.value(),
                      out.appearance_b.value(), out.recon_a.value(), out.recon_b.value(),
                      out.b_to_a.value(),       out.a_to_b.value()};
}

bool is_modulation_parameter(const std::string &name) {
    return name.find(".mod.") != std::string::npos;
}

} // namespace sadreg::model
