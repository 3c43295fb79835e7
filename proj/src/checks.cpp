#include "sadreg/checks.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "sadreg/layers.hpp"
#include "sadreg/losses.hpp"
#include "sadreg/model.hpp"
#include "sadreg/registration.hpp"

namespace sadreg::checks {

using ad::Tape;
using ad::Var;
using Inputs = std::span<const Var>;

GradScope parse_scope(const std::string &name) {
    if (name == "ops") return GradScope::ops;
    if (name == "layers") return GradScope::layers;
    if (name == "losses") return GradScope::losses;
    if (name == "model") return GradScope::model;
    throw std::invalid_argument("unknown gradcheck scope '" + name + "' (ops|layers|losses|model)");
}

std::string scope_name(GradScope scope) {
    switch (scope) {
    case GradScope::ops: return "ops";
    case GradScope::layers: return "layers";
    case GradScope::losses: return "losses";
    case GradScope::model: return "model";
    }
    return "?";
}

double default_tolerance(GradScope scope) { return scope == GradScope::ops ? 1e-4 : 1e-3; }

namespace {

struct Gen {
    std::mt19937_64 rng;
    explicit Gen(std::uint64_t seed) : rng(seed) {}

    Tensor uniform(Shape shape, double lo = -1.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        Tensor t(std::move(shape));
        for (auto &v : t.data()) v = d(rng);
        return t;
    }
    // Values with |v| >= 0.1, keeping ReLU kinks out of the difference stencil.
    Tensor away_from_zero(Shape shape) {
        Tensor t = uniform(std::move(shape), 0.1, 1.0);
        std::bernoulli_distribution sign(0.5);
        for (auto &v : t.data()) v = sign(rng) ? v : -v;
        return t;
    }
};

// Reduces a tensor output to a scalar through fixed random weights.
Var project(const Var &y, std::uint64_t seed) {
    Gen g(seed);
    Tape &tape = *y.tape();
    return ad::sum(ad::mul(y, tape.constant(g.uniform(y.shape()))));
}

struct Case {
    std::string name;
    ad::ScalarFn fn;
    std::vector<Tensor> inputs;
    std::size_t max_checks = 0;
    double step = 1e-5;
};

std::vector<Case> op_cases() {
    Gen g(11);
    std::vector<Case> c;
    const Shape s4{2, 3, 4, 5};
    c.push_back({"add", [](Tape &, Inputs v) { return project(ad::add(v[0], v[1]), 1); },
                 {g.uniform(s4), g.uniform(s4)}});
    c.push_back({"add_broadcast", [](Tape &, Inputs v) { return project(ad::add(v[0], v[1]), 2); },
                 {g.uniform(s4), g.uniform({3, 1, 1})}});
    c.push_back({"sub_broadcast", [](Tape &, Inputs v) { return project(ad::sub(v[0], v[1]), 3); },
                 {g.uniform(s4), g.uniform({5})}});
    c.push_back({"mul_broadcast", [](Tape &, Inputs v) { return project(ad::mul(v[0], v[1]), 4); },
                 {g.uniform(s4), g.uniform({2, 3, 1, 1})}});
    c.push_back({"scale", [](Tape &, Inputs v) { return project(ad::scale(v[0], -2.5), 5); }, {g.uniform(s4)}});
    c.push_back({"add_scalar", [](Tape &, Inputs v) { return project(ad::add_scalar(v[0], 0.7), 6); },
                 {g.uniform(s4)}});
    c.push_back({"square", [](Tape &, Inputs v) { return project(ad::square(v[0]), 7); }, {g.uniform(s4)}});
    c.push_back({"sum", [](Tape &, Inputs v) { return ad::sum(ad::square(v[0])); }, {g.uniform(s4)}});
    c.push_back({"mean", [](Tape &, Inputs v) { return ad::mean(ad::square(v[0])); }, {g.uniform(s4)}});
    c.push_back({"reduce_mean",
                 [](Tape &, Inputs v) { return project(ad::reduce_mean(ad::square(v[0]), {2, 3}, true), 8); },
                 {g.uniform(s4)}});
    c.push_back({"relu", [](Tape &, Inputs v) { return project(ad::relu(v[0]), 9); }, {g.away_from_zero(s4)}});
    c.push_back({"conv2d_same",
                 [](Tape &, Inputs v) { return project(ad::conv2d(v[0], v[1], v[2], Padding::same), 10); },
                 {g.uniform({2, 3, 6, 5}), g.uniform({4, 3, 3, 3}), g.uniform({4})}});
    c.push_back({"conv2d_valid",
                 [](Tape &, Inputs v) { return project(ad::conv2d(v[0], v[1], v[2], Padding::valid), 11); },
                 {g.uniform({1, 2, 6, 7}), g.uniform({3, 2, 3, 3}), g.uniform({3})}});
    c.push_back({"conv2d_1x1",
                 [](Tape &, Inputs v) { return project(ad::conv2d(v[0], v[1], v[2], Padding::same), 12); },
                 {g.uniform({2, 3, 4, 4}), g.uniform({2, 3, 1, 1}), g.uniform({2})}});
    c.push_back({"avg_pool2", [](Tape &, Inputs v) { return project(ad::avg_pool2(v[0]), 13); },
                 {g.uniform({2, 2, 4, 6})}});
    c.push_back({"upsample_x2", [](Tape &, Inputs v) { return project(ad::upsample_x2(v[0]), 14); },
                 {g.uniform({2, 2, 3, 2})}});
    c.push_back({"concat_channels", [](Tape &, Inputs v) { return project(ad::concat_channels(v[0], v[1]), 15); },
                 {g.uniform({2, 2, 3, 3}), g.uniform({2, 3, 3, 3})}});
    c.push_back({"slice_channels", [](Tape &, Inputs v) { return project(ad::slice_channels(v[0], 1, 3), 16); },
                 {g.uniform({2, 4, 3, 3})}});
    c.push_back({"reshape", [](Tape &, Inputs v) { return project(ad::reshape(v[0], {6, 10}), 17); },
                 {g.uniform({2, 3, 2, 5})}});
    c.push_back({"dense", [](Tape &, Inputs v) { return project(ad::dense(v[0], v[1], v[2]), 18); },
                 {g.uniform({3, 5}), g.uniform({4, 5}), g.uniform({4})}});
    c.push_back({"mse", [](Tape &, Inputs v) { return ad::mse(v[0], v[1]); }, {g.uniform(s4), g.uniform(s4)}});
    c.push_back({"spatial_diff_rows", [](Tape &, Inputs v) { return project(ad::spatial_diff(v[0], 2), 19); },
                 {g.uniform(s4)}});
    c.push_back({"spatial_diff_cols", [](Tape &, Inputs v) { return project(ad::spatial_diff(v[0], 3), 20); },
                 {g.uniform(s4)}});
    // Displacements with fractional parts in [0.2, 0.8] keep every sample off the bilinear kinks.
    Tensor field = g.uniform({1, 2, 5, 6}, 0.2, 0.8);
    for (std::size_t i = 0; i < field.size(); i += 2) field[i] -= 1.0;
    c.push_back({"bilinear_warp", [](Tape &, Inputs v) { return project(reg::bilinear_warp(v[0], v[1]), 21); },
                 {g.uniform({2, 2, 5, 6}), field}});
    return c;
}

std::vector<Case> layer_cases() {
    Gen g(23);
    std::vector<Case> c;
    c.push_back({"instance_norm", [](Tape &, Inputs v) { return project(nn::instance_norm(v[0]), 31); },
                 {g.uniform({2, 3, 4, 5})}});
    c.push_back({"global_avg_pool", [](Tape &, Inputs v) { return project(nn::global_avg_pool(v[0]), 32); },
                 {g.uniform({2, 3, 4, 5})}});
    auto bind = [](Tape &tape, Inputs v, std::initializer_list<const char *> names) {
        std::map<std::string, Var> m;
        std::size_t i = 1;
        for (const char *n : names) m.emplace(n, v[i++]);
        return nn::BoundParameters(tape, std::move(m));
    };
    c.push_back({"conv_layer",
                 [bind](Tape &t, Inputs v) {
                     return project(nn::conv(v[0], bind(t, v, {"c.weight", "c.bias"}), "c"), 33);
                 },
                 {g.uniform({2, 2, 5, 5}), g.uniform({3, 2, 3, 3}), g.uniform({3})}});
    c.push_back({"dense_layer",
                 [bind](Tape &t, Inputs v) {
                     return project(nn::dense(v[0], bind(t, v, {"d.weight", "d.bias"}), "d"), 34);
                 },
                 {g.uniform({2, 4}), g.uniform({3, 4}), g.uniform({3})}});
    c.push_back({"conv_block_norm",
                 [bind](Tape &t, Inputs v) {
                     return project(nn::conv_block(v[0], bind(t, v, {"b.weight", "b.bias"}), "b", true), 35);
                 },
                 {g.uniform({2, 2, 5, 5}), g.uniform({3, 2, 3, 3}), g.uniform({3})}});
    c.push_back({"conv_block_plain",
                 [bind](Tape &t, Inputs v) {
                     return project(nn::conv_block(v[0], bind(t, v, {"b.weight", "b.bias"}), "b", false), 36);
                 },
                 {g.uniform({2, 2, 5, 5}), g.uniform({3, 2, 3, 3}), g.uniform({3})}});
    c.push_back({"modulate",
                 [](Tape &t, Inputs v) {
                     std::map<std::string, Var> m{{"m.weight", v[2]}, {"m.bias", v[3]}};
                     return project(nn::modulate(v[0], v[1], nn::BoundParameters(t, std::move(m)), "m"), 37);
                 },
                 {g.uniform({2, 3, 4, 4}), g.uniform({2, 5}), g.uniform({6, 5}), g.uniform({6})}});
    return c;
}

std::vector<Case> loss_cases() {
    Gen g(41);
    std::vector<Case> c;
    const Shape s{3, 1, 6, 6};
    loss::LossWeights w;
    c.push_back({"ncc", [](Tape &, Inputs v) { return loss::ncc(v[0], v[1]); }, {g.uniform(s), g.uniform(s)}});
    c.push_back({"ncc_per_sample", [](Tape &, Inputs v) { return project(loss::ncc_per_sample(v[0], v[1]), 42); },
                 {g.uniform(s), g.uniform(s)}});
    c.push_back({"cosine_per_sample",
                 [](Tape &, Inputs v) { return project(loss::cosine_per_sample(v[0], v[1]), 43); },
                 {g.uniform({3, 2, 3, 3}), g.uniform({3, 2, 3, 3})}});
    c.push_back({"scene_consistency",
                 [w](Tape &, Inputs v) { return loss::scene_consistency(v[0], v[1], w).value; },
                 {g.uniform({2, 3, 4, 4}), g.uniform({2, 3, 4, 4})}});
    c.push_back({"cycle", [](Tape &, Inputs v) { return loss::cycle_loss(v[0], v[1], v[2], v[3]).value; },
                 {g.uniform(s), g.uniform(s), g.uniform(s), g.uniform(s)}});
    c.push_back({"align", [w](Tape &, Inputs v) { return loss::align_loss(v[0], v[1], w).value; },
                 {g.uniform(s), g.uniform(s)}});
    c.push_back({"total",
                 [w](Tape &, Inputs v) { return loss::total_loss(ad::sum(v[0]), ad::sum(v[1]), ad::sum(v[2]), w); },
                 {g.uniform({2}), g.uniform({2}), g.uniform({2})}});
    Tensor field = g.uniform({1, 2, 6, 6}, 0.2, 0.8);
    c.push_back({"field_objective",
                 [](Tape &, Inputs v) { return reg::field_objective(v[0], v[1], v[2], 0.1); },
                 {g.uniform({1, 1, 6, 6}), g.uniform({1, 1, 6, 6}), field}});
    return c;
}

std::vector<Case> model_cases() {
    model::ModelConfig cfg;
    cfg.in_channels = 1;
    cfg.base_channels = 2;
    cfg.levels = 2;
    cfg.scene_channels = 3;
    cfg.appearance_channels = 2;
    cfg.appearance_layers = 2;
    cfg.image_size = 8;
    cfg.seed = 5;
    // Move the modulation layers off their identity initialization so every path is exercised.
    nn::ParameterSet params = model::init_parameters(cfg);
    Gen g(51);
    std::vector<std::string> names;
    std::vector<Tensor> inputs{g.uniform({2, 1, 8, 8}, 0.0, 1.0), g.uniform({2, 1, 8, 8}, 0.0, 1.0)};
    for (const auto &[name, t] : params) {
        names.push_back(name);
        Tensor v = t;
        if (model::is_modulation_parameter(name)) {
            for (auto &e : v.data()) e += 0.1 * g.uniform({1})[0];
        }
        inputs.push_back(v);
    }
    std::vector<Case> c;
    for (bool symmetric : {false, true}) {
        loss::LossWeights w;
        w.symmetric_align = symmetric;
        c.push_back({symmetric ? "model_objective_symmetric" : "model_objective",
                     [cfg, names, w](Tape &tape, Inputs v) {
                         std::map<std::string, Var> m;
                         for (std::size_t i = 0; i < names.size(); ++i) m.emplace(names[i], v[i + 2]);
                         nn::BoundParameters p(tape, std::move(m));
                         const auto out = model::forward_pair(v[0], v[1], p, cfg, w.symmetric_align);
                         return loss::objective(out, v[0], v[1], w).total;
                     },
                     // deep ReLU stacks: keep the probe well inside one linear piece
                     inputs, 40, 1e-6});
    }
    return c;
}

} // namespace

std::vector<GradcheckCase> run_gradchecks(GradScope scope, double tol) {
    std::vector<Case> cases;
    switch (scope) {
    case GradScope::ops: cases = op_cases(); break;
    case GradScope::layers: cases = layer_cases(); break;
    case GradScope::losses: cases = loss_cases(); break;
    case GradScope::model: cases = model_cases(); break;
    }
    std::vector<GradcheckCase> out;
    for (const auto &c : cases) {
        ad::GradcheckOptions opt;
        opt.tol = tol;
        opt.max_checks_per_input = c.max_checks;
        opt.step = c.step;
        out.push_back({c.name, ad::gradcheck(c.fn, c.inputs, opt)});
    }
    return out;
}

} // namespace sadreg::checks
