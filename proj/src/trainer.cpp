#include "sadreg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sadreg::train {

void TrainConfig::validate() const {
    model.validate();
    weights.validate();
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("learning_rate must be positive");
    }
    if (batch_size == 0) {
        throw std::invalid_argument("batch_size must be >= 1");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) {
        throw std::invalid_argument("adam_eps must be positive");
    }
}

void adam_step(nn::ParameterSet &params, const GradientMap &grads, AdamState &state, const TrainConfig &cfg) {
    for (const auto &[name, g] : grads) {
        if (!params.contains(name)) {
            throw std::invalid_argument("gradient for unknown parameter " + name);
        }
        if (g.shape() != params.at(name).shape()) {
            throw ShapeError("gradient shape mismatch for " + name);
        }
        if (!g.all_finite()) {
            throw NumericError("non-finite gradient in parameter " + name);
        }
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (const auto &[name, g] : grads) {
        Tensor &p = params.at(name);
        auto [mit, m_new] = state.m.try_emplace(name, Tensor::zeros_like(p));
        auto [vit, v_new] = state.v.try_emplace(name, Tensor::zeros_like(p));
        auto m = mit->second.data();
        auto v = vit->second.data();
        auto w = p.data();
        auto gd = g.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gd[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
            w[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
        }
    }
}

StepGradients compute_gradients(const model::Model &model, const Tensor &batch_a, const Tensor &batch_b,
                                const loss::LossWeights &weights) {
    ad::Tape tape;
    nn::BoundParameters p(tape, model.params, true);
    const ad::Var a = tape.constant(batch_a);
    const ad::Var b = tape.constant(batch_b);
    const auto out = model::forward_pair(a, b, p, model.config, weights.symmetric_align);
    const auto obj = loss::objective(out, a, b, weights);
    StepGradients s;
    s.report = obj.report;
    if (!std::isfinite(obj.report.total)) {
        return s;
    }
    const auto g = tape.backward(obj.total);
    for (const auto &[name, var] : p.vars()) {
        s.grads.emplace(name, g.of(var));
    }
    return s;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x7a1eu};
    std::mt19937_64 rng(seq);
    // Fisher-Yates with explicit draws so the order does not depend on the library's shuffle.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

TrainResult train(const TrainConfig &cfg, const std::vector<Tensor> &images_a, const std::vector<Tensor> &images_b,
                  const TrainHooks &hooks) {
    cfg.validate();
    if (images_a.size() != images_b.size()) {
        throw std::invalid_argument("train: image list sizes differ");
    }
    if (images_a.empty()) {
        throw std::invalid_argument("train: empty dataset");
    }
    const Shape expected{1, cfg.model.in_channels, cfg.model.image_size, cfg.model.image_size};
    for (std::size_t i = 0; i < images_a.size(); ++i) {
        if (images_a[i].shape() != expected || images_b[i].shape() != expected) {
            throw ShapeError("train: pair " + std::to_string(i) + " does not have shape " +
                             shape_to_string(expected));
        }
    }
    TrainResult r{model::Model::create(cfg.model), {}, 0, 0};
    AdamState adam;
    const std::size_t n = images_a.size();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(cfg.seed, epoch, n);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            if (cfg.max_steps != 0 && r.steps >= cfg.max_steps) {
                return r;
            }
            std::vector<Tensor> ba, bb;
            for (std::size_t k = start; k < std::min(n, start + cfg.batch_size); ++k) {
                ba.push_back(images_a[order[k]]);
                bb.push_back(images_b[order[k]]);
            }
            const auto s = compute_gradients(r.model, ops::stack(ba), ops::stack(bb), cfg.weights);
            if (!std::isfinite(s.report.total)) {
                throw TrainingAborted("non-finite loss at step " + std::to_string(r.steps + 1), r);
            }
            try {
                adam_step(r.model.params, s.grads, adam, cfg);
            } catch (const NumericError &e) {
                throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(r.steps + 1), r);
            }
            ++r.steps;
            r.history.push_back(s.report);
            if (hooks.on_step) {
                hooks.on_step(r.steps, epoch + 1, s.report);
            }
        }
        r.epochs_completed = epoch + 1;
        if (hooks.on_epoch_end) {
            hooks.on_epoch_end(r.epochs_completed, r.model, r.history);
        }
    }
    return r;
}

} // namespace sadreg::train
